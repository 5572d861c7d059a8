//! Bipartite decoder graph between fresh transition samples (left) and emulator
//! states of the next layer (right), with connected components via union-find.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

/// One connected component, split into its left and right vertices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Decoder graph with decode map `matches[l] = 𝒯[x_l]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderGraph {
    pub n_left: usize,
    pub n_right: usize,
    pub matches: Vec<Vec<usize>>,
    pub components: Vec<Component>,
}

impl DecoderGraph {
    /// Builds the graph; components are ordered by their smallest vertex, left vertices
    /// numbered before right ones.
    pub fn new(n_right: usize, matches: Vec<Vec<usize>>) -> Self {
        let n_left = matches.len();
        let mut uf = UnionFind::<usize>::new(n_left + n_right);
        for (l, rs) in matches.iter().enumerate() {
            for &r in rs {
                uf.union(l, n_left + r);
            }
        }
        let mut index_of_root: Vec<Option<usize>> = vec![None; n_left + n_right];
        let mut components: Vec<Component> = Vec::new();
        for v in 0..n_left + n_right {
            let root = uf.find(v);
            let c = *index_of_root[root].get_or_insert_with(|| {
                components.push(Component { left: Vec::new(), right: Vec::new() });
                components.len() - 1
            });
            if v < n_left {
                components[c].left.push(v);
            } else {
                components[c].right.push(v - n_left);
            }
        }
        Self { n_left, n_right, matches, components }
    }

    /// Whether `(l, r)` is an edge.
    pub fn has_edge(&self, l: usize, r: usize) -> bool {
        self.matches[l].contains(&r)
    }

    /// Component index of each right vertex.
    pub fn right_component(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_right];
        for (c, comp) in self.components.iter().enumerate() {
            for &r in &comp.right {
                out[r] = c;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_partition_vertices() {
        let g = DecoderGraph::new(4, vec![vec![0, 1], vec![1], vec![3], vec![]]);
        assert_eq!(g.components.len(), 4);
        assert_eq!(g.components[0], Component { left: vec![0, 1], right: vec![0, 1] });
        assert_eq!(g.components[1], Component { left: vec![2], right: vec![3] });
        assert_eq!(g.components[2], Component { left: vec![3], right: vec![] });
        assert_eq!(g.components[3], Component { left: vec![], right: vec![2] });
        let total: usize = g.components.iter().map(|c| c.left.len() + c.right.len()).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn full_matching_is_one_component() {
        let g = DecoderGraph::new(3, vec![vec![0, 1, 2]; 5]);
        assert_eq!(g.components.len(), 1);
    }
}
