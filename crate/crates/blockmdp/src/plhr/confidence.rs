//! Confidence sets of transition rows, stored as stacks of grouped `ℓ₁` constraints.
//!
//! Every constraint has the form `offset + Σ_k |t_k − p(G_k)| ≤ budget` where the
//! groups `G_k` partition the support. Membership is direct evaluation; projections in
//! KL divergence are computed per constraint in closed form (up to a scalar search)
//! and combined with Bregman-Dykstra cycling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to probabilities before entropic updates.
pub const PROB_FLOOR: f64 = 1e-12;
/// Maximal constraint violation accepted as feasible.
pub const RESIDUAL_TOL: f64 = 1e-7;
/// Cycle cap for Bregman-Dykstra.
pub const DYKSTRA_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfidenceError {
    #[error("confidence set is empty (residual {residual:.3e})")]
    EmptyConfidenceSet { residual: f64 },
    #[error("vector has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// `offset + Σ_k |targets[k] − p(groups[k])| ≤ budget`, groups partitioning `0..dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Constraint {
    pub groups: Vec<Vec<usize>>,
    pub targets: Vec<f64>,
    pub offset: f64,
    pub budget: f64,
}

impl L1Constraint {
    /// Builds a constraint from possibly empty disjoint groups. Empty groups contribute
    /// their target to the constant offset; uncovered indices form a zero-target group.
    pub fn new(dim: usize, groups: Vec<Vec<usize>>, targets: Vec<f64>, budget: f64) -> Self {
        assert_eq!(groups.len(), targets.len());
        let mut seen = vec![false; dim];
        let mut offset = 0.0;
        let mut g_out = Vec::new();
        let mut t_out = Vec::new();
        for (g, t) in groups.into_iter().zip(targets) {
            if g.is_empty() {
                offset += t.abs();
                continue;
            }
            for &i in &g {
                assert!(!seen[i], "groups must be disjoint");
                seen[i] = true;
            }
            g_out.push(g);
            t_out.push(t);
        }
        let rest: Vec<usize> = (0..dim).filter(|&i| !seen[i]).collect();
        if !rest.is_empty() {
            g_out.push(rest);
            t_out.push(0.0);
        }
        Self { groups: g_out, targets: t_out, offset, budget }
    }

    /// Left-hand side at `p`.
    pub fn value(&self, p: &[f64]) -> f64 {
        self.offset
            + self
                .groups
                .iter()
                .zip(&self.targets)
                .map(|(g, t)| (t - g.iter().map(|&i| p[i]).sum::<f64>()).abs())
                .sum::<f64>()
    }

    /// Amount by which `p` violates the constraint (zero when satisfied).
    pub fn violation(&self, p: &[f64]) -> f64 {
        (self.value(p) - self.budget).max(0.0)
    }

    /// KL projection of the positive vector `q` onto `{p ∈ Δ : constraint holds}`.
    pub fn project(&self, q: &[f64]) -> Result<Vec<f64>, ConfidenceError> {
        let masses: Vec<f64> = self.groups.iter().map(|g| g.iter().map(|&i| q[i]).sum()).collect();
        let group_p = project_groups(&masses, &self.targets, self.budget - self.offset)?;
        let mut p = vec![0.0; q.len()];
        for ((g, &big_q), &big_p) in self.groups.iter().zip(&masses).zip(&group_p) {
            for &i in g {
                p[i] = q[i] * big_p / big_q;
            }
        }
        Ok(p)
    }
}

/// Largest multiplier tried before the constraint is declared unattainable.
const LAMBDA_MAX: f64 = 64.0;

/// Group-mass problem: minimize `Σ P_k log(P_k/Q_k)` over `ΣP = 1`, `Σ|P_k − t_k| ≤ b`.
fn project_groups(q: &[f64], t: &[f64], b: f64) -> Result<Vec<f64>, ConfidenceError> {
    let total: f64 = q.iter().sum();
    let base: Vec<f64> = q.iter().map(|x| x / total).collect();
    let l1 = |p: &[f64]| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>();
    if l1(&base) <= b {
        return Ok(base);
    }
    let floor = (1.0 - t.iter().sum::<f64>()).abs();
    if b < floor - 1e-15 {
        return Err(ConfidenceError::EmptyConfidenceSet { residual: floor - b });
    }
    let at = |lambda: f64| normalized_median(q, t, lambda);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while l1(&at(hi)) > b {
        hi *= 2.0;
        if hi > LAMBDA_MAX {
            let p = at(LAMBDA_MAX);
            let residual = l1(&p) - b;
            if residual > RESIDUAL_TOL {
                return Err(ConfidenceError::EmptyConfidenceSet { residual });
            }
            return Ok(p);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l1(&at(mid)) > b {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(at(hi))
}

/// `P_k(u) = median(Q_k e^{−λ} u, t_k, Q_k e^{λ} u)` with `u > 0` chosen so `ΣP = 1`.
/// Each `P_k` is piecewise linear and nondecreasing in `u`, so `u` is found exactly by
/// scanning breakpoints.
fn normalized_median(q: &[f64], t: &[f64], lambda: f64) -> Vec<f64> {
    let lo_f = (-lambda).exp();
    let hi_f = lambda.exp();
    let eval = |u: f64| -> Vec<f64> {
        if u <= 0.0 {
            return vec![0.0; q.len()];
        }
        q.iter()
            .zip(t)
            .map(|(&qk, &tk)| {
                let a = qk * lo_f * u;
                let c = qk * hi_f * u;
                tk.clamp(a, c)
            })
            .collect()
    };
    let mut breaks: Vec<f64> = Vec::with_capacity(2 * q.len());
    for (&qk, &tk) in q.iter().zip(t) {
        if tk > 0.0 {
            breaks.push(tk / (qk * hi_f));
            breaks.push(tk / (qk * lo_f));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let sum_at = |u: f64| eval(u).iter().sum::<f64>();
    // Find the segment [u0, u1] with sum(u0) ≤ 1 ≤ sum(u1); the sum is affine on it.
    let mut u0 = 0.0;
    let mut s0 = 0.0;
    for &u1 in &breaks {
        let s1 = sum_at(u1);
        if s1 >= 1.0 {
            return interpolate(&eval, u0, s0, u1, s1);
        }
        u0 = u1;
        s0 = s1;
    }
    // Beyond the last breakpoint every coordinate is linear in u.
    let mut u1 = if u0 > 0.0 { 2.0 * u0 } else { 1.0 };
    let mut s1 = sum_at(u1);
    while s1 < 1.0 {
        u0 = u1;
        s0 = s1;
        u1 *= 2.0;
        s1 = sum_at(u1);
    }
    interpolate(&eval, u0, s0, u1, s1)
}

fn interpolate(eval: &dyn Fn(f64) -> Vec<f64>, u0: f64, s0: f64, u1: f64, s1: f64) -> Vec<f64> {
    let u = if s1 > s0 { u0 + (1.0 - s0) * (u1 - u0) / (s1 - s0) } else { u1 };
    let mut p = eval(u);
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

/// One decode's contribution: the marginal constraint and one pushforward constraint
/// per distinct policy behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBlock {
    pub marginal: L1Constraint,
    pub pushforward: Vec<L1Constraint>,
    /// Starting point suggested by the decode data.
    pub empirical: Vec<f64>,
}

impl ConstraintBlock {
    pub fn constraints(&self) -> impl Iterator<Item = &L1Constraint> {
        std::iter::once(&self.marginal).chain(&self.pushforward)
    }
}

/// Intersection of the simplex over `dim` emulator states with a stack of blocks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub dim: usize,
    pub blocks: Vec<ConstraintBlock>,
}

impl ConfidenceSet {
    /// The full simplex.
    pub fn simplex(dim: usize) -> Self {
        Self { dim, blocks: Vec::new() }
    }

    pub fn push(&mut self, block: ConstraintBlock) {
        self.blocks.push(block);
    }

    pub fn constraints(&self) -> impl Iterator<Item = &L1Constraint> {
        self.blocks.iter().flat_map(|b| b.constraints())
    }

    /// Largest violation of any block constraint, ignoring the simplex.
    pub fn constraint_residual(&self, p: &[f64]) -> f64 {
        self.constraints().map(|c| c.violation(p)).fold(0.0, f64::max)
    }

    /// Largest violation including nonnegativity and normalization.
    pub fn residual(&self, p: &[f64]) -> f64 {
        let neg = p.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
        let sum = (p.iter().sum::<f64>() - 1.0).abs();
        self.constraint_residual(p).max(neg).max(sum)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim && self.residual(p) <= RESIDUAL_TOL
    }

    /// KL projection of the positive vector `q` onto the set.
    pub fn project(&self, q: &[f64]) -> Result<Vec<f64>, ConfidenceError> {
        if q.len() != self.dim {
            return Err(ConfidenceError::Dimension { got: q.len(), expected: self.dim });
        }
        let mut x: Vec<f64> = q.iter().map(|&v| v.max(PROB_FLOOR)).collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        let cons: Vec<&L1Constraint> = self.constraints().collect();
        if cons.is_empty() {
            return Ok(x);
        }
        if cons.len() == 1 {
            return cons[0].project(&x);
        }
        let mut corr: Vec<Vec<f64>> = vec![vec![0.0; self.dim]; cons.len()];
        for _ in 0..DYKSTRA_CAP {
            // Iterates can return to the same point after a full cycle while the
            // corrections still change, so movement is summed over every substep.
            let mut moved = 0.0;
            for (c, z) in cons.iter().zip(corr.iter_mut()) {
                let y: Vec<f64> = x.iter().zip(z.iter()).map(|(xi, zi)| xi * zi.exp()).collect();
                let next = c.project(&y)?;
                for i in 0..self.dim {
                    z[i] = y[i].ln() - next[i].ln();
                }
                moved += next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum::<f64>();
                x = next;
            }
            if moved < 1e-13 && self.constraint_residual(&x) <= 1e-10 {
                break;
            }
        }
        let residual = self.residual(&x);
        if residual > RESIDUAL_TOL {
            return Err(ConfidenceError::EmptyConfidenceSet { residual });
        }
        Ok(x)
    }

    /// A member of the set: `current` when it is already feasible, otherwise the KL
    /// projection of the latest block's empirical point (uniform for the bare simplex).
    pub fn pick_feasible(&self, current: Option<&[f64]>) -> Result<Vec<f64>, ConfidenceError> {
        if let Some(p) = current {
            if self.contains(p) {
                return Ok(p.to_vec());
            }
        }
        let start = match self.blocks.last() {
            Some(b) => b.empirical.clone(),
            None => vec![1.0 / self.dim as f64; self.dim],
        };
        if self.contains(&start) {
            return Ok(start);
        }
        self.project(&start)
    }
}

/// Online mirror descent step with the negative-entropy regularizer:
/// `argmin_{p ∈ conf} ⟨p, loss⟩ + (1/step) · KL(p ‖ prev)`.
pub fn omd_step(prev: &[f64], loss: &[f64], conf: &ConfidenceSet, step: f64) -> Result<Vec<f64>, ConfidenceError> {
    if loss.len() != prev.len() {
        return Err(ConfidenceError::Dimension { got: loss.len(), expected: prev.len() });
    }
    let tilted: Vec<f64> = prev.iter().zip(loss).map(|(&p, &l)| p.max(PROB_FLOOR) * (-step * l).exp()).collect();
    let s: f64 = tilted.iter().sum();
    let tilted: Vec<f64> = tilted.iter().map(|v| v / s).collect();
    conf.project(&tilted)
}

/// Objective minimized by [`omd_step`], using the generalized KL divergence.
pub fn omd_objective(p: &[f64], prev: &[f64], loss: &[f64], step: f64) -> f64 {
    let mut v = 0.0;
    for ((&pi, &qi), &li) in p.iter().zip(prev).zip(loss) {
        let q = qi.max(PROB_FLOOR);
        v += pi * li;
        if pi > 0.0 {
            v += (pi * (pi / q).ln() - pi + q) / step;
        } else {
            v += q / step;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simple_block(dim: usize, groups: Vec<Vec<usize>>, targets: Vec<f64>, budget: f64) -> ConstraintBlock {
        ConstraintBlock {
            marginal: L1Constraint::new(dim, groups, targets, budget),
            pushforward: Vec::new(),
            empirical: vec![1.0 / dim as f64; dim],
        }
    }

    #[test]
    fn simplex_pick_is_uniform() {
        let c = ConfidenceSet::simplex(4);
        assert_eq!(c.pick_feasible(None).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn closed_form_on_simplex() {
        let eps: f64 = 0.1;
        let p = omd_step(&[0.5, 0.5], &[1.0, 0.0], &ConfidenceSet::simplex(2), eps).unwrap();
        let z = (-eps).exp() + 1.0;
        assert_abs_diff_eq!(p[0], (-eps).exp() / z, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / z, epsilon = 1e-12);
    }

    #[test]
    fn zero_loss_keeps_feasible_point() {
        let mut c = ConfidenceSet::simplex(3);
        c.push(simple_block(3, vec![vec![0], vec![1, 2]], vec![0.5, 0.5], 0.1));
        let prev = [0.5, 0.2, 0.3];
        let p = omd_step(&prev, &[0.0; 3], &c, 0.1).unwrap();
        for (a, b) in p.iter().zip(prev) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_projection_hits_boundary() {
        let c = L1Constraint::new(3, vec![vec![0], vec![1, 2]], vec![0.9, 0.1], 0.2);
        let p = c.project(&[0.2, 0.4, 0.4]).unwrap();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(c.violation(&p) <= 1e-12);
        assert_abs_diff_eq!(c.value(&p), 0.2, epsilon = 1e-9);
        // Mass inside a group keeps its proportions.
        assert_abs_diff_eq!(p[1], p[2], epsilon = 1e-15);
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let mut c = ConfidenceSet::simplex(2);
        c.push(simple_block(2, vec![vec![0], vec![1]], vec![0.2, 0.2], 0.1));
        assert!(matches!(c.project(&[0.5, 0.5]), Err(ConfidenceError::EmptyConfidenceSet { .. })));
    }

    #[test]
    fn dykstra_satisfies_all_blocks() {
        let mut c = ConfidenceSet::simplex(4);
        c.push(simple_block(4, vec![vec![0, 1], vec![2, 3]], vec![0.7, 0.3], 0.05));
        c.push(simple_block(4, vec![vec![0, 2], vec![1, 3]], vec![0.2, 0.8], 0.05));
        let p = c.project(&[0.25; 4]).unwrap();
        assert!(c.contains(&p), "{p:?} residual {}", c.residual(&p));
    }

    #[test]
    fn dykstra_does_not_stop_on_a_cycle() {
        // Alternating projections return to the same point after each cycle here,
        // long before the corrections settle.
        let mut c = ConfidenceSet::simplex(3);
        c.push(simple_block(
            3,
            vec![vec![1], vec![2], vec![0]],
            vec![0.5421604101786784, 0.1587818087412084, 0.2990577810801132],
            0.29808160704155034,
        ));
        c.push(simple_block(3, vec![vec![1, 2], vec![0]], vec![0.7009422189198868, 0.2990577810801132], 0.2747220733340796));
        let q = [0.7242797028203044, 0.16644596362542363, 0.10927433355427195];
        let p = c.project(&q).unwrap();
        // Minimizer found by fine grid search over the feasible simplex.
        let mesh = [0.436418815, 0.39311961, 0.170461575];
        for (a, b) in p.iter().zip(mesh) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }
}
