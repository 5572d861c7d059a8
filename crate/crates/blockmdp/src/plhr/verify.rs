//! Verification-only utilities. Everything here reads the hidden decoder and the true
//! latent dynamics, so none of it may be called by the learner itself.

use serde::{Deserialize, Serialize};

use super::confidence::ConfidenceSet;
use super::emulator::{ClassActions, PolicyEmulator, ValueCache};
use super::graph::DecoderGraph;
use super::{OmdLog, PlhrRun};
use crate::model::{Action, BlockMdp, Obs, Policy, PolicyClass, PolicyError};
use crate::oracle::{best_in_class, exact_values_from, OracleError};

/// Pushforward `π♯ν` of a finitely supported observation distribution.
pub fn pushforward(nu: &[(Obs, f64)], pi: &Policy, actions: usize) -> Result<Vec<f64>, PolicyError> {
    let mut out = vec![0.0; actions];
    for &(x, w) in nu {
        out[pi.act(x)?] += w;
    }
    Ok(out)
}

/// Latent states of layer `h` reachable with probability at least `ε/S_h` from some
/// state-action pair of layer `h-1`. At layer 1 only the start state qualifies.
pub fn reachable_states(m: &BlockMdp, h: usize, eps: f64) -> Vec<bool> {
    let lat = m.latent();
    let n = lat.state_count(h);
    if h == 1 {
        return (0..n).map(|s| s == lat.initial_state()).collect();
    }
    let thresh = eps / n as f64;
    let mut out = vec![false; n];
    for s in 0..lat.state_count(h - 1) {
        for a in 0..lat.action_count() {
            for (t, &p) in lat.transition(h - 1, s, a).iter().enumerate() {
                if p >= thresh {
                    out[t] = true;
                }
            }
        }
    }
    out
}

/// Latent distribution projected onto a set of sampled observations: each reachable
/// state's mass is spread uniformly over the sampled observations it emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMeasure {
    pub weights: Vec<f64>,
    pub reachable: Vec<bool>,
}

impl ProjectedMeasure {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Projection of `p` (a distribution over layer-`h` latent states) onto `xbar`.
pub fn projected_measure(m: &BlockMdp, h: usize, p: &[f64], xbar: &[Obs], eps: f64) -> ProjectedMeasure {
    let reachable = reachable_states(m, h, eps);
    let mut counts = vec![0usize; p.len()];
    for &x in xbar {
        counts[m.decode(x)] += 1;
    }
    let weights = xbar
        .iter()
        .map(|&x| {
            let s = m.decode(x);
            if reachable[s] {
                p[s] / counts[s] as f64
            } else {
                0.0
            }
        })
        .collect();
    ProjectedMeasure { weights, reachable }
}

/// `proj(P_lat(· | φ(x), a))` over `X̂_{h+1}` for emulator state `i` of layer `h`.
pub fn projected_transition(m: &BlockMdp, emu: &PolicyEmulator, h: usize, i: usize, a: Action, eps: f64) -> Vec<f64> {
    let s = m.decode(emu.states[h - 1][i]);
    projected_measure(m, h + 1, m.latent().transition(h, s, a), &emu.states[h], eps).weights
}

/// Outcome of the structural checks on one decode call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub layer: usize,
    pub state: usize,
    pub action: Action,
    /// Every right vertex sharing a latent state with a left vertex is matched to it.
    pub decode_valid: bool,
    /// Same-state vertices form complete bipartite subgraphs.
    pub biclique: bool,
    /// The projected true transition satisfies every constraint of the narrowed set.
    pub proj_member: bool,
    pub proj_residual: f64,
    /// Largest within-component spread of emulator `Q̂` over actions and policies.
    pub width: f64,
    pub width_bound: f64,
    pub width_ok: bool,
}

impl LemmaCheck {
    pub fn all_ok(&self) -> bool {
        self.decode_valid && self.biclique && self.proj_member && self.width_ok
    }
}

/// Structural checks for a decode of `(h, i, a)` given its samples and graph.
#[allow(clippy::too_many_arguments)]
pub fn check_decode(
    m: &BlockMdp,
    emu: &PolicyEmulator,
    acts: &ClassActions,
    cache: &mut ValueCache,
    samples: &[Obs],
    graph: &DecoderGraph,
    conf: &ConfidenceSet,
    (h, i, a): (usize, usize, Action),
    eps: f64,
    eps_dec: f64,
) -> LemmaCheck {
    let right = &emu.states[h];
    let right_state: Vec<usize> = right.iter().map(|&x| m.decode(x)).collect();
    let left_state: Vec<usize> = samples.iter().map(|&x| m.decode(x)).collect();
    let mut decode_valid = true;
    for (l, &s) in left_state.iter().enumerate() {
        for (r, &t) in right_state.iter().enumerate() {
            if s == t && !graph.has_edge(l, r) {
                decode_valid = false;
            }
        }
    }
    let mut biclique = true;
    let n_states = m.latent().state_count(h + 1);
    for s in 0..n_states {
        let ls: Vec<usize> = (0..samples.len()).filter(|&l| left_state[l] == s).collect();
        let rs: Vec<usize> = (0..right.len()).filter(|&r| right_state[r] == s).collect();
        if ls.is_empty() || rs.is_empty() {
            continue;
        }
        if !ls.iter().all(|&l| rs.iter().all(|&r| graph.has_edge(l, r))) {
            biclique = false;
        }
    }
    let proj = projected_transition(m, emu, h, i, a, eps);
    let proj_residual = conf.constraint_residual(&proj);
    let proj_member = proj_residual <= super::confidence::RESIDUAL_TOL;

    let mut width: f64 = 0.0;
    for j in 0..acts.0.len() {
        let tab = cache.get(emu, acts, j);
        for comp in &graph.components {
            if comp.right.len() < 2 {
                continue;
            }
            for b in 0..emu.actions {
                let vals = comp.right.iter().map(|&r| tab.q(h + 1, r, b));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                width = width.max(hi - lo);
            }
        }
    }
    let width_bound = 4.0 * n_states as f64 * eps_dec + 8.0 * n_states as f64 * eps;
    LemmaCheck {
        layer: h,
        state: i,
        action: a,
        decode_valid,
        biclique,
        proj_member,
        proj_residual,
        width,
        width_bound,
        width_ok: width <= width_bound,
    }
}

/// Cumulative OMD regret of a logged sequence against `competitor`, and the bound
/// `log(n)/step + step·T/2` it must respect.
pub fn omd_regret(log: &OmdLog, competitor: &[f64], n: usize, step: f64) -> (f64, f64) {
    let mut regret = 0.0;
    for rec in &log.steps {
        regret += rec.prev.iter().zip(competitor).zip(&rec.loss).map(|((p, u), l)| (p - u) * l).sum::<f64>();
    }
    let bound = (n as f64).ln() / step + step * log.steps.len() as f64 / 2.0;
    (regret, bound)
}

/// Oracle evaluation of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlhrVerification {
    pub best_value: f64,
    pub value: f64,
    pub suboptimality: f64,
    /// `max_π |V^π(s_1) − mean_{x ∈ X̂_1} V̂^π(x)|`.
    pub emulator_accuracy: f64,
}

pub fn verify_plhr(m: &BlockMdp, class: &PolicyClass, run: &PlhrRun) -> Result<PlhrVerification, OracleError> {
    let (best_value, _) = best_in_class(m, class)?;
    let value = exact_values_from(m, &run.policy, 1)?.initial_value(m);
    let acts = ClassActions::new(&run.emulator, class)?;
    let mut cache = ValueCache::default();
    let n1 = run.emulator.layer_size(1) as f64;
    let mut acc: f64 = 0.0;
    for (j, pi) in class.iter().enumerate() {
        let truth = exact_values_from(m, pi, 1)?.initial_value(m);
        let tab = cache.get(&run.emulator, &acts, j);
        let est = tab.v[0].iter().sum::<f64>() / n1;
        acc = acc.max((truth - est).abs());
    }
    Ok(PlhrVerification { best_value, value, suboptimality: best_value - value, emulator_accuracy: acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Policy;

    #[test]
    fn pushforward_basics() {
        let nu = [(Obs::new(1, 0), 0.5), (Obs::new(1, 1), 0.5)];
        let constant = Policy::OpenLoop(vec![1]);
        assert_eq!(pushforward(&nu, &constant, 2).unwrap(), vec![0.0, 1.0]);
        let split = Policy::ObsTable {
            table: [(Obs::new(1, 0), 0), (Obs::new(1, 1), 1)].into_iter().collect(),
            default: 0,
        };
        assert_eq!(pushforward(&nu, &split, 2).unwrap(), vec![0.5, 0.5]);
    }
}
