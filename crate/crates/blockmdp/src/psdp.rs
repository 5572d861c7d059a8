//! Policy search by dynamic programming: layers are solved backwards, each by a
//! contextual-bandit oracle over the class. Two oracles are provided: the
//! importance-weighted empirical oracle driven by `μ`-resets, and an exact
//! adversarial oracle that returns the worst policy within an `ε_stat` band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{AccessError, AccessHandle};
use crate::model::{BlockMdp, Obs, Policy, PolicyClass, PolicyError};
use crate::oracle::{best_in_class, exact_values, obs_occupancy_from, suffix_q, ObsDistribution, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsdpError {
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("PSDP needs at least one sample per layer")]
    NoSamples,
}

/// Outcome of one PSDP run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdpRun {
    /// Class index chosen at each layer, `chosen[h-1]`.
    pub chosen: Vec<usize>,
    /// Layers in the order they were solved.
    pub order: Vec<usize>,
    /// Oracle objective of every class member at each layer, `objectives[h-1][j]`.
    pub objectives: Vec<Vec<f64>>,
    /// Samples per layer (zero for the exact oracle).
    pub n: usize,
    pub episodes: u64,
    /// The composite policy `π̂_{1:H}`.
    pub policy: Policy,
}

impl PsdpRun {
    /// True when every layer was fixed before the layer below it.
    pub fn is_backward(&self) -> bool {
        self.order.windows(2).all(|w| w[0] == w[1] + 1) && self.order.last() == Some(&1)
    }
}

fn composite(class: &PolicyClass, start: usize, chosen: &[usize]) -> Policy {
    Policy::Layered { start, layers: chosen.iter().map(|&j| class.get(j).clone()).collect() }
}

/// Lowest index attaining the maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

/// Generator of PSDP's exploratory actions for a run seed.
pub fn exploration_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7073_6470)
}

/// PSDP with the empirical oracle. At each layer it draws `n` tuples
/// `(x ∼ μ_h, a ∼ Unif(A), v)` where `v` is the sampled return of `a` followed by the
/// already-fixed suffix, and picks the policy maximizing `(1/n) Σ 1{a = π(x)} v`.
/// `rng` draws the exploratory actions.
pub fn run_psdp(
    access: &mut AccessHandle<'_>,
    class: &PolicyClass,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PsdpRun, PsdpError> {
    if n == 0 {
        return Err(PsdpError::NoSamples);
    }
    let horizon = access.horizon();
    let actions = access.action_count();
    let start_episodes = access.episodes();
    let mut chosen_rev: Vec<usize> = Vec::with_capacity(horizon);
    let mut objectives = vec![Vec::new(); horizon];
    let mut order = Vec::with_capacity(horizon);
    for h in (1..=horizon).rev() {
        let suffix_ids: Vec<usize> = chosen_rev.iter().rev().copied().collect();
        let suffix = composite(class, h + 1, &suffix_ids);
        let mut data: Vec<(Obs, usize, f64)> = Vec::with_capacity(n);
        for _ in 0..n {
            let x = access.reset_mu(h)?;
            let a = rng.random_range(0..actions);
            let mut step = access.step(a)?;
            let mut ret = step.reward;
            while let Some(o) = step.obs {
                step = access.step(suffix.act(o)?)?;
                ret += step.reward;
            }
            data.push((x, a, ret));
        }
        let mut obj = vec![0.0; class.len()];
        for (j, pi) in class.iter().enumerate() {
            let mut total = 0.0;
            for &(x, a, v) in &data {
                if pi.act(x)? == a {
                    total += v;
                }
            }
            obj[j] = total / n as f64;
        }
        chosen_rev.push(argmax(&obj));
        objectives[h - 1] = obj;
        order.push(h);
    }
    let chosen: Vec<usize> = chosen_rev.into_iter().rev().collect();
    Ok(PsdpRun {
        policy: composite(class, 1, &chosen),
        chosen,
        order,
        objectives,
        n,
        episodes: access.episodes() - start_episodes,
    })
}

/// PSDP with the exact adversarial oracle, plus its exact suboptimality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRun {
    pub run: PsdpRun,
    /// Best value attained in the class from the start state.
    pub best_value: f64,
    /// Value of the returned composite policy.
    pub value: f64,
    /// `best_value − value`.
    pub suboptimality: f64,
}

/// PSDP whose oracle returns, among policies within `eps_stat` of the best exact layer
/// objective `E_{μ_h}[Q(x, π(x))]`, the one with the smallest objective (lowest index
/// among ties). Fully deterministic.
pub fn run_psdp_worstcase(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
    eps_stat: f64,
) -> Result<WorstCaseRun, PsdpError> {
    mu.validate(m)?;
    let horizon = m.horizon();
    let mut chosen_rev: Vec<usize> = Vec::with_capacity(horizon);
    let mut objectives = vec![Vec::new(); horizon];
    let mut order = Vec::with_capacity(horizon);
    for h in (1..=horizon).rev() {
        let suffix_ids: Vec<usize> = chosen_rev.iter().rev().copied().collect();
        let suffix = composite(class, h + 1, &suffix_ids);
        let q = suffix_q(m, (h < horizon).then_some(&suffix), h)?;
        let mut obj = vec![0.0; class.len()];
        for (j, pi) in class.iter().enumerate() {
            for (x, &w) in mu.layer(h).iter().enumerate() {
                if w > 0.0 {
                    let o = Obs::new(h, x);
                    obj[j] += w * q[m.decode(o)][pi.act(o)?];
                }
            }
        }
        let best = obj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = best - eps_stat - 1e-12;
        let mut pick = None;
        for (j, &v) in obj.iter().enumerate() {
            if v >= floor && pick.is_none_or(|p: usize| v < obj[p]) {
                pick = Some(j);
            }
        }
        chosen_rev.push(pick.expect("the maximizer lies in its own band"));
        objectives[h - 1] = obj;
        order.push(h);
    }
    let chosen: Vec<usize> = chosen_rev.into_iter().rev().collect();
    let policy = composite(class, 1, &chosen);
    let value = exact_values(m, &policy)?.initial_value(m);
    let (best_value, _) = best_in_class(m, class)?;
    Ok(WorstCaseRun {
        run: PsdpRun { chosen, order, objectives, n: 0, episodes: 0, policy },
        best_value,
        value,
        suboptimality: best_value - value,
    })
}

/// Whether conservative policy iteration would stop at `pi`: the best class policy's
/// average advantage over `pi`, under the layer-averaged occupancy of `pi` started from
/// `μ_1`, is at most `eps`.
pub fn cpi_termination_check(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
    pi: &Policy,
    eps: f64,
) -> Result<bool, PsdpError> {
    mu.validate(m)?;
    let horizon = m.horizon();
    let occ = obs_occupancy_from(m, pi, mu.layer(1))?;
    let qs: Vec<Vec<Vec<f64>>> = (1..=horizon).map(|h| suffix_q(m, Some(pi), h)).collect::<Result<_, _>>()?;
    let mut best = f64::NEG_INFINITY;
    for alt in class.iter() {
        let mut adv = 0.0;
        for h in 1..=horizon {
            for (x, &w) in occ[h - 1].iter().enumerate() {
                if w > 0.0 {
                    let o = Obs::new(h, x);
                    let row = &qs[h - 1][m.decode(o)];
                    adv += w * (row[alt.act(o)?] - row[pi.act(o)?]);
                }
            }
        }
        best = best.max(adv / horizon as f64);
    }
    Ok(best <= eps)
}

/// Closed-form lower bound on the worst-case suboptimality of PSDP on the highway
/// instance: `(C^H p^{H-1}/H − 2 C^{H-1} p^{H-1}/(H-1)) ε_stat` with `p = 1 − (2H+1)/C`.
pub fn highway_lower_bound(depth: usize, c_push: f64, eps_stat: f64) -> f64 {
    let h = depth as i32;
    let p = 1.0 - (2 * depth + 1) as f64 / c_push;
    (c_push.powi(h) * p.powi(h - 1) / depth as f64 - 2.0 * c_push.powi(h - 1) * p.powi(h - 1) / (depth - 1) as f64)
        * eps_stat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::Mode;
    use crate::envs::{comb_lock, psdp_highway, psdp_simple};

    #[test]
    fn singleton_class_consumes_h_times_n() {
        let env = comb_lock(3, 2, 4, &[1, 1, 0], 0).unwrap();
        let class = PolicyClass::new(vec![Policy::OpenLoop(vec![0, 0, 0])]).unwrap();
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::MuReset, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let run = run_psdp(&mut acc, &class, 37, &mut rng).unwrap();
        assert_eq!(run.chosen, vec![0, 0, 0]);
        assert_eq!(run.episodes, 3 * 37);
        assert!(run.is_backward());
    }

    #[test]
    fn highway_worst_case_selects_zero() {
        let env = psdp_highway(3, 15.0, 1e-3).unwrap();
        let out = run_psdp_worstcase(&env.mdp, &env.mu, &env.class, 1e-3).unwrap();
        for h in 2..=4 {
            assert_eq!(out.run.policy.open_loop_action(h), Some(0));
        }
        let lb = highway_lower_bound(3, 15.0, 1e-3);
        assert!((lb - 0.256).abs() < 1e-12);
        assert!(out.suboptimality >= lb);
    }

    #[test]
    fn zero_band_is_greedy() {
        let env = psdp_highway(3, 15.0, 1e-3).unwrap();
        let out = run_psdp_worstcase(&env.mdp, &env.mu, &env.class, 0.0).unwrap();
        assert!(out.suboptimality.abs() < 1e-12);
    }

    #[test]
    fn cpi_stalls_on_simple_instance() {
        let env = psdp_simple(0.01).unwrap();
        let zero = Policy::OpenLoop(vec![0, 0]);
        assert!(cpi_termination_check(&env.mdp, &env.mu, &env.class, &zero, 1e-6).unwrap());
        let star = Policy::OpenLoop(vec![1, 1]);
        assert!(cpi_termination_check(&env.mdp, &env.mu, &env.class, &star, 0.0).unwrap());
    }
}
