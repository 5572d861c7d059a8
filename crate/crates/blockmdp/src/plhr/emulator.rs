//! Observation-level policy emulator: sampled observations per layer, estimated
//! rewards and transition rows, and backward induction over it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{Action, Obs, PolicyClass, PolicyError};

/// A finite surrogate MDP over sampled observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEmulator {
    pub horizon: usize,
    pub actions: usize,
    /// `states[h-1]` is `X̂_h`; duplicates are distinct emulator states.
    pub states: Vec<Vec<Obs>>,
    /// `r_hat[h-1][i][a]`.
    pub r_hat: Vec<Vec<Vec<f64>>>,
    /// `p_hat[h-1][i][a]`, a distribution over `X̂_{h+1}` once set.
    pub p_hat: Vec<Vec<Vec<Option<Vec<f64>>>>>,
    /// Bumped on every transition change.
    pub version: u64,
}

impl PolicyEmulator {
    pub fn new(states: Vec<Vec<Obs>>, actions: usize) -> Self {
        let horizon = states.len();
        let r_hat = states.iter().map(|l| vec![vec![0.0; actions]; l.len()]).collect();
        let p_hat = states.iter().map(|l| vec![vec![None; actions]; l.len()]).collect();
        Self { horizon, actions, states, r_hat, p_hat, version: 0 }
    }

    pub fn layer_size(&self, h: usize) -> usize {
        self.states[h - 1].len()
    }

    pub fn set_transition(&mut self, h: usize, i: usize, a: Action, row: Vec<f64>) {
        debug_assert!(h < self.horizon);
        debug_assert_eq!(row.len(), self.layer_size(h + 1));
        self.p_hat[h - 1][i][a] = Some(row);
        self.version += 1;
    }

    pub fn transition(&self, h: usize, i: usize, a: Action) -> Option<&[f64]> {
        self.p_hat[h - 1][i][a].as_deref()
    }
}

/// Actions of every class member on every emulator state: `acts[j][h-1][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassActions(pub Vec<Vec<Vec<Action>>>);

impl ClassActions {
    pub fn new(emu: &PolicyEmulator, class: &PolicyClass) -> Result<Self, PolicyError> {
        let mut out = Vec::with_capacity(class.len());
        for pi in class.iter() {
            let mut per = Vec::with_capacity(emu.horizon);
            for layer in &emu.states {
                per.push(layer.iter().map(|&x| pi.act(x)).collect::<Result<Vec<_>, _>>()?);
            }
            out.push(per);
        }
        Ok(Self(out))
    }

    pub fn get(&self, j: usize, h: usize, i: usize) -> Action {
        self.0[j][h - 1][i]
    }
}

/// Emulator `Q̂` and `V̂` of one class policy: `q[h-1][i][a]`, `v[h-1][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmuValues {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
}

impl EmuValues {
    pub fn q(&self, h: usize, i: usize, a: Action) -> f64 {
        self.q[h - 1][i][a]
    }

    pub fn v(&self, h: usize, i: usize) -> f64 {
        self.v[h - 1][i]
    }
}

/// Backward induction for class policy `j`. Unset transitions contribute no future value.
pub fn emulator_dp(emu: &PolicyEmulator, acts: &ClassActions, j: usize) -> EmuValues {
    let horizon = emu.horizon;
    let mut q = vec![Vec::new(); horizon];
    let mut v = vec![Vec::new(); horizon];
    for h in (1..=horizon).rev() {
        let n = emu.layer_size(h);
        let mut qh = vec![vec![0.0; emu.actions]; n];
        let mut vh = vec![0.0; n];
        for i in 0..n {
            for (a, slot) in qh[i].iter_mut().enumerate() {
                let mut val = emu.r_hat[h - 1][i][a];
                if h < horizon {
                    if let Some(row) = emu.transition(h, i, a) {
                        val += row.iter().zip(&v[h]).map(|(p, w)| p * w).sum::<f64>();
                    }
                }
                *slot = val;
            }
            vh[i] = qh[i][acts.get(j, h, i)];
        }
        q[h - 1] = qh;
        v[h - 1] = vh;
    }
    EmuValues { q, v }
}

/// Per-policy value tables, recomputed when the emulator version changes.
#[derive(Debug, Default)]
pub struct ValueCache {
    version: Option<u64>,
    tables: HashMap<usize, EmuValues>,
}

impl ValueCache {
    pub fn get(&mut self, emu: &PolicyEmulator, acts: &ClassActions, j: usize) -> &EmuValues {
        if self.version != Some(emu.version) {
            self.tables.clear();
            self.version = Some(emu.version);
        }
        self.tables.entry(j).or_insert_with(|| emulator_dp(emu, acts, j))
    }
}

/// A policy in `𝒜 ∘ Π_{h+1:H}`: a fixed first action followed by a class member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TestPolicy {
    pub action: Action,
    pub suffix: usize,
}

/// Test policies of one layer for every ordered pair of emulator states.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestPolicySet {
    pub size: usize,
    /// Row-major `size × size`.
    pub pairs: Vec<TestPolicy>,
    pub certified: bool,
    /// Certified only after exhausting stall retries.
    pub forced: bool,
}

impl TestPolicySet {
    pub fn get(&self, i: usize, k: usize) -> TestPolicy {
        self.pairs[i * self.size + k]
    }

    /// Distinct test policies in increasing order.
    pub fn distinct(&self) -> Vec<TestPolicy> {
        let mut v = self.pairs.clone();
        v.sort();
        v.dedup();
        v
    }
}

/// Emulator-maximally distinguishing test policies at layer `h` over `candidates`
/// (already in tie-break order).
pub fn distinguishing_tests(
    emu: &PolicyEmulator,
    acts: &ClassActions,
    cache: &mut ValueCache,
    candidates: &[TestPolicy],
    h: usize,
) -> TestPolicySet {
    let n = emu.layer_size(h);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
    for t in candidates {
        let tab = cache.get(emu, acts, t.suffix);
        values.push((0..n).map(|i| tab.q(h, i, t.action)).collect());
    }
    let mut pairs = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            let mut best = (f64::NEG_INFINITY, candidates[0]);
            for (c, t) in candidates.iter().enumerate() {
                let gap = (values[c][i] - values[c][k]).abs();
                if gap > best.0 {
                    best = (gap, *t);
                }
            }
            pairs.push(best.1);
        }
    }
    TestPolicySet { size: n, pairs, certified: false, forced: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Policy;

    #[test]
    fn constant_rewards_sum_along_single_state_layers() {
        let states = vec![vec![Obs::new(1, 0)], vec![Obs::new(2, 0)], vec![Obs::new(3, 0)]];
        let mut emu = PolicyEmulator::new(states, 2);
        for h in 1..=3 {
            emu.r_hat[h - 1][0] = vec![0.2, 0.2];
        }
        emu.set_transition(1, 0, 0, vec![1.0]);
        emu.set_transition(1, 0, 1, vec![1.0]);
        emu.set_transition(2, 0, 0, vec![1.0]);
        emu.set_transition(2, 0, 1, vec![1.0]);
        let class = PolicyClass::new(vec![Policy::OpenLoop(vec![0, 1, 0])]).unwrap();
        let acts = ClassActions::new(&emu, &class).unwrap();
        let vals = emulator_dp(&emu, &acts, 0);
        assert!((vals.v(1, 0) - 0.6).abs() < 1e-12);
    }
}
