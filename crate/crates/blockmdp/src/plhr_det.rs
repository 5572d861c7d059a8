//! Emulator learning for Block MDPs with deterministic latent dynamics, given
//! emission sampling and local resets. A latent emulator is built backwards from
//! layer `H`: each transition is decoded with certified test policies, and a refit
//! pass deletes transitions whose Monte Carlo rollouts contradict the emulator.

use std::collections::{btree_map, BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{hoeffding_n, AccessError, AccessHandle, McStart};
use crate::envs::EnvBundle;
use crate::model::{Action, Policy, PolicyClass, PolicyError};
use crate::oracle::exact_values_from;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetError {
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("the deterministic learner needs an open-loop policy class")]
    UnsupportedPolicyClass,
    #[error("decoding ({layer}, {state}, {action}) left no candidate successor")]
    EmptyCandidates { layer: usize, state: usize, action: Action },
    #[error("main loop exceeded {0} iterations")]
    LoopCap(usize),
}

/// Tuning knobs. The tolerance is `ε_tol = tol_scale · ε / H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetParams {
    pub eps: f64,
    /// Failure probability per Monte Carlo estimate, used for Hoeffding sizing.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tol_scale")]
    pub tol_scale: f64,
    /// Refits that find violations but delete nothing are repeated this many times
    /// before the layer is certified anyway.
    #[serde(default = "default_stall_retries")]
    pub stall_retries: usize,
    #[serde(default = "default_max_loops")]
    pub max_loops: usize,
}

fn default_delta() -> f64 {
    0.01
}
fn default_tol_scale() -> f64 {
    32.0
}
fn default_stall_retries() -> usize {
    2
}
fn default_max_loops() -> usize {
    10_000
}

impl DetParams {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            delta: default_delta(),
            tol_scale: default_tol_scale(),
            stall_retries: default_stall_retries(),
            max_loops: default_max_loops(),
        }
    }

    pub fn eps_tol(&self, horizon: usize) -> f64 {
        self.tol_scale * self.eps / horizon as f64
    }
}

/// Estimated latent MDP with per-transition candidate sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentEmulator {
    pub horizon: usize,
    pub actions: usize,
    pub state_counts: Vec<usize>,
    /// `r_hat[h-1][s][a]`.
    pub r_hat: Vec<Vec<Vec<f64>>>,
    /// `p_hat[h-1][s][a]`, set for `h < H` once decoded.
    pub p_hat: Vec<Vec<Vec<Option<usize>>>>,
    /// `conf[h-1][s][a]`, the surviving successor candidates.
    pub conf: Vec<Vec<Vec<BTreeSet<usize>>>>,
}

impl LatentEmulator {
    fn new(state_counts: &[usize], actions: usize) -> Self {
        let horizon = state_counts.len();
        let r_hat = (1..=horizon).map(|h| vec![vec![0.0; actions]; state_counts[h - 1]]).collect();
        let p_hat = (1..=horizon).map(|h| vec![vec![None; actions]; state_counts[h - 1]]).collect();
        let conf = (1..=horizon)
            .map(|h| {
                let next: BTreeSet<usize> = if h < horizon { (0..state_counts[h]).collect() } else { BTreeSet::new() };
                vec![vec![next; actions]; state_counts[h - 1]]
            })
            .collect();
        Self { horizon, actions, state_counts: state_counts.to_vec(), r_hat, p_hat, conf }
    }

    /// Emulator value of playing `actions[k]` at layer `h + k` from latent `s` at layer `h`.
    pub fn value(&self, h: usize, s: usize, actions: &[Action]) -> f64 {
        let mut v = 0.0;
        let mut state = s;
        for (k, &a) in actions.iter().enumerate() {
            let layer = h + k;
            v += self.r_hat[layer - 1][state][a];
            if layer < self.horizon {
                match self.p_hat[layer - 1][state][a] {
                    Some(next) => state = next,
                    None => break,
                }
            }
        }
        v
    }

    /// Latent path of an open-loop suffix through the emulator.
    pub fn path(&self, h: usize, s: usize, actions: &[Action]) -> Vec<usize> {
        let mut out = vec![s];
        let mut state = s;
        for (k, &a) in actions.iter().enumerate() {
            let layer = h + k;
            if layer == self.horizon {
                break;
            }
            match self.p_hat[layer - 1][state][a] {
                Some(next) => {
                    out.push(next);
                    state = next;
                }
                None => break,
            }
        }
        out
    }
}

/// Distinct layer-`h` restrictions of an open-loop class: `(representative index, actions h..=H)`.
fn suffixes(class: &PolicyClass, horizon: usize, h: usize) -> Vec<(usize, Vec<Action>)> {
    let mut seen = BTreeMap::new();
    for (j, pi) in class.iter().enumerate() {
        let acts: Vec<Action> = (h..=horizon).map(|l| pi.open_loop_action(l).expect("open-loop class")).collect();
        seen.entry(acts).or_insert(j);
    }
    let mut out: Vec<(usize, Vec<Action>)> = seen.into_iter().map(|(a, j)| (j, a)).collect();
    out.sort_by_key(|(j, _)| *j);
    out
}

/// Certified test policies of one layer: unordered state pair to class index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetTestPolicies {
    pub pairs: BTreeMap<(usize, usize), usize>,
    pub certified: bool,
    /// Set when the layer was certified after exhausting stall retries.
    pub forced: bool,
}

impl DetTestPolicies {
    fn get(&self, s: usize, t: usize) -> usize {
        self.pairs[&(s.min(t), s.max(t))]
    }
}

/// One deleted candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deletion {
    pub layer: usize,
    pub state: usize,
    pub action: Action,
    pub removed: usize,
}

/// Run record of the deterministic learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetAudit {
    pub layer_trace: Vec<usize>,
    pub deletions: Vec<Deletion>,
    pub refits: usize,
    pub stalls: usize,
    pub forced_certifications: usize,
    pub episodes: u64,
    pub eps_tol: f64,
}

/// Result of [`run_plhr_d`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetRun {
    pub policy_index: usize,
    pub policy: Policy,
    pub emulator: LatentEmulator,
    pub tests: Vec<DetTestPolicies>,
    pub audit: DetAudit,
}

struct Ctx<'c, 'a> {
    access: &'c mut AccessHandle<'a>,
    class: &'c PolicyClass,
    params: &'c DetParams,
    horizon: usize,
}

impl Ctx<'_, '_> {
    fn eps_tol(&self) -> f64 {
        self.params.eps_tol(self.horizon)
    }

    fn n_for(&self, precision: f64) -> usize {
        hoeffding_n(precision, self.params.delta)
    }

    fn mc_emission(&mut self, h: usize, s: usize, j: usize, precision: f64) -> Result<f64, DetError> {
        let n = self.n_for(precision);
        Ok(self.access.mc(McStart::Emission { layer: h, state: s }, self.class.get(j), Some(j), n, None)?.mean)
    }
}

/// Candidate successors of `(h, s, a)` that agree with a fresh transition sample on
/// every certified test.
pub fn decoder_d(
    access: &mut AccessHandle<'_>,
    class: &PolicyClass,
    emulator: &LatentEmulator,
    tests_next: &DetTestPolicies,
    eps_tol: f64,
    delta: f64,
    (h, s, a): (usize, usize, Action),
) -> Result<BTreeSet<usize>, DetError> {
    let horizon = emulator.horizon;
    let x = access.sample_emission(h, s)?;
    access.reset_local(x)?;
    let next = access.step(a)?.obs.expect("decoding happens below the last layer");
    let n = hoeffding_n(eps_tol / 2.0, delta);
    let mut mc_cache: HashMap<usize, f64> = HashMap::new();
    let count = emulator.state_counts[h];
    let mut out = BTreeSet::new();
    'cand: for &cand in &emulator.conf[h - 1][s][a] {
        for other in 0..count {
            if other == cand {
                continue;
            }
            let j = tests_next.get(cand, other);
            let est = match mc_cache.get(&j) {
                Some(v) => *v,
                None => {
                    let v = access.mc(McStart::Obs(next), class.get(j), Some(j), n, None)?.mean;
                    mc_cache.insert(j, v);
                    v
                }
            };
            let acts: Vec<Action> =
                (h + 1..=horizon).map(|l| class.get(j).open_loop_action(l).expect("open-loop class")).collect();
            if (est - emulator.value(h + 1, cand, &acts)).abs() > 2.0 * eps_tol {
                continue 'cand;
            }
        }
        out.insert(cand);
    }
    Ok(out)
}

enum RefitOutcome {
    Certified(DetTestPolicies),
    Updated(usize),
    Stalled,
}

fn compute_tests(emulator: &LatentEmulator, suffixes: &[(usize, Vec<Action>)], h: usize) -> BTreeMap<(usize, usize), usize> {
    let count = emulator.state_counts[h - 1];
    let mut pairs = BTreeMap::new();
    for s in 0..count {
        for t in s..count {
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, acts) in suffixes {
                let gap = (emulator.value(h, s, acts) - emulator.value(h, t, acts)).abs();
                if gap > best.0 {
                    best = (gap, *j);
                }
            }
            pairs.insert((s, t), best.1);
        }
    }
    pairs
}

fn refit_d(ctx: &mut Ctx<'_, '_>, emulator: &mut LatentEmulator, h: usize, deletions: &mut Vec<Deletion>) -> Result<RefitOutcome, DetError> {
    let horizon = ctx.horizon;
    let eps = ctx.params.eps;
    let eps_tol = ctx.eps_tol();
    let hf = horizon as f64;
    let sufs = suffixes(ctx.class, horizon, h);
    let acts_of: HashMap<usize, Vec<Action>> = sufs.iter().cloned().collect();
    let pairs = compute_tests(emulator, &sufs, h);

    // Evaluate every (state, test) pair from fresh emissions.
    let mut evaluated: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(s, t), &j) in &pairs {
        for state in [s, t] {
            if let btree_map::Entry::Vacant(e) = evaluated.entry((state, j)) {
                e.insert(ctx.mc_emission(h, state, j, eps / hf)?);
            }
        }
    }
    let violations: Vec<(usize, usize)> = evaluated
        .iter()
        .filter(|(&(s, j), &v)| (v - emulator.value(h, s, &acts_of[&j])).abs() >= eps_tol - eps / hf)
        .map(|(&k, _)| k)
        .collect();
    if violations.is_empty() {
        return Ok(RefitOutcome::Certified(DetTestPolicies { pairs, certified: true, forced: false }));
    }

    let path_precision = eps / (hf * hf);
    let mut path_mc: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut flagged: BTreeSet<(usize, usize, Action)> = BTreeSet::new();
    for (s, j) in violations {
        let acts = &acts_of[&j];
        let path = emulator.path(h, s, acts);
        let mut values = Vec::with_capacity(path.len());
        for (k, &sb) in path.iter().enumerate() {
            let layer = h + k;
            let key = (layer, sb, j);
            let v = match path_mc.get(&key) {
                Some(v) => *v,
                None => {
                    let v = ctx.mc_emission(layer, sb, j, path_precision)?;
                    path_mc.insert(key, v);
                    v
                }
            };
            values.push(v);
        }
        for k in 0..path.len().saturating_sub(1) {
            let layer = h + k;
            let a = acts[k];
            let resid = values[k] - emulator.r_hat[layer - 1][path[k]][a] - values[k + 1];
            if resid.abs() >= 4.0 * eps / (hf * hf) {
                flagged.insert((layer, path[k], a));
            }
        }
    }
    if flagged.is_empty() {
        return Ok(RefitOutcome::Stalled);
    }
    let mut max_layer = 0;
    for &(layer, s, a) in &flagged {
        let removed = emulator.p_hat[layer - 1][s][a].expect("paths follow set transitions");
        emulator.conf[layer - 1][s][a].remove(&removed);
        deletions.push(Deletion { layer, state: s, action: a, removed });
        let next = emulator.conf[layer - 1][s][a].iter().next().copied();
        if next.is_none() {
            return Err(DetError::EmptyCandidates { layer, state: s, action: a });
        }
        emulator.p_hat[layer - 1][s][a] = next;
        max_layer = max_layer.max(layer);
    }
    Ok(RefitOutcome::Updated(max_layer))
}

/// Learns a latent emulator and returns the class policy with the best emulator value
/// from the start state. Requires an open-loop class and emission sampling.
pub fn run_plhr_d(access: &mut AccessHandle<'_>, class: &PolicyClass, params: &DetParams) -> Result<DetRun, DetError> {
    let horizon = access.horizon();
    if !class.is_open_loop(horizon) {
        return Err(DetError::UnsupportedPolicyClass);
    }
    let actions = access.action_count();
    let state_counts = access.state_counts().to_vec();
    let start_episodes = access.episodes();
    let mut emulator = LatentEmulator::new(&state_counts, actions);
    let hf = horizon as f64;
    let eps = params.eps;

    // Rewards, one layer at a time.
    let n_reward = hoeffding_n(eps / (hf * hf), params.delta);
    let probe = Policy::OpenLoop(vec![0; horizon]);
    for h in 1..=horizon {
        for s in 0..state_counts[h - 1] {
            for a in 0..actions {
                let est = access.mc_partial(McStart::Emission { layer: h, state: s }, &probe, None, n_reward, Some(a), h)?;
                emulator.r_hat[h - 1][s][a] = est.mean;
            }
        }
    }

    let mut ctx = Ctx { access, class, params, horizon };
    let mut tests: Vec<DetTestPolicies> = vec![DetTestPolicies::default(); horizon];
    let mut audit = DetAudit {
        layer_trace: Vec::new(),
        deletions: Vec::new(),
        refits: 0,
        stalls: 0,
        forced_certifications: 0,
        episodes: 0,
        eps_tol: params.eps_tol(horizon),
    };
    let mut layer = horizon;
    let mut stall_run = 0;
    let mut loops = 0;
    while layer != 0 {
        loops += 1;
        if loops > params.max_loops {
            return Err(DetError::LoopCap(params.max_loops));
        }
        audit.layer_trace.push(layer);
        if layer < horizon {
            for s in 0..state_counts[layer - 1] {
                for a in 0..actions {
                    let kept = decoder_d(
                        ctx.access,
                        class,
                        &emulator,
                        &tests[layer],
                        ctx.eps_tol(),
                        params.delta,
                        (layer, s, a),
                    )?;
                    if kept.is_empty() {
                        return Err(DetError::EmptyCandidates { layer, state: s, action: a });
                    }
                    emulator.p_hat[layer - 1][s][a] = kept.iter().next().copied();
                    emulator.conf[layer - 1][s][a] = kept;
                }
            }
        }
        audit.refits += 1;
        match refit_d(&mut ctx, &mut emulator, layer, &mut audit.deletions)? {
            RefitOutcome::Certified(t) => {
                tests[layer - 1] = t;
                stall_run = 0;
                layer -= 1;
            }
            RefitOutcome::Updated(l) => {
                stall_run = 0;
                layer = l;
            }
            RefitOutcome::Stalled => {
                audit.stalls += 1;
                stall_run += 1;
                if stall_run > params.stall_retries {
                    let sufs = suffixes(class, horizon, layer);
                    tests[layer - 1] =
                        DetTestPolicies { pairs: compute_tests(&emulator, &sufs, layer), certified: true, forced: true };
                    audit.forced_certifications += 1;
                    stall_run = 0;
                    layer -= 1;
                }
            }
        }
    }

    let initial = ctx.access.initial_state();
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, pi) in class.iter().enumerate() {
        let acts: Vec<Action> = (1..=horizon).map(|l| pi.open_loop_action(l).expect("open-loop class")).collect();
        let v = emulator.value(1, initial, &acts);
        if v > best.0 {
            best = (v, j);
        }
    }
    audit.episodes = ctx.access.episodes() - start_episodes;
    Ok(DetRun { policy_index: best.1, policy: class.get(best.1).clone(), emulator, tests, audit })
}

/// Oracle audit of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetVerification {
    pub best_value: f64,
    pub value: f64,
    pub suboptimality: f64,
    pub deletions: usize,
    /// Deletions that removed the true successor.
    pub ground_truth_deletions: usize,
    /// `max_h max_{s,a,π} |Q^π(s,a) − Q̂^π(s,a)| / Γ_h` with `Γ_h = C (H−h+1) ε / H`.
    pub gamma_ratio: f64,
    pub gamma_constant: f64,
}

/// Compares a run against the true environment.
pub fn verify_det(env: &EnvBundle, run: &DetRun, eps: f64, gamma_constant: f64) -> Result<DetVerification, DetError> {
    let m = &env.mdp;
    let lat = m.latent();
    let horizon = m.horizon();
    let (best_value, _) = crate::oracle::best_in_class(m, &env.class)?;
    let value = exact_values_from(m, &run.policy, 1)?.initial_value(m);
    let ground_truth_deletions = run
        .audit
        .deletions
        .iter()
        .filter(|d| lat.deterministic_successor(d.layer, d.state, d.action) == Some(d.removed))
        .count();
    let mut gamma_ratio: f64 = 0.0;
    for h in 1..=horizon {
        let gamma = gamma_constant * (horizon - h + 1) as f64 * eps / horizon as f64;
        for pi in env.class.iter() {
            let truth = exact_values_from(m, pi, h)?;
            let acts: Vec<Action> = (h + 1..=horizon).map(|l| pi.open_loop_action(l).expect("open-loop class")).collect();
            for s in 0..lat.state_count(h) {
                for a in 0..lat.action_count() {
                    let mut full = vec![a];
                    full.extend(&acts);
                    let est = run.emulator.value(h, s, &full);
                    gamma_ratio = gamma_ratio.max((truth.q(h, s, a) - est).abs() / gamma);
                }
            }
        }
    }
    Ok(DetVerification {
        best_value,
        value,
        suboptimality: best_value - value,
        deletions: run.audit.deletions.len(),
        ground_truth_deletions,
        gamma_ratio,
        gamma_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::Mode;
    use crate::envs::{random_block_mdp, RandomParams};

    fn det_env(seed: u64, horizon: usize) -> EnvBundle {
        let mut p = RandomParams::new(3, 2, horizon, 3, seed);
        p.deterministic = true;
        random_block_mdp(&p).unwrap()
    }

    #[test]
    fn rejects_table_classes() {
        let mut p = RandomParams::new(2, 2, 2, 2, 0);
        p.deterministic = true;
        p.table_policies = 1;
        let env = random_block_mdp(&p).unwrap();
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridPlusEmission, 0).unwrap();
        assert_eq!(run_plhr_d(&mut acc, &env.class, &DetParams::new(0.1)).unwrap_err(), DetError::UnsupportedPolicyClass);
    }

    #[test]
    fn single_layer_is_reward_argmax() {
        let env = det_env(4, 1);
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridPlusEmission, 1).unwrap().with_oracle_mc(true);
        let run = run_plhr_d(&mut acc, &env.class, &DetParams::new(0.1)).unwrap();
        let ver = verify_det(&env, &run, 0.1, 64.0).unwrap();
        assert!(ver.suboptimality.abs() < 1e-12);
    }

    #[test]
    fn exact_mc_recovers_optimum_without_bad_deletions() {
        let env = det_env(8, 3);
        let mut params = DetParams::new(0.1);
        params.tol_scale = 4.0;
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridPlusEmission, 2).unwrap().with_oracle_mc(true);
        let run = run_plhr_d(&mut acc, &env.class, &params).unwrap();
        let ver = verify_det(&env, &run, 0.1, 64.0).unwrap();
        assert_eq!(ver.ground_truth_deletions, 0);
        assert!(ver.suboptimality <= 0.1, "{ver:?}");
    }

    #[test]
    fn decoder_keeps_indistinguishable_candidates() {
        let env = det_env(3, 2);
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridPlusEmission, 2).unwrap().with_oracle_mc(true);
        let mut emu = LatentEmulator::new(env.mdp.latent().state_counts(), 2);
        // With all-zero rewards every test sees the same value everywhere.
        let mut tests = DetTestPolicies::default();
        for s in 0..3 {
            for t in s..3 {
                tests.pairs.insert((s, t), 0);
            }
        }
        emu.r_hat[1] = vec![vec![0.0; 2]; 3];
        let before = emu.conf[0][0][1].clone();
        let kept = decoder_d(&mut acc, &env.class, &emu, &tests, 10.0, 0.01, (1, 0, 1)).unwrap();
        assert_eq!(kept, before);
    }
}
