//! Policy learning with hybrid resets for stochastic Block MDPs. An observation-level
//! policy emulator is built backwards from layer `H`: each transition row is confined
//! to a confidence set derived from a decoder graph, and a refit pass corrects rows by
//! online mirror descent whenever test-policy predictions disagree with rollouts.

pub mod confidence;
pub mod emulator;
pub mod graph;
pub mod verify;

use std::collections::{btree_map, hash_map, BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{hoeffding_n, AccessError, AccessHandle, McStart};
use crate::model::{Action, BlockMdp, Obs, Policy, PolicyClass, PolicyError};
use confidence::{omd_step, ConfidenceError, ConfidenceSet, ConstraintBlock, L1Constraint};
use emulator::{distinguishing_tests, ClassActions, PolicyEmulator, TestPolicy, TestPolicySet, ValueCache};
use graph::DecoderGraph;
use verify::{check_decode, LemmaCheck};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlhrError {
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("transition ({layer}, {state}, {action}): {source}")]
    Confidence {
        layer: usize,
        state: usize,
        action: Action,
        #[source]
        source: ConfidenceError,
    },
    #[error("transition ({layer}, {state}, {action}) exceeded the refit cap of {cap} updates")]
    RefitCap { layer: usize, state: usize, action: Action, cap: usize },
    #[error("main loop exceeded {0} iterations")]
    LoopCap(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Algorithm parameters. Thresholds left as `None` take the defaults documented on
/// [`ResolvedParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlhrParams {
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_reset: usize,
    pub n_dec: usize,
    pub n_mc: usize,
    /// Rollouts per reward estimate; defaults to Hoeffding sizing at precision `ε/H`.
    #[serde(default)]
    pub n_reward: Option<usize>,
    #[serde(default)]
    pub eps_tol: Option<f64>,
    #[serde(default)]
    pub eps_dec: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default)]
    pub refit_cap: Option<usize>,
    /// Refits that find violations but flag no transition are repeated this many times
    /// before the layer is certified anyway.
    #[serde(default = "default_stall_retries")]
    pub stall_retries: usize,
    #[serde(default = "default_max_loops")]
    pub max_loops: usize,
}

fn default_delta() -> f64 {
    0.01
}
fn default_beta_scale() -> f64 {
    4.0
}
fn default_stall_retries() -> usize {
    2
}
fn default_max_loops() -> usize {
    100_000
}

impl PlhrParams {
    pub fn new(eps: f64, n_reset: usize, n_dec: usize, n_mc: usize) -> Self {
        Self {
            eps,
            delta: default_delta(),
            n_reset,
            n_dec,
            n_mc,
            n_reward: None,
            eps_tol: None,
            eps_dec: None,
            beta: None,
            beta_scale: default_beta_scale(),
            refit_cap: None,
            stall_retries: default_stall_retries(),
            max_loops: default_max_loops(),
        }
    }

    /// Sample sizes from the asymptotic formulas with unit constants.
    pub fn asymptotic(c_push: f64, states: usize, actions: usize, horizon: usize, class_size: usize, eps: f64, delta: f64) -> Self {
        let (s, a, h, n) = (states as f64, actions as f64, horizon as f64, class_size as f64);
        let log_reset = (s * a * n / delta).ln();
        let log_dec = (c_push * s * a * h * n / (eps * delta)).ln();
        let mut p = Self::new(
            eps,
            (c_push * s * a * a / eps.powi(3) * log_reset).ceil() as usize,
            (s * s * a * a / (eps * eps) * log_dec).ceil() as usize,
            (log_dec / (eps * eps)).ceil() as usize,
        );
        p.delta = delta;
        p
    }

    /// Fills in defaults for a problem with the given dimensions.
    pub fn resolve(&self, states: usize, actions: usize, horizon: usize, class_size: usize) -> Result<ResolvedParams, PlhrError> {
        if self.eps.is_nan() || self.eps <= 0.0 || self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(PlhrError::Params("need eps > 0 and 0 < delta < 1".into()));
        }
        if self.n_reset == 0 || self.n_dec == 0 || self.n_mc == 0 {
            return Err(PlhrError::Params("sample sizes must be positive".into()));
        }
        let h = horizon as f64;
        let eps = self.eps;
        let (s, a, n) = (states as f64, actions as f64, class_size as f64);
        let eps_tol = self.eps_tol.unwrap_or(80.0 * h * eps);
        let eps_dec = self.eps_dec.unwrap_or(81.0 * h * eps);
        let beta = self
            .beta
            .unwrap_or(self.beta_scale * ((s * a * a * (s * a * n / self.delta).ln()).sqrt() + s) * eps);
        let refit_cap = self.refit_cap.unwrap_or((4.0 * (self.n_reset as f64).ln() / (eps * eps)).ceil() as usize);
        let n_reward = self.n_reward.unwrap_or_else(|| hoeffding_n(eps / h, self.delta));
        Ok(ResolvedParams { eps, eps_tol, eps_dec, beta, refit_cap, n_reward })
    }
}

/// Thresholds in effect for a run. Defaults: `ε_tol = 80Hε`, `ε_dec = 81Hε`,
/// `β = beta_scale · (√(S A² log(S A |Π| / δ)) + S) · ε`, refit cap `4 log(n_reset)/ε²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub eps: f64,
    pub eps_tol: f64,
    pub eps_dec: f64,
    pub beta: f64,
    pub refit_cap: usize,
    pub n_reward: usize,
}

/// One OMD update: the row before the update, the loss, and the row after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmdRecord {
    pub prev: Vec<f64>,
    pub loss: Vec<f64>,
    pub next: Vec<f64>,
}

/// All OMD updates applied to one transition row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmdLog {
    pub layer: usize,
    pub state: usize,
    pub action: Action,
    pub steps: Vec<OmdRecord>,
}

/// Run record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlhrAudit {
    pub schema: u32,
    pub params: ResolvedParams,
    pub layer_trace: Vec<usize>,
    pub decodes: usize,
    pub refits: usize,
    pub stalls: usize,
    pub forced_certifications: usize,
    pub omd_updates: usize,
    pub omd_logs: Vec<OmdLog>,
    pub lemma_checks: Vec<LemmaCheck>,
    pub episodes: u64,
}

/// Result of [`run_plhr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlhrRun {
    pub policy_index: usize,
    pub policy: Policy,
    pub emulator: PolicyEmulator,
    pub tests: Vec<TestPolicySet>,
    pub confidence: Vec<Vec<Vec<ConfidenceSet>>>,
    pub audit: PlhrAudit,
}

/// Class members with distinct behaviour on layers `h..=H`, lowest index first.
fn suffix_representatives(class: &PolicyClass, horizon: usize, h: usize) -> Vec<usize> {
    let mut seen_open: Vec<Vec<Action>> = Vec::new();
    let mut seen_other: Vec<&Policy> = Vec::new();
    let mut out = Vec::new();
    for (j, pi) in class.iter().enumerate() {
        let open: Option<Vec<Action>> = (h..=horizon).map(|l| pi.open_loop_action(l)).collect();
        let fresh = match open {
            Some(acts) => {
                if seen_open.contains(&acts) {
                    false
                } else {
                    seen_open.push(acts);
                    true
                }
            }
            None => {
                if seen_other.contains(&pi) {
                    false
                } else {
                    seen_other.push(pi);
                    true
                }
            }
        };
        if fresh {
            out.push(j);
        }
    }
    out
}

/// Candidate test policies at layer `h`, in tie-break order.
fn test_candidates(class: &PolicyClass, horizon: usize, actions: usize, h: usize) -> Vec<TestPolicy> {
    let suffixes = if h == horizon { vec![0] } else { suffix_representatives(class, horizon, h + 1) };
    let mut out = Vec::new();
    for a in 0..actions {
        for &j in &suffixes {
            out.push(TestPolicy { action: a, suffix: j });
        }
    }
    out
}

struct State<'c, 'a> {
    access: &'c mut AccessHandle<'a>,
    class: &'c PolicyClass,
    params: &'c PlhrParams,
    rp: ResolvedParams,
    emu: PolicyEmulator,
    acts: ClassActions,
    cache: ValueCache,
    conf: Vec<Vec<Vec<ConfidenceSet>>>,
    tests: Vec<TestPolicySet>,
    omd: BTreeMap<(usize, usize, Action), OmdLog>,
    audit: PlhrAudit,
    verifier: Option<&'c BlockMdp>,
}

enum RefitOutcome {
    Certified(TestPolicySet),
    Updated(usize),
    Stalled,
}

impl State<'_, '_> {
    fn horizon(&self) -> usize {
        self.emu.horizon
    }

    fn mc(&mut self, x: Obs, t: TestPolicy, n: usize) -> Result<f64, PlhrError> {
        Ok(self.access.mc(McStart::Obs(x), self.class.get(t.suffix), Some(t.suffix), n, Some(t.action))?.mean)
    }

    fn decode(&mut self, h: usize, i: usize, a: Action) -> Result<(), PlhrError> {
        let eps = self.rp.eps;
        let n_mc = self.params.n_mc;
        let x = self.emu.states[h - 1][i];
        let mut samples = Vec::with_capacity(self.params.n_dec);
        for _ in 0..self.params.n_dec {
            self.access.reset_local(x)?;
            samples.push(self.access.step(a)?.obs.expect("decoding happens below the last layer"));
        }
        let tests = self.tests[h].clone();
        let distinct = tests.distinct();
        let n_right = self.emu.layer_size(h + 1);
        // Emulator predictions of each distinct test at every right vertex.
        let mut predicted: HashMap<TestPolicy, Vec<f64>> = HashMap::new();
        for &t in &distinct {
            let tab = self.cache.get(&self.emu, &self.acts, t.suffix);
            predicted.insert(t, (0..n_right).map(|r| tab.q(h + 1, r, t.action)).collect());
        }
        let thresh = self.rp.eps_dec + 2.0 * eps;
        let mut matches = Vec::with_capacity(samples.len());
        for &xl in &samples {
            let mut est: HashMap<TestPolicy, f64> = HashMap::new();
            for &t in &distinct {
                let v = self.mc(xl, t, n_mc)?;
                est.insert(t, v);
            }
            let row: Vec<usize> = (0..n_right)
                .filter(|&r| {
                    (0..n_right).all(|r2| {
                        if r2 == r {
                            return true;
                        }
                        let t = tests.get(r, r2);
                        (est[&t] - predicted[&t][r]).abs() <= thresh
                    })
                })
                .collect();
            matches.push(row);
        }
        let graph = DecoderGraph::new(n_right, matches);
        let block = self.build_block(h, &samples, &graph)?;
        self.conf[h - 1][i][a].push(block);
        let current = self.emu.transition(h, i, a).map(|r| r.to_vec());
        let row = self.conf[h - 1][i][a]
            .pick_feasible(current.as_deref())
            .map_err(|source| PlhrError::Confidence { layer: h, state: i, action: a, source })?;
        if current.as_deref() != Some(&row[..]) {
            self.emu.set_transition(h, i, a, row);
        }
        self.audit.decodes += 1;
        if let Some(m) = self.verifier {
            let check = check_decode(
                m,
                &self.emu,
                &self.acts,
                &mut self.cache,
                &samples,
                &graph,
                &self.conf[h - 1][i][a],
                (h, i, a),
                eps,
                self.rp.eps_dec,
            );
            self.audit.lemma_checks.push(check);
        }
        Ok(())
    }

    fn build_block(&self, h: usize, samples: &[Obs], graph: &DecoderGraph) -> Result<ConstraintBlock, PlhrError> {
        let n_right = graph.n_right;
        let n_left = samples.len() as f64;
        let comps = &graph.components;
        let marginal = L1Constraint::new(
            n_right,
            comps.iter().map(|c| c.right.clone()).collect(),
            comps.iter().map(|c| c.left.len() as f64 / n_left).collect(),
            3.0 * self.rp.eps,
        );
        // One constraint per distinct behaviour on the right states and the samples.
        let right = &self.emu.states[h];
        let mut behaviours: Vec<(Vec<Action>, Vec<Action>)> = Vec::new();
        for pi in self.class.iter() {
            let r_acts = right.iter().map(|&x| pi.act(x)).collect::<Result<Vec<_>, _>>()?;
            let l_acts = samples.iter().map(|&x| pi.act(x)).collect::<Result<Vec<_>, _>>()?;
            let key = (r_acts, l_acts);
            if !behaviours.contains(&key) {
                behaviours.push(key);
            }
        }
        let actions = self.emu.actions;
        let pushforward = behaviours
            .iter()
            .map(|(r_acts, l_acts)| {
                let mut groups = Vec::new();
                let mut targets = Vec::new();
                for c in comps {
                    for b in 0..actions {
                        groups.push(c.right.iter().copied().filter(|&r| r_acts[r] == b).collect());
                        targets.push(c.left.iter().filter(|&&l| l_acts[l] == b).count() as f64 / n_left);
                    }
                }
                L1Constraint::new(n_right, groups, targets, self.rp.beta)
            })
            .collect();
        // Each sample spreads its mass uniformly over its matches.
        let mut empirical = vec![0.0; n_right];
        for row in &graph.matches {
            for &r in row {
                empirical[r] += 1.0 / row.len() as f64;
            }
        }
        let total: f64 = empirical.iter().sum();
        if total > 0.0 {
            empirical.iter_mut().for_each(|v| *v /= total);
        } else {
            empirical = vec![1.0 / n_right as f64; n_right];
        }
        Ok(ConstraintBlock { marginal, pushforward, empirical })
    }

    fn refit(&mut self, h: usize) -> Result<RefitOutcome, PlhrError> {
        let horizon = self.horizon();
        let candidates = test_candidates(self.class, horizon, self.emu.actions, h);
        let tests = distinguishing_tests(&self.emu, &self.acts, &mut self.cache, &candidates, h);
        let n = self.emu.layer_size(h);
        let n_mc = self.params.n_mc;
        let mut estimates: BTreeMap<(usize, TestPolicy), f64> = BTreeMap::new();
        for i in 0..n {
            for k in 0..n {
                let t = tests.get(i, k);
                for x in [i, k] {
                    if let btree_map::Entry::Vacant(e) = estimates.entry((x, t)) {
                        e.insert(self.mc(self.emu.states[h - 1][x], t, n_mc)?);
                    }
                }
            }
        }
        let mut violations = Vec::new();
        for (&(x, t), &v) in &estimates {
            let pred = self.cache.get(&self.emu, &self.acts, t.suffix).q(h, x, t.action);
            if (v - pred).abs() >= self.rp.eps_tol {
                violations.push((x, t));
            }
        }
        if violations.is_empty() {
            return Ok(RefitOutcome::Certified(TestPolicySet { certified: true, ..tests }));
        }

        // Rollout estimates of Q^π over layers h..H, shared by all violations.
        let mut qmc: HashMap<(usize, usize, Action, usize), f64> = HashMap::new();
        let mut losses: BTreeMap<(usize, usize, Action), Vec<f64>> = BTreeMap::new();
        let flag = self.rp.eps_tol / (8.0 * horizon as f64);
        for &(_, t) in &violations {
            let j = t.suffix;
            for g in h..=horizon {
                for idx in 0..self.emu.layer_size(g) {
                    for b in 0..self.emu.actions {
                        if let hash_map::Entry::Vacant(e) = qmc.entry((g, idx, b, j)) {
                            e.insert(self.mc(self.emu.states[g - 1][idx], TestPolicy { action: b, suffix: j }, n_mc)?);
                        }
                    }
                }
            }
            for g in h..horizon {
                let next_q: Vec<f64> =
                    (0..self.emu.layer_size(g + 1)).map(|r| qmc[&(g + 1, r, self.acts.get(j, g + 1, r), j)]).collect();
                for idx in 0..self.emu.layer_size(g) {
                    for b in 0..self.emu.actions {
                        let row = self.emu.transition(g, idx, b).expect("layers at or above h are decoded");
                        let ahead: f64 = row.iter().zip(&next_q).map(|(p, q)| p * q).sum();
                        let delta = self.emu.r_hat[g - 1][idx][b] + ahead - qmc[&(g, idx, b, j)];
                        if delta.abs() >= flag {
                            let sign = delta.signum();
                            losses.insert((g, idx, b), next_q.iter().map(|q| sign * q).collect());
                        }
                    }
                }
            }
        }
        if losses.is_empty() {
            return Ok(RefitOutcome::Stalled);
        }
        let mut max_layer = 0;
        for ((g, idx, b), loss) in losses {
            let prev = self.emu.transition(g, idx, b).expect("flagged rows are set").to_vec();
            let next = omd_step(&prev, &loss, &self.conf[g - 1][idx][b], self.rp.eps)
                .map_err(|source| PlhrError::Confidence { layer: g, state: idx, action: b, source })?;
            let log = self
                .omd
                .entry((g, idx, b))
                .or_insert_with(|| OmdLog { layer: g, state: idx, action: b, steps: Vec::new() });
            log.steps.push(OmdRecord { prev, loss, next: next.clone() });
            if log.steps.len() > self.rp.refit_cap {
                return Err(PlhrError::RefitCap { layer: g, state: idx, action: b, cap: self.rp.refit_cap });
            }
            self.emu.set_transition(g, idx, b, next);
            self.audit.omd_updates += 1;
            max_layer = max_layer.max(g);
        }
        Ok(RefitOutcome::Updated(max_layer))
    }
}

/// Learns a policy emulator with `μ`-resets and local resets, and returns the class
/// policy with the best emulator value averaged over the sampled start observations.
/// Passing `verifier` records structural checks on every decode using the hidden
/// decoder; it does not influence the run.
pub fn run_plhr(
    access: &mut AccessHandle<'_>,
    class: &PolicyClass,
    params: &PlhrParams,
    verifier: Option<&BlockMdp>,
) -> Result<PlhrRun, PlhrError> {
    let horizon = access.horizon();
    let actions = access.action_count();
    let states = access.state_counts().iter().copied().max().unwrap_or(1);
    let rp = params.resolve(states, actions, horizon, class.len())?;
    let start_episodes = access.episodes();

    let mut layers = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let mut layer = Vec::with_capacity(params.n_reset);
        for _ in 0..params.n_reset {
            layer.push(access.reset_mu(h)?);
        }
        layers.push(layer);
    }
    let mut emu = PolicyEmulator::new(layers, actions);
    let probe = Policy::OpenLoop(vec![0; horizon]);
    for h in 1..=horizon {
        for i in 0..params.n_reset {
            let x = emu.states[h - 1][i];
            for a in 0..actions {
                emu.r_hat[h - 1][i][a] = access.mc_partial(McStart::Obs(x), &probe, None, rp.n_reward, Some(a), h)?.mean;
            }
        }
    }
    let acts = ClassActions::new(&emu, class)?;
    let conf = (1..=horizon)
        .map(|h| {
            let dim = if h < horizon { params.n_reset } else { 0 };
            vec![vec![ConfidenceSet::simplex(dim); actions]; params.n_reset]
        })
        .collect();
    let audit = PlhrAudit {
        schema: 1,
        params: rp.clone(),
        layer_trace: Vec::new(),
        decodes: 0,
        refits: 0,
        stalls: 0,
        forced_certifications: 0,
        omd_updates: 0,
        omd_logs: Vec::new(),
        lemma_checks: Vec::new(),
        episodes: 0,
    };
    let mut st = State {
        access,
        class,
        params,
        rp,
        emu,
        acts,
        cache: ValueCache::default(),
        conf,
        tests: vec![TestPolicySet::default(); horizon],
        omd: BTreeMap::new(),
        audit,
        verifier,
    };

    let mut layer = horizon;
    let mut stall_run = 0;
    let mut loops = 0;
    while layer != 0 {
        loops += 1;
        if loops > params.max_loops {
            return Err(PlhrError::LoopCap(params.max_loops));
        }
        st.audit.layer_trace.push(layer);
        if layer < horizon {
            for i in 0..params.n_reset {
                for a in 0..actions {
                    st.decode(layer, i, a)?;
                }
            }
        }
        st.audit.refits += 1;
        match st.refit(layer)? {
            RefitOutcome::Certified(t) => {
                st.tests[layer - 1] = t;
                stall_run = 0;
                layer -= 1;
            }
            RefitOutcome::Updated(l) => {
                stall_run = 0;
                layer = l;
            }
            RefitOutcome::Stalled => {
                st.audit.stalls += 1;
                stall_run += 1;
                if stall_run > params.stall_retries {
                    let candidates = test_candidates(class, horizon, actions, layer);
                    let mut t = distinguishing_tests(&st.emu, &st.acts, &mut st.cache, &candidates, layer);
                    t.certified = true;
                    t.forced = true;
                    st.tests[layer - 1] = t;
                    st.audit.forced_certifications += 1;
                    stall_run = 0;
                    layer -= 1;
                }
            }
        }
    }

    let n1 = st.emu.layer_size(1) as f64;
    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..class.len() {
        let v = st.cache.get(&st.emu, &st.acts, j).v[0].iter().sum::<f64>() / n1;
        if v > best.0 {
            best = (v, j);
        }
    }
    st.audit.episodes = st.access.episodes() - start_episodes;
    st.audit.omd_logs = std::mem::take(&mut st.omd).into_values().collect();
    Ok(PlhrRun {
        policy_index: best.1,
        policy: class.get(best.1).clone(),
        emulator: st.emu,
        tests: st.tests,
        confidence: st.conf,
        audit: st.audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::Mode;
    use crate::envs::{random_block_mdp, RandomParams};

    fn small_params() -> PlhrParams {
        let mut p = PlhrParams::new(0.1, 8, 12, 50);
        p.eps_tol = Some(0.2);
        p.eps_dec = Some(0.21);
        p.n_reward = Some(50);
        p
    }

    #[test]
    fn defaults_follow_documented_formulas() {
        let p = PlhrParams::new(0.1, 40, 60, 400);
        let rp = p.resolve(2, 2, 2, 4).unwrap();
        assert!((rp.eps_tol - 16.0).abs() < 1e-12);
        assert!((rp.eps_dec - 16.2).abs() < 1e-12);
        assert!(rp.eps_dec > rp.eps_tol);
        assert_eq!(rp.refit_cap, (4.0 * 40f64.ln() / 0.01).ceil() as usize);
    }

    #[test]
    fn oracle_mode_run_is_deterministic_and_checked() {
        let mut rp = RandomParams::new(2, 2, 2, 3, 11);
        rp.deterministic = false;
        let env = random_block_mdp(&rp).unwrap();
        let run = |seed| {
            let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridReset, seed).unwrap().with_oracle_mc(true);
            run_plhr(&mut acc, &env.class, &small_params(), Some(&env.mdp)).unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(serde_json::to_string(&a.audit).unwrap(), serde_json::to_string(&b.audit).unwrap());
        assert!(!a.audit.lemma_checks.is_empty());
        for c in &a.audit.lemma_checks {
            assert!(c.decode_valid && c.biclique && c.width_ok, "{c:?}");
        }
        // Every transition row is a distribution.
        for h in 1..2 {
            for i in 0..8 {
                for act in 0..2 {
                    let row = a.emulator.transition(h, i, act).unwrap();
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn online_mode_is_rejected() {
        let env = random_block_mdp(&RandomParams::new(2, 2, 2, 3, 1)).unwrap();
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::Online, 0).unwrap();
        assert!(matches!(run_plhr(&mut acc, &env.class, &small_params(), None), Err(PlhrError::Access(_))));
    }
}
