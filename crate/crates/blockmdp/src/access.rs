//! The gate between learners and environments. An [`AccessHandle`] enforces one
//! interaction model, meters episodes, and derives every random draw from a root
//! seed so that identical call sequences replay identically.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sample_index, Action, BlockMdp, Obs, Policy, PolicyError};
use crate::oracle::{exact_values_range, ObsDistribution};

/// Rollouts per MC request above which the handle fans out across threads.
const PARALLEL_ROLLOUTS: usize = 512;

/// Interaction models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Generative,
    LocalSim,
    MuReset,
    HybridReset,
    HybridPlusEmission,
}

/// Access primitives, used for gating and per-primitive counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    ResetOnline,
    ResetMu,
    ResetLocal,
    GenerativeQuery,
    Step,
    SampleEmission,
}

impl Mode {
    /// Whether `p` may be called at all under this mode.
    pub fn permits(self, p: Primitive) -> bool {
        use Primitive::*;
        match p {
            ResetOnline | Step => true,
            ResetMu => matches!(self, Mode::MuReset | Mode::HybridReset | Mode::HybridPlusEmission),
            ResetLocal | GenerativeQuery => {
                matches!(self, Mode::Generative | Mode::LocalSim | Mode::HybridReset | Mode::HybridPlusEmission)
            }
            SampleEmission => self == Mode::HybridPlusEmission,
        }
    }

    /// Whether local resets are restricted to previously returned observations.
    pub fn requires_seen(self) -> bool {
        self != Mode::Generative
    }
}

/// Access-protocol violations and invalid requests.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccessError {
    #[error("{primitive:?} is not permitted in {mode:?} mode")]
    ModeViolation { mode: Mode, primitive: Primitive },
    #[error("local reset to {obs}, which this handle never returned")]
    UnseenReset { obs: Obs },
    #[error("layer {layer} is outside 1..={horizon}")]
    LayerMismatch { layer: usize, horizon: usize },
    #[error("step called without an active episode")]
    NoActiveEpisode,
    #[error("observation {obs} does not exist")]
    InvalidObservation { obs: Obs },
    #[error("action {action} is outside 0..{actions}")]
    InvalidAction { action: Action, actions: usize },
    #[error("latent state {state} does not exist at layer {layer}")]
    InvalidState { layer: usize, state: usize },
    #[error("mode requires a reset distribution but none was supplied")]
    MissingMu,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Where an MC estimate starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McStart {
    /// Local reset to a fixed observation.
    Obs(Obs),
    /// Fresh draw from `μ_h` per rollout.
    Mu(usize),
    /// Online reset from the initial distribution.
    Initial,
    /// Fresh emission of a latent state per rollout.
    Emission { layer: usize, state: usize },
}

/// Result of a Monte Carlo evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub n: usize,
    pub start: McStart,
    pub layer: usize,
    pub policy_id: Option<usize>,
    pub forced_first_action: Option<Action>,
}

/// Outcome of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    /// Next observation, absent after the last layer.
    pub obs: Option<Obs>,
    pub reward: f64,
    pub done: bool,
}

/// One line of the sample audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub episode: u64,
    pub primitive: Primitive,
    pub layer: usize,
    pub policy_id: Option<usize>,
}

/// Smallest `n` with Hoeffding radius `√(ln(2/δ)/(2n)) ≤ precision`.
pub fn hoeffding_n(precision: f64, delta: f64) -> usize {
    ((2.0 / delta).ln() / (2.0 * precision * precision)).ceil().max(1.0) as usize
}

/// Two-sided Hoeffding radius for `n` samples in `[0,1]` at confidence `1 − δ`.
pub fn hoeffding_radius(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Clone, Copy, Debug)]
struct Cursor {
    layer: usize,
    state: usize,
}

/// Metered, mode-enforcing view of an environment.
pub struct AccessHandle<'a> {
    env: &'a BlockMdp,
    mu: Option<&'a ObsDistribution>,
    mode: Mode,
    seed: u64,
    seen: HashSet<Obs>,
    episodes: u64,
    counts: BTreeMap<Primitive, u64>,
    next_stream: u64,
    cursor: Option<Cursor>,
    rng: ChaCha8Rng,
    oracle_mc: bool,
    audit: Option<Vec<AuditRecord>>,
}

impl<'a> AccessHandle<'a> {
    pub fn new(env: &'a BlockMdp, mu: Option<&'a ObsDistribution>, mode: Mode, seed: u64) -> Result<Self, AccessError> {
        if mode.permits(Primitive::ResetMu) && mu.is_none() {
            return Err(AccessError::MissingMu);
        }
        Ok(Self {
            env,
            mu,
            mode,
            seed,
            seen: HashSet::new(),
            episodes: 0,
            counts: BTreeMap::new(),
            next_stream: 0,
            cursor: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            oracle_mc: false,
            audit: None,
        })
    }

    /// Replaces MC sampling by exact expectations while still metering episodes.
    /// Only for lemma verification; learners never enable this themselves.
    pub fn with_oracle_mc(mut self, on: bool) -> Self {
        self.oracle_mc = on;
        self
    }

    /// Records one audit line per episode.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn oracle_mc(&self) -> bool {
        self.oracle_mc
    }

    pub fn horizon(&self) -> usize {
        self.env.horizon()
    }

    pub fn action_count(&self) -> usize {
        self.env.action_count()
    }

    /// Latent layer sizes; known to learners that assume a known state space.
    pub fn state_counts(&self) -> &[usize] {
        self.env.latent().state_counts()
    }

    /// The fixed latent start state.
    pub fn initial_state(&self) -> usize {
        self.env.latent().initial_state()
    }

    /// Total episodes consumed so far.
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Per-primitive call counts.
    pub fn counts(&self) -> &BTreeMap<Primitive, u64> {
        &self.counts
    }

    pub fn count(&self, p: Primitive) -> u64 {
        self.counts.get(&p).copied().unwrap_or(0)
    }

    pub fn has_seen(&self, obs: Obs) -> bool {
        self.seen.contains(&obs)
    }

    pub fn audit_log(&self) -> Option<&[AuditRecord]> {
        self.audit.as_deref()
    }

    /// Writes the audit log as JSON lines.
    pub fn write_audit_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in self.audit.iter().flatten() {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Fresh generator for the next call index.
    fn stream(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.next_stream);
        self.next_stream += 1;
        rng
    }

    /// Reserves `n` consecutive streams and returns the first index.
    fn reserve_streams(&mut self, n: usize) -> u64 {
        let base = self.next_stream;
        self.next_stream += n as u64;
        base
    }

    fn gate(&self, p: Primitive) -> Result<(), AccessError> {
        if self.mode.permits(p) {
            Ok(())
        } else {
            Err(AccessError::ModeViolation { mode: self.mode, primitive: p })
        }
    }

    fn bump(&mut self, p: Primitive, n: u64) {
        *self.counts.entry(p).or_insert(0) += n;
    }

    fn begin_episodes(&mut self, p: Primitive, layer: usize, policy_id: Option<usize>, n: u64) {
        self.bump(p, n);
        if let Some(log) = self.audit.as_mut() {
            for k in 0..n {
                log.push(AuditRecord { episode: self.episodes + k, primitive: p, layer, policy_id });
            }
        }
        self.episodes += n;
    }

    fn check_layer(&self, layer: usize) -> Result<(), AccessError> {
        if layer == 0 || layer > self.env.horizon() {
            Err(AccessError::LayerMismatch { layer, horizon: self.env.horizon() })
        } else {
            Ok(())
        }
    }

    fn check_obs(&self, obs: Obs) -> Result<(), AccessError> {
        self.check_layer(obs.layer)?;
        if self.env.is_valid_obs(obs) {
            Ok(())
        } else {
            Err(AccessError::InvalidObservation { obs })
        }
    }

    fn check_action(&self, a: Action) -> Result<(), AccessError> {
        if a < self.env.action_count() {
            Ok(())
        } else {
            Err(AccessError::InvalidAction { action: a, actions: self.env.action_count() })
        }
    }

    fn check_local(&self, obs: Obs, p: Primitive) -> Result<(), AccessError> {
        self.gate(p)?;
        self.check_obs(obs)?;
        if self.mode.requires_seen() && !self.seen.contains(&obs) {
            return Err(AccessError::UnseenReset { obs });
        }
        Ok(())
    }

    fn check_state(&self, layer: usize, state: usize) -> Result<(), AccessError> {
        self.check_layer(layer)?;
        if state >= self.env.latent().state_count(layer) {
            return Err(AccessError::InvalidState { layer, state });
        }
        Ok(())
    }

    /// Starts an episode at the initial state; returns its layer-1 observation.
    pub fn reset_online(&mut self) -> Result<Obs, AccessError> {
        self.gate(Primitive::ResetOnline)?;
        self.begin_episodes(Primitive::ResetOnline, 1, None, 1);
        self.rng = self.stream();
        let s1 = self.env.latent().initial_state();
        let obs = self.env.sample_emission(1, s1, &mut self.rng);
        self.cursor = Some(Cursor { layer: 1, state: s1 });
        self.seen.insert(obs);
        Ok(obs)
    }

    /// Starts an episode at an observation drawn from `μ_h`.
    pub fn reset_mu(&mut self, h: usize) -> Result<Obs, AccessError> {
        self.gate(Primitive::ResetMu)?;
        self.check_layer(h)?;
        let mu = self.mu.ok_or(AccessError::MissingMu)?;
        self.begin_episodes(Primitive::ResetMu, h, None, 1);
        self.rng = self.stream();
        let obs = Obs::new(h, sample_index(mu.layer(h), &mut self.rng));
        self.cursor = Some(Cursor { layer: h, state: self.env.decode(obs) });
        self.seen.insert(obs);
        Ok(obs)
    }

    /// Starts an episode at a previously returned observation.
    pub fn reset_local(&mut self, obs: Obs) -> Result<(), AccessError> {
        self.check_local(obs, Primitive::ResetLocal)?;
        self.begin_episodes(Primitive::ResetLocal, obs.layer, None, 1);
        self.rng = self.stream();
        self.cursor = Some(Cursor { layer: obs.layer, state: self.env.decode(obs) });
        Ok(())
    }

    /// One-step episode from `obs`: returns the next observation (absent at layer H) and reward.
    pub fn generative_query(&mut self, obs: Obs, a: Action) -> Result<(Option<Obs>, f64), AccessError> {
        self.check_local(obs, Primitive::GenerativeQuery)?;
        self.check_action(a)?;
        self.begin_episodes(Primitive::GenerativeQuery, obs.layer, None, 1);
        let mut rng = self.stream();
        let (next, r) = transition(self.env, obs.layer, self.env.decode(obs), a, &mut rng);
        let next_obs = next.map(|c| self.env.sample_emission(c.layer, c.state, &mut rng));
        if let Some(o) = next_obs {
            self.seen.insert(o);
        }
        Ok((next_obs, r))
    }

    /// Advances the active episode.
    pub fn step(&mut self, a: Action) -> Result<StepResult, AccessError> {
        self.gate(Primitive::Step)?;
        self.check_action(a)?;
        let cur = self.cursor.ok_or(AccessError::NoActiveEpisode)?;
        self.bump(Primitive::Step, 1);
        let (next, reward) = transition(self.env, cur.layer, cur.state, a, &mut self.rng);
        self.cursor = next;
        let obs = next.map(|c| self.env.sample_emission(c.layer, c.state, &mut self.rng));
        if let Some(o) = obs {
            self.seen.insert(o);
        }
        Ok(StepResult { obs, reward, done: next.is_none() })
    }

    /// Draws `x ∼ ψ(s)` at `layer`. Not an episode; the result joins the seen set.
    pub fn sample_emission(&mut self, layer: usize, state: usize) -> Result<Obs, AccessError> {
        self.gate(Primitive::SampleEmission)?;
        self.check_state(layer, state)?;
        self.bump(Primitive::SampleEmission, 1);
        let mut rng = self.stream();
        let obs = self.env.sample_emission(layer, state, &mut rng);
        self.seen.insert(obs);
        Ok(obs)
    }

    /// Mean return of `n` independent partial episodes of `policy` from `start`,
    /// optionally forcing the first action. Consumes exactly `n` episodes.
    pub fn mc(
        &mut self,
        start: McStart,
        policy: &Policy,
        policy_id: Option<usize>,
        n: usize,
        forced_first_action: Option<Action>,
    ) -> Result<McEstimate, AccessError> {
        self.mc_partial(start, policy, policy_id, n, forced_first_action, self.env.horizon())
    }

    /// Like [`Self::mc`], but each rollout stops after layer `end_layer`.
    pub fn mc_partial(
        &mut self,
        start: McStart,
        policy: &Policy,
        policy_id: Option<usize>,
        n: usize,
        forced_first_action: Option<Action>,
        end_layer: usize,
    ) -> Result<McEstimate, AccessError> {
        let n = n.max(1);
        self.check_layer(end_layer)?;
        if let Some(a) = forced_first_action {
            self.check_action(a)?;
        }
        let (layer, primitive) = match start {
            McStart::Obs(obs) => {
                self.check_local(obs, Primitive::ResetLocal)?;
                (obs.layer, Primitive::ResetLocal)
            }
            McStart::Mu(h) => {
                self.gate(Primitive::ResetMu)?;
                self.check_layer(h)?;
                self.mu.ok_or(AccessError::MissingMu)?;
                (h, Primitive::ResetMu)
            }
            McStart::Initial => {
                self.gate(Primitive::ResetOnline)?;
                (1, Primitive::ResetOnline)
            }
            McStart::Emission { layer, state } => {
                self.gate(Primitive::SampleEmission)?;
                self.gate(Primitive::ResetLocal)?;
                self.check_state(layer, state)?;
                (layer, Primitive::ResetLocal)
            }
        };
        if end_layer < layer {
            return Err(AccessError::LayerMismatch { layer: end_layer, horizon: self.env.horizon() });
        }
        let eval = match forced_first_action {
            Some(a) => policy.with_prefix(layer, a),
            None => policy.clone(),
        };
        self.begin_episodes(primitive, layer, policy_id, n as u64);
        if matches!(start, McStart::Emission { .. }) {
            self.bump(Primitive::SampleEmission, n as u64);
        }
        let mean = if self.oracle_mc {
            self.exact_start_value(start, layer, end_layer, &eval)?
        } else {
            let base = self.reserve_streams(n);
            let env = self.env;
            let mu = self.mu;
            let one = |k: usize| -> Result<(f64, Option<Obs>), PolicyError> {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(base + k as u64);
                rollout(env, mu, start, &eval, end_layer, &mut rng)
            };
            let results: Vec<(f64, Option<Obs>)> = if n >= PARALLEL_ROLLOUTS {
                (0..n).into_par_iter().map(one).collect::<Result<_, _>>()?
            } else {
                (0..n).map(one).collect::<Result<_, _>>()?
            };
            let mut total = 0.0;
            for (ret, first) in results {
                total += ret;
                if let Some(o) = first {
                    self.seen.insert(o);
                }
            }
            total / n as f64
        };
        Ok(McEstimate { mean, n, start, layer, policy_id, forced_first_action })
    }

    fn exact_start_value(&self, start: McStart, layer: usize, end: usize, eval: &Policy) -> Result<f64, AccessError> {
        let env = self.env;
        let vt = exact_values_range(env, eval, layer, end)?;
        let over_state = |state: usize| -> Result<f64, PolicyError> {
            let mut v = 0.0;
            for (o, p) in env.emission_support(layer, state) {
                v += p * vt.obs_value(env, eval, o)?;
            }
            Ok(v)
        };
        Ok(match start {
            McStart::Obs(obs) => vt.obs_value(env, eval, obs)?,
            McStart::Mu(h) => {
                let mu = self.mu.ok_or(AccessError::MissingMu)?;
                let mut v = 0.0;
                for (x, &p) in mu.layer(h).iter().enumerate() {
                    if p > 0.0 {
                        v += p * vt.obs_value(env, eval, Obs::new(h, x))?;
                    }
                }
                v
            }
            McStart::Initial => over_state(env.latent().initial_state())?,
            McStart::Emission { state, .. } => over_state(state)?,
        })
    }
}

/// Samples the reward and latent successor of `(layer, state, a)`.
fn transition(env: &BlockMdp, layer: usize, state: usize, a: Action, rng: &mut ChaCha8Rng) -> (Option<Cursor>, f64) {
    let lat = env.latent();
    let reward = lat.reward(layer, state, a).sample(rng);
    if layer == env.horizon() {
        return (None, reward);
    }
    let next = sample_index(lat.transition(layer, state, a), rng);
    (Some(Cursor { layer: layer + 1, state: next }), reward)
}

/// One partial episode; returns its total reward and the freshly drawn start
/// observation, if the start was randomized.
fn rollout(
    env: &BlockMdp,
    mu: Option<&ObsDistribution>,
    start: McStart,
    policy: &Policy,
    end_layer: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Option<Obs>), PolicyError> {
    let (mut obs, fresh) = match start {
        McStart::Obs(o) => (o, false),
        McStart::Mu(h) => (Obs::new(h, sample_index(mu.expect("checked by caller").layer(h), rng)), true),
        McStart::Initial => (env.sample_emission(1, env.latent().initial_state(), rng), true),
        McStart::Emission { layer, state } => (env.sample_emission(layer, state, rng), true),
    };
    let first = fresh.then_some(obs);
    let mut state = env.decode(obs);
    let mut total = 0.0;
    loop {
        let a = policy.act(obs)?;
        let (next, r) = transition(env, obs.layer, state, a, rng);
        total += r;
        match next {
            None => break,
            Some(_) if obs.layer == end_layer => break,
            Some(c) => {
                obs = env.sample_emission(c.layer, c.state, rng);
                state = c.state;
            }
        }
    }
    Ok((total, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatentMdp, Reward};

    fn chain() -> BlockMdp {
        let latent = LatentMdp::new(
            2,
            vec![1, 2],
            0,
            vec![vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]],
            vec![
                vec![vec![Reward::Const(0.0), Reward::Const(0.0)]],
                vec![vec![Reward::Const(1.0), Reward::Const(1.0)], vec![Reward::Const(0.0), Reward::Const(0.0)]],
            ],
        )
        .unwrap();
        BlockMdp::new(latent, vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]]).unwrap()
    }

    #[test]
    fn hoeffding_sizes() {
        assert_eq!(hoeffding_n(0.1, 0.05), 185);
        assert!(hoeffding_radius(185, 0.05) <= 0.1);
    }

    #[test]
    fn mode_gates() {
        let m = chain();
        let mu = ObsDistribution::uniform(&m);
        let mut h = AccessHandle::new(&m, Some(&mu), Mode::MuReset, 1).unwrap();
        assert!(matches!(h.generative_query(Obs::new(1, 0), 0), Err(AccessError::ModeViolation { .. })));
        let mut online = AccessHandle::new(&m, None, Mode::Online, 1).unwrap();
        assert!(matches!(online.reset_mu(1), Err(AccessError::ModeViolation { .. })));
        assert!(matches!(online.step(0), Err(AccessError::NoActiveEpisode)));
        assert!(AccessHandle::new(&m, None, Mode::HybridReset, 1).is_err());
    }

    #[test]
    fn local_reset_requires_seen() {
        let m = chain();
        let mu = ObsDistribution::uniform(&m);
        let mut h = AccessHandle::new(&m, Some(&mu), Mode::HybridReset, 3).unwrap();
        let x = h.reset_mu(2).unwrap();
        h.reset_local(x).unwrap();
        let other = m.observations(2).find(|o| *o != x).unwrap();
        assert_eq!(h.reset_local(other), Err(AccessError::UnseenReset { obs: other }));
        assert_eq!(h.episodes(), 2);
    }

    #[test]
    fn deterministic_chain_returns_exactly() {
        let m = chain();
        let mut h = AccessHandle::new(&m, None, Mode::Online, 9).unwrap();
        let est = h.mc(McStart::Initial, &Policy::OpenLoop(vec![0, 0]), Some(0), 17, None).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(h.episodes(), 17);
        let est = h.mc(McStart::Initial, &Policy::OpenLoop(vec![0, 0]), None, 3, Some(1)).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn same_seed_same_trace() {
        let m = chain();
        let mu = ObsDistribution::uniform(&m);
        let run = || {
            let mut h = AccessHandle::new(&m, Some(&mu), Mode::HybridReset, 42).unwrap();
            let mut out = Vec::new();
            for _ in 0..20 {
                out.push(h.reset_mu(2).unwrap());
            }
            out.push(h.reset_online().unwrap());
            let r = h.step(1).unwrap();
            (out, r.obs)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn emission_sampling_marks_seen_without_episode() {
        let m = chain();
        let mu = ObsDistribution::uniform(&m);
        let mut h = AccessHandle::new(&m, Some(&mu), Mode::HybridPlusEmission, 0).unwrap();
        let x = h.sample_emission(2, 1).unwrap();
        assert_eq!(x, Obs::new(2, 2));
        assert_eq!(h.episodes(), 0);
        h.reset_local(x).unwrap();
        assert_eq!(h.episodes(), 1);
        let mut hr = AccessHandle::new(&m, Some(&mu), Mode::HybridReset, 0).unwrap();
        assert!(matches!(hr.sample_emission(2, 1), Err(AccessError::ModeViolation { .. })));
    }

    #[test]
    fn oracle_mc_is_exact_and_metered() {
        let m = chain();
        let mu = ObsDistribution::uniform(&m);
        let mut h = AccessHandle::new(&m, Some(&mu), Mode::HybridReset, 0).unwrap().with_oracle_mc(true).with_audit();
        let est = h.mc(McStart::Mu(2), &Policy::OpenLoop(vec![0, 0]), Some(2), 10, None).unwrap();
        assert!((est.mean - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.episodes(), 10);
        assert_eq!(h.audit_log().unwrap().len(), 10);
        let mut buf = Vec::new();
        h.write_audit_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }
}
