//! Layered finite-horizon MDPs, Block MDPs, deterministic policies and policy classes.
//!
//! Layers are numbered `1..=H`. Latent states and observations are dense indices
//! within their layer; an observation is identified by the pair `(layer, index)`.
//! Everything here is immutable after construction and performs no sampling.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Action index in `0..A`.
pub type Action = usize;

/// Tolerance used when validating probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// Default cap on the number of enumerated open-loop policies.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Current version of the serialized [`BlockMdp`] document.
pub const FORMAT_VERSION: u32 = 1;

/// Errors raised while constructing or validating models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("action count must be positive")]
    NoActions,
    #[error("layer {layer} has no latent states")]
    EmptyLayer { layer: usize },
    #[error("initial state {state} is not a state of layer 1")]
    BadInitialState { state: usize },
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("transition P({layer}, {state}, {action}) is not a probability vector (sum {sum})")]
    BadTransition { layer: usize, state: usize, action: usize, sum: f64 },
    #[error("emission of state {state} at layer {layer} is not a probability vector (sum {sum})")]
    BadEmission { layer: usize, state: usize, sum: f64 },
    #[error("reward at ({layer}, {state}, {action}) is outside [0, 1]")]
    BadReward { layer: usize, state: usize, action: usize },
    #[error("cumulative reward along some latent path reaches {max_return} > 1")]
    RewardNotNormalized { max_return: f64 },
    #[error("observation {obs} is emitted by states {first} and {second} at layer {layer}")]
    NotDecodable { layer: usize, obs: usize, first: usize, second: usize },
    #[error("observation {obs} at layer {layer} is emitted by no latent state")]
    OrphanObservation { layer: usize, obs: usize },
    #[error("unsupported format version {0}")]
    Version(u32),
}

/// Errors raised when a policy is applied outside its domain.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("layer {layer} is outside the policy domain (layers {start}..={end})")]
    Domain { layer: usize, start: usize, end: usize },
    #[error("action {action} is not below the action count {actions}")]
    BadAction { action: Action, actions: usize },
    #[error("policy class is empty")]
    EmptyClass,
    #[error("enumeration of {requested} policies exceeds the cap {cap}")]
    TooMany { requested: u128, cap: usize },
}

/// An observation: layer (1-based) and index within that layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Obs {
    pub layer: usize,
    pub index: usize,
}

impl Obs {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for Obs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x[{}:{}]", self.layer, self.index)
    }
}

/// Reward distribution of a latent state-action pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Reward {
    /// Deterministic reward.
    Const(f64),
    /// Reward 1 with the given probability, else 0.
    Bernoulli(f64),
}

impl Reward {
    pub fn mean(&self) -> f64 {
        match *self {
            Reward::Const(v) | Reward::Bernoulli(v) => v,
        }
    }

    /// Largest value the reward can take with positive probability.
    pub fn max_value(&self) -> f64 {
        match *self {
            Reward::Const(v) => v,
            Reward::Bernoulli(p) if p > 0.0 => 1.0,
            Reward::Bernoulli(_) => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Reward::Const(v) => v,
            Reward::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn is_valid(&self) -> bool {
        let v = self.mean();
        v.is_finite() && (0.0..=1.0).contains(&v)
    }
}

/// Draws an index from a probability vector. Falls back to the last positive entry
/// when rounding leaves the cumulative sum slightly below the uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Latent layered MDP with a fixed initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMdp {
    horizon: usize,
    action_count: usize,
    state_counts: Vec<usize>,
    initial_state: usize,
    /// `transitions[h-1][s][a]` is a distribution over layer `h+1` states; empty at layer `H`.
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `rewards[h-1][s][a]`.
    rewards: Vec<Vec<Vec<Reward>>>,
}

impl LatentMdp {
    /// Builds and validates a latent MDP. `transitions` must have `H-1` layers.
    pub fn new(
        action_count: usize,
        state_counts: Vec<usize>,
        initial_state: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<Reward>>>,
    ) -> Result<Self, ModelError> {
        let horizon = state_counts.len();
        if horizon == 0 {
            return Err(ModelError::EmptyHorizon);
        }
        if action_count == 0 {
            return Err(ModelError::NoActions);
        }
        let mut transitions = transitions;
        if transitions.len() + 1 == horizon {
            transitions.push(vec![Vec::new(); state_counts[horizon - 1]]);
            for row in transitions[horizon - 1].iter_mut() {
                *row = vec![Vec::new(); action_count];
            }
        }
        let mdp = Self { horizon, action_count, state_counts, initial_state, transitions, rewards };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<(), ModelError> {
        for (i, &n) in self.state_counts.iter().enumerate() {
            if n == 0 {
                return Err(ModelError::EmptyLayer { layer: i + 1 });
            }
        }
        if self.initial_state >= self.state_counts[0] {
            return Err(ModelError::BadInitialState { state: self.initial_state });
        }
        if self.transitions.len() != self.horizon || self.rewards.len() != self.horizon {
            return Err(ModelError::Shape("per-layer tables must have H entries".into()));
        }
        for h in 1..=self.horizon {
            let n = self.state_counts[h - 1];
            if self.transitions[h - 1].len() != n || self.rewards[h - 1].len() != n {
                return Err(ModelError::Shape(format!("layer {h} tables must have {n} states")));
            }
            for s in 0..n {
                if self.transitions[h - 1][s].len() != self.action_count
                    || self.rewards[h - 1][s].len() != self.action_count
                {
                    return Err(ModelError::Shape(format!("state ({h}, {s}) must have A rows")));
                }
                for a in 0..self.action_count {
                    if !self.rewards[h - 1][s][a].is_valid() {
                        return Err(ModelError::BadReward { layer: h, state: s, action: a });
                    }
                    let row = &self.transitions[h - 1][s][a];
                    if h == self.horizon {
                        if !row.is_empty() {
                            return Err(ModelError::Shape("last layer has no transitions".into()));
                        }
                        continue;
                    }
                    if row.len() != self.state_counts[h] {
                        return Err(ModelError::Shape(format!(
                            "transition row ({h}, {s}, {a}) must have {} entries",
                            self.state_counts[h]
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_TOL * row.len().max(1) as f64 {
                        return Err(ModelError::BadTransition { layer: h, state: s, action: a, sum });
                    }
                }
            }
        }
        let max_return = self.max_path_return();
        if max_return > 1.0 + PROB_TOL {
            return Err(ModelError::RewardNotNormalized { max_return });
        }
        Ok(())
    }

    /// Largest cumulative reward over every latent path starting at any state of any
    /// layer, using the largest value each reward can take.
    pub fn max_path_return(&self) -> f64 {
        let mut best = 0.0f64;
        let mut next: Vec<f64> = Vec::new();
        for h in (1..=self.horizon).rev() {
            let cur: Vec<f64> = (0..self.state_counts[h - 1])
                .map(|s| {
                    (0..self.action_count)
                        .map(|a| {
                            let r = self.rewards[h - 1][s][a].max_value();
                            let cont = if h == self.horizon {
                                0.0
                            } else {
                                self.transitions[h - 1][s][a]
                                    .iter()
                                    .zip(&next)
                                    .filter(|(p, _)| **p > 0.0)
                                    .map(|(_, v)| *v)
                                    .fold(0.0, f64::max)
                            };
                            r + cont
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            best = cur.iter().copied().fold(best, f64::max);
            next = cur;
        }
        best
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Number of latent states at layer `h` (1-based).
    pub fn state_count(&self, h: usize) -> usize {
        self.state_counts[h - 1]
    }

    pub fn state_counts(&self) -> &[usize] {
        &self.state_counts
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Next-state distribution of `(s, a)` at layer `h < H`.
    pub fn transition(&self, h: usize, s: usize, a: Action) -> &[f64] {
        &self.transitions[h - 1][s][a]
    }

    pub fn reward(&self, h: usize, s: usize, a: Action) -> Reward {
        self.rewards[h - 1][s][a]
    }

    /// The unique successor when the transition is a point mass.
    pub fn deterministic_successor(&self, h: usize, s: usize, a: Action) -> Option<usize> {
        let row = self.transition(h, s, a);
        row.iter().position(|&p| (p - 1.0).abs() <= PROB_TOL)
    }

    /// True when every transition row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        (1..self.horizon).all(|h| {
            (0..self.state_count(h)).all(|s| {
                (0..self.action_count).all(|a| self.deterministic_successor(h, s, a).is_some())
            })
        })
    }
}

/// One emission table entry: observation index within the layer and its probability.
#[derive(Clone, Debug, PartialEq)]
struct EmissionSupport {
    obs: Vec<usize>,
    cumulative: Vec<f64>,
}

/// Block MDP: latent MDP, per-layer emission tables, and the derived ground-truth decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockMdpDoc", into = "BlockMdpDoc")]
pub struct BlockMdp {
    latent: LatentMdp,
    obs_counts: Vec<usize>,
    /// `emissions[h-1][s]` is a dense distribution over the observations of layer `h`.
    emissions: Vec<Vec<Vec<f64>>>,
    /// `decoder[h-1][x]` is the latent state emitting observation `x`.
    decoder: Vec<Vec<usize>>,
    supports: Vec<Vec<EmissionSupport>>,
}

/// Versioned serialized form of a [`BlockMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockMdpDoc {
    pub format_version: u32,
    pub horizon: usize,
    pub action_count: usize,
    pub state_counts: Vec<usize>,
    pub initial_state: usize,
    pub obs_counts: Vec<usize>,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<Reward>>>,
    pub emissions: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<BlockMdpDoc> for BlockMdp {
    type Error = ModelError;

    fn try_from(doc: BlockMdpDoc) -> Result<Self, Self::Error> {
        if doc.format_version != FORMAT_VERSION {
            return Err(ModelError::Version(doc.format_version));
        }
        if doc.state_counts.len() != doc.horizon {
            return Err(ModelError::Shape("state_counts must have H entries".into()));
        }
        let mut transitions = doc.transitions;
        transitions.truncate(doc.horizon.saturating_sub(1));
        let latent = LatentMdp::new(doc.action_count, doc.state_counts, doc.initial_state, transitions, doc.rewards)?;
        BlockMdp::new(latent, doc.emissions)
    }
}

impl From<BlockMdp> for BlockMdpDoc {
    fn from(m: BlockMdp) -> Self {
        let horizon = m.latent.horizon;
        let mut transitions = m.latent.transitions;
        transitions.truncate(horizon - 1);
        BlockMdpDoc {
            format_version: FORMAT_VERSION,
            horizon,
            action_count: m.latent.action_count,
            state_counts: m.latent.state_counts,
            initial_state: m.latent.initial_state,
            obs_counts: m.obs_counts,
            transitions,
            rewards: m.latent.rewards,
            emissions: m.emissions,
        }
    }
}

impl BlockMdp {
    /// Builds a Block MDP, checking that emissions are probability vectors with pairwise
    /// disjoint supports that together cover every observation of the layer.
    pub fn new(latent: LatentMdp, emissions: Vec<Vec<Vec<f64>>>) -> Result<Self, ModelError> {
        let horizon = latent.horizon();
        if emissions.len() != horizon {
            return Err(ModelError::Shape("emissions must have H layers".into()));
        }
        let mut obs_counts = Vec::with_capacity(horizon);
        let mut decoder = Vec::with_capacity(horizon);
        let mut supports = Vec::with_capacity(horizon);
        for h in 1..=horizon {
            let layer = &emissions[h - 1];
            if layer.len() != latent.state_count(h) {
                return Err(ModelError::Shape(format!("layer {h} emission table must have one row per state")));
            }
            let width = layer[0].len();
            let mut owner: Vec<Option<usize>> = vec![None; width];
            let mut layer_supports = Vec::with_capacity(layer.len());
            for (s, row) in layer.iter().enumerate() {
                if row.len() != width {
                    return Err(ModelError::Shape(format!("layer {h} emission rows must share a width")));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_TOL * width.max(1) as f64 {
                    return Err(ModelError::BadEmission { layer: h, state: s, sum });
                }
                let mut support = EmissionSupport { obs: Vec::new(), cumulative: Vec::new() };
                let mut acc = 0.0;
                for (x, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        if let Some(first) = owner[x] {
                            return Err(ModelError::NotDecodable { layer: h, obs: x, first, second: s });
                        }
                        owner[x] = Some(s);
                        acc += p;
                        support.obs.push(x);
                        support.cumulative.push(acc);
                    }
                }
                layer_supports.push(support);
            }
            let mut layer_decoder = Vec::with_capacity(width);
            for (x, o) in owner.into_iter().enumerate() {
                match o {
                    Some(s) => layer_decoder.push(s),
                    None => return Err(ModelError::OrphanObservation { layer: h, obs: x }),
                }
            }
            obs_counts.push(width);
            decoder.push(layer_decoder);
            supports.push(layer_supports);
        }
        Ok(Self { latent, obs_counts, emissions, decoder, supports })
    }

    /// Block MDP whose observations are the latent states themselves.
    pub fn tabular(latent: LatentMdp) -> Result<Self, ModelError> {
        let emissions = latent
            .state_counts()
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|s| {
                        let mut row = vec![0.0; n];
                        row[s] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self::new(latent, emissions)
    }

    pub fn latent(&self) -> &LatentMdp {
        &self.latent
    }

    pub fn horizon(&self) -> usize {
        self.latent.horizon()
    }

    pub fn action_count(&self) -> usize {
        self.latent.action_count()
    }

    /// Number of observations at layer `h`.
    pub fn obs_count(&self, h: usize) -> usize {
        self.obs_counts[h - 1]
    }

    /// All observations of layer `h` in index order.
    pub fn observations(&self, h: usize) -> impl Iterator<Item = Obs> + '_ {
        (0..self.obs_count(h)).map(move |i| Obs::new(h, i))
    }

    /// Dense emission distribution of latent state `s` at layer `h`.
    pub fn emission(&self, h: usize, s: usize) -> &[f64] {
        &self.emissions[h - 1][s]
    }

    /// Observations with positive emission probability under `(h, s)`, with probabilities.
    pub fn emission_support(&self, h: usize, s: usize) -> impl Iterator<Item = (Obs, f64)> + '_ {
        let row = &self.emissions[h - 1][s];
        self.supports[h - 1][s].obs.iter().map(move |&x| (Obs::new(h, x), row[x]))
    }

    /// Ground-truth decoder. Oracle-only: learners never see it.
    pub fn decode(&self, obs: Obs) -> usize {
        self.decoder[obs.layer - 1][obs.index]
    }

    pub fn is_valid_obs(&self, obs: Obs) -> bool {
        obs.layer >= 1 && obs.layer <= self.horizon() && obs.index < self.obs_count(obs.layer)
    }

    pub fn sample_emission<R: Rng + ?Sized>(&self, h: usize, s: usize, rng: &mut R) -> Obs {
        let sup = &self.supports[h - 1][s];
        let total = *sup.cumulative.last().expect("emission support is non-empty");
        let u = rng.random::<f64>() * total;
        let k = sup.cumulative.partition_point(|&c| c <= u).min(sup.obs.len() - 1);
        Obs::new(h, sup.obs[k])
    }

    /// Probability of observing `next` after taking `a` at an observation decoding to `s`.
    pub fn obs_transition_prob(&self, h: usize, s: usize, a: Action, next: Obs) -> f64 {
        let s2 = self.decode(next);
        self.latent.transition(h, s, a)[s2] * self.emission(h + 1, s2)[next.index]
    }
}

/// A deterministic policy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Fixed action per layer, ignoring observations.
    OpenLoop(Vec<Action>),
    /// Table lookup with a default for unlisted observations.
    ObsTable {
        #[serde(with = "obs_table_serde")]
        table: BTreeMap<Obs, Action>,
        default: Action,
    },
    /// Restriction of `inner` to layers `start..`.
    Suffix { start: usize, inner: Box<Policy> },
    /// `a ∘ π`: plays `action` at `layer`, then follows `inner`.
    ActionPrefix { layer: usize, action: Action, inner: Box<Policy> },
    /// Plays `layers[k]` at layer `start + k`; the composition of per-layer choices.
    Layered { start: usize, layers: Vec<Policy> },
}

mod obs_table_serde {
    use super::{Action, Obs};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Obs, Action>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(Obs, Action)> = map.iter().map(|(k, v)| (*k, *v)).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Obs, Action>, D::Error> {
        let entries = Vec::<(Obs, Action)>::deserialize(d)?;
        Ok(entries.into_iter().collect())
    }
}

impl Policy {
    /// Action taken at `obs`. The layer is carried by the observation.
    pub fn act(&self, obs: Obs) -> Result<Action, PolicyError> {
        match self {
            Policy::OpenLoop(actions) => {
                if obs.layer == 0 || obs.layer > actions.len() {
                    return Err(PolicyError::Domain { layer: obs.layer, start: 1, end: actions.len() });
                }
                Ok(actions[obs.layer - 1])
            }
            Policy::ObsTable { table, default } => Ok(*table.get(&obs).unwrap_or(default)),
            Policy::Suffix { start, inner } => {
                if obs.layer < *start {
                    return Err(PolicyError::Domain { layer: obs.layer, start: *start, end: usize::MAX });
                }
                inner.act(obs)
            }
            Policy::ActionPrefix { layer, action, inner } => {
                if obs.layer < *layer {
                    Err(PolicyError::Domain { layer: obs.layer, start: *layer, end: usize::MAX })
                } else if obs.layer == *layer {
                    Ok(*action)
                } else {
                    inner.act(obs)
                }
            }
            Policy::Layered { start, layers } => {
                let end = start + layers.len() - 1;
                if obs.layer < *start || obs.layer > end {
                    return Err(PolicyError::Domain { layer: obs.layer, start: *start, end });
                }
                layers[obs.layer - start].act(obs)
            }
        }
    }

    /// Action at `layer` when the policy ignores observations there; `None` otherwise.
    pub fn open_loop_action(&self, layer: usize) -> Option<Action> {
        match self {
            Policy::OpenLoop(actions) => actions.get(layer.wrapping_sub(1)).copied(),
            Policy::ObsTable { table, default } => {
                if table.keys().any(|o| o.layer == layer) {
                    None
                } else {
                    Some(*default)
                }
            }
            Policy::Suffix { start, inner } => (layer >= *start).then(|| inner.open_loop_action(layer)).flatten(),
            Policy::ActionPrefix { layer: l, action, inner } => {
                if layer == *l {
                    Some(*action)
                } else if layer > *l {
                    inner.open_loop_action(layer)
                } else {
                    None
                }
            }
            Policy::Layered { start, layers } => {
                if layer < *start || layer >= start + layers.len() {
                    None
                } else {
                    layers[layer - start].open_loop_action(layer)
                }
            }
        }
    }

    /// `a ∘ self` with `a` played at `layer`.
    pub fn with_prefix(&self, layer: usize, action: Action) -> Policy {
        Policy::ActionPrefix { layer, action, inner: Box::new(self.clone()) }
    }

    /// Checks that every action the policy can emit is below `actions`.
    pub fn validate(&self, actions: usize) -> Result<(), PolicyError> {
        let check = |a: Action| if a < actions { Ok(()) } else { Err(PolicyError::BadAction { action: a, actions }) };
        match self {
            Policy::OpenLoop(v) => v.iter().try_for_each(|&a| check(a)),
            Policy::ObsTable { table, default } => {
                check(*default)?;
                table.values().try_for_each(|&a| check(a))
            }
            Policy::Suffix { inner, .. } => inner.validate(actions),
            Policy::ActionPrefix { action, inner, .. } => {
                check(*action)?;
                inner.validate(actions)
            }
            Policy::Layered { layers, .. } => layers.iter().try_for_each(|p| p.validate(actions)),
        }
    }
}

/// Ordered, non-empty finite policy class. A policy's identity is its index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Policy>", into = "Vec<Policy>")]
pub struct PolicyClass(Vec<Policy>);

impl TryFrom<Vec<Policy>> for PolicyClass {
    type Error = PolicyError;

    fn try_from(v: Vec<Policy>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PolicyClass> for Vec<Policy> {
    fn from(c: PolicyClass) -> Self {
        c.0
    }
}

impl PolicyClass {
    pub fn new(policies: Vec<Policy>) -> Result<Self, PolicyError> {
        if policies.is_empty() {
            return Err(PolicyError::EmptyClass);
        }
        Ok(Self(policies))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &Policy {
        &self.0[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Policy> {
        self.0.iter()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.0
    }

    /// True when every member ignores observations at every layer in `1..=horizon`.
    pub fn is_open_loop(&self, horizon: usize) -> bool {
        self.0.iter().all(|p| (1..=horizon).all(|h| p.open_loop_action(h).is_some()))
    }

    /// Appends policies, keeping existing indices stable.
    pub fn extend(&mut self, more: impl IntoIterator<Item = Policy>) {
        self.0.extend(more);
    }
}

/// All `A^H` open-loop policies in lexicographic order of their action vectors.
pub fn enumerate_open_loop(horizon: usize, actions: usize, cap: usize) -> Result<PolicyClass, PolicyError> {
    enumerate_open_loop_sets(&vec![actions; horizon], cap)
}

/// Open-loop policies whose layer-`h` action ranges over `0..action_sets[h-1]`,
/// in lexicographic order.
pub fn enumerate_open_loop_sets(action_sets: &[usize], cap: usize) -> Result<PolicyClass, PolicyError> {
    let requested = action_sets.iter().fold(1u128, |acc, &a| acc.saturating_mul(a as u128));
    if requested > cap as u128 {
        return Err(PolicyError::TooMany { requested, cap });
    }
    if requested == 0 {
        return Err(PolicyError::EmptyClass);
    }
    let mut out = Vec::with_capacity(requested as usize);
    let mut current = vec![0; action_sets.len()];
    loop {
        out.push(Policy::OpenLoop(current.clone()));
        let mut k = action_sets.len();
        loop {
            if k == 0 {
                return PolicyClass::new(out);
            }
            k -= 1;
            current[k] += 1;
            if current[k] < action_sets[k] {
                break;
            }
            current[k] = 0;
        }
    }
}

/// A partial trajectory from `start_layer` to `H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_layer: usize,
    /// `(observation, action, reward)` per visited layer.
    pub steps: Vec<(Obs, Action, f64)>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> LatentMdp {
        LatentMdp::new(
            2,
            vec![1, 2],
            0,
            vec![vec![vec![vec![1.0, 0.0], vec![0.25, 0.75]]]],
            vec![
                vec![vec![Reward::Const(0.0), Reward::Const(0.0)]],
                vec![vec![Reward::Const(1.0), Reward::Const(0.0)], vec![Reward::Bernoulli(0.5), Reward::Const(0.2)]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn open_loop_lookup() {
        let p = Policy::OpenLoop(vec![0, 1, 0]);
        assert_eq!(p.act(Obs::new(2, 5)).unwrap(), 1);
        assert!(p.act(Obs::new(4, 0)).is_err());
    }

    #[test]
    fn table_semantics() {
        let mut table = BTreeMap::new();
        table.insert(Obs::new(1, 7), 1);
        let p = Policy::ObsTable { table, default: 0 };
        assert_eq!(p.act(Obs::new(1, 7)).unwrap(), 1);
        assert_eq!(p.act(Obs::new(1, 9)).unwrap(), 0);
    }

    #[test]
    fn action_prefix_plays_fixed_action_first() {
        let p = Policy::OpenLoop(vec![0, 0]).with_prefix(1, 1);
        assert_eq!(p.act(Obs::new(1, 0)).unwrap(), 1);
        assert_eq!(p.act(Obs::new(2, 0)).unwrap(), 0);
        let q = Policy::OpenLoop(vec![0, 0, 1]).with_prefix(2, 1);
        assert!(q.act(Obs::new(1, 0)).is_err());
    }

    #[test]
    fn suffix_and_layered_domains() {
        let s = Policy::Suffix { start: 2, inner: Box::new(Policy::OpenLoop(vec![1, 0, 1])) };
        assert!(s.act(Obs::new(1, 0)).is_err());
        assert_eq!(s.act(Obs::new(3, 0)).unwrap(), 1);
        let l = Policy::Layered { start: 2, layers: vec![Policy::OpenLoop(vec![0, 1, 0]), Policy::OpenLoop(vec![1, 1, 0])] };
        assert_eq!(l.act(Obs::new(2, 0)).unwrap(), 1);
        assert_eq!(l.act(Obs::new(3, 0)).unwrap(), 0);
        assert!(l.act(Obs::new(1, 0)).is_err());
        assert_eq!(l.open_loop_action(2), Some(1));
    }

    #[test]
    fn enumeration_order() {
        let c = enumerate_open_loop(1, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(c.policies(), &[Policy::OpenLoop(vec![0]), Policy::OpenLoop(vec![1])]);
        let c = enumerate_open_loop(2, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        let got: Vec<_> = c.iter().cloned().collect();
        assert_eq!(
            got,
            vec![
                Policy::OpenLoop(vec![0, 0]),
                Policy::OpenLoop(vec![0, 1]),
                Policy::OpenLoop(vec![1, 0]),
                Policy::OpenLoop(vec![1, 1])
            ]
        );
        let c = enumerate_open_loop(3, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c.get(0), &Policy::OpenLoop(vec![0, 0, 0]));
        assert!(matches!(enumerate_open_loop(30, 2, 1000), Err(PolicyError::TooMany { .. })));
    }

    #[test]
    fn rejects_unnormalized_rewards() {
        let err = LatentMdp::new(
            1,
            vec![1, 1],
            0,
            vec![vec![vec![vec![1.0]]]],
            vec![vec![vec![Reward::Const(0.6)]], vec![vec![Reward::Bernoulli(0.1)]]],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::RewardNotNormalized { .. }));
    }

    #[test]
    fn rejects_overlapping_emissions() {
        let latent = two_layer();
        let err = BlockMdp::new(latent, vec![vec![vec![1.0]], vec![vec![0.5, 0.5], vec![0.0, 1.0]]]).unwrap_err();
        assert!(matches!(err, ModelError::NotDecodable { .. }));
    }

    #[test]
    fn decoder_and_json_roundtrip() {
        let m = BlockMdp::new(two_layer(), vec![vec![vec![1.0]], vec![vec![0.5, 0.0, 0.5], vec![0.0, 1.0, 0.0]]]).unwrap();
        assert_eq!(m.decode(Obs::new(2, 1)), 1);
        assert_eq!(m.decode(Obs::new(2, 2)), 0);
        let json = serde_json::to_string(&m).unwrap();
        let back: BlockMdp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!((m.obs_transition_prob(1, 0, 1, Obs::new(2, 1)) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn policy_json_roundtrip() {
        let mut table = BTreeMap::new();
        table.insert(Obs::new(2, 3), 1);
        let p = Policy::ObsTable { table, default: 0 }.with_prefix(1, 1);
        let back: Policy = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
