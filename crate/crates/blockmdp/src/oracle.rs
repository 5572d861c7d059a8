//! Exact computations on a fully known Block MDP: values, occupancies, coverage
//! coefficients, policy-completeness error and the importance-weighted emulator
//! certificate. Learners never call into this module.

use std::cmp::Ordering;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{sample_index, Action, BlockMdp, Obs, Policy, PolicyClass, PolicyError, PROB_TOL};

/// Errors raised by oracle computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("distribution has {got} layers, expected {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("layer {layer} distribution has {got} entries, expected {expected}")]
    Width { layer: usize, expected: usize, got: usize },
    #[error("layer {layer} distribution is not a probability vector (sum {sum})")]
    NotNormalized { layer: usize, sum: f64 },
    #[error("sampled observation {obs} has zero density under the reset distribution")]
    ZeroDensity { obs: Obs },
}

/// Per-layer distributions over observations, indexed `[h-1][x]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObsDistribution(pub Vec<Vec<f64>>);

impl ObsDistribution {
    /// Checks shape and normalization against `m`.
    pub fn validate(&self, m: &BlockMdp) -> Result<(), OracleError> {
        if self.0.len() != m.horizon() {
            return Err(OracleError::LayerCount { expected: m.horizon(), got: self.0.len() });
        }
        for h in 1..=m.horizon() {
            let row = &self.0[h - 1];
            if row.len() != m.obs_count(h) {
                return Err(OracleError::Width { layer: h, expected: m.obs_count(h), got: row.len() });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(OracleError::NotNormalized { layer: h, sum });
            }
        }
        Ok(())
    }

    /// Density of `obs`.
    pub fn prob(&self, obs: Obs) -> f64 {
        self.0[obs.layer - 1][obs.index]
    }

    pub fn layer(&self, h: usize) -> &[f64] {
        &self.0[h - 1]
    }

    /// Factorized distribution `μ_h(x) = ν_h(φ(x)) ψ(φ(x))(x)`.
    pub fn factorized(m: &BlockMdp, nu: &[Vec<f64>]) -> Self {
        let layers = (1..=m.horizon())
            .map(|h| {
                let mut row = vec![0.0; m.obs_count(h)];
                for (s, &w) in nu[h - 1].iter().enumerate() {
                    for (o, p) in m.emission_support(h, s) {
                        row[o.index] += w * p;
                    }
                }
                row
            })
            .collect();
        Self(layers)
    }

    /// Uniform distribution over every layer's observations.
    pub fn uniform(m: &BlockMdp) -> Self {
        Self((1..=m.horizon()).map(|h| vec![1.0 / m.obs_count(h) as f64; m.obs_count(h)]).collect())
    }

    /// Latent marginal `Σ_{x: φ(x)=s} μ_h(x)` at layer `h`.
    pub fn latent_marginal(&self, m: &BlockMdp, h: usize) -> Vec<f64> {
        let mut out = vec![0.0; m.latent().state_count(h)];
        for (x, &p) in self.0[h - 1].iter().enumerate() {
            out[m.decode(Obs::new(h, x))] += p;
        }
        out
    }
}

/// A coverage coefficient; infinity is a value, not a sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Finite(f64),
    Infinite,
}

impl Coefficient {
    pub fn value(&self) -> f64 {
        match *self {
            Coefficient::Finite(v) => v,
            Coefficient::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Coefficient::Finite(_))
    }

    fn from_ratio(num: f64, den: f64) -> Self {
        if num <= 0.0 {
            Coefficient::Finite(0.0)
        } else if den <= 0.0 {
            Coefficient::Infinite
        } else {
            Coefficient::Finite(num / den)
        }
    }
}

impl PartialOrd for Coefficient {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Finite(v) => write!(f, "{v}"),
            Coefficient::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Coefficient::Finite(v) => s.serialize_f64(*v),
            Coefficient::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Coefficient::Finite(v)),
            Repr::Text(t) if t == "inf" => Ok(Coefficient::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid coefficient {t:?}"))),
        }
    }
}

/// Exact latent values of a policy from `start_layer` onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub policy_id: Option<usize>,
    pub start_layer: usize,
    /// `v[h - start_layer][s]`; the action at each observation follows the policy, so
    /// `V(h, s) = Σ_x ψ(s)(x) Q(h, s, π(x))`.
    pub v: Vec<Vec<f64>>,
    /// `q[h - start_layer][s][a]`.
    pub q: Vec<Vec<Vec<f64>>>,
}

impl ValueTable {
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h - self.start_layer][s]
    }

    pub fn q(&self, h: usize, s: usize, a: Action) -> f64 {
        self.q[h - self.start_layer][s][a]
    }

    /// `V^π(x) = Q(h, φ(x), π(x))`.
    pub fn obs_value(&self, m: &BlockMdp, policy: &Policy, obs: Obs) -> Result<f64, PolicyError> {
        Ok(self.q(obs.layer, m.decode(obs), policy.act(obs)?))
    }

    /// Value of the initial latent state (the start-state distribution of the MDP).
    pub fn initial_value(&self, m: &BlockMdp) -> f64 {
        self.v(1, m.latent().initial_state())
    }
}

/// `Q(h, s, a)` for every `(s, a)` at layer `h`, with `continuation` the values of layer `h+1`.
fn layer_q(m: &BlockMdp, h: usize, continuation: Option<&[f64]>) -> Vec<Vec<f64>> {
    let lat = m.latent();
    (0..lat.state_count(h))
        .map(|s| {
            (0..lat.action_count())
                .map(|a| {
                    let r = lat.reward(h, s, a).mean();
                    match continuation {
                        Some(next) if h < lat.horizon() => {
                            r + lat.transition(h, s, a).iter().zip(next).map(|(p, v)| p * v).sum::<f64>()
                        }
                        _ => r,
                    }
                })
                .collect()
        })
        .collect()
}

/// Policy value of each latent state given its Q-table.
fn layer_v(m: &BlockMdp, h: usize, q: &[Vec<f64>], policy: &Policy) -> Result<Vec<f64>, PolicyError> {
    (0..q.len())
        .map(|s| {
            if let Some(a) = policy.open_loop_action(h) {
                return Ok(q[s][a]);
            }
            let mut v = 0.0;
            for (o, p) in m.emission_support(h, s) {
                v += p * q[s][policy.act(o)?];
            }
            Ok(v)
        })
        .collect()
}

/// Exact values of `policy` over all layers.
pub fn exact_values(m: &BlockMdp, policy: &Policy) -> Result<ValueTable, PolicyError> {
    exact_values_from(m, policy, 1)
}

/// Exact values of `policy` on layers `start..=H`; the policy need only be defined there.
pub fn exact_values_from(m: &BlockMdp, policy: &Policy, start: usize) -> Result<ValueTable, PolicyError> {
    exact_values_range(m, policy, start, m.horizon())
}

/// Exact values of the partial episode that runs `policy` on layers `start..=end` and
/// collects no reward after `end`.
pub fn exact_values_range(m: &BlockMdp, policy: &Policy, start: usize, end: usize) -> Result<ValueTable, PolicyError> {
    let mut v_rev: Vec<Vec<f64>> = Vec::new();
    let mut q_rev: Vec<Vec<Vec<f64>>> = Vec::new();
    for h in (start..=end).rev() {
        let q = layer_q(m, h, v_rev.last().map(|v| v.as_slice()));
        let v = layer_v(m, h, &q, policy)?;
        q_rev.push(q);
        v_rev.push(v);
    }
    v_rev.reverse();
    q_rev.reverse();
    Ok(ValueTable { policy_id: None, start_layer: start, v: v_rev, q: q_rev })
}

/// Q-table at layer `h` when `suffix` is followed from layer `h+1` (ignored at `h = H`).
pub fn suffix_q(m: &BlockMdp, suffix: Option<&Policy>, h: usize) -> Result<Vec<Vec<f64>>, PolicyError> {
    if h == m.horizon() {
        return Ok(layer_q(m, h, None));
    }
    let suffix = suffix.ok_or(PolicyError::Domain { layer: h + 1, start: 0, end: 0 })?;
    let vt = exact_values_from(m, suffix, h + 1)?;
    Ok(layer_q(m, h, Some(&vt.v[0])))
}

/// Latent state occupancy per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// `d[h-1][s]`.
    pub d: Vec<Vec<f64>>,
}

impl Occupancy {
    /// Observation-level occupancy `d_h(x) = d_h(φ(x)) ψ(φ(x))(x)`.
    pub fn obs_layer(&self, m: &BlockMdp, h: usize) -> Vec<f64> {
        let mut out = vec![0.0; m.obs_count(h)];
        for (s, &w) in self.d[h - 1].iter().enumerate() {
            if w > 0.0 {
                for (o, p) in m.emission_support(h, s) {
                    out[o.index] += w * p;
                }
            }
        }
        out
    }
}

fn push_forward_latent(m: &BlockMdp, h: usize, obs_dist: &[f64], policy: &Policy) -> Result<Vec<f64>, PolicyError> {
    let lat = m.latent();
    let mut next = vec![0.0; lat.state_count(h + 1)];
    for (x, &w) in obs_dist.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let o = Obs::new(h, x);
        let a = policy.act(o)?;
        for (s2, p) in lat.transition(h, m.decode(o), a).iter().enumerate() {
            next[s2] += w * p;
        }
    }
    Ok(next)
}

/// Exact occupancy of `policy` started from the initial latent state.
pub fn occupancy(m: &BlockMdp, policy: &Policy) -> Result<Occupancy, PolicyError> {
    let lat = m.latent();
    let mut d0 = vec![0.0; lat.state_count(1)];
    d0[lat.initial_state()] = 1.0;
    let mut d = vec![d0];
    for h in 1..m.horizon() {
        let occ = Occupancy { d: d.clone() };
        let obs = occ.obs_layer(m, h);
        d.push(push_forward_latent(m, h, &obs, policy)?);
    }
    Ok(Occupancy { d })
}

/// Observation-level occupancy of `policy` when layer-1 observations are drawn from `start`.
pub fn obs_occupancy_from(m: &BlockMdp, policy: &Policy, start: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError> {
    let mut layers = vec![start.to_vec()];
    for h in 1..m.horizon() {
        let latent = push_forward_latent(m, h, &layers[h - 1], policy)?;
        let occ = Occupancy { d: { let mut d = vec![Vec::new(); h]; d.push(latent); d } };
        layers.push(occ.obs_layer(m, h + 1));
    }
    Ok(layers)
}

/// Maximizing tuple of a coverage ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioWitness {
    pub layer: usize,
    pub obs: usize,
    /// Policy index (concentrability) or source `(state, action)` (pushforward).
    pub policy: Option<usize>,
    pub source: Option<(usize, Action)>,
}

/// Concentrability `sup_{π, h} ||d^π_h / μ_h||_∞` with its witness.
pub fn concentrability(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
) -> Result<(Coefficient, Option<RatioWitness>), OracleError> {
    mu.validate(m)?;
    let mut best = Coefficient::Finite(0.0);
    let mut witness = None;
    for (j, pi) in class.iter().enumerate() {
        let occ = occupancy(m, pi)?;
        for h in 1..=m.horizon() {
            let d = occ.obs_layer(m, h);
            for (x, &dx) in d.iter().enumerate() {
                let r = Coefficient::from_ratio(dx, mu.0[h - 1][x]);
                if r > best {
                    best = r;
                    witness = Some(RatioWitness { layer: h, obs: x, policy: Some(j), source: None });
                }
            }
        }
    }
    Ok((best, witness))
}

/// Coverability: per layer `Σ_x max_π d^π_h(x)`, its maximum over layers, and the
/// optimal witness distribution `μ*_h ∝ max_π d^π_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverability {
    pub value: f64,
    pub per_layer: Vec<f64>,
    pub witness: ObsDistribution,
}

pub fn coverability(m: &BlockMdp, class: &PolicyClass) -> Result<Coverability, OracleError> {
    let mut maxes: Vec<Vec<f64>> = (1..=m.horizon()).map(|h| vec![0.0; m.obs_count(h)]).collect();
    for pi in class.iter() {
        let occ = occupancy(m, pi)?;
        for h in 1..=m.horizon() {
            for (x, dx) in occ.obs_layer(m, h).into_iter().enumerate() {
                if dx > maxes[h - 1][x] {
                    maxes[h - 1][x] = dx;
                }
            }
        }
    }
    let per_layer: Vec<f64> = maxes.iter().map(|row| row.iter().sum()).collect();
    let witness = ObsDistribution(
        maxes.iter().zip(&per_layer).map(|(row, &c)| row.iter().map(|v| v / c).collect()).collect(),
    );
    let value = per_layer.iter().copied().fold(0.0, f64::max);
    Ok(Coverability { value, per_layer, witness })
}

/// Largest one-step density `P(x' | x, a)` over sources at layer `h-1`; layer 1 uses the
/// initial distribution. Returns `[x'] -> (max, argmax source)`.
fn max_incoming(m: &BlockMdp, h: usize) -> Vec<(f64, Option<(usize, Action)>)> {
    let lat = m.latent();
    if h == 1 {
        let s1 = lat.initial_state();
        let mut out = vec![(0.0, None); m.obs_count(1)];
        for (o, p) in m.emission_support(1, s1) {
            out[o.index] = (p, None);
        }
        return out;
    }
    let mut out = vec![(0.0, None); m.obs_count(h)];
    for s in 0..lat.state_count(h - 1) {
        for a in 0..lat.action_count() {
            for (s2, &p) in lat.transition(h - 1, s, a).iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                for (o, e) in m.emission_support(h, s2) {
                    let v = p * e;
                    if v > out[o.index].0 {
                        out[o.index] = (v, Some((s, a)));
                    }
                }
            }
        }
    }
    out
}

/// Pushforward concentrability `max_h sup P(x' | x, a) / μ_h(x')`, with the initial
/// distribution playing the role of the layer-0 transition.
pub fn pushforward_concentrability(
    m: &BlockMdp,
    mu: &ObsDistribution,
) -> Result<(Coefficient, Option<RatioWitness>), OracleError> {
    mu.validate(m)?;
    let mut best = Coefficient::Finite(0.0);
    let mut witness = None;
    for h in 1..=m.horizon() {
        for (x, (p, src)) in max_incoming(m, h).into_iter().enumerate() {
            let r = Coefficient::from_ratio(p, mu.0[h - 1][x]);
            if r > best {
                best = r;
                witness = Some(RatioWitness { layer: h, obs: x, policy: None, source: src });
            }
        }
    }
    Ok((best, witness))
}

/// Pushforward coverability `max_h Σ_{x'} max_{x,a} P(x' | x, a)`, the best pushforward
/// concentrability any distribution can achieve.
pub fn pushforward_coverability(m: &BlockMdp) -> f64 {
    (1..=m.horizon())
        .map(|h| max_incoming(m, h).iter().map(|(p, _)| p).sum::<f64>())
        .fold(0.0, f64::max)
}

/// All coverage coefficients of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub c_conc: Coefficient,
    pub c_cov: f64,
    pub c_push: Coefficient,
    pub c_push_cov: f64,
    pub c_cov_per_layer: Vec<f64>,
    pub conc_witness: Option<RatioWitness>,
    pub push_witness: Option<RatioWitness>,
}

pub fn coverage_report(m: &BlockMdp, mu: &ObsDistribution, class: &PolicyClass) -> Result<CoverageReport, OracleError> {
    let (c_conc, conc_witness) = concentrability(m, mu, class)?;
    let cov = coverability(m, class)?;
    let (c_push, push_witness) = pushforward_concentrability(m, mu)?;
    Ok(CoverageReport {
        c_conc,
        c_cov: cov.value,
        c_push,
        c_push_cov: pushforward_coverability(m),
        c_cov_per_layer: cov.per_layer,
        conc_witness,
        push_witness,
    })
}

/// Policy-completeness error at layer `h` for the suffix followed from `h+1`:
/// `min_{π ∈ Π} E_{x∼μ_h}[max_a Q(x, a) − Q(x, π(x))]`. Returns the value and the
/// lowest-index minimizer.
pub fn policy_completeness_error(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
    suffix: Option<&Policy>,
    h: usize,
) -> Result<(f64, usize), OracleError> {
    let q = suffix_q(m, suffix, h)?;
    let mut best = (f64::INFINITY, 0);
    for (j, pi) in class.iter().enumerate() {
        let mut gap = 0.0;
        for (x, &w) in mu.layer(h).iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let o = Obs::new(h, x);
            let row = &q[m.decode(o)];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            gap += w * (top - row[pi.act(o)?]);
        }
        if gap < best.0 {
            best = (gap, j);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// Best-in-class value `max_{π ∈ Π} V^π(s_1)` and its lowest-index argmax.
pub fn best_in_class(m: &BlockMdp, class: &PolicyClass) -> Result<(f64, usize), PolicyError> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, pi) in class.iter().enumerate() {
        let v = exact_values(m, pi)?.initial_value(m);
        if v > best.0 + 1e-15 {
            best = (v, j);
        }
    }
    Ok(best)
}

/// Result of the importance-weighted emulator construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorCertificate {
    /// Sampled observations per layer `2..=H` (`samples[h-2]`).
    pub samples: Vec<Vec<Obs>>,
    /// `max_{π ∈ Π} |V^π(s_1) − V̂^π(s_1)|`.
    pub max_error: f64,
    pub per_policy_error: Vec<f64>,
}

/// Emulator over the given samples with unnormalized weights
/// `P̂(x_i | x, a) = P(x_i | x, a) / (n μ_h(x_i))`, evaluated exactly for every policy.
pub fn certificate_from_samples(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
    samples: Vec<Vec<Obs>>,
) -> Result<EmulatorCertificate, OracleError> {
    let horizon = m.horizon();
    let lat = m.latent();
    for layer in &samples {
        for &o in layer {
            if mu.prob(o) <= 0.0 {
                return Err(OracleError::ZeroDensity { obs: o });
            }
        }
    }
    let mut per_policy_error = Vec::with_capacity(class.len());
    for pi in class.iter() {
        let truth = exact_values(m, pi)?.initial_value(m);
        // Emulator values at sampled observations, layer H down to 2.
        // Importance-weighted continuation from `(h, s, a)` into the samples of layer `h+1`.
        let continuation = |h: usize, s: usize, a: Action, next: &[f64]| -> f64 {
            if h == horizon {
                return 0.0;
            }
            let layer = &samples[h - 1];
            let n = layer.len() as f64;
            layer.iter().zip(next).map(|(o2, v2)| m.obs_transition_prob(h, s, a, *o2) / (n * mu.prob(*o2)) * v2).sum()
        };
        let mut next: Vec<f64> = Vec::new();
        for h in (2..=horizon).rev() {
            next = samples[h - 2]
                .iter()
                .map(|&o| -> Result<f64, PolicyError> {
                    let s = m.decode(o);
                    let a = pi.act(o)?;
                    Ok(lat.reward(h, s, a).mean() + continuation(h, s, a, &next))
                })
                .collect::<Result<_, _>>()?;
        }
        // Layer 1 is evaluated exactly over the initial emission.
        let s1 = lat.initial_state();
        let mut est = 0.0;
        for (o, p) in m.emission_support(1, s1) {
            let a = pi.act(o)?;
            est += p * (lat.reward(1, s1, a).mean() + continuation(1, s1, a, &next));
        }
        per_policy_error.push((truth - est).abs());
    }
    let max_error = per_policy_error.iter().copied().fold(0.0, f64::max);
    Ok(EmulatorCertificate { samples, max_error, per_policy_error })
}

/// Draws `n` observations per layer `2..=H` from `μ` and builds the certificate.
pub fn pushforward_emulator_certificate(
    m: &BlockMdp,
    mu: &ObsDistribution,
    class: &PolicyClass,
    n: usize,
    seed: u64,
) -> Result<EmulatorCertificate, OracleError> {
    mu.validate(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (2..=m.horizon())
        .map(|h| (0..n).map(|_| Obs::new(h, sample_index(mu.layer(h), &mut rng))).collect())
        .collect();
    certificate_from_samples(m, mu, class, samples)
}

/// True when `p` is a probability vector up to `PROB_TOL` per entry.
pub fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|v| *v >= -PROB_TOL) && (p.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL * p.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_open_loop, LatentMdp, Reward, DEFAULT_ENUMERATION_CAP};

    /// Two-layer instance with a stochastic transition and an observation-dependent policy.
    fn small() -> BlockMdp {
        let latent = LatentMdp::new(
            2,
            vec![1, 2],
            0,
            vec![vec![vec![vec![0.5, 0.5], vec![0.1, 0.9]]]],
            vec![
                vec![vec![Reward::Const(0.0), Reward::Const(0.0)]],
                vec![vec![Reward::Const(0.8), Reward::Const(0.2)], vec![Reward::Bernoulli(0.3), Reward::Const(0.9)]],
            ],
        )
        .unwrap();
        BlockMdp::new(latent, vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]]).unwrap()
    }

    #[test]
    fn values_by_hand() {
        let m = small();
        let pi = Policy::OpenLoop(vec![0, 1]);
        let vt = exact_values(&m, &pi).unwrap();
        assert!((vt.v(2, 0) - 0.2).abs() < 1e-15);
        assert!((vt.v(2, 1) - 0.9).abs() < 1e-15);
        assert!((vt.initial_value(&m) - (0.5 * 0.2 + 0.5 * 0.9)).abs() < 1e-15);
    }

    #[test]
    fn table_policy_uses_pushforward_weights() {
        let m = small();
        let mut table = std::collections::BTreeMap::new();
        table.insert(Obs::new(2, 0), 1);
        let pi = Policy::ObsTable { table, default: 0 };
        let vt = exact_values(&m, &pi).unwrap();
        // State 0 at layer 2 plays 1 on x0 and 0 on x1, each with weight 1/2.
        assert!((vt.v(2, 0) - 0.5).abs() < 1e-15);
        assert!((vt.obs_value(&m, &pi, Obs::new(2, 0)).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn occupancy_sums_to_one() {
        let m = small();
        let occ = occupancy(&m, &Policy::OpenLoop(vec![1, 0])).unwrap();
        assert_eq!(occ.d[0], vec![1.0]);
        assert!((occ.d[1][0] - 0.1).abs() < 1e-15);
        for row in &occ.d {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_class_coefficients() {
        let m = small();
        let pi = Policy::OpenLoop(vec![0, 0]);
        let class = PolicyClass::new(vec![pi.clone()]).unwrap();
        let cov = coverability(&m, &class).unwrap();
        assert!((cov.value - 1.0).abs() < 1e-12);
        // μ equal to the policy's own occupancy gives concentrability 1.
        let occ = occupancy(&m, &pi).unwrap();
        let mu = ObsDistribution((1..=2).map(|h| occ.obs_layer(&m, h)).collect());
        let (c, _) = concentrability(&m, &mu, &class).unwrap();
        assert!((c.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infinite_concentrability_is_explicit() {
        let m = small();
        let class = enumerate_open_loop(2, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        let mut mu = ObsDistribution::uniform(&m);
        mu.0[1] = vec![0.5, 0.5, 0.0];
        let (c, w) = concentrability(&m, &mu, &class).unwrap();
        assert_eq!(c, Coefficient::Infinite);
        assert_eq!(w.unwrap().obs, 2);
        let (p, _) = pushforward_concentrability(&m, &mu).unwrap();
        assert_eq!(p, Coefficient::Infinite);
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"inf\"");
    }

    #[test]
    fn single_row_pushforward_is_one() {
        let latent = LatentMdp::new(
            1,
            vec![1, 2],
            0,
            vec![vec![vec![vec![0.3, 0.7]]]],
            vec![vec![vec![Reward::Const(0.0)]], vec![vec![Reward::Const(0.0)], vec![Reward::Const(1.0)]]],
        )
        .unwrap();
        let m = BlockMdp::tabular(latent).unwrap();
        let mu = ObsDistribution(vec![vec![1.0], vec![0.3, 0.7]]);
        let (p, _) = pushforward_concentrability(&m, &mu).unwrap();
        assert!((p.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_certificate_is_exact() {
        let m = small();
        let class = enumerate_open_loop(2, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        let mu = ObsDistribution::uniform(&m);
        let samples = vec![m.observations(2).collect()];
        let cert = certificate_from_samples(&m, &mu, &class, samples).unwrap();
        assert!(cert.max_error < 1e-9);
    }

    #[test]
    fn completeness_error_of_greedy_singleton_is_zero() {
        let m = small();
        let q = suffix_q(&m, None, 2).unwrap();
        let mut table = std::collections::BTreeMap::new();
        for o in m.observations(2) {
            let row = &q[m.decode(o)];
            let a = if row[1] > row[0] { 1 } else { 0 };
            table.insert(o, a);
        }
        let class = PolicyClass::new(vec![Policy::ObsTable { table, default: 0 }]).unwrap();
        let mu = ObsDistribution::uniform(&m);
        let (e, j) = policy_completeness_error(&m, &mu, &class, None, 2).unwrap();
        assert_eq!(j, 0);
        assert!(e.abs() < 1e-15);
    }
}
