//! Environment generators. Each returns an [`EnvBundle`]: the Block MDP, its reset
//! distribution `μ`, the policy class, and declared metadata that tests compare
//! against the oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    enumerate_open_loop, enumerate_open_loop_sets, Action, BlockMdp, LatentMdp, ModelError, Obs, Policy, PolicyClass,
    PolicyError, Reward, DEFAULT_ENUMERATION_CAP,
};
use crate::oracle::ObsDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> EnvError {
    EnvError::Invalid(msg.into())
}

/// Declared properties of a constructed environment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvMeta {
    /// Pushforward concentrability the construction promises, if any.
    pub declared_c_push: Option<f64>,
    /// Concentrability the construction promises, if any.
    pub declared_c_conc: Option<f64>,
    /// Coverability the construction promises, if any.
    pub declared_c_cov: Option<f64>,
    /// Optimal policy, when it belongs to the class.
    pub pi_star: Option<Policy>,
    /// Whether the class contains an optimal policy.
    pub realizable: Option<bool>,
}

/// An environment together with its reset distribution and policy class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvBundle {
    pub name: String,
    pub mdp: BlockMdp,
    pub mu: ObsDistribution,
    /// Latent reset weights `ν_h` when `μ_h = ψ ∘ ν_h`.
    pub nu: Option<Vec<Vec<f64>>>,
    /// Whether `μ` is the occupancy of a mixture over the class (set by construction).
    pub admissible: bool,
    pub class: PolicyClass,
    pub meta: EnvMeta,
}

impl EnvBundle {
    /// True when `nu` is declared and `μ_h(x) = ν_h(φ(x)) ψ(φ(x))(x)` holds to 1e-12.
    pub fn is_factorized(&self) -> bool {
        let Some(nu) = &self.nu else { return false };
        let rebuilt = ObsDistribution::factorized(&self.mdp, nu);
        rebuilt.0.iter().flatten().zip(self.mu.0.iter().flatten()).all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// Assigns disjoint, seeded-random observation ids to the states of one layer and
/// returns uniform emission rows over those supports.
fn shuffled_emissions(sizes: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(rng);
    let mut offset = 0;
    sizes
        .iter()
        .map(|&k| {
            let mut row = vec![0.0; total];
            for &x in &ids[offset..offset + k] {
                row[x] = 1.0 / k as f64;
            }
            offset += k;
            row
        })
        .collect()
}

fn point(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn check_bits(bits: &[Action], horizon: usize) -> Result<(), EnvError> {
    if bits.len() != horizon || bits.iter().any(|&b| b > 1) {
        return Err(invalid(format!("pi_star_bits must be {horizon} binary actions")));
    }
    Ok(())
}

/// Combination lock with a good chain `g` and an absorbing bad chain `b`. Layer 1 holds
/// only `g`. Emission supports have sizes `m_good` and `m_bad`; `μ` is `ψ(g)` at layer 1
/// and uniform over `{g, b}` afterwards. The class is all open-loop policies.
pub fn comb_lock(
    horizon: usize,
    m_good: usize,
    m_bad: usize,
    pi_star_bits: &[Action],
    assignment_seed: u64,
) -> Result<EnvBundle, EnvError> {
    if horizon == 0 || m_good == 0 || m_bad == 0 {
        return Err(invalid("comb_lock needs H, m_good, m_bad >= 1"));
    }
    check_bits(pi_star_bits, horizon)?;
    let counts: Vec<usize> = (1..=horizon).map(|h| if h == 1 { 1 } else { 2 }).collect();
    let (g, b) = (0, 1);
    let transitions = (1..horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|s| (0..2).map(|a| point(2, if s == g && a == pi_star_bits[h - 1] { g } else { b })).collect())
                .collect()
        })
        .collect();
    let rewards = (1..=horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            let hit = h == horizon && s == g && a == pi_star_bits[h - 1];
                            Reward::Const(if hit { 1.0 } else { 0.0 })
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let latent = LatentMdp::new(2, counts.clone(), g, transitions, rewards)?;
    let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed);
    let emissions =
        (1..=horizon).map(|h| shuffled_emissions(&if h == 1 { vec![m_good] } else { vec![m_good, m_bad] }, &mut rng)).collect();
    let mdp = BlockMdp::new(latent, emissions)?;
    let nu: Vec<Vec<f64>> = counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
    let mu = ObsDistribution::factorized(&mdp, &nu);
    Ok(EnvBundle {
        name: "comb_lock".into(),
        mdp,
        mu,
        nu: Some(nu),
        admissible: false,
        class: enumerate_open_loop(horizon, 2, DEFAULT_ENUMERATION_CAP)?,
        meta: EnvMeta {
            declared_c_cov: Some(if horizon == 1 { 1.0 } else { 2.0 }),
            declared_c_conc: Some(if horizon == 1 { 1.0 } else { 2.0 }),
            declared_c_push: Some(if horizon == 1 { 1.0 } else { 2.0 }),
            pi_star: Some(Policy::OpenLoop(pi_star_bits.to_vec())),
            realizable: Some(true),
        },
    })
}

/// Combination lock with an extra distractor chain `d` at layers `h ≥ 2` that no
/// policy reaches from the start but `μ = Unif(X_h)` samples. The optimal final action
/// at `d` is the opposite of the one at `g`, so open-loop policies are not realizable.
/// Per layer `g` and `d` have `m_per_state` observations and `b` has twice that; layer 1
/// has `4·m_per_state` observations of `g`.
pub fn comb_lock_distractor(
    horizon: usize,
    m_per_state: usize,
    pi_star_bits: &[Action],
    assignment_seed: u64,
) -> Result<EnvBundle, EnvError> {
    if horizon == 0 || m_per_state == 0 {
        return Err(invalid("comb_lock_distractor needs H, m_per_state >= 1"));
    }
    check_bits(pi_star_bits, horizon)?;
    let (g, b, d) = (0, 1, 2);
    let counts: Vec<usize> = (1..=horizon).map(|h| if h == 1 { 1 } else { 3 }).collect();
    let transitions = (1..horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            let on_key = a == pi_star_bits[h - 1];
                            let next = match s {
                                _ if s == g && on_key => g,
                                _ if s == d && on_key => d,
                                _ => b,
                            };
                            point(3, next)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let rewards = (1..=horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            if h < horizon {
                                return Reward::Const(0.0);
                            }
                            let on_key = a == pi_star_bits[h - 1];
                            match s {
                                _ if s == g => Reward::Const(if on_key { 1.0 } else { 0.0 }),
                                _ if s == d => Reward::Const(if on_key { 0.0 } else { 1.0 }),
                                _ => Reward::Bernoulli(0.5),
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let latent = LatentMdp::new(2, counts.clone(), g, transitions, rewards)?;
    let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed);
    let m = m_per_state;
    let emissions = (1..=horizon)
        .map(|h| shuffled_emissions(&if h == 1 { vec![4 * m] } else { vec![m, 2 * m, m] }, &mut rng))
        .collect();
    let mdp = BlockMdp::new(latent, emissions)?;
    let nu: Vec<Vec<f64>> = (1..=horizon).map(|h| if h == 1 { vec![1.0] } else { vec![0.25, 0.5, 0.25] }).collect();
    let mu = ObsDistribution::factorized(&mdp, &nu);
    Ok(EnvBundle {
        name: "comb_lock_distractor".into(),
        mdp,
        mu,
        nu: Some(nu),
        admissible: false,
        class: enumerate_open_loop(horizon, 2, DEFAULT_ENUMERATION_CAP)?,
        meta: EnvMeta {
            declared_c_conc: Some(if horizon == 1 { 1.0 } else { 4.0 }),
            pi_star: None,
            realizable: Some(horizon == 1),
            ..EnvMeta::default()
        },
    })
}

/// Named states of [`psdp_simple`].
pub mod simple {
    /// Layer 1: the start state and the unreachable, over-covered state.
    pub const START: usize = 0;
    pub const SHADOW: usize = 1;
    /// Layer 2.
    pub const U: usize = 0;
    pub const W: usize = 1;
    pub const Y: usize = 2;
}

/// Two-layer tabular instance where the reset distribution over-weights a state the
/// start never reaches. Layer 1 has the start state and a shadow state with
/// `μ_1 = (1/4, 3/4)`; layer 2 has `u, w, y` with `μ_2 = (1/4, 1/4, 1/2)`. The class is
/// `{(0,0), (1,1)}`, and `(1,1)` is optimal from the start.
pub fn psdp_simple(gamma: f64) -> Result<EnvBundle, EnvError> {
    use simple::{START, U, W, Y};
    if !(0.0..=0.25).contains(&gamma) {
        return Err(invalid("gamma must lie in [0, 1/4]"));
    }
    let c = Reward::Const;
    let transitions = vec![vec![
        vec![point(3, U), point(3, W)],
        vec![point(3, Y), vec![2.0 / 3.0, 0.0, 1.0 / 3.0]],
    ]];
    let rewards = vec![
        vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(0.0)]],
        vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(1.0)], vec![c(1.0), c(0.5 + 2.0 * gamma)]],
    ];
    let latent = LatentMdp::new(2, vec![2, 3], START, transitions, rewards)?;
    let mdp = BlockMdp::tabular(latent)?;
    let nu = vec![vec![0.25, 0.75], vec![0.25, 0.25, 0.5]];
    let mu = ObsDistribution::factorized(&mdp, &nu);
    Ok(EnvBundle {
        name: "psdp_simple".into(),
        mdp,
        mu,
        nu: Some(nu),
        admissible: false,
        class: PolicyClass::new(vec![Policy::OpenLoop(vec![0, 0]), Policy::OpenLoop(vec![1, 1])])?,
        meta: EnvMeta {
            declared_c_conc: Some(4.0),
            pi_star: Some(Policy::OpenLoop(vec![1, 1])),
            realizable: Some(true),
            ..EnvMeta::default()
        },
    })
}

/// State layout of [`psdp_highway`] at construction layer `k` (our layer `k + 1`).
#[derive(Clone, Copy, Debug)]
pub struct HighwayLayout {
    pub depth: usize,
}

impl HighwayLayout {
    /// Boring state `i ∈ 0..=depth`.
    pub fn boring(&self, i: usize) -> usize {
        i
    }

    /// The diamond state, absent at the last construction layer.
    pub fn diamond(&self, k: usize) -> Option<usize> {
        (k >= 1 && k < self.depth).then_some(self.depth + 1)
    }

    pub fn star(&self, k: usize) -> usize {
        if k < self.depth {
            self.depth + 2
        } else {
            self.depth + 1
        }
    }

    /// Highway state leading from construction layer `k` to `target > k`.
    pub fn highway(&self, k: usize, target: usize) -> usize {
        self.star(k) + (target - k)
    }

    pub fn state_count(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            self.star(k) + 1 + (self.depth - k)
        }
    }

    /// The pre-ramp action set `{0, 1, a_1, …, a_depth}` has `depth + 2` actions.
    pub fn ramp_action(&self, target: usize) -> Action {
        1 + target
    }
}

/// Tabular lower-bound instance for PSDP with a worst-case bandit oracle. It has
/// `depth + 1` layers; the first offers `depth + 2` actions, later layers use two
/// (larger actions behave like action 0). `μ` puts `1/C_push` on each non-diamond state
/// and the remaining mass on the diamond state. The class is every open-loop policy
/// over the per-layer action sets.
pub fn psdp_highway(depth: usize, c_push: f64, eps_stat: f64) -> Result<EnvBundle, EnvError> {
    let hh = depth;
    if hh < 2 {
        return Err(invalid("psdp_highway needs H >= 2"));
    }
    if c_push < 5.0 * hh as f64 {
        return Err(invalid(format!("psdp_highway needs C_push >= 5H = {}", 5 * hh)));
    }
    if eps_stat < 0.0 {
        return Err(invalid("eps_stat must be non-negative"));
    }
    let lay = HighwayLayout { depth: hh };
    let actions = hh + 2;
    let p = 1.0 - (2 * hh + 1) as f64 / c_push;
    let counts: Vec<usize> = (0..=hh).map(|k| lay.state_count(k)).collect();

    // Reset distribution per construction layer.
    let mu_layers: Vec<Vec<f64>> = (0..=hh)
        .map(|k| {
            let n = counts[k];
            if k == 0 {
                return vec![1.0];
            }
            let mut row = vec![1.0 / c_push; n];
            let sink = match lay.diamond(k) {
                Some(dia) => dia,
                None => lay.boring(0),
            };
            row[sink] = 0.0;
            row[sink] = 1.0 - row.iter().sum::<f64>();
            row
        })
        .collect();

    let mut transitions = Vec::with_capacity(hh);
    for k in 0..hh {
        let next_n = counts[k + 1];
        let to = |s: usize| point(next_n, s);
        let mut layer = Vec::with_capacity(counts[k]);
        if k == 0 {
            let mut rows = vec![to(lay.diamond(1).unwrap_or(lay.boring(0))), to(lay.star(1))];
            rows.push(mu_layers[1].clone());
            for target in 2..=hh {
                rows.push(to(lay.highway(1, target)));
            }
            layer.push(rows);
        } else {
            for s in 0..counts[k] {
                let rows = (0..actions)
                    .map(|a| {
                        let a = if a > 1 { 0 } else { a };
                        if s <= hh {
                            to(lay.boring(s))
                        } else if Some(s) == lay.diamond(k) {
                            to(if a == 0 { lay.boring(hh - k) } else { lay.star(k + 1) })
                        } else if s == lay.star(k) {
                            to(if a == 0 { lay.boring(0) } else { lay.boring(hh - k + 1) })
                        } else {
                            let target = k + (s - lay.star(k));
                            if target == k + 1 {
                                mu_layers[k + 1].clone()
                            } else {
                                to(lay.highway(k + 1, target))
                            }
                        }
                    })
                    .collect();
                layer.push(rows);
            }
        }
        transitions.push(layer);
    }

    let boring_reward = |i: usize| {
        if i == 0 {
            0.0
        } else {
            c_push.powi(i as i32) * p.powi(i as i32 - 1) / i as f64 * eps_stat
        }
    };
    let rewards = (0..=hh)
        .map(|k| {
            (0..counts[k])
                .map(|s| {
                    (0..actions)
                        .map(|a| {
                            let a = if a > 1 { 0 } else { a };
                            if k < hh {
                                Reward::Const(0.0)
                            } else if s == lay.star(k) {
                                Reward::Const(if a == 1 { c_push * eps_stat } else { 0.0 })
                            } else if s <= hh {
                                Reward::Const(boring_reward(s))
                            } else {
                                Reward::Const(0.0)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let latent = LatentMdp::new(actions, counts, 0, transitions, rewards)?;
    let mdp = BlockMdp::tabular(latent)?;
    let mu = ObsDistribution(mu_layers.clone());
    let mut sets = vec![actions];
    sets.extend(std::iter::repeat_n(2, hh));
    Ok(EnvBundle {
        name: "psdp_highway".into(),
        mdp,
        mu,
        nu: Some(mu_layers),
        admissible: true,
        class: enumerate_open_loop_sets(&sets, DEFAULT_ENUMERATION_CAP)?,
        meta: EnvMeta {
            declared_c_push: Some(c_push),
            pi_star: Some(Policy::OpenLoop(vec![1; hh + 1])),
            realizable: Some(true),
            ..EnvMeta::default()
        },
    })
}

/// Parameters of [`random_block_mdp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomParams {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub obs_per_state: usize,
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    pub seed: u64,
    /// Point-mass latent transitions instead of Dirichlet draws.
    #[serde(default)]
    pub deterministic: bool,
    /// Bernoulli instead of constant final-layer rewards.
    #[serde(default)]
    pub bernoulli_rewards: bool,
    /// Extra observation-table policies derived from perturbed state-action maps.
    #[serde(default)]
    pub table_policies: usize,
}

fn default_alpha() -> f64 {
    1.0
}

impl RandomParams {
    pub fn new(states: usize, actions: usize, horizon: usize, obs_per_state: usize, seed: u64) -> Self {
        Self {
            states,
            actions,
            horizon,
            obs_per_state,
            dirichlet_alpha: 1.0,
            seed,
            deterministic: false,
            bernoulli_rewards: false,
            table_policies: 0,
        }
    }
}

/// Draws from `Dirichlet(α·1)` as normalized Gamma samples.
fn dirichlet(k: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated as positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            let mut v: Vec<f64> = draws.iter().map(|x| x / total).collect();
            // Push the rounding residue onto the largest entry so rows sum to 1 exactly enough.
            let resid = 1.0 - v.iter().sum::<f64>();
            let top = (0..k).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
            v[top] += resid;
            return v;
        }
    }
}

/// Random Block MDP: a single start state at layer 1 and `S` states per later layer,
/// Dirichlet (or point-mass) latent transitions, uniform emissions over
/// `obs_per_state` observations, rewards only at layer `H`, and factorized `μ` with
/// uniform `ν`. The class is all open-loop policies plus optional table policies.
pub fn random_block_mdp(params: &RandomParams) -> Result<EnvBundle, EnvError> {
    let RandomParams { states, actions, horizon, obs_per_state, dirichlet_alpha, seed, .. } = *params;
    if states == 0 || actions == 0 || horizon == 0 || obs_per_state == 0 {
        return Err(invalid("random_block_mdp sizes must be positive"));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
        return Err(invalid("dirichlet_alpha must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<usize> = (1..=horizon).map(|h| if h == 1 { 1 } else { states }).collect();
    let transitions = (1..horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|_| {
                    (0..actions)
                        .map(|_| {
                            if params.deterministic {
                                point(states, rng.random_range(0..states))
                            } else {
                                dirichlet(states, dirichlet_alpha, &mut rng)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let rewards = (1..=horizon)
        .map(|h| {
            (0..counts[h - 1])
                .map(|_| {
                    (0..actions)
                        .map(|_| {
                            if h < horizon {
                                Reward::Const(0.0)
                            } else if params.bernoulli_rewards {
                                Reward::Bernoulli(rng.random::<f64>())
                            } else {
                                Reward::Const(rng.random::<f64>())
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let latent = LatentMdp::new(actions, counts.clone(), 0, transitions, rewards)?;
    let emissions = counts.iter().map(|&n| shuffled_emissions(&vec![obs_per_state; n], &mut rng)).collect();
    let mdp = BlockMdp::new(latent, emissions)?;
    let nu: Vec<Vec<f64>> = counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
    let mu = ObsDistribution::factorized(&mdp, &nu);
    let mut class = enumerate_open_loop(horizon, actions, DEFAULT_ENUMERATION_CAP)?;
    class.extend((0..params.table_policies).map(|_| perturbed_table_policy(&mdp, &mut rng)));
    Ok(EnvBundle {
        name: "random_block_mdp".into(),
        mdp,
        mu,
        nu: Some(nu),
        admissible: false,
        class,
        meta: EnvMeta::default(),
    })
}

/// A random state-to-action map lifted through the decoder, with one observation in
/// five relabelled at random.
fn perturbed_table_policy(m: &BlockMdp, rng: &mut ChaCha8Rng) -> Policy {
    let a_count = m.action_count();
    let mut table = std::collections::BTreeMap::new();
    for h in 1..=m.horizon() {
        let by_state: Vec<Action> = (0..m.latent().state_count(h)).map(|_| rng.random_range(0..a_count)).collect();
        for x in 0..m.obs_count(h) {
            let o = Obs::new(h, x);
            let a = if rng.random::<f64>() < 0.2 { rng.random_range(0..a_count) } else { by_state[m.decode(o)] };
            table.insert(o, a);
        }
    }
    Policy::ObsTable { table, default: 0 }
}

/// Declarative environment description used by configs and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    CombLock {
        horizon: usize,
        m_good: Option<usize>,
        m_bad: Option<usize>,
        pi_star_bits: Option<Vec<Action>>,
        #[serde(default)]
        assignment_seed: u64,
    },
    CombLockDistractor {
        horizon: usize,
        m_per_state: Option<usize>,
        pi_star_bits: Option<Vec<Action>>,
        #[serde(default)]
        assignment_seed: u64,
    },
    PsdpSimple {
        gamma: f64,
    },
    PsdpHighway {
        horizon: usize,
        c_push: f64,
        eps_stat: f64,
    },
    Random(RandomParams),
}

/// `π★` bits derived from a seed when none are given.
fn default_bits(horizon: usize, seed: u64) -> Vec<Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b175);
    (0..horizon).map(|_| rng.random_range(0..2)).collect()
}

impl EnvSpec {
    /// The same generator with its randomness reseeded: the sampling seed of random
    /// instances and the observation assignment of combination locks. The fixed
    /// constructions are returned unchanged.
    pub fn reseeded(&self, seed: u64) -> EnvSpec {
        let mut out = self.clone();
        match &mut out {
            EnvSpec::CombLock { assignment_seed, .. } | EnvSpec::CombLockDistractor { assignment_seed, .. } => {
                *assignment_seed = seed
            }
            EnvSpec::Random(p) => p.seed = seed,
            EnvSpec::PsdpSimple { .. } | EnvSpec::PsdpHighway { .. } => {}
        }
        out
    }

    pub fn build(&self) -> Result<EnvBundle, EnvError> {
        match self {
            EnvSpec::CombLock { horizon, m_good, m_bad, pi_star_bits, assignment_seed } => {
                let bits = pi_star_bits.clone().unwrap_or_else(|| default_bits(*horizon, *assignment_seed));
                comb_lock(*horizon, m_good.unwrap_or(2 * horizon), m_bad.unwrap_or(8 * horizon), &bits, *assignment_seed)
            }
            EnvSpec::CombLockDistractor { horizon, m_per_state, pi_star_bits, assignment_seed } => {
                let bits = pi_star_bits.clone().unwrap_or_else(|| default_bits(*horizon, *assignment_seed));
                comb_lock_distractor(*horizon, m_per_state.unwrap_or(2 * horizon), &bits, *assignment_seed)
            }
            EnvSpec::PsdpSimple { gamma } => psdp_simple(*gamma),
            EnvSpec::PsdpHighway { horizon, c_push, eps_stat } => psdp_highway(*horizon, *c_push, *eps_stat),
            EnvSpec::Random(p) => random_block_mdp(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{coverage_report, exact_values, occupancy};

    #[test]
    fn comb_lock_values_and_coefficients() {
        let env = comb_lock(3, 6, 24, &[1, 0, 1], 7).unwrap();
        assert!(env.is_factorized());
        for pi in env.class.iter() {
            let v = exact_values(&env.mdp, pi).unwrap().initial_value(&env.mdp);
            let expected = if *pi == Policy::OpenLoop(vec![1, 0, 1]) { 1.0 } else { 0.0 };
            assert_eq!(v, expected);
        }
        let rep = coverage_report(&env.mdp, &env.mu, &env.class).unwrap();
        assert!((rep.c_cov - 2.0).abs() < 1e-12);
        assert!((rep.c_conc.value() - 2.0).abs() < 1e-12);
        assert!((rep.c_push.value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn distractor_is_unreachable() {
        let env = comb_lock_distractor(3, 4, &[0, 1, 1], 3).unwrap();
        assert!(env.is_factorized());
        for pi in env.class.iter() {
            let occ = occupancy(&env.mdp, pi).unwrap();
            for h in 2..=3 {
                assert_eq!(occ.d[h - 1][2], 0.0);
            }
        }
        let uniform = ObsDistribution::uniform(&env.mdp);
        for (a, b) in env.mu.0.iter().flatten().zip(uniform.0.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_values() {
        let env = psdp_simple(0.01).unwrap();
        let v = exact_values(&env.mdp, &Policy::OpenLoop(vec![1, 1])).unwrap();
        assert_eq!(v.initial_value(&env.mdp), 1.0);
        let v0 = exact_values(&env.mdp, &Policy::OpenLoop(vec![0, 0])).unwrap();
        assert_eq!(v0.initial_value(&env.mdp), 0.0);
    }

    #[test]
    fn highway_rewards_and_sizes() {
        let env = psdp_highway(3, 15.0, 1e-3).unwrap();
        assert_eq!(env.mdp.horizon(), 4);
        assert_eq!(env.class.len(), 5 * 8);
        let p: f64 = 8.0 / 15.0;
        let lay = HighwayLayout { depth: 3 };
        let last = env.mdp.latent();
        let r = |i: usize| last.reward(4, lay.boring(i), 0).mean();
        assert!((r(1) - 0.015).abs() < 1e-15);
        assert!((r(2) - 225.0 * p / 2.0 * 1e-3).abs() < 1e-15);
        assert!((r(3) - 0.32).abs() < 1e-12);
        let best = exact_values(&env.mdp, &Policy::OpenLoop(vec![1, 1, 1, 1])).unwrap().initial_value(&env.mdp);
        assert!((best - 0.32).abs() < 1e-12);
        assert!(psdp_highway(3, 10.0, 1e-3).is_err());
    }

    #[test]
    fn random_is_deterministic_and_factorized() {
        let mut p = RandomParams::new(3, 2, 3, 4, 11);
        p.table_policies = 2;
        let a = random_block_mdp(&p).unwrap();
        let b = random_block_mdp(&p).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.is_factorized());
        assert_eq!(a.class.len(), 10);
        p.deterministic = true;
        let d = random_block_mdp(&p).unwrap();
        assert!(d.mdp.latent().is_deterministic());
    }

    #[test]
    fn spec_roundtrip_and_unknown_keys() {
        let spec: EnvSpec = serde_json::from_str(r#"{"generator":"psdp_simple","gamma":0.01}"#).unwrap();
        assert_eq!(spec, EnvSpec::PsdpSimple { gamma: 0.01 });
        assert!(serde_json::from_str::<EnvSpec>(r#"{"generator":"psdp_simple","gamma":0.01,"x":1}"#).is_err());
        let spec: EnvSpec = serde_json::from_str(r#"{"generator":"comb_lock","horizon":3}"#).unwrap();
        let env = spec.build().unwrap();
        assert_eq!(env.mdp.obs_count(2), 6 + 24);
    }
}
