//! Run configuration: the TOML schema, its validation, and the mapping from
//! command-line flags onto the same structure.

use std::fmt;
use std::path::{Path, PathBuf};

use blockmdp::envs::{EnvBundle, EnvSpec, RandomParams};
use blockmdp::plhr::PlhrParams;
use blockmdp::plhr_det::DetParams;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

/// A configuration problem. Reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Learner and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    /// PSDP with the empirical oracle and `n` samples per layer.
    Psdp { n: usize },
    /// PSDP with the exact adversarial oracle.
    PsdpWorstcase { eps_stat: f64 },
    PlhrD(DetParams),
    Plhr(PlhrParams),
}

impl AlgorithmConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmConfig::Psdp { .. } => "psdp",
            AlgorithmConfig::PsdpWorstcase { .. } => "psdp-worstcase",
            AlgorithmConfig::PlhrD(_) => "plhr-d",
            AlgorithmConfig::Plhr(_) => "plhr",
        }
    }

    /// Suboptimality at or below which a seed counts as a success by default.
    fn default_threshold(&self) -> f64 {
        match self {
            AlgorithmConfig::Psdp { .. } | AlgorithmConfig::PsdpWorstcase { .. } => 1e-9,
            AlgorithmConfig::PlhrD(p) => p.eps,
            AlgorithmConfig::Plhr(p) => p.eps,
        }
    }
}

/// Optional oracle-side checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Record structural decode checks against the hidden decoder (PLHR only).
    #[serde(default)]
    pub lemmas: bool,
    /// Replace Monte Carlo means by exact values while still metering episodes.
    #[serde(default)]
    pub oracle_mc: bool,
}

/// Full description of a `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Generator description; exclusive with `env_file`.
    #[serde(default)]
    pub env: Option<EnvSpec>,
    /// Environment JSON written by `env make`; exclusive with `env`.
    #[serde(default)]
    pub env_file: Option<PathBuf>,
    /// Reseed the generator with each run seed, giving one environment per seed.
    #[serde(default)]
    pub env_per_seed: bool,
    pub algorithm: AlgorithmConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub success_threshold: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn threshold(&self) -> f64 {
        self.success_threshold.unwrap_or_else(|| self.algorithm.default_threshold())
    }

    /// Checks everything that can be checked without running a learner.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.env.is_some() == self.env_file.is_some() {
            return Err(config_error("exactly one of `env` and `env_file` must be given"));
        }
        if self.env_file.is_some() && self.env_per_seed {
            return Err(config_error("`env_per_seed` needs a generator, not an environment file"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("the seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_error("the seed list has duplicates"));
        }
        if let Some(t) = self.success_threshold {
            if !t.is_finite() || t < 0.0 {
                return Err(config_error("success_threshold must be a nonnegative number"));
            }
        }
        let env = self.environment(self.seeds[0])?;
        let states = env.mdp.latent().state_counts().iter().copied().max().unwrap_or(1);
        match &self.algorithm {
            AlgorithmConfig::Psdp { n } if *n == 0 => return Err(config_error("psdp needs n > 0")),
            AlgorithmConfig::PsdpWorstcase { eps_stat } if eps_stat.is_nan() || *eps_stat < 0.0 => {
                return Err(config_error("eps_stat must be nonnegative"))
            }
            AlgorithmConfig::PlhrD(p) => {
                if !(p.eps > 0.0 && p.delta > 0.0 && p.delta < 1.0 && p.tol_scale > 1.0) {
                    return Err(config_error("plhr_d needs eps > 0, 0 < delta < 1 and tol_scale > 1"));
                }
            }
            AlgorithmConfig::Plhr(p) => {
                p.resolve(states, env.mdp.action_count(), env.mdp.horizon(), env.class.len())
                    .map_err(|e| config_error(e.to_string()))?;
            }
            _ => {}
        }
        if (self.verify.lemmas || self.verify.oracle_mc) && !matches!(self.algorithm, AlgorithmConfig::Plhr(_)) {
            return Err(config_error("verification toggles apply to plhr only"));
        }
        Ok(())
    }

    /// The environment used for `seed`.
    pub fn environment(&self, seed: u64) -> anyhow::Result<EnvBundle> {
        if let Some(path) = &self.env_file {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            return serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())));
        }
        let spec = self.env.as_ref().expect("validated");
        let spec = if self.env_per_seed { spec.reseeded(seed) } else { spec.clone() };
        spec.build().map_err(|e| config_error(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    CombLock,
    CombLockDistractor,
    PsdpSimple,
    PsdpHighway,
    Random,
}

/// Environment selection flags shared by several subcommands.
#[derive(Clone, Debug, Args)]
pub struct EnvArgs {
    /// Environment generator.
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    /// Environment JSON written by `env make`.
    #[arg(long, conflicts_with = "env")]
    pub env_file: Option<PathBuf>,
    /// Horizon (construction depth for psdp-highway).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Good-state observations per layer (comb-lock).
    #[arg(long)]
    pub m_good: Option<usize>,
    /// Bad-state observations per layer (comb-lock).
    #[arg(long)]
    pub m_bad: Option<usize>,
    /// Observations per state (comb-lock-distractor).
    #[arg(long)]
    pub m_per_state: Option<usize>,
    /// Optimal action bits, comma separated (combination locks).
    #[arg(long, value_delimiter = ',')]
    pub pi_star: Option<Vec<usize>>,
    /// Reward gap of psdp-simple.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Pushforward concentrability of psdp-highway.
    #[arg(long)]
    pub c_push: Option<f64>,
    /// Oracle band of psdp-highway.
    #[arg(long)]
    pub eps_stat: Option<f64>,
    /// Latent states per layer (random).
    #[arg(long)]
    pub states: Option<usize>,
    /// Actions (random).
    #[arg(long)]
    pub actions: Option<usize>,
    /// Observations per latent state (random).
    #[arg(long)]
    pub obs_per_state: Option<usize>,
    /// Point-mass transitions (random).
    #[arg(long)]
    pub deterministic: bool,
    /// Extra observation-table policies in the class (random).
    #[arg(long)]
    pub table_policies: Option<usize>,
    /// Dirichlet concentration of transitions (random).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bernoulli final-layer rewards (random).
    #[arg(long)]
    pub bernoulli_rewards: bool,
    /// Generator seed: sampling seed (random) or observation assignment (locks).
    #[arg(long, default_value_t = 0)]
    pub env_seed: u64,
}

impl EnvArgs {
    fn need<T>(v: Option<T>, flag: &str, kind: &str) -> anyhow::Result<T> {
        v.ok_or_else(|| config_error(format!("--{flag} is required for --env {kind}")))
    }

    /// The generator described by the flags, or `None` when `--env-file` is used.
    pub fn spec(&self) -> anyhow::Result<Option<EnvSpec>> {
        let Some(kind) = self.env else {
            return if self.env_file.is_some() { Ok(None) } else { Err(config_error("one of --env and --env-file is required")) };
        };
        Ok(Some(match kind {
            EnvKind::CombLock => EnvSpec::CombLock {
                horizon: Self::need(self.horizon, "horizon", "comb-lock")?,
                m_good: self.m_good,
                m_bad: self.m_bad,
                pi_star_bits: self.pi_star.clone(),
                assignment_seed: self.env_seed,
            },
            EnvKind::CombLockDistractor => EnvSpec::CombLockDistractor {
                horizon: Self::need(self.horizon, "horizon", "comb-lock-distractor")?,
                m_per_state: self.m_per_state,
                pi_star_bits: self.pi_star.clone(),
                assignment_seed: self.env_seed,
            },
            EnvKind::PsdpSimple => EnvSpec::PsdpSimple { gamma: Self::need(self.gamma, "gamma", "psdp-simple")? },
            EnvKind::PsdpHighway => EnvSpec::PsdpHighway {
                horizon: Self::need(self.horizon, "horizon", "psdp-highway")?,
                c_push: Self::need(self.c_push, "c-push", "psdp-highway")?,
                eps_stat: Self::need(self.eps_stat, "eps-stat", "psdp-highway")?,
            },
            EnvKind::Random => {
                let mut p = RandomParams::new(
                    Self::need(self.states, "states", "random")?,
                    self.actions.unwrap_or(2),
                    Self::need(self.horizon, "horizon", "random")?,
                    self.obs_per_state.unwrap_or(3),
                    self.env_seed,
                );
                p.deterministic = self.deterministic;
                p.bernoulli_rewards = self.bernoulli_rewards;
                p.table_policies = self.table_policies.unwrap_or(0);
                if let Some(a) = self.alpha {
                    p.dirichlet_alpha = a;
                }
                EnvSpec::Random(p)
            }
        }))
    }

    /// Builds the selected environment.
    pub fn build(&self) -> anyhow::Result<EnvBundle> {
        match self.spec()? {
            Some(spec) => spec.build().map_err(|e| config_error(e.to_string())),
            None => {
                let path = self.env_file.as_ref().expect("checked by spec");
                let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLHR: &str = r#"
seeds = [0, 1]
env_per_seed = true

[env]
generator = "random"
states = 2
actions = 2
horizon = 2
obs_per_state = 4
seed = 0

[algorithm]
name = "plhr"
eps = 0.1
n_reset = 40
n_dec = 60
n_mc = 400
eps_tol = 0.06
eps_dec = 0.07
"#;

    #[test]
    fn parses_and_validates_plhr() {
        let cfg: RunConfig = toml::from_str(PLHR).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(cfg.algorithm, AlgorithmConfig::Plhr(ref p) if p.n_dec == 60));
        assert_eq!(cfg.threshold(), 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad_top = format!("{PLHR}\nsurplus = 1\n");
        assert!(toml::from_str::<RunConfig>(&bad_top).is_err());
        let bad_alg = PLHR.replace("eps_dec = 0.07", "eps_dec = 0.07\nwhatever = 2");
        assert!(toml::from_str::<RunConfig>(&bad_alg).is_err());
        let bad_env = PLHR.replace("seed = 0", "seed = 0\ncolour = 1");
        assert!(toml::from_str::<RunConfig>(&bad_env).is_err());
    }

    #[test]
    fn semantic_errors_are_caught() {
        let mut cfg: RunConfig = toml::from_str(PLHR).unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg: RunConfig = toml::from_str(PLHR).unwrap();
        cfg.algorithm = AlgorithmConfig::Psdp { n: 0 };
        assert!(cfg.validate().is_err());
        let mut cfg: RunConfig = toml::from_str(PLHR).unwrap();
        cfg.env_file = Some("x.json".into());
        assert!(cfg.validate().is_err());
    }
}
