//! Executes a validated [`RunConfig`] over its seeds and assembles the run record.

use blockmdp::access::{AccessHandle, Mode};
use blockmdp::oracle::{best_in_class, exact_values};
use blockmdp::plhr::verify::verify_plhr;
use blockmdp::plhr::{run_plhr, PlhrError};
use blockmdp::plhr_det::{run_plhr_d, verify_det};
use blockmdp::psdp::{exploration_rng, run_psdp, run_psdp_worstcase};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{AlgorithmConfig, RunConfig};

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub success: bool,
    pub suboptimality: Option<f64>,
    pub value: Option<f64>,
    pub best_value: Option<f64>,
    pub episodes: u64,
    /// Algorithm failure, if the seed did not produce a policy.
    pub error: Option<String>,
    /// Algorithm-specific audit fields.
    pub detail: Value,
}

/// Summary over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub errors: usize,
    pub success_rate: f64,
    pub failure_frequency: f64,
    pub mean_suboptimality: Option<f64>,
    /// Nearest-rank 95th percentile over seeds that returned a policy.
    pub p95_suboptimality: Option<f64>,
}

/// Everything a `run` writes to `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub algorithm: String,
    pub success_threshold: f64,
    pub config: RunConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

/// SHA-256 of the configuration's canonical JSON form.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("configs serialize");
    format!("{:x}", Sha256::digest(canonical))
}

/// Why a seed produced no policy.
struct SeedFailure {
    message: String,
    /// The algorithm reached a state its invariants rule out, such as an empty
    /// confidence set.
    internal: bool,
}

fn plhr_internal(e: &PlhrError) -> bool {
    matches!(e, PlhrError::Confidence { .. } | PlhrError::RefitCap { .. } | PlhrError::LoopCap(_))
}

struct Outcome {
    value: f64,
    best_value: f64,
    episodes: u64,
    detail: Value,
}

fn run_seed(cfg: &RunConfig, seed: u64) -> anyhow::Result<Result<Outcome, SeedFailure>> {
    let env = cfg.environment(seed)?;
    let (m, mu, class) = (&env.mdp, &env.mu, &env.class);
    let (best_value, _) = best_in_class(m, class)?;
    let fail = |message: String, internal: bool| Ok(Err(SeedFailure { message, internal }));
    match &cfg.algorithm {
        AlgorithmConfig::Psdp { n } => {
            let mut acc = AccessHandle::new(m, Some(mu), Mode::MuReset, seed)?;
            let mut rng = exploration_rng(seed);
            match run_psdp(&mut acc, class, *n, &mut rng) {
                Ok(run) => Ok(Ok(Outcome {
                    value: exact_values(m, &run.policy)?.initial_value(m),
                    best_value,
                    episodes: run.episodes,
                    detail: json!({ "chosen": run.chosen }),
                })),
                Err(e) => fail(e.to_string(), false),
            }
        }
        AlgorithmConfig::PsdpWorstcase { eps_stat } => match run_psdp_worstcase(m, mu, class, *eps_stat) {
            Ok(out) => Ok(Ok(Outcome {
                value: out.value,
                best_value,
                episodes: 0,
                detail: json!({ "chosen": out.run.chosen }),
            })),
            Err(e) => fail(e.to_string(), false),
        },
        AlgorithmConfig::PlhrD(params) => {
            let mut acc = AccessHandle::new(m, Some(mu), Mode::HybridPlusEmission, seed)?;
            match run_plhr_d(&mut acc, class, params) {
                Ok(run) => {
                    let v = verify_det(&env, &run, params.eps, 1.0)?;
                    Ok(Ok(Outcome {
                        value: v.value,
                        best_value,
                        episodes: run.audit.episodes,
                        detail: json!({
                            "policy_index": run.policy_index,
                            "deletions": v.deletions,
                            "ground_truth_deletions": v.ground_truth_deletions,
                            "audit": run.audit,
                        }),
                    }))
                }
                Err(e) => fail(e.to_string(), false),
            }
        }
        AlgorithmConfig::Plhr(params) => {
            let mut acc = AccessHandle::new(m, Some(mu), Mode::HybridReset, seed)?.with_oracle_mc(cfg.verify.oracle_mc);
            let verifier = cfg.verify.lemmas.then_some(m);
            match run_plhr(&mut acc, class, params, verifier) {
                Ok(run) => {
                    let v = verify_plhr(m, class, &run)?;
                    Ok(Ok(Outcome {
                        value: v.value,
                        best_value,
                        episodes: run.audit.episodes,
                        detail: json!({
                            "policy_index": run.policy_index,
                            "emulator_accuracy": v.emulator_accuracy,
                            "audit": run.audit,
                        }),
                    }))
                }
                Err(e) => fail(e.to_string(), plhr_internal(&e)),
            }
        }
    }
}

fn aggregate(results: &[SeedResult]) -> Aggregate {
    let n = results.len();
    let successes = results.iter().filter(|r| r.success).count();
    let mut subs: Vec<f64> = results.iter().filter_map(|r| r.suboptimality).collect();
    subs.sort_by(f64::total_cmp);
    let mean = (!subs.is_empty()).then(|| subs.iter().sum::<f64>() / subs.len() as f64);
    let p95 = (!subs.is_empty()).then(|| {
        let rank = (0.95 * subs.len() as f64).ceil() as usize;
        subs[rank.clamp(1, subs.len()) - 1]
    });
    let success_rate = successes as f64 / n as f64;
    Aggregate {
        seeds: n,
        errors: results.iter().filter(|r| r.error.is_some()).count(),
        success_rate,
        failure_frequency: 1.0 - success_rate,
        mean_suboptimality: mean,
        p95_suboptimality: p95,
    }
}

/// Runs every seed in parallel and merges results in seed-list order. The flag is
/// true when some seed hit an internal inconsistency.
pub fn execute(cfg: &RunConfig) -> anyhow::Result<(RunRecord, bool)> {
    let threshold = cfg.threshold();
    let outcomes: Vec<anyhow::Result<(SeedResult, bool)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            Ok(match run_seed(cfg, seed)? {
                Ok(o) => {
                    let sub = o.best_value - o.value;
                    anyhow::ensure!(sub >= -1e-9, "seed {seed}: negative suboptimality {sub}");
                    let res = SeedResult {
                        seed,
                        success: sub <= threshold,
                        suboptimality: Some(sub),
                        value: Some(o.value),
                        best_value: Some(o.best_value),
                        episodes: o.episodes,
                        error: None,
                        detail: o.detail,
                    };
                    (res, false)
                }
                Err(f) => {
                    let res = SeedResult {
                        seed,
                        success: false,
                        suboptimality: None,
                        value: None,
                        best_value: None,
                        episodes: 0,
                        error: Some(f.message),
                        detail: Value::Null,
                    };
                    (res, f.internal)
                }
            })
        })
        .collect();
    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut internal = false;
    for o in outcomes {
        let (r, bad) = o?;
        internal |= bad;
        seeds.push(r);
    }
    let record = RunRecord {
        config_hash: config_hash(cfg),
        algorithm: cfg.algorithm.label().into(),
        success_threshold: threshold,
        config: cfg.clone(),
        aggregate: aggregate(&seeds),
        seeds,
    };
    Ok((record, internal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seed: u64, sub: Option<f64>, success: bool) -> SeedResult {
        SeedResult {
            seed,
            success,
            suboptimality: sub,
            value: None,
            best_value: None,
            episodes: 0,
            error: sub.is_none().then(|| "x".into()),
            detail: Value::Null,
        }
    }

    #[test]
    fn aggregate_statistics() {
        let rs: Vec<SeedResult> =
            (0..20).map(|i| result(i, Some(i as f64 / 100.0), i < 15)).chain([result(20, None, false)]).collect();
        let a = aggregate(&rs);
        assert_eq!(a.errors, 1);
        assert!((a.success_rate - 15.0 / 21.0).abs() < 1e-12);
        assert!((a.mean_suboptimality.unwrap() - 0.095).abs() < 1e-12);
        assert_eq!(a.p95_suboptimality, Some(0.18));
    }
}
