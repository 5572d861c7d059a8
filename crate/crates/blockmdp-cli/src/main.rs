//! `blockmdp`: build environments, compute coverage coefficients, run learners over
//! seeds, and reproduce the acceptance suites.
//!
//! Exit codes: 0 success, 1 acceptance criterion failed, 2 configuration error,
//! 3 internal inconsistency (for example an empty confidence set).

mod config;
mod output;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use blockmdp::oracle::coverage_report;
use blockmdp::plhr::PlhrParams;
use blockmdp::plhr_det::DetParams;
use blockmdp::suites::Suite;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{config_error, AlgorithmConfig, ConfigError, EnvArgs, RunConfig, VerifyConfig};

#[derive(Debug, Parser)]
#[command(name = "blockmdp", version, about = "Block MDP experiments: environments, coefficients, learners, acceptance suites")]
struct Cli {
    /// Output directory for artifacts.
    #[arg(long, global = true, env = "BLOCKMDP_OUT", default_value = "blockmdp-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Environment utilities.
    Env {
        #[command(subcommand)]
        action: EnvCommand,
    },
    /// Exact coverage coefficients of an environment, as JSON.
    Coeffs(EnvArgs),
    /// Run a learner over a list of seeds.
    Run(Box<RunArgs>),
    /// Reproduce one acceptance suite, or all of them.
    Repro {
        /// Suite name (see `--help`), or `all`.
        #[arg(value_parser = suite_names())]
        suite: String,
    },
}

#[derive(Debug, Subcommand)]
enum EnvCommand {
    /// Build an environment and write it as JSON.
    Make {
        #[command(flatten)]
        env: EnvArgs,
        /// Destination file; defaults to `<out>/env-<name>.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Psdp,
    PsdpWorstcase,
    PlhrD,
    Plhr,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Learner to run; required unless `--config` is given.
    #[arg(value_enum, required_unless_present = "config")]
    algorithm: Option<Algorithm>,
    /// TOML run configuration. Other run flags are rejected alongside it.
    #[arg(long, conflicts_with_all = ["algorithm", "env", "env_file"])]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    /// Use a different environment per seed by reseeding the generator.
    #[arg(long)]
    env_per_seed: bool,
    /// Number of seeds, run as 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Explicit comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Accuracy target ε (plhr, plhr-d).
    #[arg(long)]
    eps: Option<f64>,
    /// Failure probability δ (plhr, plhr-d).
    #[arg(long)]
    delta: Option<f64>,
    /// Samples per layer (psdp).
    #[arg(long)]
    n: Option<usize>,
    /// Oracle band (psdp-worstcase); defaults to the environment's --eps-stat.
    #[arg(long = "band")]
    band: Option<f64>,
    /// μ-reset states per layer (plhr).
    #[arg(long)]
    n_reset: Option<usize>,
    /// Transition samples per decode (plhr).
    #[arg(long)]
    n_dec: Option<usize>,
    /// Rollouts per Monte Carlo estimate (plhr).
    #[arg(long)]
    n_mc: Option<usize>,
    /// Rollouts per reward estimate (plhr).
    #[arg(long)]
    n_reward: Option<usize>,
    /// Pushforward constraint budget β (plhr).
    #[arg(long)]
    beta: Option<f64>,
    /// Certification tolerance (plhr).
    #[arg(long)]
    eps_tol: Option<f64>,
    /// Decoding tolerance (plhr).
    #[arg(long)]
    eps_dec: Option<f64>,
    /// Tolerance scale (plhr-d).
    #[arg(long)]
    tol_scale: Option<f64>,
    /// Suboptimality at or below which a seed counts as a success.
    #[arg(long)]
    success_threshold: Option<f64>,
    /// Record structural decode checks against the hidden decoder (plhr).
    #[arg(long)]
    verify_lemmas: bool,
    /// Exact Monte Carlo means; episodes are still metered (plhr).
    #[arg(long)]
    oracle_mc: bool,
}

fn suite_names() -> clap::builder::PossibleValuesParser {
    let mut names: Vec<&'static str> = Suite::ALL.iter().map(|s| s.name()).collect();
    names.push("all");
    clap::builder::PossibleValuesParser::new(names)
}

impl RunArgs {
    fn to_config(&self) -> anyhow::Result<RunConfig> {
        let algorithm = self.algorithm.expect("required without --config");
        let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| config_error(format!("--{flag} is required")));
        let needf = |v: Option<f64>, flag: &str| v.ok_or_else(|| config_error(format!("--{flag} is required")));
        let env = self.env.spec()?;
        let algorithm = match algorithm {
            Algorithm::Psdp => AlgorithmConfig::Psdp { n: self.n.unwrap_or(500) },
            Algorithm::PsdpWorstcase => AlgorithmConfig::PsdpWorstcase {
                eps_stat: self.band.or(self.env.eps_stat).ok_or_else(|| config_error("--band is required"))?,
            },
            Algorithm::PlhrD => {
                let mut p = DetParams::new(needf(self.eps, "eps")?);
                if let Some(d) = self.delta {
                    p.delta = d;
                }
                if let Some(t) = self.tol_scale {
                    p.tol_scale = t;
                }
                AlgorithmConfig::PlhrD(p)
            }
            Algorithm::Plhr => {
                let mut p = PlhrParams::new(
                    needf(self.eps, "eps")?,
                    need(self.n_reset, "n-reset")?,
                    need(self.n_dec, "n-dec")?,
                    need(self.n_mc, "n-mc")?,
                );
                if let Some(d) = self.delta {
                    p.delta = d;
                }
                p.n_reward = self.n_reward;
                p.beta = self.beta;
                p.eps_tol = self.eps_tol;
                p.eps_dec = self.eps_dec;
                AlgorithmConfig::Plhr(p)
            }
        };
        let seeds = match (&self.seed_list, self.seeds) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => (0..n).collect(),
            (None, None) => vec![0],
        };
        Ok(RunConfig {
            env,
            env_file: self.env.env_file.clone(),
            env_per_seed: self.env_per_seed,
            algorithm,
            seeds,
            success_threshold: self.success_threshold,
            output_dir: None,
            verify: VerifyConfig { lemmas: self.verify_lemmas, oracle_mc: self.oracle_mc },
        })
    }
}

fn cmd_env_make(out: &std::path::Path, env: &EnvArgs, output: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let bundle = env.build()?;
    let path = output.unwrap_or_else(|| out.join(format!("env-{}.json", bundle.name)));
    output::write_json(&path, &bundle)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_coeffs(out: &std::path::Path, env: &EnvArgs) -> anyhow::Result<ExitCode> {
    let bundle = env.build()?;
    let rep = coverage_report(&bundle.mdp, &bundle.mu, &bundle.class)?;
    let doc = json!({
        "env": bundle.name,
        "c_cov": rep.c_cov,
        "c_conc": rep.c_conc,
        "c_push": rep.c_push,
        "c_push_cov": rep.c_push_cov,
        "c_cov_per_layer": rep.c_cov_per_layer,
        "admissible": bundle.admissible,
        "declared": bundle.meta,
    });
    output::write_json(&out.join(format!("coeffs-{}.json", bundle.name)), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(out: &std::path::Path, args: &RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => args.to_config()?,
    };
    cfg.validate()?;
    let (record, internal) = runner::execute(&cfg)?;
    let base = cfg.output_dir.clone().unwrap_or_else(|| out.to_path_buf());
    let dir = base.join(format!("run-{}-{}", record.algorithm, &record.config_hash[..12]));
    output::write_run(&dir, &record)?;
    print!("{}", output::summary_csv(&record)?);
    eprintln!("artifacts in {}", dir.display());
    if internal {
        eprintln!("error: at least one seed hit an internal inconsistency (see run.json)");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_repro(out: &std::path::Path, suite: &str) -> anyhow::Result<ExitCode> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::from_name(suite).ok_or_else(|| config_error(format!("unknown suite {suite}")))?]
    };
    let dir = out.join("repro");
    let mut reports = Vec::new();
    for s in suites {
        let report = s.run().with_context(|| format!("suite {}", s.name()))?;
        output::write_json(&dir.join(format!("{}.json", s.name())), &report)?;
        println!(
            "criterion {:>2} [{}] {}: {}",
            report.criterion,
            report.suite,
            if report.pass { "PASS" } else { "FAIL" },
            report.summary
        );
        reports.push(report);
    }
    let name = if suite == "all" { "summary.csv".to_string() } else { format!("{suite}.csv") };
    output::write_repro_csv(&dir.join(name), &reports)?;
    Ok(if reports.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Env { action: EnvCommand::Make { env, output } } => cmd_env_make(&cli.out, env, output.clone()),
        Command::Coeffs(env) => cmd_coeffs(&cli.out, env),
        Command::Run(args) => cmd_run(&cli.out, args),
        Command::Repro { suite } => cmd_repro(&cli.out, suite),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
