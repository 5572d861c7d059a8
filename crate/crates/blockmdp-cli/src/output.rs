//! Artifact writers. JSON is pretty-printed with a trailing newline and contains no
//! timestamps, so identical inputs give byte-identical files.

use std::path::Path;

use anyhow::Context;
use blockmdp::suites::SuiteReport;
use serde::Serialize;

use crate::runner::RunRecord;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> anyhow::Result<()>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w)?;
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// One-row aggregate table of a run.
pub fn summary_csv(record: &RunRecord) -> anyhow::Result<String> {
    csv_string(|w| {
        w.write_record([
            "algorithm",
            "config_hash",
            "seeds",
            "errors",
            "success_rate",
            "failure_frequency",
            "mean_suboptimality",
            "p95_suboptimality",
        ])?;
        let a = &record.aggregate;
        w.write_record([
            record.algorithm.clone(),
            record.config_hash.clone(),
            a.seeds.to_string(),
            a.errors.to_string(),
            a.success_rate.to_string(),
            a.failure_frequency.to_string(),
            opt(a.mean_suboptimality),
            opt(a.p95_suboptimality),
        ])?;
        Ok(())
    })
}

/// Per-seed table of a run.
pub fn seeds_csv(record: &RunRecord) -> anyhow::Result<String> {
    csv_string(|w| {
        w.write_record(["seed", "success", "suboptimality", "value", "best_value", "episodes", "error"])?;
        for r in &record.seeds {
            w.write_record([
                r.seed.to_string(),
                r.success.to_string(),
                opt(r.suboptimality),
                opt(r.value),
                opt(r.best_value),
                r.episodes.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

/// Writes `run.json`, `seeds.csv` and `summary.csv` into `dir`.
pub fn write_run(dir: &Path, record: &RunRecord) -> anyhow::Result<()> {
    write_json(&dir.join("run.json"), record)?;
    std::fs::write(dir.join("seeds.csv"), seeds_csv(record)?)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(record)?)?;
    Ok(())
}

pub fn write_repro_csv(path: &Path, reports: &[SuiteReport]) -> anyhow::Result<()> {
    let text = csv_string(|w| {
        w.write_record(["criterion", "suite", "pass", "summary"])?;
        for r in reports {
            w.write_record([r.criterion.to_string(), r.suite.clone(), r.pass.to_string(), r.summary.clone()])?;
        }
        Ok(())
    })?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
