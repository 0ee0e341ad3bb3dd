//! The three CLI operations behind the `fedalign` binary, exposed as a
//! library so integration tests can drive them directly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use fedalign_core::analysis::verify::{run_all_checks, CheckRecord};
use fedalign_core::server::{run_experiment, summarize, write_metrics_csv, Algorithm, RunLog};
use fedalign_core::ExperimentConfig;

/// Written next to the run outputs; echoes the exact config so a run can be
/// reproduced from its manifest alone.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub outputs: Vec<String>,
}

/// summary.json payload: the full config echo plus the run summary fields.
#[derive(Serialize, Deserialize)]
pub struct SummaryFile {
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub summary: fedalign_core::server::RunSummary,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Atomic write: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default()
    ));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
}

/// `fedalign run`: execute one experiment, write metrics.csv, summary.json
/// and manifest.json into `out_dir`.
pub fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<RunLog> {
    let started = now_unix();
    let cfg = load_config(config_path)?;
    fs::create_dir_all(out_dir)?;

    let log = run_experiment(&cfg.model, &cfg.data, &cfg.fl)?;

    let csv_path = out_dir.join("metrics.csv");
    let mut csv = Vec::new();
    write_metrics_csv(&log, &mut csv)?;
    write_atomic(&csv_path, &csv)?;

    let summary_path = out_dir.join("summary.json");
    let summary = SummaryFile {
        config: cfg.clone(),
        summary: summarize(&log),
    };
    write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;

    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        started_at_unix: started,
        finished_at_unix: now_unix(),
        outputs: vec![
            csv_path.display().to_string(),
            summary_path.display().to_string(),
        ],
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(log)
}

/// `fedalign verify`: run the oracle suite, write the JSON report, print one
/// line per check. Returns the records; the caller turns failures into a
/// nonzero exit.
pub fn cmd_verify(out_path: Option<&Path>) -> Result<Vec<CheckRecord>> {
    let records = run_all_checks();
    for r in &records {
        println!(
            "{:<34} max_error={:<12.3e} tolerance={:<9.1e} {}",
            r.check_name,
            r.max_error,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = out_path {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        write_atomic(path, serde_json::to_string_pretty(&records)?.as_bytes())?;
    }
    Ok(records)
}

/// One row of the comparison table: an algorithm's final-round metrics for
/// one client under one seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub algorithm: String,
    pub seed: u64,
    pub client_id: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    pub gsnr: f64,
}

/// Per-algorithm aggregate across seeds: mean of per-seed across-client
/// means, with a Student-t 95% confidence half-width when >= 2 seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareAggregate {
    pub algorithm: String,
    pub per_seed_mean_test_loss: Vec<f64>,
    pub mean_test_loss: f64,
    /// None with a single seed: the CI is undefined there.
    pub ci95_halfwidth: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub algorithms: Vec<String>,
    /// Per seed, the stream hash every algorithm agreed on.
    pub stream_hashes: Vec<String>,
    pub aggregates: Vec<CompareAggregate>,
}

/// Two-sided 95% Student-t half-width from per-seed means.
pub fn t_ci95_halfwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    Some(t * (var / n as f64).sqrt())
}

/// `fedalign compare`: run every (algorithm, seed) pair on identical data
/// partitions and minibatch streams, verify the streams really were
/// identical via the run hashes, and emit the comparison table plus
/// per-algorithm aggregates.
pub fn cmd_compare(
    config_path: &Path,
    algorithms: &[Algorithm],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<CompareReport> {
    if algorithms.is_empty() || seeds.is_empty() {
        bail!("compare needs at least one algorithm and one seed");
    }
    let base = load_config(config_path)?;
    if base.fl.rounds == 0 {
        bail!("compare needs fl.rounds >= 1");
    }
    fs::create_dir_all(out_dir)?;

    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    let mut stream_hashes: Vec<Option<String>> = vec![None; seeds.len()];
    let mut logs: Vec<Vec<RunLog>> = Vec::new();

    for &alg in algorithms {
        let mut per_alg = Vec::new();
        for (si, &seed) in seeds.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.fl.algorithm = alg;
            cfg.fl.master_seed = seed;
            let log = run_experiment(&cfg.model, &cfg.data, &cfg.fl)?;
            match &stream_hashes[si] {
                None => stream_hashes[si] = Some(log.stream_hash.clone()),
                Some(expected) => {
                    if expected != &log.stream_hash {
                        bail!(
                            "fairness violation: {} under seed {} consumed a different data/batch stream",
                            alg.name(),
                            seed
                        );
                    }
                }
            }
            for c in log.final_client_metrics() {
                rows.push(CompareRow {
                    algorithm: alg.name().to_string(),
                    seed,
                    client_id: c.client_id,
                    train_loss: c.train_loss,
                    test_loss: c.test_loss,
                    test_acc: c.test_acc,
                    gsnr: c.gsnr,
                });
            }
            per_alg.push(log);
        }
        let per_seed_means: Vec<f64> = per_alg.iter().map(|l| l.final_mean_test_loss()).collect();
        aggregates.push(CompareAggregate {
            algorithm: alg.name().to_string(),
            mean_test_loss: per_seed_means.iter().sum::<f64>() / per_seed_means.len() as f64,
            ci95_halfwidth: t_ci95_halfwidth(&per_seed_means),
            per_seed_mean_test_loss: per_seed_means,
        });
        logs.push(per_alg);
    }

    // comparison.csv: one row per (algorithm, seed, client)
    let mut csv = String::from("algorithm,seed,client_id,train_loss,test_loss,test_acc,gsnr\n");
    for r in &rows {
        let acc = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.algorithm, r.seed, r.client_id, r.train_loss, r.test_loss, acc, r.gsnr
        ));
    }
    write_atomic(&out_dir.join("comparison.csv"), csv.as_bytes())?;

    let report = CompareReport {
        seeds: seeds.to_vec(),
        algorithms: algorithms.iter().map(|a| a.name().to_string()).collect(),
        stream_hashes: stream_hashes
            .into_iter()
            .map(|h| h.expect("hash recorded"))
            .collect(),
        aggregates,
    };
    write_atomic(
        &out_dir.join("compare_summary.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}

/// Resolves the worker-thread count: CLI flag, then the FEDALIGN_THREADS
/// environment variable, then rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("FEDALIGN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    })
}

/// Runs `f` inside a rayon pool of the requested width (or the global
/// default when unset).
pub fn with_thread_pool<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .context("building thread pool")?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Parses a comma-separated algorithm list.
pub fn parse_algorithms(text: &str) -> Result<Vec<Algorithm>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| Algorithm::parse(s).map_err(Into::into))
        .collect()
}

/// Parses a comma-separated seed list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .with_context(|| format!("invalid seed '{s}'"))
        })
        .collect()
}

/// Convenience used by tests: the path of the metrics CSV a run writes.
pub fn metrics_csv_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}
