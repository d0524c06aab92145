//! Artifact writers. Every file is deterministic for a given config and
//! seed; wall time and other process-local data live only in the manifest's
//! `timing` block, which replay comparisons ignore.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use relfair_core::{lorenz_points, RoundRecord, SaddleSolution};

use crate::config::ExperimentConfig;
use crate::runner::{Outcome, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const LORENZ_FILE: &str = "lorenz.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PHI_SWEEP_FILE: &str = "phi_sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const EXACT_SUMMARY_FILE: &str = "exact.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// metrics.json: the fairness report, accuracy columns, and enough context
/// to interpret them.
pub fn metrics_json(config: &ExperimentConfig, seed: u64, outcome: &Outcome) -> serde_json::Value {
    json!({
        "version": 1,
        "name": config.name,
        "variant": config.algorithm.variant,
        "phi": outcome.phi_used,
        "phi_source": outcome.phi_source,
        "alpha_a": config.ambiguity.alpha_a,
        "alpha_b": config.ambiguity.alpha_b,
        "seed": seed,
        "rounds": config.algorithm.rounds,
        "schedule": outcome.schedule_label,
        "partition_hash": outcome.partition_hash,
        "fairness": outcome.evaluation.fairness,
        "accuracy": outcome.evaluation.accuracy,
        "val_losses": outcome.evaluation.val_losses,
        "warnings": outcome.result.warnings,
    })
}

pub fn write_run_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    outcome: &Outcome,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let metrics_path = dir.join(METRICS_FILE);
    write_json(&metrics_path, &metrics_json(config, seed, outcome))?;
    files.push(metrics_path);

    let lorenz_path = dir.join(LORENZ_FILE);
    write_lorenz(&lorenz_path, &outcome.evaluation.val_losses)?;
    files.push(lorenz_path);

    let trajectory_path = dir.join(TRAJECTORY_FILE);
    write_trajectory(&trajectory_path, &outcome.result.rounds)?;
    files.push(trajectory_path);

    let manifest_path = dir.join(MANIFEST_FILE);
    write_manifest(&manifest_path, config, seed, outcome, &files)?;
    files.push(manifest_path);
    Ok(files)
}

/// lorenz.csv: `x, ell, ell_transformed` along the sorted-loss polyline.
pub fn write_lorenz(path: &Path, losses: &[f64]) -> Result<()> {
    let points = lorenz_points(losses)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "ell", "ell_transformed"])?;
    for (x, ell, ell_t) in points {
        w.write_record([format(x), format(ell), format(ell_t)])?;
    }
    w.flush()?;
    Ok(())
}

/// trajectory.csv: per-round rates, losses, dual weights, and headline
/// metrics.
pub fn write_trajectory(path: &Path, rounds: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = rounds.first().map_or(0, |r| r.losses.len());
    let mut header = vec!["round".to_string(), "tau".into(), "sigma".into()];
    header.extend((0..n).map(|i| format!("loss_{i}")));
    header.extend((0..n).map(|i| format!("lambda_{i}")));
    header.push("dist_sq".into());
    header.push("r_ab".into());
    header.push("gini".into());
    w.write_record(&header)?;
    for rec in rounds {
        let mut row = vec![rec.round.to_string(), format(rec.tau), format(rec.sigma)];
        row.extend(rec.losses.iter().map(|&v| format(v)));
        row.extend(rec.lambda.iter().map(|&v| format(v)));
        row.push(rec.dist_sq.map(format).unwrap_or_default());
        row.push(rec.r_ab.map(format).unwrap_or_default());
        row.push(rec.gini.map(format).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(
    path: &Path,
    config: &ExperimentConfig,
    seed: u64,
    outcome: &Outcome,
    files: &[PathBuf],
) -> Result<()> {
    let manifest = json!({
        "version": 1,
        "tool": {"name": "relfair", "version": env!("CARGO_PKG_VERSION")},
        "config": config,
        "seed": seed,
        "partition_hash": outcome.partition_hash,
        "phi": outcome.phi_used,
        "phi_source": outcome.phi_source,
        "files": files.iter().filter_map(|f| f.file_name()).map(|f| f.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "timing": {"wall_time_secs": outcome.result.wall_time_secs},
    });
    write_json(path, &manifest)
}

/// phi_sweep.csv: `phi, theta_0.., value, r_ab` per sweep row.
pub fn write_phi_sweep(path: &Path, rows: &[(f64, SaddleSolution, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = rows.first().map_or(0, |r| r.1.theta_star.len());
    let mut header = vec!["phi".to_string()];
    header.extend((0..d).map(|i| format!("theta_{i}")));
    header.push("value".into());
    header.push("r_ab".into());
    w.write_record(&header)?;
    for (phi, sol, r) in rows {
        let mut row = vec![format(*phi)];
        row.extend(sol.theta_star.iter().map(|&v| format(v)));
        row.push(format(sol.value));
        row.push(format(*r));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One comparison row: a config run on one seed.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub variant: String,
    pub phi: f64,
    pub seed: u64,
    pub partition_hash: String,
    pub acc_all: Option<f64>,
    pub acc_worst20: Option<f64>,
    pub acc_best20: Option<f64>,
    pub r_ab: f64,
    pub gini: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub version: u32,
    pub rows: Vec<ComparisonRow>,
    /// Per config: median metrics over seeds.
    pub medians: Vec<serde_json::Value>,
    /// Per config: seeds on which it attained the smallest unfairness and
    /// the highest all-client accuracy among the compared configs.
    pub win_counts: Vec<serde_json::Value>,
}

pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join(COMPARISON_JSON);
    write_json(&json_path, report)?;
    let csv_path = dir.join(COMPARISON_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "name",
        "variant",
        "phi",
        "seed",
        "partition_hash",
        "acc_all",
        "acc_worst20",
        "acc_best20",
        "r_ab",
        "gini",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.name.clone(),
            row.variant.clone(),
            format(row.phi),
            row.seed.to_string(),
            row.partition_hash.clone(),
            row.acc_all.map(format).unwrap_or_default(),
            row.acc_worst20.map(format).unwrap_or_default(),
            row.acc_best20.map(format).unwrap_or_default(),
            format(row.r_ab),
            format(row.gini),
        ])?;
    }
    w.flush()?;
    Ok(vec![json_path, csv_path])
}

/// Shortest round-trip decimal representation; stable across runs.
fn format(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
