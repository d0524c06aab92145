//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde_json::json;

use relfair_core::oracle::GridDim;
use relfair_core::{
    phi_sweep, r_ab_grid_sensitivity, AmbiguityPair, CappedSimplex, ClientObjective,
    FairnessReport, ThetaGrid,
};

use crate::artifact::{self, ComparisonReport, ComparisonRow};
use crate::config::ExperimentConfig;
use crate::runner::{self, Result};

/// `run`: one experiment end to end; writes metrics.json, lorenz.csv,
/// trajectory.csv, manifest.json under the output directory.
pub fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<PathBuf> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = seed_override.unwrap_or(config.seed);
    let out = output_dir(&config, out_override)?;
    let outcome = runner::execute(&config, seed)?;
    artifact::write_run_artifacts(&out, &config, seed, &outcome)?;
    let acc = outcome
        .evaluation
        .accuracy
        .map(|a| format!(" acc_all={:.4}", a.all))
        .unwrap_or_default();
    let r_ab = outcome
        .evaluation
        .fairness
        .r_ab
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "undefined".into());
    println!(
        "run: variant={:?} phi={:.4} seed={seed} r_ab={r_ab} gini={:.4}{acc} -> {}",
        config.algorithm.variant,
        outcome.phi_used,
        outcome.evaluation.fairness.gini,
        out.display()
    );
    Ok(out)
}

/// `compare`: several configs on a shared partition, optionally across a
/// seed batch; emits a comparison table with medians and win counts.
pub fn cmd_compare(
    config_paths: &[PathBuf],
    seeds: Option<Vec<u64>>,
    out_override: Option<PathBuf>,
) -> Result<PathBuf> {
    if config_paths.is_empty() {
        return Err("compare needs at least one --config".into());
    }
    let configs: Vec<ExperimentConfig> = config_paths
        .iter()
        .map(|p| ExperimentConfig::load(p).map_err(Into::into))
        .collect::<Result<_>>()?;
    let out = output_dir(&configs[0], out_override)?;
    let seeds = seeds.unwrap_or_else(|| vec![configs[0].seed]);

    let mut rows: Vec<ComparisonRow> = Vec::new();
    for &seed in &seeds {
        let mut hash_for_seed: Option<String> = None;
        for (idx, config) in configs.iter().enumerate() {
            let outcome = runner::execute(config, seed)?;
            match &hash_for_seed {
                None => hash_for_seed = Some(outcome.partition_hash.clone()),
                Some(h) if *h != outcome.partition_hash => {
                    return Err(format!(
                        "config {} does not share the partition of config 0 at seed {seed} \
                         (hash {} vs {h}); compared runs must see identical shards",
                        config_paths[idx].display(),
                        outcome.partition_hash
                    )
                    .into());
                }
                _ => {}
            }
            rows.push(ComparisonRow {
                name: config
                    .name
                    .clone()
                    .unwrap_or_else(|| format!("config{idx}")),
                variant: format!("{:?}", config.algorithm.variant),
                phi: outcome.phi_used,
                seed,
                partition_hash: outcome.partition_hash.clone(),
                acc_all: outcome.evaluation.accuracy.map(|a| a.all),
                acc_worst20: outcome.evaluation.accuracy.map(|a| a.worst20),
                acc_best20: outcome.evaluation.accuracy.map(|a| a.best20),
                r_ab: outcome.evaluation.fairness.r_ab_required()?,
                gini: outcome.evaluation.fairness.gini,
            });
        }
    }

    let names: Vec<String> = configs
        .iter()
        .enumerate()
        .map(|(idx, c)| c.name.clone().unwrap_or_else(|| format!("config{idx}")))
        .collect();
    let mut medians = Vec::new();
    let mut win_counts = Vec::new();
    for name in &names {
        let mine: Vec<&ComparisonRow> = rows.iter().filter(|r| &r.name == name).collect();
        let med = |f: &dyn Fn(&ComparisonRow) -> Option<f64>| -> Option<f64> {
            let mut v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| artifact::median(&mut v))
        };
        medians.push(json!({
            "name": name,
            "r_ab": med(&|r| Some(r.r_ab)),
            "gini": med(&|r| Some(r.gini)),
            "acc_all": med(&|r| r.acc_all),
            "acc_worst20": med(&|r| r.acc_worst20),
            "acc_best20": med(&|r| r.acc_best20),
        }));
        let mut fairness_wins = 0u32;
        let mut accuracy_wins = 0u32;
        for &seed in &seeds {
            let seed_rows: Vec<&ComparisonRow> = rows.iter().filter(|r| r.seed == seed).collect();
            let best_r = seed_rows.iter().map(|r| r.r_ab).fold(f64::INFINITY, f64::min);
            let best_acc = seed_rows
                .iter()
                .filter_map(|r| r.acc_all)
                .fold(f64::NEG_INFINITY, f64::max);
            if let Some(me) = seed_rows.iter().find(|r| &r.name == name) {
                if me.r_ab <= best_r {
                    fairness_wins += 1;
                }
                if let Some(acc) = me.acc_all {
                    if acc >= best_acc {
                        accuracy_wins += 1;
                    }
                }
            }
        }
        win_counts.push(json!({
            "name": name,
            "lowest_r_ab": fairness_wins,
            "highest_acc_all": accuracy_wins,
            "seeds": seeds.len(),
        }));
    }

    let report = ComparisonReport {
        version: 1,
        rows,
        medians,
        win_counts,
    };
    artifact::write_comparison(&out, &report)?;
    println!("compare: {} configs x {} seeds -> {}", configs.len(), seeds.len(), out.display());
    Ok(out)
}

pub struct ExactSummary {
    pub out_dir: PathBuf,
    pub r_values: Vec<f64>,
    pub eps_grid: f64,
    pub monotone: bool,
    pub strict_decrease: bool,
}

/// `exact`: drive the brute-force sweep of the mixing coefficient on the
/// config's grid and record the monotonicity of the unfairness curve.
pub fn cmd_exact(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ExactSummary> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = seed_override.unwrap_or(config.seed);
    let exact = config
        .exact
        .clone()
        .ok_or("config has no `exact` section (grid and phi_values)")?;
    let out = output_dir(&config, out_override)?;
    std::fs::create_dir_all(&out)?;

    // The sweep solves the minimax on the full client losses (no split).
    let shards = runner::build_shards(&config, seed)?;
    let hash = runner::partition_hash(&shards);
    let objs: Vec<ClientObjective> = shards
        .into_iter()
        .map(|s| ClientObjective::new(config.loss.kind.clone(), s, config.loss.regularizer))
        .collect::<relfair_core::Result<_>>()?;
    let n = objs.len();
    let grid = ThetaGrid::new(
        exact
            .grid
            .iter()
            .map(|g| GridDim {
                lo: g.lo,
                hi: g.hi,
                step: g.step,
            })
            .collect(),
    )?;
    let pair = AmbiguityPair::new(
        CappedSimplex::new(n, config.ambiguity.alpha_a)?,
        CappedSimplex::new(n, config.ambiguity.alpha_b)?,
        0.0,
    )?;
    let rows = phi_sweep(&objs, &grid, &pair, &exact.phi_values)?;
    artifact::write_phi_sweep(&out.join(artifact::PHI_SWEEP_FILE), &rows)?;

    // Per-cell tolerance: the largest ratio change between any sweep argmin
    // and its grid neighbors.
    let mut eps_grid = 0.0f64;
    for (phi, sol, _) in &rows {
        let p = AmbiguityPair::new(pair.a, pair.b, *phi)?;
        eps_grid = eps_grid.max(r_ab_grid_sensitivity(&objs, &grid, &p, &sol.theta_star)?);
    }
    let r_values: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let monotone = r_values.windows(2).all(|w| w[1] <= w[0] + eps_grid);
    let strict_decrease = r_values.len() >= 2
        && *r_values.last().unwrap() < r_values.first().unwrap() - eps_grid;

    let summary = json!({
        "version": 1,
        "partition_hash": hash,
        "phi_values": exact.phi_values,
        "r_ab": r_values,
        "eps_grid": eps_grid,
        "monotone": monotone,
        "strict_decrease": strict_decrease,
        "cells": grid.cell_count()? as u64,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join(artifact::EXACT_SUMMARY_FILE), text)?;

    println!(
        "exact: {} phi values, eps_grid={eps_grid:.3e}, monotone={monotone}, strict={strict_decrease} -> {}",
        r_values.len(),
        out.display()
    );
    Ok(ExactSummary {
        out_dir: out,
        r_values,
        eps_grid,
        monotone,
        strict_decrease,
    })
}

/// `metrics`: fairness report of a loss vector in a one-column CSV.
pub fn cmd_metrics(
    losses_path: &Path,
    alpha_a: f64,
    alpha_b: f64,
    phi: f64,
    out: Option<PathBuf>,
) -> Result<FairnessReport> {
    let losses = read_losses_csv(losses_path)?;
    let n = losses.len();
    let pair = AmbiguityPair::new(
        CappedSimplex::new(n, alpha_a)?,
        CappedSimplex::new(n, alpha_b)?,
        phi,
    )?;
    let report = FairnessReport::compute(&losses, &pair)?;
    let payload = json!({
        "version": 1,
        "n": n,
        "alpha_a": alpha_a,
        "alpha_b": alpha_b,
        "phi": phi,
        "fairness": report,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        let mut text = serde_json::to_string_pretty(&payload)?;
        text.push('\n');
        std::fs::write(dir.join(artifact::METRICS_FILE), text)?;
        artifact::write_lorenz(&dir.join(artifact::LORENZ_FILE), &losses)?;
    }
    Ok(report)
}

/// `validate-config`: parse and semantic checks only.
pub fn cmd_validate(config_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| format!("cannot read {}: {e}", config_path.display()))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| format!("{}: {e}", config_path.display()))?;
    let errors = config.validate();
    if errors.is_empty() {
        println!("ok: {}", config_path.display());
        Ok(())
    } else {
        Err(errors.join("\n").into())
    }
}

fn read_losses_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "loss")
        .ok_or("losses csv needs a `loss` column")?;
    let mut losses = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(col).unwrap_or("");
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| format!("row {}: non-numeric loss {raw:?}", i + 2))?;
        losses.push(v);
    }
    if losses.is_empty() {
        return Err("losses csv is empty".into());
    }
    Ok(losses)
}

fn output_dir(config: &ExperimentConfig, out_override: Option<PathBuf>) -> Result<PathBuf> {
    out_override
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| "no output directory: pass --out or set output_dir in the config".into())
}
