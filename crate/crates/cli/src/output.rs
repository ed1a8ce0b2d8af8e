//! File formats written by the subcommands.
//!
//! `draws.bin` layout, all little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `PXTDRAW1`                          |
//! | 8     | `n_draws` as u64                          |
//! | 8     | `dim` as u64                              |
//! | rest  | `n_draws × dim` f64, row-major            |
//!
//! Rows are the draws of all chains in chain order. Each row is
//! `[β_1..β_n, log σ², log α]` in original units.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use proxtrend::pipeline::{BenchRow, FitOutput};
use proxtrend::sampler::ChainResult;
use proxtrend::stats::FitSummary;
use proxtrend::Result;
use serde_json::{json, Value};

pub const DRAWS_MAGIC: &[u8; 8] = b"PXTDRAW1";

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes equal-length columns under `header`.
pub fn write_columns(path: &Path, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let n = cols.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(cols.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, grid: &[f64], s: &FitSummary) -> Result<()> {
    write_columns(
        path,
        &["x", "median", "q025", "q975"],
        &[grid, &s.median, &s.q025, &s.q975],
    )
}

pub fn write_bench_row(path: &Path, r: &BenchRow) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trend",
        "model",
        "k",
        "sigma",
        "replicates",
        "mad_mean",
        "mad_sd",
        "mciw",
        "cp",
        "tcpu_mean",
    ])?;
    w.write_record([
        r.trend.name().to_string(),
        format!("{:?}", r.model).to_ascii_lowercase(),
        r.k.to_string(),
        r.sigma.to_string(),
        r.replicates.to_string(),
        r.mad_mean.to_string(),
        r.mad_sd.to_string(),
        r.mciw.to_string(),
        r.cp.to_string(),
        r.tcpu_mean.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_draws(path: &Path, chains: &[ChainResult]) -> Result<()> {
    let rows: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| {
            c.draws.iter().enumerate().map(move |(j, raw)| {
                let d = raw.len();
                let mut row = c.draws_beta.get(j).cloned().unwrap_or_else(|| raw[..d - 2].to_vec());
                row.extend_from_slice(&raw[d - 2..]);
                row
            })
        })
        .collect();
    let dim = rows.first().map_or(0, |r| r.len());
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(DRAWS_MAGIC)?;
    f.write_all(&(rows.len() as u64).to_le_bytes())?;
    f.write_all(&(dim as u64).to_le_bytes())?;
    for r in &rows {
        for v in r {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn diagnostics_json(out: &FitOutput) -> Value {
    let d = out.diagnostics.as_ref();
    let n = out.grid.len();
    json!({
        "rhat": d.map(|d| &d.rhat),
        "ess_bulk": d.map(|d| &d.ess_bulk),
        "ess_tail": d.map(|d| &d.ess_tail),
        "max_rhat": d.map(|d| d.max_rhat),
        "min_ess_bulk": d.map(|d| d.min_ess_bulk),
        "fraction_rhat_below_threshold": d.map(|d| d.fraction_converged()),
        "flagged_coordinates": d.map(|d| &d.flagged),
        "coordinates": format!("beta[0..{n}], log_sigma2, log_alpha"),
        "divergences": out.chains.iter().map(|c| c.divergences).sum::<usize>(),
        "warmup_divergences": out.chains.iter().map(|c| c.warmup_divergences).sum::<usize>(),
        "step_size": out.chains.iter().map(|c| c.step_size).collect::<Vec<_>>(),
        "mean_accept_stat": out.chains.iter().map(|c| mean(&c.accept_stats)).collect::<Vec<_>>(),
        "mean_tree_depth": out.chains.iter()
            .map(|c| c.tree_depths.iter().sum::<usize>() as f64 / c.tree_depths.len().max(1) as f64)
            .collect::<Vec<_>>(),
        "tcpu_seconds": out.summary.tcpu_seconds,
        "lambda": out.spec.lambda,
        "s2": (out.spec.model == proxtrend::posterior::Model::Pbtf).then_some(out.spec.s2),
        "mu": (out.spec.model == proxtrend::posterior::Model::Pbsrtf).then_some(out.spec.mu),
        "reparam": out.spec.reparam,
        "sigma": out.summary.sigma_summary,
        "alpha": out.summary.alpha_summary,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn manifest(subcommand: &str, args: Value, resolved: Value, files: &[&str]) -> Value {
    json!({
        "tool": "proxtrend",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "args": args,
        "resolved": resolved,
        "threads": std::env::var("PROXTREND_THREADS").ok(),
        "outputs": files,
    })
}
