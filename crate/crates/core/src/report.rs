//! CSV/TSV result files with fixed column order and LF line endings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bench::BenchReport;
use crate::error::{Error, Result};
use crate::harness::stats::{Lilliefors, StatsSummary, TTest};
use crate::harness::train::RunRecord;

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    /// Mean accuracy minus the baseline's mean accuracy.
    pub delta_acc: Option<f64>,
    pub summary: StatsSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub compression_factor: f64,
    pub method: String,
    pub mean_acc: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
    pub curves: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct RunRow<'a> {
    config_id: &'a str,
    seed: u64,
    subsample_fraction: f64,
    final_test_accuracy: f64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    delta_acc: Option<f64>,
    max: f64,
    min: f64,
    mean: f64,
    std: f64,
    t_stat: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct McRow {
    mean: f64,
    std: f64,
    t: Option<f64>,
    p: Option<f64>,
}

#[derive(Serialize)]
struct NormalityRow<'a> {
    method: &'a str,
    ksstat: f64,
    #[serde(rename = "p-value")]
    p_value: f64,
    variance: f64,
}

#[derive(Serialize)]
struct BenchRow {
    compression_factor: f64,
    seconds_per_batch: f64,
    speedup: f64,
}

fn write_rows<R: Serialize>(
    path: &Path,
    delimiter: u8,
    headers: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv encoding: {e}"));
    w.write_record(headers).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv encoding: {e}")))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_runs(path: &Path, runs: &[RunRecord]) -> Result<()> {
    write_rows(
        path,
        b',',
        &[
            "config_id",
            "seed",
            "subsample_fraction",
            "final_test_accuracy",
            "wall_time_s",
        ],
        runs.iter().map(|r| RunRow {
            config_id: &r.config_id,
            seed: r.seed,
            subsample_fraction: r.subsample_fraction,
            final_test_accuracy: r.final_test_accuracy,
            wall_time_s: r.wall_time_s,
        }),
    )
}

pub fn write_summary(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    write_rows(
        path,
        b',',
        &[
            "method",
            "delta_acc",
            "max",
            "min",
            "mean",
            "std",
            "t_stat",
            "p_value",
        ],
        summaries.iter().map(|m| SummaryRow {
            method: &m.method,
            delta_acc: m.delta_acc,
            max: m.summary.max,
            min: m.summary.min,
            mean: m.summary.mean,
            std: m.summary.std,
            t_stat: m.summary.t_stat,
            p_value: m.summary.p_value,
        }),
    )
}

pub fn write_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    write_rows(
        path,
        b'\t',
        &["compression_factor", "method", "mean_acc", "speedup"],
        curves,
    )
}

/// One row per Monte Carlo configuration: mean, std and the paired test
/// against the baseline configuration.
pub fn write_mc_summary(path: &Path, rows: &[(StatsSummary, Option<TTest>)]) -> Result<()> {
    write_rows(
        path,
        b',',
        &["mean", "std", "t", "p"],
        rows.iter().map(|(s, t)| McRow {
            mean: s.mean,
            std: s.std,
            t: t.map(|t| t.t),
            p: t.map(|t| t.p),
        }),
    )
}

pub fn write_normality(path: &Path, rows: &[(String, Lilliefors)]) -> Result<()> {
    write_rows(
        path,
        b',',
        &["method", "ksstat", "p-value", "variance"],
        rows.iter().map(|(m, l)| NormalityRow {
            method: m,
            ksstat: l.ksstat,
            p_value: l.p_value,
            variance: l.variance,
        }),
    )
}

pub fn write_bench(path: &Path, reports: &[BenchReport]) -> Result<()> {
    write_rows(
        path,
        b',',
        &["compression_factor", "seconds_per_batch", "speedup"],
        reports.iter().map(|r| BenchRow {
            compression_factor: r.compression_factor,
            seconds_per_batch: r.mean_batch_latency_s,
            speedup: r.speedup_vs_reference,
        }),
    )
}

/// Writes `runs.csv`, `summary.csv` and `curves.tsv` into `out_dir`.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let paths: Vec<PathBuf> = [RUNS_FILE, SUMMARY_FILE, CURVES_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_runs(&paths[0], &report.runs)?;
    write_summary(&paths[1], &report.summaries)?;
    write_curves(&paths[2], &report.curves)?;
    Ok(paths)
}
