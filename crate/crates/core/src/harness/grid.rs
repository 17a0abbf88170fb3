//! Cross-product hyperparameter search.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::stats::{summarize, StatsSummary};
use crate::harness::train::RunRecord;
use crate::losses::HyperParams;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub temperatures: Vec<f64>,
    pub alphas: Vec<f64>,
    pub overlay_ps: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl GridSpace {
    /// α × T × p × γ over the full reference grid.
    pub fn reference() -> Self {
        Self {
            temperatures: vec![1.5, 2.0, 2.5, 3.0, 4.0],
            alphas: vec![0.0005, 0.005, 0.01, 0.025, 0.05, 0.075, 0.09, 0.1, 0.25],
            overlay_ps: vec![0.5, 0.25, 0.2, 0.15, 0.1, 0.09],
            gammas: vec![0.9, 0.8, 0.75, 0.7, 0.6, 0.5, 0.4, 0.3, 0.25, 0.2, 0.1],
        }
    }

    /// Only the distillation weight and temperature vary.
    pub fn kd_only(alphas: Vec<f64>, temperatures: Vec<f64>, base: &HyperParams) -> Self {
        Self {
            temperatures,
            alphas,
            overlay_ps: vec![base.overlay_p],
            gammas: vec![base.gamma],
        }
    }

    pub fn len(&self) -> usize {
        self.temperatures.len() * self.alphas.len() * self.overlay_ps.len() * self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in a fixed order: α outermost, then T, p, γ.
    pub fn cells(&self, base: &HyperParams) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.len());
        for &alpha in &self.alphas {
            for &temperature in &self.temperatures {
                for &overlay_p in &self.overlay_ps {
                    for &gamma in &self.gammas {
                        out.push(HyperParams {
                            alpha,
                            temperature,
                            overlay_p,
                            gamma,
                            ..*base
                        });
                    }
                }
            }
        }
        out
    }
}

pub fn config_id(h: &HyperParams) -> String {
    format!(
        "a{}_T{}_p{}_g{}",
        h.alpha, h.temperature, h.overlay_p, h.gamma
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config_id: String,
    pub hyper: HyperParams,
    pub records: Vec<RunRecord>,
    pub summary: StatsSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
}

impl GridResult {
    /// Highest mean accuracy; ties go to the lower α, then the lower T.
    pub fn best(&self) -> &GridCell {
        self.cells
            .iter()
            .reduce(|best, c| {
                let better = c.summary.mean > best.summary.mean
                    || (c.summary.mean == best.summary.mean
                        && (c.hyper.alpha, c.hyper.temperature)
                            < (best.hyper.alpha, best.hyper.temperature));
                if better {
                    c
                } else {
                    best
                }
            })
            .expect("grid results are never empty")
    }

    /// Markdown matrix of mean accuracy (percent) with α rows and T columns;
    /// the best entry is bold. Cells that differ in p or γ keep their best
    /// mean.
    pub fn alpha_temperature_matrix(&self) -> String {
        let mut alphas: Vec<f64> = self.cells.iter().map(|c| c.hyper.alpha).collect();
        let mut temps: Vec<f64> = self.cells.iter().map(|c| c.hyper.temperature).collect();
        for v in [&mut alphas, &mut temps] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let best = self.best();
        let mut s = String::from("| α \\ T |");
        for t in &temps {
            write!(s, " {t} |").ok();
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(temps.len()));
        s.push('\n');
        for &a in &alphas {
            write!(s, "| {a} |").ok();
            for &t in &temps {
                let cell = self
                    .cells
                    .iter()
                    .filter(|c| c.hyper.alpha == a && c.hyper.temperature == t)
                    .max_by(|x, y| x.summary.mean.total_cmp(&y.summary.mean));
                match cell {
                    Some(c) if std::ptr::eq(c, best) => {
                        write!(s, " **{:.2}** |", 100.0 * c.summary.mean)
                    }
                    Some(c) => write!(s, " {:.2} |", 100.0 * c.summary.mean),
                    None => write!(s, " - |"),
                }
                .ok();
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every cell `runs_per_cell` times through `runner(hyper, seed)`.
/// Seeds depend only on `(master_seed, run)`, so cells are compared on the
/// same initializations and data orders.
pub fn grid_search<F>(
    space: &GridSpace,
    runs_per_cell: usize,
    base: &HyperParams,
    master_seed: u64,
    runner: F,
) -> Result<GridResult>
where
    F: Fn(&HyperParams, u64) -> Result<RunRecord> + Sync,
{
    if space.is_empty() {
        return Err(Error::Config("grid search space is empty".into()));
    }
    if runs_per_cell == 0 {
        return Err(Error::Config("runs_per_cell must be at least 1".into()));
    }
    let cells = space.cells(base);
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..runs_per_cell).map(move |r| (c, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let mut rec = runner(&cells[c], derive_seed(master_seed, &[r as u64]))?;
            rec.config_id = config_id(&cells[c]);
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cells.len());
    for (c, hyper) in cells.into_iter().enumerate() {
        let recs = records[c * runs_per_cell..(c + 1) * runs_per_cell].to_vec();
        let accs: Vec<f64> = recs.iter().map(|r| r.final_test_accuracy).collect();
        out.push(GridCell {
            config_id: config_id(&hyper),
            hyper,
            summary: summarize(&accs, None)?,
            records: recs,
        });
    }
    Ok(GridResult { cells: out })
}
