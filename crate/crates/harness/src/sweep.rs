//! Parameter sweeps over the concentration `alpha` and the resampling budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rent_core::risk::{Budget, DwsConfig, RentConfig, Strategy};

use crate::config::ExperimentConfig;
use crate::experiment::{mean_std, run_experiment};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    /// `alpha` for alpha sweeps (infinite for the reweighting endpoint, zero
    /// for resampling); budget ratio for budget sweeps.
    pub value: f64,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub completed: usize,
    pub failed: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Spearman correlation between `-ln alpha` and accuracy over the DWS rows.
    pub spearman: Option<f64>,
}

impl SweepTable {
    pub fn all_completed(&self) -> bool {
        self.rows.iter().all(|r| r.failed == 0)
    }

    pub fn write(&self, csv_path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(csv_path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| HarnessError::io(csv_path, e))?;
        Ok(())
    }
}

fn row(label: String, value: f64, cfg: &ExperimentConfig) -> Result<SweepRow, HarnessError> {
    let report = run_experiment(cfg)?;
    let (mean, std) = mean_std(&report.final_test_accuracies());
    Ok(SweepRow {
        label,
        value,
        mean_test_acc: mean,
        std_test_acc: std,
        completed: report.results.len(),
        failed: report.failures.len(),
        config_hash: cfg.hash(),
    })
}

/// One DWS row per `alpha`, followed by the reweighting and resampling
/// endpoints. `cfg.risk` must be DWS; its `weight_draws` is kept.
pub fn alpha_sweep(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<SweepTable, HarnessError> {
    let Strategy::Dws(base) = cfg.risk else {
        return Err(HarnessError::Config("alpha sweeps need a dws risk".into()));
    };
    let mut rows = Vec::with_capacity(alphas.len() + 2);
    for &alpha in alphas {
        let mut c = cfg.clone();
        c.risk = Strategy::Dws(DwsConfig { alpha, ..base });
        rows.push(row("dws".into(), alpha, &c)?);
    }
    let mut c = cfg.clone();
    c.risk = Strategy::Reweight;
    rows.push(row("rw".into(), f64::INFINITY, &c)?);
    c.risk = Strategy::Rent(RentConfig::default());
    rows.push(row("rent".into(), 0.0, &c)?);

    let (x, y): (Vec<f64>, Vec<f64>) = rows[..alphas.len()]
        .iter()
        .map(|r| (-r.value.ln(), r.mean_test_acc))
        .unzip();
    Ok(SweepTable {
        rows,
        spearman: spearman(&x, &y),
    })
}

/// One RENT row per budget ratio. `cfg.risk` must be RENT; its sampling
/// strategy is kept.
pub fn budget_sweep(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<SweepTable, HarnessError> {
    let Strategy::Rent(base) = cfg.risk else {
        return Err(HarnessError::Config("budget sweeps need a rent risk".into()));
    };
    let rows = ratios
        .iter()
        .map(|&ratio| {
            let mut c = cfg.clone();
            c.risk = Strategy::Rent(RentConfig {
                budget: Budget::Ratio(ratio),
                ..base
            });
            row("rent".into(), ratio, &c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        rows,
        spearman: None,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
