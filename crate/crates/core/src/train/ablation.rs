//! Every condition trained over several seeds, then summarized per condition.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{curve_rows, train_run, write_csv, CurveRow, EpochReport, RunRecord, SummaryRow, TrainConfig};
use crate::arch::VariantKind;
use crate::data::aggregate_runs;
use crate::error::{Error, Result};

/// An architecture with or without coordinate channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Condition {
    pub variant: VariantKind,
    pub ote: bool,
}

impl Condition {
    /// U-Net and TscNet, each with and without coordinates.
    pub const ABLATION: [Condition; 4] = [
        Condition { variant: VariantKind::UNet, ote: false },
        Condition { variant: VariantKind::UNet, ote: true },
        Condition { variant: VariantKind::TscNet, ote: false },
        Condition { variant: VariantKind::TscNet, ote: true },
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.variant, if self.ote { "+ote" } else { "-no-ote" })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub runs: Vec<RunRecord>,
}

impl ConditionResult {
    /// Mean and standard error of the per-run maximum validation MIoU.
    pub fn max_miou(&self) -> Result<(f64, f64)> {
        aggregate_runs(&self.runs.iter().map(|r| r.max_val_miou).collect::<Vec<_>>())
    }

    /// Mean and standard error over runs of each run's mean MIoU in its last `k` epochs.
    pub fn final_window(&self, k: usize) -> Result<(f64, f64)> {
        aggregate_runs(&self.runs.iter().map(|r| r.final_mean(k)).collect::<Vec<_>>())
    }
}

/// One line of `mean_curves.csv`: the across-run mean and standard error
/// of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurveRow {
    pub condition: String,
    pub epoch: usize,
    pub mean_val_miou: f64,
    pub stderr_val_miou: f64,
    pub mean_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub results: Vec<ConditionResult>,
}

impl AblationResult {
    pub fn get(&self, condition: Condition) -> Option<&ConditionResult> {
        self.results.iter().find(|r| r.condition == condition)
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        self.results
            .iter()
            .map(|r| {
                let (mean_max_miou, stderr) = r.max_miou()?;
                Ok(SummaryRow { condition: r.condition.to_string(), mean_max_miou, stderr })
            })
            .collect()
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        self.results
            .iter()
            .flat_map(|r| {
                let name = r.condition.to_string();
                r.runs.iter().enumerate().flat_map(move |(i, run)| curve_rows(&name, i, run))
            })
            .collect()
    }

    pub fn mean_curves(&self) -> Result<Vec<MeanCurveRow>> {
        let mut rows = Vec::new();
        for r in &self.results {
            let epochs = r.runs[0].val_miou.len();
            for e in 0..epochs {
                let miou: Vec<f64> = r.runs.iter().map(|run| run.val_miou[e]).collect();
                let (mean_val_miou, stderr_val_miou) = aggregate_runs(&miou)?;
                let mean_train_loss = r.runs.iter().map(|run| run.train_loss[e]).sum::<f64>() / r.runs.len() as f64;
                rows.push(MeanCurveRow {
                    condition: r.condition.to_string(),
                    epoch: e + 1,
                    mean_val_miou,
                    stderr_val_miou,
                    mean_train_loss,
                });
            }
        }
        Ok(rows)
    }

    /// Writes `curves.csv`, `mean_curves.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("curves.csv"), &self.curve_rows())?;
        write_csv(&dir.join("mean_curves.csv"), &self.mean_curves()?)?;
        write_csv(&dir.join("summary.csv"), &self.summary()?)
    }
}

/// Trains every condition once per entry of `seeds`, all on the same data.
/// Run `i` of every condition uses `seeds[i]`.
pub fn ablation(
    config: &TrainConfig,
    conditions: &[Condition],
    seeds: &[u64],
    observer: &mut dyn FnMut(Condition, usize, &EpochReport),
) -> Result<AblationResult> {
    if seeds.len() < 2 {
        return Err(Error::invalid(format!("an ablation needs at least 2 runs per condition, got {}", seeds.len())));
    }
    config.validate()?;
    let data = config.load_data()?;
    let mut results = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let mut cfg = config.clone();
        cfg.arch.variant = condition.variant;
        cfg.arch.ote = condition.ote;
        let mut runs = Vec::with_capacity(seeds.len());
        for (i, &seed) in seeds.iter().enumerate() {
            let (record, _) = train_run(&cfg, &data, seed, &mut |r| observer(condition, i, r))?;
            runs.push(record);
        }
        results.push(ConditionResult { condition, runs });
    }
    Ok(AblationResult { results })
}
