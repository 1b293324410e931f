//! Accuracy and ranking metrics, run reports, and multi-seed sweeps.

mod metrics;
mod report;

pub use metrics::{
    accuracy, accuracy_from_probs, auc, decile_points, entropy_accuracy_curve,
    entropy_accuracy_curve_from_probs, mean_std, non_increasing_fraction, per_class_accuracy,
    predictions, spearman, successive_difference_variance,
};
pub use report::{best_epoch, EpochRecord, RunReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{remove_annotations, CrowdDataset};
use crate::error::{Error, Result};
use crate::trainer::{train_crowding, train_method, Method, TrainConfig, Variant};

/// One trained run within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    /// Fraction of authentic annotations removed before training.
    pub removed: f64,
    pub seed: u64,
    pub best_validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,removed,seed,best_validation_accuracy,test_accuracy\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.method,
                c.removed,
                c.seed,
                opt(c.best_validation_accuracy),
                opt(c.test_accuracy)
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Test accuracies of `method` at removal fraction `removed`, in seed order.
    pub fn test_accuracies(&self, method: &str, removed: f64) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.removed == removed)
            .filter_map(|c| c.test_accuracy)
            .collect()
    }

    /// Mean and sample standard deviation of test accuracy per
    /// (method, removal) pair, in first-seen order.
    pub fn summary(&self) -> Vec<(String, f64, f64, f64)> {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for c in &self.cells {
            if !keys.iter().any(|k| k.0 == c.method && k.1 == c.removed) {
                keys.push((c.method.clone(), c.removed));
            }
        }
        keys.into_iter()
            .map(|(m, r)| {
                let (mean, std) = mean_std(&self.test_accuracies(&m, r));
                (m, r, mean, std)
            })
            .collect()
    }
}

fn cell(method: String, removed: f64, seed: u64, report: &RunReport) -> SweepCell {
    SweepCell {
        method,
        removed,
        seed,
        best_validation_accuracy: report.best_validation_accuracy,
        test_accuracy: report.test_accuracy,
    }
}

/// Trains every method on every seed after removing each fraction of the
/// authentic annotations. The removal for a given fraction and seed is the
/// same across methods. Cells run in parallel on the current rayon pool.
pub fn sparsity_sweep(
    ds: &CrowdDataset,
    fractions: &[f64],
    methods: &[Method],
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<SweepTable> {
    let jobs: Vec<(f64, u64, Method)> = fractions
        .iter()
        .flat_map(|&f| seeds.iter().flat_map(move |&s| methods.iter().map(move |&m| (f, s, m))))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(f, seed, method)| {
            let thinned = if f > 0.0 { remove_annotations(ds, f, seed)? } else { ds.clone() };
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let out = train_method(method, &thinned, &run_cfg)?;
            Ok(cell(out.report.method.clone(), f, seed, &out.report))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { cells })
}

/// Trains each variant on each seed with the rest of `cfg` unchanged.
pub fn run_ablation(ds: &CrowdDataset, variants: &[Variant], cfg: &TrainConfig, seeds: &[u64]) -> Result<SweepTable> {
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let run_cfg = TrainConfig {
                seed,
                ..cfg.for_variant(variant)
            };
            let out = train_crowding(ds, &run_cfg)?;
            Ok(cell(variant.as_str().to_string(), 0.0, seed, &out.report))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { cells })
}
