use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics after one epoch. Epoch 0 is the pretrained starting point and
/// carries accuracies only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// `V(C, G, D)` on the discriminator's training samples.
    pub value_term: Option<f64>,
    /// Information lower bound over all logged samples.
    pub info_term: Option<f64>,
    pub discriminator_auc: Option<f64>,
    pub discriminator_accuracy: Option<f64>,
    pub clamp_hits: usize,
    pub generated: usize,
    pub selected: usize,
    pub selected_mean_entropy: Option<f64>,
    pub generated_mean_entropy: Option<f64>,
    pub low_entropy_instances: usize,
    pub high_entropy_instances: usize,
    pub mu_multiplier: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Resolved configuration in `key = value` form.
    pub config: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl RunReport {
    /// Picks the epoch with the highest validation accuracy (earliest on
    /// ties, last epoch when no validation labels exist).
    pub fn new(method: impl Into<String>, seed: u64, config: String, epochs: Vec<EpochRecord>) -> Self {
        let best = best_epoch(&epochs);
        let rec = epochs.get(best);
        Self {
            method: method.into(),
            seed,
            config,
            best_epoch: rec.map_or(0, |r| r.epoch),
            best_validation_accuracy: rec.and_then(|r| r.validation_accuracy),
            test_accuracy: rec.and_then(|r| r.test_accuracy),
            epochs,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_accuracy,validation_accuracy,test_accuracy,value_term,info_term,\
             discriminator_auc,discriminator_accuracy,clamp_hits,generated,selected,\
             selected_mean_entropy,generated_mean_entropy,low_entropy_instances,\
             high_entropy_instances,mu_multiplier,warnings\n",
        );
        for r in &self.epochs {
            let row = [
                r.epoch.to_string(),
                opt(r.train_accuracy),
                opt(r.validation_accuracy),
                opt(r.test_accuracy),
                opt(r.value_term),
                opt(r.info_term),
                opt(r.discriminator_auc),
                opt(r.discriminator_accuracy),
                r.clamp_hits.to_string(),
                r.generated.to_string(),
                r.selected.to_string(),
                opt(r.selected_mean_entropy),
                opt(r.generated_mean_entropy),
                r.low_entropy_instances.to_string(),
                r.high_entropy_instances.to_string(),
                opt(r.mu_multiplier),
                r.warnings.join("; ").replace(',', " "),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            file: "report".into(),
            detail: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "report".into(),
            detail: e.to_string(),
        })
    }
}

/// Index of the record with the highest validation accuracy; ties go to
/// the earliest.
pub fn best_epoch(epochs: &[EpochRecord]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in epochs.iter().enumerate() {
        if let Some(v) = r.validation_accuracy {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map_or(epochs.len().saturating_sub(1), |(i, _)| i)
}
