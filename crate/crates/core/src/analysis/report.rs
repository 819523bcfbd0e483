use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::flops::{Phase, PhaseTally};
use crate::nn::{self, MlpModel, TrainConfig};
use crate::policy::{ComputePolicy, PolicyKind, PolicyStats};

/// Counts indexed by `[true label][predicted label]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim("confusion", "label and prediction counts differ"));
        }
        let mut cm = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::param(format!("label {} out of range 0..{n_classes}", t.max(p))));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Number of times each class was predicted.
    pub fn predicted_counts(&self) -> Vec<u64> {
        (0..self.n_classes)
            .map(|p| self.counts.iter().map(|row| row[p]).sum())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true,pred,count\n");
        for (t, row) in self.counts.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{t},{p},{c}");
            }
        }
        s
    }
}

/// Predict every sample of `dataset` with the policy's inference rule.
pub fn confusion(model: &MlpModel, policy: &mut ComputePolicy, dataset: &Dataset) -> Result<ConfusionMatrix> {
    let pred = nn::predict(model, policy, dataset)?;
    ConfusionMatrix::from_predictions(dataset.labels(), &pred, model.n_outputs().max(dataset.n_classes()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelConcentration {
    pub distinct_predicted: usize,
    /// Share of predictions that went to each class; sums to 1.
    pub ratios: Vec<f64>,
}

pub fn label_concentration(cm: &ConfusionMatrix) -> LabelConcentration {
    let counts = cm.predicted_counts();
    let total = cm.total();
    LabelConcentration {
        distinct_predicted: counts.iter().filter(|&&c| c > 0).count(),
        ratios: counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect(),
    }
}

impl LabelConcentration {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,ratio\n");
        for (l, r) in self.ratios.iter().enumerate() {
            let _ = writeln!(s, "{l},{r}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 0 is the model before training.
    pub epoch: usize,
    pub validation_accuracy: f64,
    pub mean_train_loss: Option<f64>,
    pub cost: PhaseTally,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub policy: PolicyKind,
    pub config: TrainConfig,
    pub learning_rate: f64,
    pub epochs: Vec<EpochRecord>,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub labels: LabelConcentration,
    pub policy_stats: PolicyStats,
    /// Sum of the per-epoch costs.
    pub totals: PhaseTally,
}

impl TrainReport {
    pub fn new(
        policy: PolicyKind,
        config: TrainConfig,
        learning_rate: f64,
        epochs: Vec<EpochRecord>,
        confusion: ConfusionMatrix,
        policy_stats: PolicyStats,
    ) -> Self {
        let mut totals = PhaseTally::default();
        for e in &epochs {
            totals.accumulate(&e.cost);
        }
        TrainReport {
            policy,
            config,
            learning_rate,
            test_accuracy: confusion.accuracy(),
            labels: label_concentration(&confusion),
            epochs,
            confusion,
            policy_stats,
            totals,
        }
    }

    pub fn total_seconds(&self) -> f64 {
        Phase::ALL.iter().map(|&p| self.totals.time(p).as_secs_f64()).sum()
    }

    /// Summary without wall-clock figures, so that it depends only on the
    /// configuration and seed.
    pub fn summary_json(&self) -> Value {
        let flops: serde_json::Map<String, Value> = Phase::ALL
            .iter()
            .map(|&p| (p.name().to_string(), json!(self.totals.flops(p))))
            .collect();
        json!({
            "policy": self.policy,
            "config": self.config,
            "learning_rate": self.learning_rate,
            "accuracy": self.test_accuracy,
            "validation_accuracy": self.epochs.iter().map(|e| e.validation_accuracy).collect::<Vec<_>>(),
            "train_loss": self.epochs.iter().skip(1).map(|e| e.mean_train_loss).collect::<Vec<_>>(),
            "flops": flops,
            "total_flops": self.totals.total_flops(),
            "distinct_predicted_labels": self.labels.distinct_predicted,
            "label_ratios": self.labels.ratios,
            "confusion": self.confusion.counts,
            "mean_active_fraction": self.policy_stats.mean_active_fraction(),
            "empty_active_fallbacks": self.policy_stats.empty_active_fallbacks,
            "index_rebuilds": self.policy_stats.rebuilds,
        })
    }

    /// `epoch,phase,seconds,flops`, one row per trained epoch and phase plus a
    /// `total` row per epoch.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,phase,seconds,flops\n");
        for e in self.epochs.iter().skip(1) {
            for p in Phase::ALL {
                let _ = writeln!(s, "{},{},{:.6},{}", e.epoch, p.name(), e.cost.time(p).as_secs_f64(), e.cost.flops(p));
            }
            let secs: f64 = Phase::ALL.iter().map(|&p| e.cost.time(p).as_secs_f64()).sum();
            let _ = writeln!(s, "{},total,{:.6},{}", e.epoch, secs, e.cost.total_flops());
        }
        s
    }
}

/// `k,ratio` table.
pub fn ratio_table_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,ratio\n");
    for (k, r) in rows {
        let _ = writeln!(s, "{k},{r}");
    }
    s
}
