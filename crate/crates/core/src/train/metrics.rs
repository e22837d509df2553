//! Classification metrics and their CSV/JSON forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_class_loss: f64,
    pub train_sim_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 3]; 3],
    #[serde(default)]
    pub loss_history: Vec<EpochLog>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("metrics need at least one prediction"));
        }
        let per_class = Label::ALL
            .iter()
            .map(|&l| {
                let c = l.index();
                let tp = confusion[c][c];
                let predicted: u64 = (0..3).map(|r| confusion[r][c]).sum();
                let actual: u64 = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    label: l.name().to_string(),
                    precision,
                    recall,
                    f1,
                    support: actual,
                }
            })
            .collect();
        let trace: u64 = (0..3).map(|i| confusion[i][i]).sum();
        Ok(Self {
            macro_accuracy: ratio(trace, total),
            per_class,
            confusion,
            loss_history: Vec::new(),
        })
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("truth and prediction lengths differ"));
        }
        let mut confusion = [[0u64; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in Label::ALL {
            write!(s, ",{}", l.name()).unwrap();
        }
        s.push('\n');
        for l in Label::ALL {
            s.push_str(l.name());
            for v in self.confusion[l.index()] {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Accuracy followed by precision/recall/F1 for each class.
    pub fn table(&self) -> String {
        let mut head = String::from("Acc");
        let mut row = format!("{:.4}", self.macro_accuracy);
        for (c, short) in self.per_class.iter().zip(["non", "rumor", "unver"]) {
            for m in ["P", "R", "F1"] {
                write!(head, "\t{short}-{m}").unwrap();
            }
            write!(row, "\t{:.4}\t{:.4}\t{:.4}", c.precision, c.recall, c.f1).unwrap();
        }
        format!("{head}\n{row}\n")
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut s =
            String::from("epoch,lr,train_loss,train_class_loss,train_sim_loss,train_accuracy,val_loss,val_accuracy\n");
        for e in &self.loss_history {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                e.train_class_loss,
                e.train_sim_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy
            )
            .unwrap();
        }
        s
    }
}
