//! Classification metrics. Scores are "higher is better" (one minus loss).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Trimmed, lowercased label used for every comparison.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

pub fn labels_match(a: &str, b: &str) -> bool {
    normalize_label(a) == normalize_label(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    value: f64,
    metric_name: String,
    n_evaluated: usize,
}

impl Score {
    pub fn new(value: f64, metric_name: &str, n_evaluated: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(invalid(format!("score {value} outside [0, 1]")));
        }
        if n_evaluated == 0 {
            return Err(invalid("score over zero examples"));
        }
        Ok(Self {
            value,
            metric_name: metric_name.to_string(),
            n_evaluated,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn n_evaluated(&self) -> usize {
        self.n_evaluated
    }
}

fn check_lengths(predictions: &[String], golds: &[String]) -> Result<()> {
    if predictions.len() != golds.len() {
        return Err(invalid(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(invalid("no predictions to score"));
    }
    Ok(())
}

fn binary_f1(predictions: &[String], golds: &[String], positive: &str) -> f64 {
    let positive = normalize_label(positive);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        let p_pos = normalize_label(p) == positive;
        let g_pos = normalize_label(g) == positive;
        match (p_pos, g_pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when there are no true positives.
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Binary F1 treating `positive_label` as the positive class.
pub fn f1_score(predictions: &[String], golds: &[String], positive_label: &str) -> Result<Score> {
    check_lengths(predictions, golds)?;
    Score::new(binary_f1(predictions, golds, positive_label), "f1", golds.len())
}

/// Unweighted mean of per-class binary F1 over the labels present in `golds`.
pub fn macro_f1(predictions: &[String], golds: &[String]) -> Result<Score> {
    check_lengths(predictions, golds)?;
    let classes: BTreeSet<String> = golds.iter().map(|g| normalize_label(g)).collect();
    let total: f64 = classes.iter().map(|c| binary_f1(predictions, golds, c)).sum();
    Score::new(total / classes.len() as f64, "macro_f1", golds.len())
}

/// Fraction of exact (normalized) matches.
pub fn accuracy(predictions: &[String], golds: &[String]) -> Result<Score> {
    check_lengths(predictions, golds)?;
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| labels_match(p, g))
        .count();
    Score::new(hits as f64 / golds.len() as f64, "accuracy", golds.len())
}

/// Metric selected by configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    F1 {
        positive_label: String,
    },
    MacroF1,
}

impl Metric {
    pub fn evaluate(&self, predictions: &[String], golds: &[String]) -> Result<Score> {
        match self {
            Metric::Accuracy => accuracy(predictions, golds),
            Metric::F1 { positive_label } => f1_score(predictions, golds, positive_label),
            Metric::MacroF1 => macro_f1(predictions, golds),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 { .. } => "f1",
            Metric::MacroF1 => "macro_f1",
        }
    }
}
