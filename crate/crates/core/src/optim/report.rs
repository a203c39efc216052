//! Confusion matrix and the precision/recall/f1/support report.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("empty input")]
    Empty,
    #[error("label sequences differ in length: {truth} vs {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },
}

/// `counts[i][j]` = samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_labels(
        truth: &[usize],
        predicted: &[usize],
        class_names: &[String],
    ) -> Result<Self, ReportError> {
        if truth.is_empty() {
            return Err(ReportError::Empty);
        }
        if truth.len() != predicted.len() {
            return Err(ReportError::LengthMismatch {
                truth: truth.len(),
                predicted: predicted.len(),
            });
        }
        let mut cm = Self::new(class_names.to_vec());
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), ReportError> {
        let k = self.class_names.len();
        for index in [truth, predicted] {
            if index >= k {
                return Err(ReportError::LabelOutOfRange { index, classes: k });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth][predicted]
    }

    /// Row sum: number of samples whose true class is `class`.
    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.class_names.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class metrics plus overall accuracy, computed at full precision;
/// rounding to two decimals happens only in [`ClassificationReport::format`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    // Zero-denominator metrics are defined as 0, not NaN.
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let k = cm.class_names.len();
        let mut per_class = Vec::with_capacity(k);
        for c in 0..k {
            let tp = cm.counts[c][c];
            let fp: usize = (0..k).filter(|&t| t != c).map(|t| cm.counts[t][c]).sum();
            let support = cm.support(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_class.push(ClassMetrics {
                precision,
                recall,
                f1,
                support,
            });
        }
        let total = cm.total();
        Self {
            class_names: cm.class_names.clone(),
            per_class,
            accuracy: ratio(cm.trace(), total),
            total,
        }
    }

    /// Column-aligned text: header, one row per class, then an accuracy row
    /// (value in the f1-score column, total in the support column).
    pub fn format(&self) -> String {
        let name_w = self
            .class_names
            .iter()
            .map(|n| n.len())
            .chain(std::iter::once("accuracy".len()))
            .max()
            .unwrap_or(8)
            .max(8)
            + 4;
        let mut out = String::new();
        out.push_str(&format!(
            "{:>name_w$} {:>10} {:>10} {:>10} {:>10}\n\n",
            "", "precision", "recall", "f1-score", "support"
        ));
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{:>name_w$} {:>10.2} {:>10.2} {:>10.2} {:>10}\n",
                name, m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!(
            "\n{:>name_w$} {:>10} {:>10} {:>10.2} {:>10}\n",
            "accuracy", "", "", self.accuracy, self.total
        ));
        out
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format())
    }
}

/// Build the report straight from index-coded label sequences.
pub fn classification_report(
    truth: &[usize],
    predicted: &[usize],
    class_names: &[String],
) -> Result<ClassificationReport, ReportError> {
    let cm = ConfusionMatrix::from_labels(truth, predicted, class_names)?;
    Ok(ClassificationReport::from_confusion(&cm))
}
