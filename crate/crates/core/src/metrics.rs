//! Confusion matrix and the derived precision, recall, F1 and accuracy.
//!
//! Per-class metrics are one-vs-rest. A ratio whose denominator is zero is
//! reported as `0.0` and flagged in [`Undefined`] rather than propagated as
//! NaN. Macro averages are unweighted means over classes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::ClassLabel;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            class_names,
        }
    }

    /// Names for the twelve-class task: `C0`..`C11`.
    pub fn multiclass_names() -> Vec<String> {
        ClassLabel::all().map(|c| c.tag()).collect()
    }

    /// Names for the binary task; index 1 is the attack (positive) class.
    pub fn binary_names() -> Vec<String> {
        vec!["Normal".into(), "Attack".into()]
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.classes())
            .filter(|&a| a != k)
            .map(|a| self.counts[a][k])
            .sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.classes())
            .filter(|&p| p != k)
            .map(|p| self.counts[k][p])
            .sum()
    }

    /// Samples whose actual class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    /// Relabels rows and columns through `map` (old class -> new class).
    pub fn collapse(&self, map: impl Fn(usize) -> usize, class_names: Vec<String>) -> Self {
        let mut out = ConfusionMatrix::zeros(class_names);
        for (a, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                out.counts[map(a)][map(p)] += n;
            }
        }
        out
    }

    /// Collapses the twelve-class matrix into `[Normal, Attack]`.
    pub fn to_binary(&self) -> Self {
        assert_eq!(self.classes(), ClassLabel::COUNT);
        self.collapse(
            |k| usize::from(ClassLabel::new(k as u8).unwrap().is_attack()),
            Self::binary_names(),
        )
    }
}

/// Tallies `(actual, predicted)` class indices into a matrix.
pub fn confusion(
    actual: &[usize],
    predicted: &[usize],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Labels(format!(
            "{} actual labels vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Labels("no labels to evaluate".into()));
    }
    let mut matrix = ConfusionMatrix::zeros(class_names);
    let k = matrix.classes();
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= k || p >= k {
            return Err(Error::Labels(format!(
                "label pair ({a}, {p}) outside the {k} known classes"
            )));
        }
        matrix.counts[a][p] += 1;
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub undefined: Undefined,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// One-vs-rest precision, recall and F1 for class `k`.
pub fn precision_recall_f1(matrix: &ConfusionMatrix, k: usize) -> ClassMetrics {
    let tp = matrix.true_positives(k);
    let (precision, p_undef) = ratio(tp, tp + matrix.false_positives(k));
    let (recall, r_undef) = ratio(tp, tp + matrix.false_negatives(k));
    let (f1, f_undef) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: matrix.support(k),
        undefined: Undefined {
            precision: p_undef,
            recall: r_undef,
            f1: f_undef,
        },
    }
}

pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Labels("accuracy of an empty matrix".into()));
    }
    Ok(matrix.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
    /// How `macro` was averaged; always `"unweighted"`.
    pub averaging: String,
    #[serde(default)]
    pub fingerprint: String,
    #[serde(default)]
    pub seed: u64,
}

impl EvalReport {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(&matrix)?;
        let per_class: Vec<ClassMetrics> = (0..matrix.classes())
            .map(|k| precision_recall_f1(&matrix, k))
            .collect();
        let n = per_class.len() as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
        let macro_avg = MacroMetrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        };
        Ok(EvalReport {
            version: REPORT_VERSION,
            class_names: matrix.class_names.clone(),
            per_class,
            macro_avg,
            accuracy,
            matrix,
            averaging: "unweighted".into(),
            fingerprint: String::new(),
            seed: 0,
        })
    }

    pub fn evaluate(actual: &[usize], predicted: &[usize], class_names: Vec<String>) -> Result<Self> {
        Self::from_matrix(confusion(actual, predicted, class_names)?)
    }

    /// Classes with at least one 0/0 metric.
    pub fn undefined_classes(&self) -> Vec<&str> {
        self.class_names
            .iter()
            .zip(&self.per_class)
            .filter(|(_, m)| m.undefined.any())
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: EvalReport = serde_json::from_str(&text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::Config {
                path: path.to_path_buf(),
                message: format!("unsupported report version {}", report.version),
            });
        }
        Ok(report)
    }
}

/// Published full-scale CICDDoS2019 results and the agreement bands used
/// when comparing a local full-data run against them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceTargets {
    pub binary_accuracy: f64,
    pub binary_tolerance: f64,
    pub multiclass_accuracy: f64,
    pub multiclass_tolerance: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_tolerance: f64,
}

impl Default for ReferenceTargets {
    fn default() -> Self {
        ReferenceTargets {
            binary_accuracy: 0.9999,
            binary_tolerance: 0.005,
            multiclass_accuracy: 0.8706,
            multiclass_tolerance: 0.03,
            macro_precision: 0.87,
            macro_recall: 0.86,
            macro_f1: 0.86,
            macro_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetCheck {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ReferenceTargets {
    pub fn compare(&self, binary: &EvalReport, multiclass: &EvalReport) -> Vec<TargetCheck> {
        let check = |name: &str, expected: f64, observed: f64, tolerance: f64| TargetCheck {
            name: name.into(),
            expected,
            observed,
            tolerance,
            pass: (observed - expected).abs() <= tolerance,
        };
        vec![
            check(
                "binary accuracy",
                self.binary_accuracy,
                binary.accuracy,
                self.binary_tolerance,
            ),
            check(
                "multiclass accuracy",
                self.multiclass_accuracy,
                multiclass.accuracy,
                self.multiclass_tolerance,
            ),
            check(
                "macro precision",
                self.macro_precision,
                multiclass.macro_avg.precision,
                self.macro_tolerance,
            ),
            check(
                "macro recall",
                self.macro_recall,
                multiclass.macro_avg.recall,
                self.macro_tolerance,
            ),
            check(
                "macro f1",
                self.macro_f1,
                multiclass.macro_avg.f1,
                self.macro_tolerance,
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("C{i}")).collect()
    }

    #[test]
    fn perfect_and_total_confusion() {
        let m = confusion(&[0, 1], &[0, 1], names(2)).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 1]]);
        let m = confusion(&[0, 0], &[1, 1], names(2)).unwrap();
        assert_eq!(m.counts, vec![vec![0, 2], vec![0, 0]]);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&[0], &[0, 1], names(2)).is_err());
        assert!(confusion(&[], &[], names(2)).is_err());
        assert!(confusion(&[2], &[0], names(2)).is_err());
    }

    #[test]
    fn hand_computed_precision_recall() {
        // class 0: TP=87, FP=13, FN=14
        let m = ConfusionMatrix {
            counts: vec![vec![87, 14], vec![13, 50]],
            class_names: names(2),
        };
        let c = precision_recall_f1(&m, 0);
        assert!((c.precision - 0.87).abs() < 1e-12);
        assert!((c.recall - 87.0 / 101.0).abs() < 1e-12);
        assert!((c.recall - 0.8614).abs() < 1e-4);
        let f1 = 2.0 * 0.87 * (87.0 / 101.0) / (0.87 + 87.0 / 101.0);
        assert!((c.f1 - f1).abs() < 1e-12);
        assert!(!c.undefined.any());
    }

    #[test]
    fn absent_class_is_zero_and_flagged() {
        let m = ConfusionMatrix {
            counts: vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 0]],
            class_names: names(3),
        };
        let c = precision_recall_f1(&m, 2);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        assert!(c.undefined.precision && c.undefined.recall && c.undefined.f1);
        let report = EvalReport::from_matrix(m).unwrap();
        assert_eq!(report.undefined_classes(), vec!["C2"]);
        assert!(report.macro_avg.precision.is_finite());
    }

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix {
            counts: vec![vec![3, 0, 0], vec![0, 4, 0], vec![0, 0, 9]],
            class_names: names(3),
        };
        for k in 0..3 {
            let c = precision_recall_f1(&m, k);
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn accuracy_examples() {
        let m = |c: Vec<Vec<u64>>| ConfusionMatrix {
            counts: c,
            class_names: names(2),
        };
        assert_eq!(accuracy(&m(vec![vec![50, 0], vec![0, 50]])).unwrap(), 1.0);
        assert_eq!(accuracy(&m(vec![vec![40, 10], vec![10, 40]])).unwrap(), 0.8);
        assert!(accuracy(&m(vec![vec![0, 0], vec![0, 0]])).is_err());
    }

    #[test]
    fn binary_collapse_matches_relabeled_accuracy() {
        let actual = [0, 2, 11, 11, 5, 2, 11, 3];
        let predicted = [0, 6, 11, 4, 5, 2, 11, 11];
        let multi = confusion(&actual, &predicted, ConfusionMatrix::multiclass_names()).unwrap();
        let to_bin = |k: usize| usize::from(k != 11);
        let relabeled = confusion(
            &actual.map(to_bin),
            &predicted.map(to_bin),
            ConfusionMatrix::binary_names(),
        )
        .unwrap();
        assert_eq!(multi.to_binary(), relabeled);
        assert_eq!(
            accuracy(&multi.to_binary()).unwrap(),
            accuracy(&relabeled).unwrap()
        );
    }

    #[test]
    fn reference_targets() {
        let mut report = EvalReport::from_matrix(ConfusionMatrix {
            counts: vec![vec![1, 0], vec![0, 1]],
            class_names: names(2),
        })
        .unwrap();
        let checks = ReferenceTargets::default().compare(&report, &report);
        assert!(checks[0].pass);
        assert!(!checks[1].pass);
        report.accuracy = 0.86;
        let checks = ReferenceTargets::default().compare(&report, &report);
        assert!(checks[1].pass);
    }
}
