use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ActivityType, Category, Granularity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Support-weighted precision, recall and F1 with the confusion matrix they came from.
/// Rows of `confusion` are gold classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and weighted metrics; zero denominators give 0.
pub fn weighted_prf(confusion: &[Vec<u64>], labels: &[String]) -> Result<MetricsReport> {
    let n = confusion.len();
    if n == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    if confusion.iter().any(|r| r.len() != n) {
        return Err(Error::validation("confusion matrix is not square"));
    }
    if labels.len() != n {
        return Err(Error::validation(format!("{} labels for {n} classes", labels.len())));
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let tp = confusion[i][i];
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = confusion.iter().map(|r| r[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = ratio(support, total);
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            label: labels[i].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(MetricsReport {
        precision: wp,
        recall: wr,
        f1: wf,
        accuracy: ratio(trace, total),
        total,
        per_class,
        confusion: confusion.to_vec(),
    })
}

pub fn class_labels(granularity: Granularity) -> Vec<String> {
    (0..granularity.class_count())
        .map(|c| granularity.class_name(c).to_string())
        .collect()
}

/// Confusion matrix from gold/predicted class ids.
pub fn confusion_matrix(gold: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&g, &p) in gold.iter().zip(predicted) {
        m[g][p] += 1;
    }
    m
}

pub fn report_from_predictions(gold: &[usize], predicted: &[usize], granularity: Granularity) -> Result<MetricsReport> {
    let classes = granularity.class_count();
    weighted_prf(&confusion_matrix(gold, predicted, classes), &class_labels(granularity))
}

/// Sum a 24-type confusion matrix over category blocks and recompute.
pub fn rollup_to_category(report: &MetricsReport) -> Result<MetricsReport> {
    if report.confusion.len() != ActivityType::COUNT {
        return Err(Error::validation(format!(
            "category rollup needs a {0}x{0} type matrix, got {1} classes",
            ActivityType::COUNT,
            report.confusion.len()
        )));
    }
    let k = Category::ALL.len();
    let mut m = vec![vec![0u64; k]; k];
    for (g, row) in report.confusion.iter().enumerate() {
        let gc = ActivityType::ALL[g].category().id();
        for (p, &v) in row.iter().enumerate() {
            m[gc][ActivityType::ALL[p].category().id()] += v;
        }
    }
    weighted_prf(&m, &class_labels(Granularity::Category))
}

/// Gold classes down, predictions across.
pub fn confusion_csv(report: &MetricsReport) -> String {
    let mut out = String::from("gold\\predicted");
    for c in &report.per_class {
        let _ = write!(out, ",{}", c.label);
    }
    out.push('\n');
    for (c, row) in report.per_class.iter().zip(&report.confusion) {
        out.push_str(&c.label);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn two_by_two() {
        let r = weighted_prf(&[vec![2, 1], vec![0, 3]], &labels(2)).unwrap();
        assert!((r.accuracy - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.recall - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[1].precision, 0.75);
        assert_eq!(r.total, 6);
    }

    #[test]
    fn perfect_and_empty() {
        let eye: Vec<Vec<u64>> = (0..4).map(|i| (0..4).map(|j| u64::from(i == j) * 3).collect()).collect();
        let r = weighted_prf(&eye, &labels(4)).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(weighted_prf(&[], &[]).is_err());
    }

    #[test]
    fn absent_class_counts_zero() {
        let r = weighted_prf(&[vec![3, 0, 1], vec![0, 0, 0], vec![0, 2, 2]], &labels(3)).unwrap();
        assert_eq!(r.per_class[1].recall, 0.0);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].support, 0);
    }

    #[test]
    fn rollup_merges_life_types() {
        let mut conf = vec![vec![0u64; 24]; 24];
        conf[ActivityType::Birth.id()][ActivityType::Death.id()] = 4;
        conf[ActivityType::Career.id()][ActivityType::Career.id()] = 6;
        let types = weighted_prf(&conf, &class_labels(Granularity::Type)).unwrap();
        let cats = rollup_to_category(&types).unwrap();
        assert_eq!(types.accuracy, 0.6);
        assert_eq!(cats.accuracy, 1.0);
        assert_eq!(cats.confusion[Category::Life.id()][Category::Life.id()], 4);
    }

    #[test]
    fn csv_shape() {
        let r = weighted_prf(&[vec![2, 1], vec![0, 3]], &labels(2)).unwrap();
        assert_eq!(confusion_csv(&r), "gold\\predicted,c0,c1\nc0,2,1\nc1,0,3\n");
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(cells in proptest::collection::vec(0u64..50, 24 * 24)) {
            let m: Vec<Vec<u64>> = cells.chunks(24).map(<[u64]>::to_vec).collect();
            prop_assume!(cells.iter().any(|&c| c > 0));
            let r = weighted_prf(&m, &class_labels(Granularity::Type)).unwrap();
            prop_assert!((r.recall - r.accuracy).abs() < 1e-12);
            let supports: u64 = r.per_class.iter().map(|c| c.support).sum();
            prop_assert_eq!(supports, r.total);
            let cat = rollup_to_category(&r).unwrap();
            prop_assert!(cat.accuracy >= r.accuracy - 1e-12);
        }
    }
}
