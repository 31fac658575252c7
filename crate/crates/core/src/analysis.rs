//! Pseudo-label bias diagnostics: histograms and imbalance ratio, per-class
//! precision/recall, confusion matrices, class-centroid cosine similarity and
//! confidence-threshold sweeps.
//!
//! Undefined ratios (zero denominators) are `None` and are written as `NA`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::io::format_f64;
use crate::error::{Error, Result};
use crate::numkit::{argmax, Matrix};

/// Marker written for undefined cells.
pub const UNDEFINED: &str = "NA";

/// `max/min` of the counts; `∞` when some class is empty but another is not,
/// `1` when every count is zero.
pub fn imbalance_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    match (max, min) {
        (0, _) => 1.0,
        (_, 0) => f64::INFINITY,
        (max, min) => max as f64 / min as f64,
    }
}

pub fn histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &l in labels {
        h[l] += 1;
    }
    h
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape("prediction/truth lengths", a, format!("{b} and {c}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStats {
    /// Accepted pseudo-labels per predicted class.
    pub counts: Vec<usize>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub imbalance_ratio: f64,
}

impl PseudoLabelStats {
    pub fn mean_precision(&self) -> Option<f64> {
        mean_defined(&self.precision)
    }

    pub fn mean_recall(&self) -> Option<f64> {
        mean_defined(&self.recall)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["class", "count", "precision", "recall"])?;
        for c in 0..self.counts.len() {
            w.write_record([
                c.to_string(),
                self.counts[c].to_string(),
                cell(self.precision[c]),
                cell(self.recall[c]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), format_f64)
}

/// Precision and recall per class over accepted instances only.
pub fn per_class_pr(
    predicted: &[usize],
    accepted: &[bool],
    truth: &[usize],
    classes: usize,
) -> Result<PseudoLabelStats> {
    let cm = confusion(predicted, accepted, truth, classes)?;
    let counts: Vec<usize> = (0..classes).map(|c| cm.column_sum(c)).collect();
    let precision = (0..classes).map(|c| ratio(cm.get(c, c), cm.column_sum(c))).collect();
    let recall = (0..classes).map(|c| ratio(cm.get(c, c), cm.row_sum(c))).collect();
    Ok(PseudoLabelStats {
        imbalance_ratio: imbalance_ratio(&counts),
        counts,
        precision,
        recall,
    })
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn column_sum(&self, predicted: usize) -> usize {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio((0..self.classes).map(|c| self.get(c, c)).sum(), self.total())
    }

    /// Mean of the recalls of classes that have at least one instance.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        mean_defined(
            &(0..self.classes)
                .map(|c| ratio(self.get(c, c), self.row_sum(c)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..self.classes).map(|c| c.to_string()));
        w.write_record(&header)?;
        for t in 0..self.classes {
            let mut rec = vec![t.to_string()];
            rec.extend((0..self.classes).map(|p| self.get(t, p).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Tally over accepted instances.
pub fn confusion(predicted: &[usize], accepted: &[bool], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    check_lengths(predicted.len(), accepted.len(), truth.len())?;
    let mut cm = ConfusionMatrix::new(classes);
    for ((&p, &a), &t) in predicted.iter().zip(accepted).zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidArgument(format!("label out of range: ({t}, {p})")));
        }
        if a {
            cm.add(t, p);
        }
    }
    Ok(cm)
}

/// Cosine similarity between class centroids, each the mean of L2-normalized rows.
pub fn centroid_similarity(features: &Matrix, labels: &[usize], classes: usize) -> Result<Matrix> {
    if labels.len() != features.rows() {
        return Err(Error::shape("centroid_similarity", features.rows(), labels.len()));
    }
    let dim = features.cols();
    let mut sums = Matrix::zeros(classes, dim);
    let mut counts = vec![0usize; classes];
    for (row, &l) in features.iter_rows().zip(labels) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        counts[l] += 1;
        if norm > 0.0 {
            for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
                *s += v / norm;
            }
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let norms: Vec<f64> = sums
        .iter_rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = Matrix::zeros(classes, classes);
    for a in 0..classes {
        for b in 0..classes {
            let dot: f64 = sums.row(a).iter().zip(sums.row(b)).map(|(x, y)| x * y).sum();
            let den = norms[a] * norms[b];
            out.set(a, b, if den > 0.0 { dot / den } else { 0.0 });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub accepted: usize,
    pub imbalance_ratio: f64,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
}

/// Accept-at-`τ` statistics (confidence `≥ τ`) for each threshold.
pub fn threshold_sweep(probs: &Matrix, truth: &[usize], taus: &[f64]) -> Result<Vec<SweepRow>> {
    if truth.len() != probs.rows() {
        return Err(Error::shape("threshold_sweep", probs.rows(), truth.len()));
    }
    let (predicted, confidence): (Vec<usize>, Vec<f64>) = probs
        .iter_rows()
        .map(|r| {
            let a = argmax(r).unwrap_or(0);
            (a, r[a])
        })
        .unzip();
    sweep_predictions(&predicted, &confidence, truth, probs.cols(), taus)
}

/// [`threshold_sweep`] over stored `(prediction, confidence)` pairs.
pub fn sweep_predictions(
    predicted: &[usize],
    confidence: &[f64],
    truth: &[usize],
    classes: usize,
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("thresholds must be sorted ascending".into()));
    }
    check_lengths(predicted.len(), confidence.len(), truth.len())?;
    taus.iter()
        .map(|&tau| {
            let accepted: Vec<bool> = confidence.iter().map(|&c| c >= tau).collect();
            let stats = per_class_pr(predicted, &accepted, truth, classes)?;
            Ok(SweepRow {
                tau,
                accepted: accepted.iter().filter(|&&a| a).count(),
                imbalance_ratio: stats.imbalance_ratio,
                mean_precision: stats.mean_precision(),
                mean_recall: stats.mean_recall(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["tau", "accepted", "imbalance_ratio", "mean_precision", "mean_recall"])?;
    for r in rows {
        w.write_record([
            r.tau.to_string(),
            r.accepted.to_string(),
            format_ratio(r.imbalance_ratio),
            cell(r.mean_precision),
            cell(r.mean_recall),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_histogram_csv(counts: &[usize], w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["class", "count"])?;
    for (c, n) in counts.iter().enumerate() {
        w.write_record([c.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_matrix_csv(m: &Matrix, w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["class".to_string()];
    header.extend((0..m.cols()).map(|c| c.to_string()));
    w.write_record(&header)?;
    for (r, row) in m.iter_rows().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// `inf` for the unbounded sentinel, otherwise 17 significant digits.
pub fn format_ratio(r: f64) -> String {
    if r.is_infinite() {
        "inf".into()
    } else {
        format_f64(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn imbalance_ratio_cases() {
        assert_eq!(imbalance_ratio(&[7, 7, 7]), 1.0);
        assert_eq!(imbalance_ratio(&[30, 10, 20]), 3.0);
        assert_eq!(imbalance_ratio(&[5, 0]), f64::INFINITY);
        assert_eq!(imbalance_ratio(&[0, 0]), 1.0);
    }

    #[test]
    fn pr_hand_count() {
        let s = per_class_pr(&[0, 1, 1], &[true; 3], &[0, 0, 1], 2).unwrap();
        assert_eq!(s.precision, vec![Some(1.0), Some(0.5)]);
        assert_eq!(s.recall, vec![Some(0.5), Some(1.0)]);
        assert_eq!(s.counts, vec![1, 2]);
    }

    #[test]
    fn pr_perfect_and_empty() {
        let s = per_class_pr(&[0, 1, 2], &[true; 3], &[0, 1, 2], 3).unwrap();
        assert!(s.precision.iter().chain(&s.recall).all(|&v| v == Some(1.0)));
        let s = per_class_pr(&[0, 1, 2], &[false; 3], &[0, 1, 2], 3).unwrap();
        assert!(s.precision.iter().chain(&s.recall).all(Option::is_none));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("0,0,NA,NA"));
    }

    #[test]
    fn confusion_cases() {
        let cm = confusion(&[0, 1, 2], &[true; 3], &[0, 1, 2], 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p), usize::from(t == p));
            }
        }
        let cm = confusion(&[1], &[true], &[0], 2).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.total(), 1);
        assert!(confusion(&[0, 1], &[true], &[0, 1], 2).is_err());
    }

    #[test]
    fn confusion_rows_match_accepted_counts() {
        let mut rng = SeededRng::new(5, 0);
        let n = 100;
        let truth: Vec<usize> = (0..n).map(|_| (rng.uniform() * 4.0) as usize).collect();
        let pred: Vec<usize> = (0..n).map(|_| (rng.uniform() * 4.0) as usize).collect();
        let acc: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.7).collect();
        let cm = confusion(&pred, &acc, &truth, 4).unwrap();
        for c in 0..4 {
            let expected = (0..n).filter(|&i| acc[i] && truth[i] == c).count();
            assert_eq!(cm.row_sum(c), expected);
        }
        assert_eq!(cm.total(), acc.iter().filter(|&&a| a).count());
    }

    #[test]
    fn centroid_similarity_cases() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]]).unwrap();
        let s = centroid_similarity(&x, &[0, 0, 1], 2).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1).abs() < 1e-12);
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let s = centroid_similarity(&x, &[0, 1], 2).unwrap();
        assert!((s.get(0, 1) - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.get(0, 1), s.get(1, 0));
        let same = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        let s = centroid_similarity(&same, &[0, 1], 2).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(matches!(
            centroid_similarity(&same, &[0, 0], 2),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn sweep_extremes() {
        let probs = Matrix::from_rows(&[[0.9, 0.1], [0.3, 0.7], [0.5, 0.5]]).unwrap();
        let rows = threshold_sweep(&probs, &[0, 1, 1], &[0.0, 1.1]).unwrap();
        assert_eq!(rows[0].accepted, 3);
        assert_eq!(rows[1].accepted, 0);
        assert!(threshold_sweep(&probs, &[0, 1, 1], &[0.5, 0.2]).is_err());
    }

    #[test]
    fn balanced_accuracy_is_mean_recall() {
        let cm = confusion(&[0, 0, 0, 1], &[true; 4], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(cm.balanced_accuracy(), Some(1.0));
        let cm = confusion(&[0, 0, 0, 0], &[true; 4], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(cm.balanced_accuracy(), Some(0.5));
        assert_eq!(cm.accuracy(), Some(0.75));
    }

    proptest! {
        #[test]
        fn accepted_count_monotone(
            rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..40),
            mut taus in prop::collection::vec(0.0f64..1.2, 1..8),
        ) {
            taus.sort_by(f64::total_cmp);
            let normalized: Vec<Vec<f64>> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let probs = Matrix::from_rows(&normalized).unwrap();
            let truth = vec![0; normalized.len()];
            let out = threshold_sweep(&probs, &truth, &taus).unwrap();
            prop_assert!(out.windows(2).all(|w| w[1].accepted <= w[0].accepted));
        }

        #[test]
        fn micro_precision_is_accuracy(
            data in prop::collection::vec((0usize..4, 0usize..4, any::<bool>()), 1..60),
        ) {
            let truth: Vec<usize> = data.iter().map(|d| d.0).collect();
            let pred: Vec<usize> = data.iter().map(|d| d.1).collect();
            let acc: Vec<bool> = data.iter().map(|d| d.2).collect();
            let cm = confusion(&pred, &acc, &truth, 4).unwrap();
            let accepted = acc.iter().filter(|&&a| a).count();
            prop_assert_eq!(cm.total(), accepted);
            let correct: usize = (0..4).map(|c| cm.get(c, c)).sum();
            let micro_precision = (correct as f64) / (0..4).map(|c| cm.column_sum(c)).sum::<usize>().max(1) as f64;
            let direct = (0..data.len()).filter(|&i| acc[i] && truth[i] == pred[i]).count() as f64 / accepted.max(1) as f64;
            prop_assert!((micro_precision - direct).abs() < 1e-12);
        }
    }
}
