//! ROC/AUROC, confusion matrices, accuracies and plot-ready exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::translate::DistanceMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check_binary(op: &'static str, scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(op, format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain(op, "NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain(op, "need at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// ROC points from the strictest threshold down: `(+∞, 0, 0)`, one point per
/// distinct score (samples with score ≥ threshold are called positive), the
/// last being `(1, 1)`. Equal scores form a single step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_binary("roc_curve", scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`]. Equals `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pts = roc_curve(scores, labels)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// Macro-averaged one-vs-rest AUROC over classes present in `labels` with
/// at least one negative. `scores[i][k]` is the score of row `i` for class `k`.
pub fn macro_auroc(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Option<f64>> {
    let mut aucs = Vec::new();
    for k in 0..n_classes {
        let bin: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if bin.iter().all(|&b| b) || !bin.iter().any(|&b| b) {
            continue;
        }
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        aucs.push(auroc(&s, &bin)?);
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

/// K × K counts; rows are true classes, columns predictions.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    const OP: &str = "confusion_matrix";
    if truth.len() != predicted.len() {
        return Err(Error::shape(OP, format!("{} labels vs {} predictions", truth.len(), predicted.len())));
    }
    let mut cm = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::domain(OP, format!("label pair ({t}, {p}) out of range for {n_classes} classes")));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

/// `diag(i) / rowsum(i)`; `None` for classes with no samples.
pub fn per_class_accuracy(cm: &[Vec<usize>]) -> Vec<Option<f64>> {
    cm.iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect()
}

/// `trace / total`; `None` for an empty matrix.
pub fn overall_accuracy(cm: &[Vec<usize>]) -> Option<f64> {
    let total: usize = cm.iter().flatten().sum();
    let trace: usize = cm.iter().enumerate().map(|(i, r)| r[i]).sum();
    (total > 0).then(|| trace as f64 / total as f64)
}

/// Test-set metrics, serialised as the metrics JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<usize>>,
    pub n_test: usize,
    #[serde(skip)]
    pub roc_points: Vec<RocPoint>,
}

impl EvalReport {
    /// `scores` are per-class scores (argmax = prediction). For two classes
    /// `binary_scores` (larger = class 1) give the ROC; otherwise AUROC is
    /// the one-vs-rest macro average of `scores`.
    pub fn new(
        truth: &[usize],
        predicted: &[usize],
        scores: &[Vec<f64>],
        binary_scores: Option<&[f64]>,
        n_classes: usize,
    ) -> Result<Self> {
        let cm = confusion_matrix(truth, predicted, n_classes)?;
        let (auroc, roc_points) = match binary_scores {
            Some(b) if n_classes == 2 => {
                let bin: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
                match roc_curve(b, &bin) {
                    Ok(pts) => (Some(auroc(b, &bin)?), pts),
                    Err(Error::Domain { .. }) => (None, Vec::new()),
                    Err(e) => return Err(e),
                }
            }
            _ => (macro_auroc(scores, truth, n_classes)?, Vec::new()),
        };
        Ok(EvalReport {
            auroc,
            overall_accuracy: overall_accuracy(&cm),
            per_class_accuracy: per_class_accuracy(&cm),
            confusion_matrix: cm,
            n_test: truth.len(),
            roc_points,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("metrics JSON", "<json>", e.to_string()))
    }

    pub fn write_roc_csv(&self, out: impl Write) -> Result<()> {
        let mut w = lf_writer(out);
        w.write_record(["threshold", "fpr", "tpr"]).map_err(csv_err)?;
        for p in &self.roc_points {
            w.write_record([fmt(p.threshold), fmt(p.fpr), fmt(p.tpr)]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

fn lf_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("CSV", "<csv>", e.to_string())
}

/// Scatter data for classes `i` and `j`: `image_id,true_label,d_i,d_j`.
pub fn write_scatter_csv(m: &DistanceMatrix, i: usize, j: usize, out: impl Write) -> Result<()> {
    if i >= m.n_classes || j >= m.n_classes {
        return Err(Error::domain("scatter", format!("columns ({i}, {j}) out of range")));
    }
    let mut w = lf_writer(out);
    w.write_record(["image_id".into(), "true_label".into(), format!("d_{i}"), format!("d_{j}")])
        .map_err(csv_err)?;
    for r in 0..m.len() {
        w.write_record([
            m.image_ids[r].to_string(),
            m.labels[r].to_string(),
            fmt(m.distances[r][i]),
            fmt(m.distances[r][j]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub const HISTOGRAM_BINS: usize = 50;

/// Counts per uniform bin on `[0, 1]`, per class. Bins are closed on the
/// left; the last bin also includes 1.
pub fn tr_histogram(ratios: &[f64], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if ratios.len() != labels.len() {
        return Err(Error::shape("tr_histogram", "ratios and labels differ in length"));
    }
    let mut h = vec![vec![0; n_classes]; HISTOGRAM_BINS];
    for (&r, &l) in ratios.iter().zip(labels) {
        if !(0.0..=1.0).contains(&r) || l >= n_classes {
            return Err(Error::domain("tr_histogram", format!("ratio {r} / label {l} out of range")));
        }
        let bin = ((r * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[bin][l] += 1;
    }
    Ok(h)
}

/// `bin_lo,bin_hi,count,count_0,…` for the translation ratios of `m`.
pub fn write_tr_histogram_csv(m: &DistanceMatrix, out: impl Write) -> Result<()> {
    let ratios = m.translation_ratios()?;
    let h = tr_histogram(&ratios, &m.labels, m.n_classes)?;
    let mut w = lf_writer(out);
    let mut header = vec!["bin_lo".to_string(), "bin_hi".into(), "count".into()];
    header.extend((0..m.n_classes).map(|k| format!("count_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (b, counts) in h.iter().enumerate() {
        let mut row = vec![
            format!("{}", b as f64 / HISTOGRAM_BINS as f64),
            format!("{}", (b + 1) as f64 / HISTOGRAM_BINS as f64),
            counts.iter().sum::<usize>().to_string(),
        ];
        row.extend(counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_examples() {
        let pts = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);

        let flat = roc_curve(&[0.4; 4], &[true, false, true, false]).unwrap();
        assert_eq!(flat.len(), 2);
        assert_eq!((flat[1].fpr, flat[1].tpr), (1.0, 1.0));
        assert_eq!(auroc(&[0.4; 4], &[true, false, true, false]).unwrap(), 0.5);

        let inv = roc_curve(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert!(inv.iter().any(|p| p.fpr == 1.0 && p.tpr == 0.0));
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let cm = vec![vec![8, 2], vec![1, 9]];
        assert_eq!(per_class_accuracy(&cm), vec![Some(0.8), Some(0.9)]);
        assert_eq!(overall_accuracy(&cm), Some(0.85));
        let empty_row = vec![vec![3, 0], vec![0, 0]];
        assert_eq!(per_class_accuracy(&empty_row), vec![Some(1.0), None]);
        assert!(confusion_matrix(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = tr_histogram(&[0.0, 0.02, 0.5, 1.0, 0.999], &[0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(h[0], vec![1, 0]);
        assert_eq!(h[1], vec![1, 0]);
        assert_eq!(h[25], vec![0, 1]);
        assert_eq!(h[49], vec![0, 2]);
    }

    #[test]
    fn metrics_json_keys() {
        let r = EvalReport::new(&[0, 1, 1], &[0, 1, 0], &vec![vec![0.0; 2]; 3], Some(&[0.1, 0.9, 0.4]), 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["auroc", "overall_accuracy", "per_class_accuracy", "confusion_matrix", "n_test"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["auroc"], 1.0);
    }
}
