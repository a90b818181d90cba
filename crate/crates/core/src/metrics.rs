//! Evaluation suite: confusion matrix at a threshold, accuracy / precision /
//! recall / F1, ROC AUC, false-positive count, and F1-optimal threshold
//! selection.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("only one class present")]
    SingleClass,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    match scores.iter().find(|s| !s.is_finite()) {
        Some(&s) => Err(MetricsError::NonFiniteScore(s)),
        None => Ok(()),
    }
}

/// A prediction is positive iff `score >= threshold`.
pub fn confusion_at(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// `None` marks an undefined ratio (zero denominator); F1 is undefined
/// whenever precision or recall is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn prf_accuracy(cm: &ConfusionMatrix) -> Result<Prf, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(Prf {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos, neg))
}

fn sorted_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney with average ranks).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let idx = sorted_indices(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        let tied_pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg * tied_pos as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// ROC curve vertices `(fpr, tpr)` from the strictest to the loosest threshold.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut idx = sorted_indices(scores);
    idx.reverse();
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Exhaustive scan over the lowest unique score (everything positive) and
/// the midpoints between consecutive unique scores. Maximizes F1; ties go
/// to higher precision, then to the lower threshold. Comparisons use exact
/// integer arithmetic on the confusion counts.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice, MetricsError> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels)?;
    let idx = sorted_indices(scores);
    // Unique scores ascending with the count of positives/negatives at each.
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for &k in &idx {
        let s = scores[k];
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if labels[k] {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, labels[k] as u64, (!labels[k]) as u64)),
        }
    }
    // Candidate c predicts positive for groups[c..].
    let mut tp = pos as u64;
    let mut fp = (scores.len() - pos) as u64;
    let fn_total = |tp: u64| pos as u64 - tp;
    let mut best: Option<(usize, u64, u64)> = None;
    for c in 0..groups.len() {
        if c > 0 {
            tp -= groups[c - 1].1;
            fp -= groups[c - 1].2;
        }
        let better = match best {
            None => true,
            Some((_, btp, bfp)) => {
                // F1 = 2tp / (2tp + fp + fn) compared by cross-multiplication
                let d = (2 * tp + fp + fn_total(tp)) as u128;
                let bd = (2 * btp + bfp + fn_total(btp)) as u128;
                match ((2 * tp) as u128 * bd).cmp(&((2 * btp) as u128 * d)) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    // precision tp/(tp+fp)
                    Ordering::Equal => {
                        (tp as u128 * (btp + bfp) as u128) > (btp as u128 * (tp + fp) as u128)
                    }
                }
            }
        };
        if better {
            best = Some((c, tp, fp));
        }
    }
    let (c, tp, fp) = best.expect("at least one unique score");
    let threshold = if c == 0 {
        groups[0].0
    } else {
        (groups[c - 1].0 + groups[c].0) / 2.0
    };
    let fn_ = fn_total(tp);
    let prec = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    Ok(ThresholdChoice {
        threshold,
        f1: 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
        precision: prec,
        recall: tp as f64 / pos as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    /// What one scored item is: `frame` or `sequence`.
    pub granularity: String,
    pub n: u64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: f64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn false_positives(&self) -> u64 {
        self.confusion.fp
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate(
    model_id: &str,
    granularity: &str,
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<EvalReport, MetricsError> {
    let confusion = confusion_at(scores, labels, threshold)?;
    let prf = prf_accuracy(&confusion)?;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        granularity: granularity.to_string(),
        n: confusion.total(),
        accuracy: prf.accuracy,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        roc_auc: roc_auc(scores, labels)?,
        threshold,
        confusion,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.1}%", 100.0 * x))
}

/// Side-by-side table of reports, one column per model.
pub fn format_comparison(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let labels: Vec<String> = reports.iter().map(|r| format!("{} ({})", r.model_id, r.granularity)).collect();
    let width = labels.iter().map(|l| l.len() + 3).max().unwrap_or(0).max(12);
    let _ = write!(out, "{:<16}", "Metric");
    for l in &labels {
        let _ = write!(out, "{l:>width$}");
    }
    out.push('\n');
    let mut row = |name: &str, f: &dyn Fn(&EvalReport) -> String| {
        let _ = write!(out, "{name:<16}");
        for r in reports {
            let _ = write!(out, "{:>width$}", f(r));
        }
        out.push('\n');
    };
    row("Accuracy", &|r| pct(Some(r.accuracy)));
    row("Precision", &|r| pct(r.precision));
    row("Recall", &|r| pct(r.recall));
    row("F1-Score", &|r| pct(r.f1));
    row("ROC AUC", &|r| format!("{:.3}", r.roc_auc));
    row("False Positives", &|r| r.confusion.fp.to_string());
    row("Threshold", &|r| format!("{:.3}", r.threshold));
    row("Items", &|r| r.n.to_string());
    out
}
