//! ROC/AUC and confusion-matrix metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::Verdict;
use crate::error::{Error, Result};
use crate::flow::ClassLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auc: f64,
    /// `(fpr, tpr)` from (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<(f64, f64)>,
}

/// Area under the ROC curve by trapezoidal integration over distinct score
/// thresholds. Tied positive/negative pairs count one half, so the result
/// equals the pairwise ranking probability exactly.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC AUC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one (positive, negative) pair.
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp_prev, fp_prev) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += u128::from(fp - fp_prev) * u128::from(tp + tp_prev);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = doubled_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { auc, points })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Recall of class 1; zero when there are no positives.
    pub fn recall1(&self) -> f64 {
        let p = self.tp + self.fn_;
        if p == 0 {
            0.0
        } else {
            self.tp as f64 / p as f64
        }
    }

    pub fn false_positive_rate(&self) -> f64 {
        let n = self.fp + self.tn;
        if n == 0 {
            0.0
        } else {
            self.fp as f64 / n as f64
        }
    }

    /// `2tp / (2tp + fp + fn)`; 1.0 when there is nothing to find and nothing was flagged.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

pub fn confusion_metrics(preds: &[Verdict], labels: &[Verdict]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!("{} predictions but {} labels", preds.len(), labels.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (Verdict::Attack, Verdict::Attack) => c.tp += 1,
            (Verdict::Attack, Verdict::Benign) => c.fp += 1,
            (Verdict::Benign, Verdict::Benign) => c.tn += 1,
            (Verdict::Benign, Verdict::Attack) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Metrics of one detector on one evaluation set.
///
/// `auc` is computed from the thresholded decisions; `score_auc` from the
/// raw scores, when the detector has them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub auc: f64,
    pub score_auc: Option<f64>,
    pub recall1: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// Score-level ROC when available, otherwise the decision-level one.
    pub roc_points: Vec<(f64, f64)>,
    pub per_class_recall: BTreeMap<ClassLabel, f64>,
}

impl EvalReport {
    /// Builds a report from decisions, optional continuous scores and true labels.
    pub fn build(name: &str, preds: &[Verdict], scores: Option<&[f64]>, labels: &[ClassLabel]) -> Result<Self> {
        let truth: Vec<Verdict> = labels.iter().map(|&l| Verdict::of_label(l)).collect();
        let counts = confusion_metrics(preds, &truth)?;
        let is_pos: Vec<bool> = truth.iter().map(|v| v.is_attack()).collect();
        let decision_scores: Vec<f64> = preds.iter().map(|p| f64::from(p.as_u8())).collect();
        let decision_roc = roc_auc(&decision_scores, &is_pos)?;
        let score_roc = match scores {
            Some(s) => Some(roc_auc(s, &is_pos)?),
            None => None,
        };
        let mut hits: BTreeMap<ClassLabel, (u64, u64)> = BTreeMap::new();
        for (&l, &p) in labels.iter().zip(preds) {
            if l.is_attack() {
                let e = hits.entry(l).or_default();
                e.1 += 1;
                if p.is_attack() {
                    e.0 += 1;
                }
            }
        }
        Ok(EvalReport {
            name: name.to_string(),
            auc: decision_roc.auc,
            score_auc: score_roc.as_ref().map(|r| r.auc),
            recall1: counts.recall1(),
            f1: counts.f1(),
            counts,
            roc_points: score_roc.map(|r| r.points).unwrap_or(decision_roc.points),
            per_class_recall: hits.into_iter().map(|(l, (h, n))| (l, h as f64 / n as f64)).collect(),
        })
    }

    pub fn recall_of(&self, label: ClassLabel) -> Option<f64> {
        self.per_class_recall.get(&label).copied()
    }
}

/// Row-to-row differences in the layout of a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    /// Relative AUC change in percent.
    pub auc_pct: f64,
    pub recall1_pct: f64,
    pub tp: i64,
    pub fp: i64,
}

impl ReportDelta {
    /// `candidate` relative to `baseline`.
    pub fn between(candidate: &EvalReport, baseline: &EvalReport) -> Self {
        let pct = |a: f64, b: f64| if b == 0.0 { 0.0 } else { 100.0 * (a - b) / b };
        ReportDelta {
            auc_pct: pct(candidate.auc, baseline.auc),
            recall1_pct: pct(candidate.recall1, baseline.recall1),
            tp: candidate.counts.tp as i64 - baseline.counts.tp as i64,
            fp: candidate.counts.fp as i64 - baseline.counts.fp as i64,
        }
    }
}

/// Plain-text table with one row per report and optional delta rows.
pub fn format_table(title: &str, rows: &[&EvalReport], deltas: &[(&str, ReportDelta)]) -> String {
    let mut out = format!("{title}\n");
    out.push_str(&format!(
        "{:<42}{:>10}{:>11}{:>11}{:>9}{:>9}\n",
        "detector", "AUC", "score-AUC", "Recall(1)", "TP", "FP"
    ));
    for r in rows {
        let score_auc = r.score_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<42}{:>10.4}{:>11}{:>11.4}{:>9}{:>9}\n",
            r.name, r.auc, score_auc, r.recall1, r.counts.tp, r.counts.fp
        ));
    }
    for (name, d) in deltas {
        out.push_str(&format!(
            "{:<42}{:>9.2}%{:>11}{:>10.2}%{:>+9}{:>+9}\n",
            name, d.auc_pct, "", d.recall1_pct, d.tp, d.fp
        ));
    }
    out
}
