//! Offline evaluation measures: AUC, ACC, KS, Precision, Recall, F1 and the
//! online DSR (precision over the flagged set).
//!
//! AUC and KS are computed with exact integer numerators so they agree
//! bit-for-bit with their brute-force oracles.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(Error::data(format!(
                "scored labels: {} scores vs {} labels (both must be non-empty)",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::data("scores contain a non-finite value".to_string()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::data("labels must be 0/1".to_string()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn class_counts(&self) -> (u64, u64) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count() as u64;
        (pos, self.labels.len() as u64 - pos)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted 1/2 (rank formulation).
pub fn auc(scored: &ScoredLabels) -> Result<f64> {
    let (pos, neg) = scored.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::data(
            "AUC needs at least one positive and one negative".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored.scores[a].total_cmp(&scored.scores[b]));

    // Twice the win count: 2 per strict win, 1 per tie.
    let mut num2: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut tie_pos: u64 = 0;
        let mut tie_neg: u64 = 0;
        while j < order.len() && scored.scores[order[j]] == scored.scores[order[i]] {
            if scored.labels[order[j]] == 1 {
                tie_pos += 1;
            } else {
                tie_neg += 1;
            }
            j += 1;
        }
        num2 += tie_pos * (2 * neg_below + tie_neg);
        neg_below += tie_neg;
        i = j;
    }
    Ok(num2 as f64 / (2 * pos * neg) as f64)
}

/// Kolmogorov-Smirnov statistic: max over thresholds of |TPR - FPR|, with
/// flags taken as score > t.
pub fn ks(scored: &ScoredLabels) -> Result<f64> {
    let (pos, neg) = scored.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::data(
            "KS needs at least one positive and one negative".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored.scores[b].total_cmp(&scored.scores[a]));

    // Sweep thresholds downward through the distinct scores; at threshold t
    // every item with score > t is flagged.
    let mut tp: u64 = 0;
    let mut fp: u64 = 0;
    let mut best_num: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored.scores[order[j]] == scored.scores[order[i]] {
            if scored.labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        // Threshold just below this score group (equivalently t = next score).
        let num = (tp * neg).abs_diff(fp * pos);
        if num > best_num {
            best_num = num;
        }
        i = j;
    }
    Ok(best_num as f64 / (pos * neg) as f64)
}

/// Precision-like values are undefined when nothing is flagged; that case is
/// reported explicitly instead of as 0 or 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrecisionValue {
    Value(f64),
    NoPredictions,
}

impl PrecisionValue {
    pub fn value(self) -> Option<f64> {
        match self {
            PrecisionValue::Value(v) => Some(v),
            PrecisionValue::NoPredictions => None,
        }
    }
}

impl std::fmt::Display for PrecisionValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrecisionValue::Value(v) => write!(f, "{v:.6}"),
            PrecisionValue::NoPredictions => write!(f, "no-predictions"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConfusionReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: PrecisionValue,
    pub recall: f64,
    pub f1: f64,
    /// Detection success rate: precision over the flagged set.
    pub dsr: PrecisionValue,
}

/// Flags are score > rho (strict).
pub fn confusion_metrics(scored: &ScoredLabels, rho: f64) -> Result<ConfusionReport> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::config(format!("threshold must lie in (0,1), got {rho}")));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (s, &y) in scored.scores.iter().zip(&scored.labels) {
        let flagged = *s > rho;
        match (flagged, y) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 1) => fn_ += 1,
            (false, 0) => tn += 1,
            _ => unreachable!(),
        }
    }
    let total = (tp + fp + fn_ + tn) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let (precision, f1) = if tp + fp > 0 {
        let p = tp as f64 / (tp + fp) as f64;
        let f1 = if p + recall > 0.0 {
            2.0 * p * recall / (p + recall)
        } else {
            0.0
        };
        (PrecisionValue::Value(p), f1)
    } else {
        (PrecisionValue::NoPredictions, 0.0)
    };
    Ok(ConfusionReport {
        tp,
        fp,
        fn_,
        tn,
        accuracy,
        precision,
        recall,
        f1,
        dsr: precision,
    })
}

/// Render the metric block both as an aligned table and as machine-readable
/// `metric=value` lines.
pub fn format_report(auc_v: Option<f64>, ks_v: Option<f64>, cm: &ConfusionReport) -> String {
    let mut table = String::new();
    let mut machine = String::new();
    let mut push = |name: &str, value: String| {
        table.push_str(&format!("  {name:<10} {value}\n"));
        machine.push_str(&format!("{name}={value}\n"));
    };
    if let Some(a) = auc_v {
        push("auc", format!("{a:.6}"));
    }
    push("acc", format!("{:.6}", cm.accuracy));
    if let Some(k) = ks_v {
        push("ks", format!("{k:.6}"));
    }
    push("precision", cm.precision.to_string());
    push("recall", format!("{:.6}", cm.recall));
    push("f1", format!("{:.6}", cm.f1));
    push("dsr", cm.dsr.to_string());
    format!("{table}\n{machine}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sl(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// O(n^2) pairwise oracle with the same integer numerator.
    fn auc_oracle(s: &ScoredLabels) -> f64 {
        let mut num2: u64 = 0;
        let mut pos: u64 = 0;
        let mut neg: u64 = 0;
        for (i, (&si, &yi)) in s.scores().iter().zip(s.labels()).enumerate() {
            if yi == 1 {
                pos += 1;
            } else {
                neg += 1;
                continue;
            }
            let _ = i;
            for (&sj, &yj) in s.scores().iter().zip(s.labels()) {
                if yj == 0 {
                    if si > sj {
                        num2 += 2;
                    } else if si == sj {
                        num2 += 1;
                    }
                }
            }
        }
        num2 as f64 / (2 * pos * neg) as f64
    }

    /// Brute force over all observed thresholds.
    fn ks_oracle(s: &ScoredLabels) -> f64 {
        let pos = s.labels().iter().filter(|&&y| y == 1).count() as u64;
        let neg = s.labels().len() as u64 - pos;
        let mut best: u64 = 0;
        for &t in s.scores() {
            let mut tp = 0u64;
            let mut fp = 0u64;
            for (&sc, &y) in s.scores().iter().zip(s.labels()) {
                if sc > t {
                    if y == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            best = best.max((tp * neg).abs_diff(fp * pos));
        }
        best as f64 / (pos * neg) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&sl(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(auc(&sl(&[0.5, 0.5, 0.5], &[1, 0, 1])).unwrap(), 0.5);
        assert_eq!(
            auc(&sl(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0])).unwrap(),
            0.75
        );
        assert!(auc(&sl(&[0.1, 0.2], &[1, 1])).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks(&sl(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(ks(&sl(&[0.3, 0.3, 0.3, 0.3], &[1, 0, 1, 0])).unwrap(), 0.0);
        assert_eq!(ks(&sl(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0])).unwrap(), 0.5);
    }

    #[test]
    fn confusion_examples() {
        // perfect classifier
        let r = confusion_metrics(&sl(&[0.9, 0.9, 0.1], &[1, 1, 0]), 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, PrecisionValue::Value(1.0));
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.dsr, PrecisionValue::Value(1.0));

        // nothing flagged
        let r = confusion_metrics(&sl(&[0.2, 0.3], &[1, 0]), 0.5).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.precision, PrecisionValue::NoPredictions);
        assert_eq!(r.dsr, PrecisionValue::NoPredictions);

        // TP=2, FP=1, FN=1, TN=6
        let scores = [0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let r = confusion_metrics(&sl(&scores, &labels), 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (2, 1, 1, 6));
        assert!((r.precision.value().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let r = confusion_metrics(&sl(&[0.5, 0.6], &[1, 1]), 0.5).unwrap();
        // 0.5 is not flagged at rho = 0.5
        assert_eq!((r.tp, r.fn_), (1, 1));
    }

    #[test]
    fn dsr_equals_precision_when_flagged() {
        let s = sl(&[0.9, 0.7, 0.2, 0.8], &[1, 0, 1, 1]);
        let r = confusion_metrics(&s, 0.5).unwrap();
        assert_eq!(r.precision, r.dsr);
    }

    proptest! {
        #[test]
        fn auc_and_ks_match_oracles(
            raw in proptest::collection::vec((0u8..=20, 0u8..=1), 2..120)
        ) {
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 20.0).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.iter().any(|&y| y == 1) && labels.iter().any(|&y| y == 0));
            let s = ScoredLabels::new(scores, labels).unwrap();
            prop_assert_eq!(auc(&s).unwrap(), auc_oracle(&s));
            prop_assert_eq!(ks(&s).unwrap(), ks_oracle(&s));
        }

        #[test]
        fn auc_ks_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..=30, 0u8..=1), 2..80)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 30.0).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.iter().any(|&y| y == 1) && labels.iter().any(|&y| y == 0));
            let a = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
            // strictly increasing map into (0,1)
            let warped: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-3.0 * (s - 0.4)).exp())).collect();
            let b = ScoredLabels::new(warped, labels).unwrap();
            prop_assert!((auc(&a).unwrap() - auc(&b).unwrap()).abs() < 1e-12);
            prop_assert!((ks(&a).unwrap() - ks(&b).unwrap()).abs() < 1e-12);
        }
    }
}
