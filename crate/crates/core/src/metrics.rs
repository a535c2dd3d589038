//! Binary classification metrics, ROC/AUC, recall-band threshold calibration, stratified
//! k-fold splitting and median-of-runs aggregation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::rejected(format!("{what} contains non-binary value {v}"))),
        None => Ok(()),
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts> {
    if labels.len() != predictions.len() {
        return Err(Error::rejected(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    check_binary(labels, "labels")?;
    check_binary(predictions, "predictions")?;
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Column set of the result tables. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub auc: Option<f64>,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metric_set(counts: &ConfusionCounts, auc: Option<f64>, threshold: f64) -> MetricSet {
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    MetricSet {
        recall,
        precision,
        f1,
        accuracy: ratio(counts.tp + counts.tn, counts.total()),
        specificity: ratio(counts.tn, counts.tn + counts.fp),
        ppv: precision,
        npv: ratio(counts.tn, counts.tn + counts.fn_),
        auc,
        threshold,
    }
}

impl MetricSet {
    /// Values in table column order: recall, precision, F1, accuracy, specificity, PPV, NPV, AUC.
    pub fn columns(&self) -> [Option<f64>; 8] {
        [
            self.recall,
            self.precision,
            self.f1,
            self.accuracy,
            self.specificity,
            self.ppv,
            self.npv,
            self.auc,
        ]
    }

    fn from_columns(c: [Option<f64>; 8], threshold: f64) -> Self {
        Self {
            recall: c[0],
            precision: c[1],
            f1: c[2],
            accuracy: c[3],
            specificity: c[4],
            ppv: c[5],
            npv: c[6],
            auc: c[7],
            threshold,
        }
    }

    /// Every column defined.
    pub fn is_complete(&self) -> bool {
        self.columns().iter().all(Option::is_some) && self.threshold.is_finite()
    }
}

/// Scores the hard predictions `score >= threshold` against `labels`.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricSet> {
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let counts = confusion(labels, &preds)?;
    let auc = match roc_auc(scores, labels) {
        Ok(roc) => Some(roc.auc),
        Err(_) => None,
    };
    Ok(metric_set(&counts, auc, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Instances with `score >= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    /// From (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<RocPoint>,
}

/// ROC curve and trapezoidal AUC. Tied scores move both rates at once, which makes the area
/// equal to `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::rejected(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels, "labels")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::rejected("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::rejected("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = points[points.len() - 1];
        let p = RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(Roc { auc, points })
}

/// Allowed recall interval for threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallBand {
    pub min: f64,
    pub max: f64,
}

impl Default for RecallBand {
    /// 0.8 ± 0.07.
    fn default() -> Self {
        Self { min: 0.73, max: 0.87 }
    }
}

impl RecallBand {
    pub fn contains(&self, recall: f64) -> bool {
        recall >= self.min && recall <= self.max
    }
}

/// Out-of-fold scores of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Pooled out-of-fold recall at the chosen threshold.
    pub recall: f64,
    pub specificity: f64,
    pub in_band: bool,
}

/// Picks a decision threshold from pooled out-of-fold scores.
///
/// Candidates are the distinct scores (`score >= t` is positive). Among candidates whose pooled
/// recall lies in the band, the one with the highest specificity wins; otherwise the candidate
/// with the smallest recall at or above the band minimum. Ties go to the larger threshold.
pub fn calibrate_threshold(folds: &[FoldScores], band: RecallBand) -> Result<Calibration> {
    let usable = folds
        .iter()
        .filter(|f| f.labels.contains(&0) && f.labels.contains(&1))
        .count();
    if usable < 2 {
        return Err(Error::rejected(
            "calibration needs at least two folds containing both classes",
        ));
    }
    let mut pooled: Vec<(f64, u8)> = Vec::new();
    for f in folds {
        if f.scores.len() != f.labels.len() {
            return Err(Error::rejected("fold scores and labels differ in length"));
        }
        check_binary(&f.labels, "fold labels")?;
        pooled.extend(f.scores.iter().copied().zip(f.labels.iter().copied()));
    }
    if pooled.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::rejected("scores contain NaN"));
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = pooled.iter().filter(|p| p.1 == 1).count() as f64;
    let neg = pooled.len() as f64 - pos;

    let mut best_in_band: Option<Calibration> = None;
    let mut best_above: Option<Calibration> = None;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    // Descending sweep: each step lowers the threshold, so on ties the first candidate seen
    // is the larger threshold and strict comparisons keep it.
    while i < pooled.len() {
        let s = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == s {
            if pooled[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos;
        let specificity = (neg - fp as f64) / neg;
        let cand = Calibration {
            threshold: s,
            recall,
            specificity,
            in_band: band.contains(recall),
        };
        if cand.in_band {
            if best_in_band.is_none_or(|b| specificity > b.specificity) {
                best_in_band = Some(cand);
            }
        } else if recall >= band.min && best_above.is_none_or(|b| recall < b.recall) {
            best_above = Some(cand);
        }
    }
    best_in_band
        .or(best_above)
        .ok_or_else(|| Error::CalibrationFailure(format!("no threshold reaches recall {}", band.min)))
}

/// Row-to-fold assignment of a stratified k-fold split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// `(train, test)` row indices for fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (row, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(row);
            } else {
                train.push(row);
            }
        }
        (train, test)
    }
}

/// Shuffles each class separately and deals rows round-robin, so every fold receives its
/// proportional share of positives to within one row.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::rejected(format!("k = {k}; need at least 2 folds")));
    }
    check_binary(labels, "labels")?;
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::rejected(format!(
            "{} positives and {} negatives cannot fill {k} stratified folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = vec![0; labels.len()];
    for (i, &row) in pos.iter().chain(&neg).enumerate() {
        assignments[row] = i % k;
    }
    Ok(FoldPlan { k, assignments })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Column-wise median over at least three runs. Undefined entries are skipped; a column that
/// is undefined in every run stays undefined.
pub fn median_of_runs(runs: &[MetricSet]) -> Result<MetricSet> {
    if runs.len() < 3 {
        return Err(Error::rejected(format!(
            "median of runs needs at least 3 runs, got {}",
            runs.len()
        )));
    }
    column_median(runs)
}

/// Column-wise median over any non-empty set of runs, with the same skipping rule as
/// [`median_of_runs`].
pub fn column_median(runs: &[MetricSet]) -> Result<MetricSet> {
    if runs.is_empty() {
        return Err(Error::rejected("column median of zero runs"));
    }
    let mut cols = [None; 8];
    for (c, slot) in cols.iter_mut().enumerate() {
        let mut vals: Vec<f64> = runs.iter().filter_map(|r| r.columns()[c]).collect();
        if !vals.is_empty() {
            *slot = Some(median(&mut vals));
        }
    }
    let mut thresholds: Vec<f64> = runs.iter().map(|r| r.threshold).collect();
    Ok(MetricSet::from_columns(cols, median(&mut thresholds)))
}

/// Median of plain values (at least one).
pub fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    median(&mut v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < 1e-4)
    }

    #[test]
    fn confusion_counts_fixed_example() {
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let c = confusion(&labels, &preds).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (3, 1, 1, 5));

        let c = confusion(&labels, &labels).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let flipped: Vec<u8> = labels.iter().map(|v| 1 - v).collect();
        let c = confusion(&labels, &flipped).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&labels, &preds[..3]).is_err());
    }

    #[test]
    fn metric_set_fixed_example() {
        let m = metric_set(
            &ConfusionCounts {
                tp: 3,
                fp: 1,
                fn_: 1,
                tn: 5,
            },
            Some(0.9),
            0.5,
        );
        assert!(close(m.recall, 0.75));
        assert!(close(m.precision, 0.75));
        assert!(close(m.f1, 0.75));
        assert!(close(m.accuracy, 0.8));
        assert!(close(m.specificity, 0.8333));
        assert!(close(m.npv, 0.8333));
        assert_eq!(m.ppv, m.precision);
    }

    #[test]
    fn perfect_classifier_scores_one_everywhere() {
        let m = metric_set(
            &ConfusionCounts {
                tp: 4,
                fp: 0,
                fn_: 0,
                tn: 6,
            },
            Some(1.0),
            0.5,
        );
        assert!(m.columns().iter().all(|c| *c == Some(1.0)));
    }

    #[test]
    fn undefined_precision_is_flagged() {
        let m = metric_set(
            &ConfusionCounts {
                tp: 0,
                fp: 0,
                fn_: 3,
                tn: 7,
            },
            None,
            0.9,
        );
        assert_eq!(m.precision, None);
        assert_eq!(m.ppv, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.recall, Some(0.0));
        assert!(!m.is_complete());
    }

    #[test]
    fn auc_perfect_and_tied() {
        let roc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(roc.auc, 1.0);
        let roc = roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(roc.auc, 0.5);
        assert_eq!(roc.points.len(), 2);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    /// Deals rows alternately into two folds.
    fn two_folds(scores: Vec<f64>, labels: Vec<u8>) -> Vec<FoldScores> {
        (0..2)
            .map(|f| FoldScores {
                scores: scores.iter().skip(f).step_by(2).copied().collect(),
                labels: labels.iter().skip(f).step_by(2).copied().collect(),
            })
            .collect()
    }

    #[test]
    fn calibration_prefers_higher_specificity_in_band() {
        // Recall 0.8 is reached at 0.65 (three negatives above, specificity 0.7) and at 0.60
        // (four negatives above, specificity 0.6).
        let scores = vec![
            0.95, 0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.30, 0.20, 0.15, 0.10, 0.05, 0.04, 0.03,
        ];
        let labels = vec![1, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let folds = vec![
            FoldScores {
                scores: vec![0.95, 0.80, 0.65, 0.30, 0.15, 0.05, 0.03],
                labels: vec![1, 0, 1, 1, 0, 0, 0],
            },
            FoldScores {
                scores: vec![0.90, 0.85, 0.75, 0.70, 0.60, 0.20, 0.10, 0.04],
                labels: vec![1, 1, 0, 0, 0, 0, 0, 0],
            },
        ];
        assert_eq!(scores.len(), labels.len());
        let cal = calibrate_threshold(&folds, RecallBand::default()).unwrap();
        assert_eq!(cal.threshold, 0.65);
        assert_eq!(cal.recall, 0.8);
        assert!((cal.specificity - 0.7).abs() < 1e-12);
        assert!(cal.in_band);
    }

    #[test]
    fn calibration_on_perfect_separation_reaches_full_specificity() {
        let mut scores: Vec<f64> = (0..10).map(|i| 0.9 - 0.01 * i as f64).collect();
        scores.extend((0..10).map(|i| 0.4 - 0.01 * i as f64));
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
        let cal = calibrate_threshold(&two_folds(scores.clone(), labels), RecallBand::default()).unwrap();
        assert_eq!(cal.specificity, 1.0);
        assert!(cal.in_band);
        assert_eq!(cal.threshold, scores[7]);
    }

    #[test]
    fn calibration_falls_back_to_smallest_recall_above_band() {
        // Two positives: recall jumps 0.5 -> 1.0, so nothing lands in the band.
        let scores = vec![0.9, 0.7, 0.8, 0.1];
        let labels = vec![1, 1, 0, 0];
        let cal = calibrate_threshold(&two_folds(scores, labels), RecallBand::default()).unwrap();
        assert_eq!(cal.threshold, 0.7);
        assert_eq!(cal.recall, 1.0);
        assert!(!cal.in_band);
    }

    #[test]
    fn calibration_fails_when_band_is_unreachable() {
        let band = RecallBand { min: 1.5, max: 2.0 };
        let scores = vec![0.9, 0.8, 0.1, 0.2];
        let labels = vec![1, 1, 0, 0];
        assert!(matches!(
            calibrate_threshold(&two_folds(scores, labels), band),
            Err(Error::CalibrationFailure(_))
        ));
    }

    #[test]
    fn calibration_rejects_single_fold() {
        let f = FoldScores {
            scores: vec![0.1, 0.9],
            labels: vec![0, 1],
        };
        assert!(calibrate_threshold(&[f], RecallBand::default()).is_err());
    }

    #[test]
    fn kfold_twenty_rows() {
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
        let plan = stratified_kfold(&labels, 10, 3).unwrap();
        for fold in 0..10 {
            let (train, test) = plan.split(fold);
            assert_eq!(test.len(), 2);
            assert_eq!(test.iter().filter(|&&r| labels[r] == 1).count(), 1);
            assert_eq!(train.len() + test.len(), 20);
        }
    }

    #[test]
    fn kfold_rejects_too_few_positives() {
        let labels = [1, 1, 0, 0, 0, 0, 0, 0];
        assert!(stratified_kfold(&labels, 3, 0).is_err());
    }

    #[test]
    fn median_of_three_aucs() {
        let base = metric_set(
            &ConfusionCounts {
                tp: 3,
                fp: 1,
                fn_: 1,
                tn: 5,
            },
            None,
            0.5,
        );
        let runs: Vec<MetricSet> = [0.84, 0.86, 0.85]
            .iter()
            .map(|&a| MetricSet { auc: Some(a), ..base })
            .collect();
        let m = median_of_runs(&runs).unwrap();
        assert_eq!(m.auc, Some(0.85));
        assert_eq!(m.recall, base.recall);
        assert!(median_of_runs(&runs[..2]).is_err());
    }
}
