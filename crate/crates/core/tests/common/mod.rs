//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use leakguard::data::{standardize, stratified_split, synthetic_dataset, Batch, PreprocessStats, SyntheticSpec};
use leakguard::metrics::{FoldScores, RecallBand};

/// AUC as the share of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Recall and specificity of `score >= t`, counted directly.
pub fn rates_at(scores: &[f64], labels: &[u8], t: f64) -> (f64, f64) {
    let (mut tp, mut fnn, mut tn, mut fp) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y) {
            (true, 1) => tp += 1.0,
            (false, 1) => fnn += 1.0,
            (false, _) => tn += 1.0,
            (true, _) => fp += 1.0,
        }
    }
    (tp / (tp + fnn), tn / (tn + fp))
}

/// Brute-force threshold choice: try every pooled score. In-band candidates compete on
/// specificity; failing that, the smallest recall above the band floor wins. Ties go to the
/// larger threshold.
pub fn sweep_threshold(folds: &[FoldScores], band: RecallBand) -> Option<f64> {
    let scores: Vec<f64> = folds.iter().flat_map(|f| f.scores.iter().copied()).collect();
    let labels: Vec<u8> = folds.iter().flat_map(|f| f.labels.iter().copied()).collect();
    let mut cands = scores.clone();
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    let rated: Vec<(f64, f64, f64)> = cands
        .iter()
        .map(|&t| {
            let (r, s) = rates_at(&scores, &labels, t);
            (t, r, s)
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &(t, r, s) in &rated {
        if r >= band.min && r <= band.max && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((t, s));
        }
    }
    if let Some((t, _)) = best {
        return Some(t);
    }
    let mut above: Option<(f64, f64)> = None;
    for &(t, r, _) in &rated {
        if r >= band.min && above.is_none_or(|(_, br)| r < br) {
            above = Some((t, r));
        }
    }
    above.map(|(t, _)| t)
}

/// Synthetic cohort, 80/20 label-stratified split, standardized with TRAIN statistics.
pub fn synthetic_split(spec: &SyntheticSpec, split_seed: u64) -> (Batch, Batch) {
    let ds = synthetic_dataset(spec).expect("valid spec");
    let (tr, te) = stratified_split(&ds, 0.2, split_seed).expect("split");
    let stats = PreprocessStats::fit(&tr).expect("stats");
    (
        standardize(&tr, &stats).expect("train"),
        standardize(&te, &stats).expect("test"),
    )
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
