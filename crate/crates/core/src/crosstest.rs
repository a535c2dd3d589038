//! Demographic cross-testing: train on one subgroup, test on its complement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{filter_subgroup, standardize, Attribute, Dataset, PreprocessStats};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::models::{self, derive_seed, Hyperparams, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTestCase {
    pub attribute: Attribute,
    pub train_value: u8,
}

impl CrossTestCase {
    /// `a2b`: train on subgroup `a`, test on subgroup `b`.
    pub fn mnemonic(&self) -> String {
        format!(
            "{}2{}",
            self.attribute.letter(self.train_value),
            self.attribute.letter(1 - self.train_value)
        )
    }

    pub fn parse(s: &str) -> Option<Self> {
        all_cases().into_iter().find(|c| c.mnemonic() == s)
    }
}

/// The six cases: f2m, m2f, n2w, w2n, o2y, y2o.
pub fn all_cases() -> [CrossTestCase; 6] {
    let c = |attribute, train_value| CrossTestCase { attribute, train_value };
    [
        c(Attribute::Gender, 0),
        c(Attribute::Gender, 1),
        c(Attribute::Ethnicity, 0),
        c(Attribute::Ethnicity, 1),
        c(Attribute::Age, 1),
        c(Attribute::Age, 0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub label: String,
    pub base: MetricSet,
    pub adv: MetricSet,
}

impl PairedResult {
    /// `AUC(ADV) - AUC(Base)`; NaN if either AUC is undefined.
    pub fn auc_delta(&self) -> f64 {
        match (self.adv.auc, self.base.auc) {
            (Some(a), Some(b)) => a - b,
            _ => f64::NAN,
        }
    }
}

fn require_both_classes(ds: &Dataset, what: &str) -> Result<()> {
    let labels = ds.labels();
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::DegenerateSubset(format!(
            "{what} lacks one of the label classes"
        )));
    }
    Ok(())
}

/// Fits preprocessing on `train`, trains calibrated Base and ADV models on it and evaluates both
/// on `test`.
pub fn run_split(label: &str, train: &Dataset, test: &Dataset, hp: &Hyperparams, seed: u64) -> Result<PairedResult> {
    require_both_classes(train, &format!("{label} TRAIN subgroup"))?;
    require_both_classes(test, &format!("{label} TEST subgroup"))?;
    let stats = PreprocessStats::fit(train)?;
    let tr = standardize(train, &stats)?;
    let te = standardize(test, &stats)?;
    let base = models::train_calibrated(ModelKind::Base, &tr, hp, seed)?;
    let adv = models::train_calibrated(ModelKind::Adv, &tr, hp, seed)?;
    Ok(PairedResult {
        label: label.to_string(),
        base: models::evaluate(&base, &te)?,
        adv: models::evaluate(&adv, &te)?,
    })
}

/// One cross-test on the combined TRAIN+TEST rows.
pub fn run_crosstest(case: CrossTestCase, combined: &Dataset, hp: &Hyperparams, seed: u64) -> Result<PairedResult> {
    let train = filter_subgroup(combined, case.attribute, case.train_value)?;
    let test = filter_subgroup(combined, case.attribute, 1 - case.train_value)?;
    run_split(&case.mnemonic(), &train, &test, hp, seed)
}

/// All six cases, in parallel, in [`all_cases`] order.
pub fn run_all(combined: &Dataset, hp: &Hyperparams, seed: u64) -> Result<Vec<PairedResult>> {
    all_cases()
        .par_iter()
        .enumerate()
        .map(|(i, &case)| run_crosstest(case, combined, hp, derive_seed(seed, 0xC7 + i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    /// `(case label, AUC(ADV) - AUC(Base))`.
    pub deltas: Vec<(String, f64)>,
    pub max_abs: f64,
}

pub fn generalizability_gap(results: &[PairedResult]) -> GapSummary {
    let deltas: Vec<(String, f64)> = results.iter().map(|r| (r.label.clone(), r.auc_delta())).collect();
    let max_abs = deltas.iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
    GapSummary { deltas, max_abs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{metric_set, ConfusionCounts};

    #[test]
    fn six_mnemonics() {
        let names: Vec<String> = all_cases().iter().map(|c| c.mnemonic()).collect();
        assert_eq!(names, ["f2m", "m2f", "n2w", "w2n", "o2y", "y2o"]);
        let f2m = CrossTestCase::parse("f2m").unwrap();
        assert_eq!((f2m.attribute, f2m.train_value), (Attribute::Gender, 0));
    }

    #[test]
    fn identical_models_have_zero_gap() {
        let m = metric_set(
            &ConfusionCounts {
                tp: 3,
                fp: 1,
                fn_: 1,
                tn: 5,
            },
            Some(0.8),
            0.5,
        );
        let r: Vec<PairedResult> = all_cases()
            .iter()
            .map(|c| PairedResult {
                label: c.mnemonic(),
                base: m,
                adv: m,
            })
            .collect();
        let g = generalizability_gap(&r);
        assert_eq!(g.max_abs, 0.0);
        assert!(g.deltas.iter().all(|(_, d)| *d == 0.0));
    }
}
