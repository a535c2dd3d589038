//! Property-inference attacks: Base-architecture attackers predict each protected attribute from
//! raw features or from an encoder's representation, and are scored against the majority-class
//! baseline.

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, Batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{roc_auc, MetricSet};
use crate::models::{self, derive_seed, Hyperparams, ModelKind, TrainedModel};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    RawFeatures,
    BaseEncoder,
    AdvEncoder,
    AdvPerEncoder,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::RawFeatures,
        SourceKind::BaseEncoder,
        SourceKind::AdvEncoder,
        SourceKind::AdvPerEncoder,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SourceKind::RawFeatures => "raw_features",
            SourceKind::BaseEncoder => "base_encoder",
            SourceKind::AdvEncoder => "adv_encoder",
            SourceKind::AdvPerEncoder => "adv_per_encoder",
        }
    }

    /// Model kind whose encoder this source reads, if any.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            SourceKind::RawFeatures => None,
            SourceKind::BaseEncoder => Some(ModelKind::Base),
            SourceKind::AdvEncoder => Some(ModelKind::Adv),
            SourceKind::AdvPerEncoder => Some(ModelKind::AdvPer),
        }
    }

    /// Source an attacker must have been trained on before it may be evaluated here. Defended
    /// encoders are attacked blind, with the Base-encoder attacker and its threshold.
    pub fn required_training_source(self) -> SourceKind {
        match self {
            SourceKind::RawFeatures => SourceKind::RawFeatures,
            _ => SourceKind::BaseEncoder,
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Where representations come from, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationSource {
    pub kind: SourceKind,
    pub model_file: Option<PathBuf>,
}

/// A live representation source.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Raw,
    Encoder(&'a TrainedModel),
}

impl Source<'_> {
    pub fn kind(&self) -> SourceKind {
        match self {
            Source::Raw => SourceKind::RawFeatures,
            Source::Encoder(m) => match m.kind {
                ModelKind::Base => SourceKind::BaseEncoder,
                ModelKind::Adv => SourceKind::AdvEncoder,
                ModelKind::AdvPer => SourceKind::AdvPerEncoder,
            },
        }
    }

    /// Representation of every row of `features`.
    pub fn represent(&self, features: &Matrix) -> Result<Matrix> {
        match self {
            Source::Raw => Ok(features.clone()),
            Source::Encoder(m) => models::encode(m, features),
        }
    }
}

/// A calibrated attacker for one attribute, tagged with the source it was trained on.
#[derive(Debug, Clone)]
pub struct Attacker {
    pub attribute: Attribute,
    pub trained_on: SourceKind,
    pub model: TrainedModel,
}

impl Attacker {
    pub fn threshold(&self) -> f64 {
        self.model.threshold().unwrap_or(f64::NAN)
    }

    pub fn input_dim(&self) -> usize {
        self.model.stack.input_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attribute: Attribute,
    pub source: SourceKind,
    pub metrics: MetricSet,
    /// Share of the most frequent attribute value in the evaluation rows.
    pub majority_baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Private,
    Leaking,
}

/// Most frequent class share of a binary vector.
pub fn majority_fraction(values: &[u8]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::rejected("majority baseline of an empty set"));
    }
    if values.iter().any(|&v| v > 1) {
        return Err(Error::rejected("attribute values must be 0 or 1"));
    }
    let ones = values.iter().filter(|&&v| v == 1).count() as f64;
    let n = values.len() as f64;
    Ok(ones.max(n - ones) / n)
}

pub fn majority_baseline(dataset: &Dataset, attribute: Attribute) -> Result<f64> {
    majority_fraction(&dataset.attribute(attribute))
}

/// Private iff the attacker's accuracy does not exceed the majority baseline.
pub fn leakage_verdict(report: &AttackReport) -> Verdict {
    match report.metrics.accuracy {
        Some(acc) if acc > report.majority_baseline => Verdict::Leaking,
        _ => Verdict::Private,
    }
}

/// How attacker decision thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// k-fold recall-band calibration, as for the main task.
    CrossValidated,
    /// A fixed threshold with no cross-validation. Enough when only AUC matters.
    Fixed(f64),
}

/// Trains a Base-architecture attacker on `source` representations of `train` with `attribute`
/// as the label, thresholded by the same k-fold recall-band calibration as the main task.
pub fn train_attacker(
    train: &Batch,
    attribute: Attribute,
    source: Source<'_>,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Attacker> {
    train_attacker_with(train, attribute, source, hp, seed, ThresholdMode::CrossValidated)
}

pub fn train_attacker_with(
    train: &Batch,
    attribute: Attribute,
    source: Source<'_>,
    hp: &Hyperparams,
    seed: u64,
    mode: ThresholdMode,
) -> Result<Attacker> {
    if matches!(source.kind(), SourceKind::AdvEncoder | SourceKind::AdvPerEncoder) {
        return Err(Error::protocol(format!(
            "attackers stay blind to the defense and cannot be trained on {}",
            source.kind()
        )));
    }
    let z = train.attribute(attribute);
    if z.iter().all(|&v| v == z[0]) {
        return Err(Error::DegenerateLabel(format!(
            "{} is constant in the attacker training rows",
            attribute.name()
        )));
    }
    let reps = source.represent(&train.features)?;
    let data = Batch::new(reps, z, train.protected.clone())?;
    let mut model = match mode {
        ThresholdMode::CrossValidated => models::train_calibrated(ModelKind::Base, &data, hp, seed)?,
        ThresholdMode::Fixed(t) => {
            let mut m = models::train_kind(ModelKind::Base, &data, hp, seed)?;
            m.meta.threshold = Some(t);
            m
        }
    };
    model.meta.tags.insert("role".into(), "attacker".into());
    model
        .meta
        .tags
        .insert("attribute".into(), attribute.name().to_lowercase());
    model.meta.tags.insert("source".into(), source.kind().tag().into());
    Ok(Attacker {
        attribute,
        trained_on: source.kind(),
        model,
    })
}

/// Scores `attacker` on `source` representations of `test` at the attacker's own threshold.
/// Fails if the attacker was not trained on the source this one requires.
pub fn eval_attack(attacker: &Attacker, test: &Batch, source: Source<'_>) -> Result<AttackReport> {
    let kind = source.kind();
    let required = kind.required_training_source();
    if attacker.trained_on != required {
        return Err(Error::protocol(format!(
            "attacks on {kind} must use an attacker trained on {required}, got one trained on {}",
            attacker.trained_on
        )));
    }
    let reps = source.represent(&test.features)?;
    if reps.cols() != attacker.input_dim() {
        return Err(Error::rejected(format!(
            "{kind} yields {} dimensions, attacker expects {}",
            reps.cols(),
            attacker.input_dim()
        )));
    }
    let threshold = attacker
        .model
        .threshold()
        .ok_or_else(|| Error::protocol("attacker has no calibrated threshold"))?;
    let probs = models::probabilities(&attacker.model, &reps)?;
    let z: Vec<u8> = test.attribute(attacker.attribute).iter().map(|&v| v as u8).collect();
    let metrics = crate::metrics::evaluate_scores(&probs, &z, threshold)?;
    Ok(AttackReport {
        attribute: attacker.attribute,
        source: kind,
        metrics,
        majority_baseline: majority_fraction(&z)?,
    })
}

/// AUC of an attacker on a source, with no threshold involved.
pub fn attack_auc(attacker: &Attacker, test: &Batch, source: Source<'_>) -> Result<f64> {
    let reps = source.represent(&test.features)?;
    let probs = models::probabilities(&attacker.model, &reps)?;
    let z: Vec<u8> = test.attribute(attacker.attribute).iter().map(|&v| v as u8).collect();
    Ok(roc_auc(&probs, &z)?.auc)
}

/// Reports of the three-stage pipeline for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSuite {
    pub reports: Vec<AttackReport>,
    /// `(attribute, TRAIN majority share, TEST majority share)`.
    pub baselines: Vec<(Attribute, f64, f64)>,
    /// Attacker thresholds by `(source trained on, attribute)`.
    pub thresholds: Vec<(SourceKind, Attribute, f64)>,
}

impl AttackSuite {
    pub fn report(&self, source: SourceKind, attribute: Attribute) -> Option<&AttackReport> {
        self.reports
            .iter()
            .find(|r| r.source == source && r.attribute == attribute)
    }
}

/// The trained task models an attack pipeline needs.
#[derive(Debug, Clone, Copy)]
pub struct TaskModels<'a> {
    pub base: &'a TrainedModel,
    pub adv: &'a TrainedModel,
    pub adv_per: &'a TrainedModel,
}

impl TaskModels<'_> {
    fn check(&self) -> Result<()> {
        for (m, k) in [
            (self.base, ModelKind::Base),
            (self.adv, ModelKind::Adv),
            (self.adv_per, ModelKind::AdvPer),
        ] {
            if m.kind != k {
                return Err(Error::rejected(format!(
                    "expected a {} model, got {}",
                    k.tag(),
                    m.kind.tag()
                )));
            }
        }
        Ok(())
    }
}

/// Attack on raw features, then on the Base encoder, then (blind, reusing the Base-encoder
/// attackers) on the ADV and ADV_per encoders. Attackers for different attributes train in
/// parallel.
pub fn run_attack_pipeline(
    train: &Batch,
    test: &Batch,
    task: TaskModels<'_>,
    hp: &Hyperparams,
    seed: u64,
    mode: ThresholdMode,
) -> Result<AttackSuite> {
    task.check()?;
    let per_attribute: Vec<(Attacker, Attacker)> = Attribute::ALL
        .par_iter()
        .map(|&a| {
            let s = derive_seed(seed, 0xA77A + a.index() as u64);
            let raw = train_attacker_with(train, a, Source::Raw, hp, s, mode)?;
            let enc = train_attacker_with(train, a, Source::Encoder(task.base), hp, s, mode)?;
            Ok((raw, enc))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    let mut thresholds = Vec::new();
    for (raw, _) in &per_attribute {
        reports.push(eval_attack(raw, test, Source::Raw)?);
        thresholds.push((SourceKind::RawFeatures, raw.attribute, raw.threshold()));
    }
    for model in [task.base, task.adv, task.adv_per] {
        for (_, enc) in &per_attribute {
            reports.push(eval_attack(enc, test, Source::Encoder(model))?);
        }
    }
    for (_, enc) in &per_attribute {
        thresholds.push((SourceKind::BaseEncoder, enc.attribute, enc.threshold()));
    }
    let baselines = Attribute::ALL
        .iter()
        .map(|&a| {
            let f = |b: &Batch| majority_fraction(&b.attribute(a).iter().map(|&v| v as u8).collect::<Vec<_>>());
            Ok((a, f(train)?, f(test)?))
        })
        .collect::<Result<_>>()?;
    Ok(AttackSuite {
        reports,
        baselines,
        thresholds,
    })
}
