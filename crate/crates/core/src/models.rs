//! The three trainable systems: Base, ADV (gradient-reversal discriminators) and ADV_per (FGSM
//! regularization), plus cross-validated threshold calibration and model files.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{fgsm_training_step, grl_backward, grl_forward, FgsmConfig, GrlConfig};
use crate::data::{Attribute, Batch, PreprocessStats};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::metrics::{
    calibrate_threshold, evaluate_scores, stratified_kfold, Calibration, FoldScores, MetricSet, RecallBand,
};
use crate::nn::rng::{self, SeededRng, Stream};
use crate::nn::{bce_loss, io, Adam, LayerStack, Matrix, MlpOptions, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Base,
    Adv,
    AdvPer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Base, ModelKind::Adv, ModelKind::AdvPer];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::Adv => "adv",
            ModelKind::AdvPer => "adv_per",
        }
    }

    /// Row label used in reports.
    pub fn display(self) -> &'static str {
        match self {
            ModelKind::Base => "Base",
            ModelKind::Adv => "ADV",
            ModelKind::AdvPer => "ADV_per",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub dropout: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub epochs_adv_per: usize,
    pub fgsm: FgsmConfig,
    /// Share of TRAIN rows used for per-epoch accuracy logging. Training still sees every row.
    pub log_fraction: f64,
    pub cv_folds: usize,
    pub recall_band: RecallBand,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.0008,
            batch_size: 16,
            hidden: vec![150; 3],
            disc_hidden: vec![300; 2],
            dropout: 0.5,
            lambda: 2.0,
            epochs: 15,
            epochs_adv_per: 30,
            fgsm: FgsmConfig::default(),
            log_fraction: 0.1,
            cv_folds: 10,
            recall_band: RecallBand::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return fail("hidden widths must be positive and non-empty".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        GrlConfig::new(self.lambda).map_err(|e| Error::Config(e.to_string()))?;
        self.fgsm.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.log_fraction > 0.0 && self.log_fraction <= 1.0) {
            return fail(format!("log_fraction {} outside (0, 1]", self.log_fraction));
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be at least 2".into());
        }
        let b = self.recall_band;
        if !(0.0 < b.min && b.min <= b.max && b.max <= 1.0) {
            return fail(format!(
                "recall band [{}, {}] is not a sub-interval of (0, 1]",
                b.min, b.max
            ));
        }
        Ok(())
    }

    pub fn epochs_for(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::AdvPer => self.epochs_adv_per,
            _ => self.epochs,
        }
    }

    fn mlp_options(&self) -> MlpOptions {
        MlpOptions {
            dropout: self.dropout,
            ..MlpOptions::default()
        }
    }
}

/// Mixes a seed with a tag (splitmix64 finalizer) so derived runs get unrelated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub main_acc: f64,
    /// Discriminator accuracies in [`Attribute::ALL`] order; empty unless the model is ADV.
    pub disc_acc: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Plain-text table: epoch, loss, main accuracy and one column per discriminator.
    pub fn to_text(&self) -> String {
        let with_disc = self.epochs.iter().any(|e| !e.disc_acc.is_empty());
        let mut out = format!("{:>5} {:>9} {:>9}", "epoch", "loss", "main_acc");
        if with_disc {
            for a in Attribute::ALL {
                let _ = write!(out, " {:>14}", format!("disc_{}", a.name().to_lowercase()));
            }
        }
        out.push('\n');
        for e in &self.epochs {
            let _ = write!(out, "{:>5} {:>9.4} {:>9.4}", e.epoch, e.loss, e.main_acc);
            for d in &e.disc_acc {
                let _ = write!(out, " {d:>14.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Deployable model: the main stack only, whatever the training scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub stack: LayerStack,
    pub meta: ModelMeta,
}

/// Everything about a model other than its tensors; stored in the model file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Lambda used by the gradient reversal layers (ADV only).
    pub lambda: Option<f64>,
    pub fgsm: Option<FgsmConfig>,
    pub threshold: Option<f64>,
    pub calibration: Option<Calibration>,
    pub stats: Option<PreprocessStats>,
    pub log: TrainingLog,
    /// Free-form provenance, e.g. which attribute and representation an attacker was fit on.
    #[serde(default)]
    pub tags: std::collections::BTreeMap<String, String>,
}

impl TrainedModel {
    pub fn threshold(&self) -> Option<f64> {
        self.meta.threshold
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    pub fn encoder_dim(&self) -> usize {
        self.stack.encoder_dim()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.meta).map_err(|e| Error::Integrity(format!("model metadata: {e}")))?;
        let bytes = io::encode_stack(&self.stack, meta)?;
        fsutil::atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                name: "model".into(),
                path: path.to_path_buf(),
            },
            _ => Error::io(path, e),
        })?;
        let (stack, header) = io::decode_stack(&bytes).map_err(|d| Error::bad_file(path, d))?;
        let meta: ModelMeta = serde_json::from_value(header.metadata)
            .map_err(|e| Error::bad_file(path, format!("model metadata: {e}")))?;
        Ok(Self {
            kind: meta.kind,
            stack,
            meta,
        })
    }
}

/// Predicted probabilities and the hard labels they imply at the model's threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Eval-mode encoder output (the representation attackers see).
pub fn encode(model: &TrainedModel, features: &Matrix) -> Result<Matrix> {
    let acts = model.stack.eval_span(features, 0..model.stack.encoder_len())?;
    Ok(acts.output().clone())
}

/// Eval-mode probabilities; no threshold needed.
pub fn probabilities(model: &TrainedModel, features: &Matrix) -> Result<Vec<f64>> {
    model.stack.predict(features)
}

/// Probabilities plus hard labels, `prob >= threshold` counting as positive.
pub fn predict(model: &TrainedModel, features: &Matrix) -> Result<Prediction> {
    let threshold = model
        .meta
        .threshold
        .ok_or_else(|| Error::protocol("model has no calibrated threshold"))?;
    let probs = probabilities(model, features)?;
    let labels = apply_threshold(&probs, threshold);
    Ok(Prediction { probs, labels })
}

pub fn apply_threshold(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Full metric set of `model` on `batch` at the stored threshold.
pub fn evaluate(model: &TrainedModel, batch: &Batch) -> Result<MetricSet> {
    let threshold = model
        .meta
        .threshold
        .ok_or_else(|| Error::protocol("model has no calibrated threshold"))?;
    let probs = probabilities(model, &batch.features)?;
    evaluate_scores(&probs, &batch.labels_u8(), threshold)
}

// ---------------------------------------------------------------------------------------------
// Training

struct Discriminator {
    stack: LayerStack,
    opt: Adam,
    attribute: Attribute,
    rng: SeededRng,
}

/// Epoch-by-epoch trainer for any of the three model kinds.
pub struct Trainer {
    kind: ModelKind,
    hp: Hyperparams,
    seed: u64,
    stack: LayerStack,
    opt: Adam,
    dropout_rng: SeededRng,
    shuffle_rng: SeededRng,
    discs: Vec<Discriminator>,
    log: TrainingLog,
}

/// Losses of one ADV step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvStep {
    pub main_loss: f64,
    pub disc_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(kind: ModelKind, input_dim: usize, hp: &Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let stack = LayerStack::mlp(input_dim, &hp.hidden, hp.mlp_options(), seed)?;
        let opt = Adam::new(&stack);
        let mut discs = Vec::new();
        if kind == ModelKind::Adv {
            let opts = MlpOptions {
                batchnorm: false,
                dropout: 0.0,
                ..MlpOptions::default()
            };
            for (i, attribute) in Attribute::ALL.into_iter().enumerate() {
                let dseed = derive_seed(seed, 0xD15C + i as u64);
                let d = LayerStack::mlp(stack.encoder_dim(), &hp.disc_hidden, opts, dseed)?;
                discs.push(Discriminator {
                    opt: Adam::new(&d),
                    stack: d,
                    attribute,
                    rng: rng::stream(dseed, Stream::Discriminator(i as u8)),
                });
            }
        }
        if kind == ModelKind::AdvPer {
            hp.fgsm.intercept(&stack)?;
        }
        Ok(Self {
            kind,
            hp: hp.clone(),
            seed,
            stack,
            opt,
            dropout_rng: rng::stream(seed, Stream::Dropout),
            shuffle_rng: rng::stream(seed, Stream::Shuffle),
            discs,
            log: TrainingLog::default(),
        })
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn discriminators(&self) -> impl Iterator<Item = &LayerStack> {
        self.discs.iter().map(|d| &d.stack)
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    /// One plain step on the main task.
    pub fn base_step(&mut self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let acts = self.stack.forward(x, Mode::Train, &mut self.dropout_rng)?;
        let loss = bce_loss(&acts.probs(), y)?;
        check_loss(loss.loss, "main task")?;
        self.stack.backward(&acts, &loss.grad_column())?;
        self.opt.step(&mut self.stack, self.hp.learning_rate)?;
        Ok(loss.loss)
    }

    /// One joint step: main loss plus every discriminator's loss routed back through a gradient
    /// reversal layer at the encoder boundary. `protected` is `batch × 3`.
    pub fn adv_step(&mut self, x: &Matrix, y: &[f64], protected: &Matrix) -> Result<AdvStep> {
        let lambda = self.hp.lambda;
        let n_layers = self.stack.len();
        let enc = self.stack.encoder_len();
        let acts = self.stack.forward(x, Mode::Train, &mut self.dropout_rng)?;
        let loss = bce_loss(&acts.probs(), y)?;
        check_loss(loss.loss, "main task")?;
        let mut g_h = self
            .stack
            .backward_span(&acts, enc..n_layers, &loss.grad_column(), true)?;
        let h = grl_forward(acts.output_of(enc - 1));
        let mut disc_losses = Vec::with_capacity(self.discs.len());
        for d in &mut self.discs {
            let z: Vec<f64> = (0..protected.rows())
                .map(|r| protected.get(r, d.attribute.index()))
                .collect();
            let dacts = d.stack.forward(&h, Mode::Train, &mut d.rng)?;
            let dl = bce_loss(&dacts.probs(), &z)?;
            check_loss(dl.loss, "discriminator")?;
            let g_in = d.stack.backward(&dacts, &dl.grad_column())?;
            g_h.add_assign(&grl_backward(&g_in, lambda));
            disc_losses.push(dl.loss);
        }
        self.stack.backward_span(&acts, 0..enc, &g_h, true)?;
        self.opt.step(&mut self.stack, self.hp.learning_rate)?;
        for d in &mut self.discs {
            d.opt.step(&mut d.stack, self.hp.learning_rate)?;
        }
        Ok(AdvStep {
            main_loss: loss.loss,
            disc_losses,
        })
    }

    /// One epoch over `train` in a fresh shuffled order. A trailing batch of one row is skipped
    /// because batch normalization needs at least two.
    pub fn train_epoch(&mut self, train: &Batch) -> Result<EpochRecord> {
        if train.feature_dim() != self.stack.input_dim() {
            return Err(Error::rejected(format!(
                "training data has {} features, model expects {}",
                train.feature_dim(),
                self.stack.input_dim()
            )));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(self.hp.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x = train.features.select_rows(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = match self.kind {
                ModelKind::Base => self.base_step(&x, &y)?,
                ModelKind::Adv => {
                    let z = train.protected.select_rows(chunk);
                    self.adv_step(&x, &y, &z)?.main_loss
                }
                ModelKind::AdvPer => {
                    let fgsm = self.hp.fgsm;
                    let lr = self.hp.learning_rate;
                    let s =
                        fgsm_training_step(&mut self.stack, &mut self.opt, &x, &y, &fgsm, lr, &mut self.dropout_rng)?;
                    check_loss(s.adversarial_loss, "perturbed main task")?;
                    s.combined(fgsm.alpha)
                }
            };
            total += loss;
            steps += 1;
        }
        let record = self.epoch_record(train, if steps == 0 { 0.0 } else { total / steps as f64 })?;
        self.log.epochs.push(record.clone());
        Ok(record)
    }

    fn epoch_record(&self, train: &Batch, loss: f64) -> Result<EpochRecord> {
        let idx = log_slice(train.len(), self.hp.log_fraction, self.seed);
        let slice = train.select(&idx);
        let probs = self.stack.predict(&slice.features)?;
        let main_acc = accuracy(&probs, &slice.labels);
        let mut disc_acc = Vec::new();
        if !self.discs.is_empty() {
            let h = self
                .stack
                .eval_span(&slice.features, 0..self.stack.encoder_len())?
                .output()
                .clone();
            for d in &self.discs {
                let p = d.stack.predict(&h)?;
                disc_acc.push(accuracy(&p, &slice.attribute(d.attribute)));
            }
        }
        Ok(EpochRecord {
            epoch: self.log.epochs.len() + 1,
            loss,
            main_acc,
            disc_acc,
        })
    }

    /// Drops the discriminators and returns the deployable model (uncalibrated).
    pub fn finish(self) -> TrainedModel {
        let meta = ModelMeta {
            kind: self.kind,
            seed: self.seed,
            lambda: (self.kind == ModelKind::Adv).then_some(self.hp.lambda),
            fgsm: (self.kind == ModelKind::AdvPer).then_some(self.hp.fgsm),
            hyperparams: self.hp,
            threshold: None,
            calibration: None,
            stats: None,
            log: self.log,
            tags: Default::default(),
        };
        TrainedModel {
            kind: self.kind,
            stack: self.stack,
            meta,
        }
    }
}

fn check_loss(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalFault {
            location: format!("{what} loss"),
            detail: format!("loss is {loss}"),
        })
    }
}

fn accuracy(probs: &[f64], labels: &[f64]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| f64::from(u8::from(p >= 0.5)) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Fixed logging slice: the same rows every epoch, drawn once from the seed.
fn log_slice(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let take = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Custom(0x10C)));
    idx.truncate(take);
    idx.sort_unstable();
    idx
}

/// Trains `kind` for its configured number of epochs (15, or 30 for ADV_per).
pub fn train_kind(kind: ModelKind, train: &Batch, hp: &Hyperparams, seed: u64) -> Result<TrainedModel> {
    let mut t = Trainer::new(kind, train.feature_dim(), hp, seed)?;
    for _ in 0..hp.epochs_for(kind) {
        t.train_epoch(train)?;
    }
    Ok(t.finish())
}

pub fn train_base(train: &Batch, hp: &Hyperparams, seed: u64) -> Result<TrainedModel> {
    train_kind(ModelKind::Base, train, hp, seed)
}

pub fn train_adv(train: &Batch, hp: &Hyperparams, lambda: f64, seed: u64) -> Result<TrainedModel> {
    let hp = Hyperparams { lambda, ..hp.clone() };
    train_kind(ModelKind::Adv, train, &hp, seed)
}

pub fn train_adv_per(train: &Batch, hp: &Hyperparams, fgsm: FgsmConfig, seed: u64) -> Result<TrainedModel> {
    let hp = Hyperparams { fgsm, ..hp.clone() };
    train_kind(ModelKind::AdvPer, train, &hp, seed)
}

/// Stratified k-fold: each fold model is trained on the other folds and scores its own rows;
/// the pooled out-of-fold scores pick the threshold.
pub fn cross_validate(kind: ModelKind, train: &Batch, hp: &Hyperparams, seed: u64) -> Result<Calibration> {
    hp.validate()?;
    let labels = train.labels_u8();
    let plan = stratified_kfold(&labels, hp.cv_folds, seed)?;
    let folds: Vec<FoldScores> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (fit_idx, val_idx) = plan.split(f);
            let model = train_kind(kind, &train.select(&fit_idx), hp, derive_seed(seed, 0xF01D + f as u64))?;
            let val = train.select(&val_idx);
            Ok(FoldScores {
                scores: probabilities(&model, &val.features)?,
                labels: val.labels_u8(),
            })
        })
        .collect::<Result<_>>()?;
    calibrate_threshold(&folds, hp.recall_band)
}

/// Cross-validated threshold, then a fit on all of `train`.
pub fn train_calibrated(kind: ModelKind, train: &Batch, hp: &Hyperparams, seed: u64) -> Result<TrainedModel> {
    let calibration = cross_validate(kind, train, hp, seed)?;
    let mut model = train_kind(kind, train, hp, seed)?;
    model.meta.threshold = Some(calibration.threshold);
    model.meta.calibration = Some(calibration);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> Batch {
        use rand::Rng;
        let mut r = rng::stream(seed, Stream::Custom(1));
        let mut f = Vec::new();
        let mut y = Vec::new();
        let mut p = Vec::new();
        for i in 0..n {
            let label = (i % 2) as f64;
            let a: f64 = r.random_range(-1.0..1.0);
            let b: f64 = r.random_range(0.2..1.5) * if label == 1.0 { 1.0 } else { -1.0 };
            f.extend([a, b]);
            y.push(label);
            p.extend([
                (i % 3 == 0) as u8 as f64,
                (i % 5 == 0) as u8 as f64,
                (i % 7 == 0) as u8 as f64,
            ]);
        }
        Batch::new(Matrix::from_vec(n, 2, f), y, Matrix::from_vec(n, 3, p)).unwrap()
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            hidden: vec![16, 16, 16],
            disc_hidden: vec![12, 12],
            epochs: 3,
            epochs_adv_per: 3,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let hp = Hyperparams {
            epochs: 0,
            ..small_hp()
        };
        let m = train_base(&separable(40, 1), &hp, 9).unwrap();
        let init = LayerStack::mlp(2, &hp.hidden, hp.mlp_options(), 9).unwrap();
        assert_eq!(m.stack, init);
    }

    #[test]
    fn zero_lambda_matches_base() {
        let data = separable(64, 2);
        let hp = small_hp();
        let base = train_base(&data, &hp, 5).unwrap();
        let adv = train_adv(&data, &hp, 0.0, 5).unwrap();
        assert_eq!(base.stack, adv.stack);
    }

    #[test]
    fn fgsm_alpha_one_matches_base() {
        let data = separable(64, 3);
        let hp = small_hp();
        let base = train_base(&data, &hp, 6).unwrap();
        let fgsm = FgsmConfig {
            epsilon: 0.3,
            alpha: 1.0,
            intercept_layer: None,
        };
        let per = train_adv_per(&data, &hp, fgsm, 6).unwrap();
        assert_eq!(base.stack, per.stack);
    }

    #[test]
    fn parameter_counts_match() {
        let data = separable(40, 4);
        let hp = Hyperparams {
            epochs: 1,
            epochs_adv_per: 1,
            ..Hyperparams::default()
        };
        let counts: Vec<usize> = ModelKind::ALL
            .iter()
            .map(|&k| train_kind(k, &data, &hp, 1).unwrap().param_count())
            .collect();
        assert_eq!(counts[0], counts[1]);
        assert_eq!(counts[0], counts[2]);
    }

    #[test]
    fn discriminators_never_touch_the_output_layer() {
        let data = separable(32, 5);
        let hp = small_hp();
        let x = data.features.select_rows(&(0..16).collect::<Vec<_>>());
        let y = &data.labels[..16];
        let z = data.protected.select_rows(&(0..16).collect::<Vec<_>>());
        let mut a = Trainer::new(
            ModelKind::Adv,
            2,
            &Hyperparams {
                lambda: 2.0,
                ..hp.clone()
            },
            3,
        )
        .unwrap();
        let mut b = Trainer::new(ModelKind::Adv, 2, &Hyperparams { lambda: 0.0, ..hp }, 3).unwrap();
        a.adv_step(&x, y, &z).unwrap();
        b.adv_step(&x, y, &z).unwrap();
        let head = a.stack().encoder_len();
        assert_eq!(a.stack().layers()[head], b.stack().layers()[head]);
        assert_ne!(a.stack().layers()[0], b.stack().layers()[0]);
    }

    #[test]
    fn log_has_discriminator_columns_for_adv_only() {
        let data = separable(40, 6);
        let hp = small_hp();
        let adv = train_adv(&data, &hp, 2.0, 1).unwrap();
        assert_eq!(adv.meta.log.epochs.len(), 3);
        assert!(adv.meta.log.epochs.iter().all(|e| e.disc_acc.len() == 3));
        assert!(adv.meta.log.to_text().contains("disc_ethnicity"));
        let base = train_base(&data, &hp, 1).unwrap();
        assert!(base.meta.log.epochs.iter().all(|e| e.disc_acc.is_empty()));
    }

    #[test]
    fn predict_requires_threshold_and_uses_ge() {
        let data = separable(40, 7);
        let mut m = train_base(&data, &small_hp(), 1).unwrap();
        assert!(matches!(predict(&m, &data.features), Err(Error::ProtocolViolation(_))));
        m.meta.threshold = Some(0.0);
        assert!(predict(&m, &data.features).unwrap().labels.iter().all(|&l| l == 1));
        assert_eq!(apply_threshold(&[0.10, 0.20, 0.1551], 0.1551), vec![0, 1, 1]);
    }

    #[test]
    fn encode_then_head_equals_full_forward() {
        let data = separable(40, 8);
        let m = train_base(&data, &small_hp(), 2).unwrap();
        let h = encode(&m, &data.features).unwrap();
        assert_eq!(h.cols(), 16);
        let tail = m
            .stack
            .eval_span(&h, m.stack.encoder_len()..m.stack.len())
            .unwrap()
            .probs();
        let full = probabilities(&m, &data.features).unwrap();
        for (a, b) in tail.iter().zip(&full) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = separable(40, 9);
        let mut m = train_adv(&data, &small_hp(), 2.0, 3).unwrap();
        m.meta.threshold = Some(0.4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lkgm");
        m.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.meta.lambda, Some(2.0));
        assert_eq!(
            probabilities(&back, &data.features).unwrap(),
            probabilities(&m, &data.features).unwrap()
        );
        assert!(matches!(
            TrainedModel::load(&dir.path().join("nope")),
            Err(Error::MissingArtifact { .. })
        ));
    }

    #[test]
    fn calibrated_training_sets_threshold() {
        let data = separable(200, 10);
        let hp = Hyperparams {
            cv_folds: 5,
            ..small_hp()
        };
        let m = train_calibrated(ModelKind::Base, &data, &hp, 1).unwrap();
        let t = m.threshold().unwrap();
        assert!((0.0..=1.0).contains(&t));
        assert!(m.meta.calibration.unwrap().recall >= 0.73);
    }
}
