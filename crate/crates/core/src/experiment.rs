//! Experiment driver behind the `leakguard` binary: configuration, data files, per-seed runs,
//! manifests and report tables.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! data/train.csv, data/test.csv, data/external_<name>.csv, data/summary.json
//! models/seed-<n>/<kind>.json, models/seed-<n>/<kind>.log.txt
//! manifests/<command>.json
//! reports/<table>.csv, reports/<table>.txt
//! ```

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attack::{run_attack_pipeline, SourceKind, TaskModels, ThresholdMode};
use crate::crosstest;
use crate::data::{
    self, generate_synthetic, prepare, standardize, stratified_split_indices, subsample_balance_indices, Attribute,
    Batch, Dataset, PreprocessStats, RawRecord, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::metrics::{column_median, median_of_runs, MetricSet};
use crate::models::{self, derive_seed, Hyperparams, ModelKind, TrainedModel};
use crate::report::{self, Table, MODEL_ORDER};

// ---------------------------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Training seeds; reports aggregate their column-wise median.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Models trained by `train` (attack and crosstest always need their fixed sets).
    pub model_kinds: Vec<ModelKind>,
    /// Worker threads; `None` leaves the choice to rayon.
    pub threads: Option<usize>,
    pub data: DataConfig,
    pub hyperparams: Hyperparams,
    pub attack: AttackConfig,
    pub external: ExternalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/default"),
            model_kinds: ModelKind::ALL.to_vec(),
            threads: None,
            data: DataConfig::default(),
            hyperparams: Hyperparams::default(),
            attack: AttackConfig::default(),
            external: ExternalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory with train.csv, test.csv and the holdouts. Defaults to `<out_dir>/data`.
    pub dir: Option<PathBuf>,
    /// A raw cohort CSV that `gen-data` splits instead of generating synthetic rows.
    pub source_csv: Option<PathBuf>,
    /// Subsample negatives to this prevalence before splitting `source_csv`.
    pub balance_prevalence: Option<f64>,
    pub synthetic: SyntheticSpec,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            source_csv: None,
            balance_prevalence: None,
            synthetic: SyntheticSpec::default(),
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub threshold: ThresholdMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::CrossValidated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalConfig {
    pub names: Vec<String>,
    /// Positive share of each synthetic holdout.
    pub prevalences: Vec<f64>,
    pub n_rows: usize,
    /// Existing holdout CSVs, one per name. Empty means the synthetic holdouts in the data dir.
    pub files: Vec<PathBuf>,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            names: ["UHB", "BH", "PUH"].map(String::from).to_vec(),
            prevalences: vec![0.0148, 0.1113, 0.052],
            n_rows: 5000,
            files: Vec::new(),
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub model_kind: Option<ModelKind>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Reads a TOML config, or the config snapshot inside a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<RunManifest>(&text)
                .map_err(|e| Error::Config(format!("{}: not a run manifest: {e}", path.display())))?
                .config
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.seeds.is_empty() {
            self.seeds = o.seeds.clone();
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(k) = o.model_kind {
            self.model_kinds = vec![k];
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.model_kinds.is_empty() {
            return fail("model_kinds is empty".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be positive".into());
        }
        self.hyperparams.validate()?;
        self.data
            .synthetic
            .validate()
            .map_err(|e| Error::Config(format!("data.synthetic: {e}")))?;
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return fail(format!("test_fraction {} outside (0, 1)", self.data.test_fraction));
        }
        if let Some(p) = self.data.balance_prevalence {
            if !(p > 0.0 && p < 1.0) {
                return fail(format!("balance_prevalence {p} outside (0, 1)"));
            }
        }
        if let ThresholdMode::Fixed(t) = self.attack.threshold {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("fixed attack threshold {t} outside [0, 1]"));
            }
        }
        let e = &self.external;
        if e.names.len() != e.prevalences.len() {
            return fail("external.names and external.prevalences differ in length".into());
        }
        if !e.files.is_empty() && e.files.len() != e.names.len() {
            return fail("external.files must name one file per holdout".into());
        }
        if !e.prevalences.iter().all(|&p| p > 0.0 && p < 1.0) {
            return fail("external prevalences must lie in (0, 1)".into());
        }
        if e.n_rows == 0 {
            return fail("external.n_rows must be positive".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            out: self.out_dir.clone(),
            data: self.data.dir.clone().unwrap_or_else(|| self.out_dir.join("data")),
        }
    }
}

/// Sets the global worker count. Only the first call in a process takes effect.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // A pool built earlier in the process keeps its size; that is not an error here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

// ---------------------------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub out: PathBuf,
    pub data: PathBuf,
}

impl Layout {
    pub fn train_csv(&self) -> PathBuf {
        self.data.join("train.csv")
    }

    pub fn test_csv(&self) -> PathBuf {
        self.data.join("test.csv")
    }

    pub fn external_csv(&self, name: &str) -> PathBuf {
        self.data.join(format!("external_{}.csv", name.to_lowercase()))
    }

    pub fn model(&self, seed: u64, kind: ModelKind) -> PathBuf {
        self.out
            .join("models")
            .join(format!("seed-{seed}"))
            .join(format!("{}.json", kind.tag()))
    }

    pub fn manifest(&self, command: Command) -> PathBuf {
        self.out.join("manifests").join(format!("{}.json", command.name()))
    }

    pub fn reports(&self) -> PathBuf {
        self.out.join("reports")
    }
}

fn require(path: &Path, name: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            name: name.into(),
            path: path.to_path_buf(),
        })
    }
}

fn load_dataset(path: &Path, name: &str) -> Result<Dataset> {
    require(path, name)?;
    let (ds, _) = prepare(&data::load_csv(path)?)?;
    if ds.is_empty() {
        return Err(Error::DegenerateSubset(format!("{name} has no usable rows")));
    }
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Integrity(e.to_string()))?;
    fsutil::atomic_write(path, text.as_bytes())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Attack,
    Crosstest,
    External,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Train, Command::Attack, Command::Crosstest, Command::External];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Attack => "attack",
            Command::Crosstest => "crosstest",
            Command::External => "external",
        }
    }
}

/// One metric row. `group` names the sub-table (split, attack source, cross-test case or
/// holdout) and `label` the row within it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub group: String,
    pub label: String,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub artifacts: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    /// Set when this seed failed; the rows hold whatever finished first.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub runs: Vec<SeedRun>,
    /// Column-wise median over the seeds that completed.
    pub median: Vec<ResultRow>,
    /// `(attribute, TRAIN majority share, TEST majority share)`; attack runs only.
    pub baselines: Vec<(Attribute, f64, f64)>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        require(path, "run manifest")?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::bad_file(path, e.to_string()))
    }

    pub fn rows(&self, group: &str) -> impl Iterator<Item = &ResultRow> {
        let group = group.to_string();
        self.median.iter().filter(move |r| r.group == group)
    }

    pub fn median_row(&self, group: &str, label: &str) -> Option<&MetricSet> {
        self.rows(group).find(|r| r.label == label).map(|r| &r.metrics)
    }

    /// Every numeric result, without timestamps; equal fingerprints mean identical output.
    pub fn numbers(&self) -> Fingerprint {
        (self.runs.clone(), self.median.clone(), self.baselines.clone())
    }
}

/// Median per `(group, label)` over completed seeds, in first-seen order.
/// Per-seed rows, medians and baselines of a manifest.
pub type Fingerprint = (Vec<SeedRun>, Vec<ResultRow>, Vec<(Attribute, f64, f64)>);

fn aggregate(runs: &[SeedRun]) -> Result<Vec<ResultRow>> {
    let done: Vec<&SeedRun> = runs.iter().filter(|r| r.error.is_none()).collect();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &done {
        for row in &r.rows {
            let k = (row.group.clone(), row.label.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .map(|(group, label)| {
            let ms: Vec<MetricSet> = done
                .iter()
                .filter_map(|r| r.rows.iter().find(|x| x.group == group && x.label == label))
                .map(|x| x.metrics)
                .collect();
            let metrics = if ms.len() >= 3 {
                median_of_runs(&ms)?
            } else {
                column_median(&ms)?
            };
            Ok(ResultRow { group, label, metrics })
        })
        .collect()
}

/// Runs `body` per seed, writes the manifest (also when a seed fails) and returns the first
/// failure after every seed had its chance.
fn run_seeds<F>(
    cfg: &ExperimentConfig,
    command: Command,
    baselines: Vec<(Attribute, f64, f64)>,
    mut body: F,
) -> Result<RunManifest>
where
    F: FnMut(u64, &mut SeedRun) -> Result<()>,
{
    let started_unix = now_unix();
    let mut runs = Vec::new();
    let mut first_err = None;
    for &seed in &cfg.seeds {
        let mut run = SeedRun {
            seed,
            artifacts: Vec::new(),
            rows: Vec::new(),
            error: None,
        };
        if let Err(e) = body(seed, &mut run) {
            run.error = Some(e.to_string());
            first_err.get_or_insert(e);
        }
        runs.push(run);
    }
    let manifest = RunManifest {
        command,
        config: cfg.clone(),
        started_unix,
        finished_unix: now_unix(),
        median: aggregate(&runs)?,
        runs,
        baselines,
    };
    let layout = cfg.layout();
    write_json(&layout.manifest(command), &manifest)?;
    write_tables(&manifest, &layout.reports())?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

// ---------------------------------------------------------------------------------------------
// gen-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub name: String,
    pub path: PathBuf,
    pub rows: usize,
    pub prevalence: f64,
    /// Share of rows with attribute = 1 (old, male, white).
    pub attribute_share: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub data: DataConfig,
    pub external: ExternalConfig,
    pub excluded_rows: usize,
    pub files: Vec<FileSummary>,
}

fn summarize(name: &str, path: &Path, raw: &[RawRecord]) -> Result<FileSummary> {
    let (ds, _) = prepare(raw)?;
    let n = ds.len().max(1) as f64;
    Ok(FileSummary {
        name: name.into(),
        path: path.to_path_buf(),
        rows: ds.len(),
        prevalence: ds.prevalence(),
        attribute_share: Attribute::ALL.map(|a| ds.attribute(a).iter().map(|&v| f64::from(v)).sum::<f64>() / n),
    })
}

/// Holdout spec `i`: the main generator at a different prevalence, size and seed.
pub fn holdout_spec(cfg: &ExperimentConfig, i: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_rows: cfg.external.n_rows,
        prevalence: cfg.external.prevalences[i],
        seed: derive_seed(cfg.data.synthetic.seed, 0xE7 + i as u64),
        ..cfg.data.synthetic.clone()
    }
}

/// Writes the TRAIN/TEST split (label-stratified) and, for synthetic data, the external holdouts.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<DataSummary> {
    cfg.validate()?;
    let layout = cfg.layout();
    let (raw, excluded_rows) = match &cfg.data.source_csv {
        Some(path) => {
            let raw = data::load_csv(path)?;
            let (_, excluded) = prepare(&raw)?;
            let skip: std::collections::HashSet<usize> = excluded.iter().map(|e| e.row).collect();
            let kept: Vec<RawRecord> = raw
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !skip.contains(i))
                .map(|(_, r)| r)
                .collect();
            (kept, excluded.len())
        }
        None => (generate_synthetic(&cfg.data.synthetic)?, 0),
    };
    let mut raw = raw;
    if let Some(p) = cfg.data.balance_prevalence {
        let labels: Vec<u8> = raw.iter().map(|r| r.pcr_result).collect();
        let keep = subsample_balance_indices(&labels, p, cfg.data.split_seed)?;
        raw = keep.iter().map(|&i| raw[i].clone()).collect();
    }
    let labels: Vec<u8> = raw.iter().map(|r| r.pcr_result).collect();
    let (tr, te) = stratified_split_indices(&labels, cfg.data.test_fraction, cfg.data.split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| raw[i].clone()).collect::<Vec<_>>();

    let mut files = Vec::new();
    for (name, path, rows) in [
        ("TRAIN", layout.train_csv(), pick(&tr)),
        ("TEST", layout.test_csv(), pick(&te)),
    ] {
        data::write_csv(&path, &rows)?;
        files.push(summarize(name, &path, &rows)?);
    }
    if cfg.data.source_csv.is_none() && cfg.external.files.is_empty() {
        for (i, name) in cfg.external.names.iter().enumerate() {
            let rows = generate_synthetic(&holdout_spec(cfg, i))?;
            let path = layout.external_csv(name);
            data::write_csv(&path, &rows)?;
            files.push(summarize(name, &path, &rows)?);
        }
    }
    let summary = DataSummary {
        data: cfg.data.clone(),
        external: cfg.external.clone(),
        excluded_rows,
        files,
    };
    write_json(&layout.data.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------------------------
// train

/// TRAIN and TEST standardized with statistics fitted on TRAIN.
pub fn load_split(cfg: &ExperimentConfig) -> Result<(PreprocessStats, Batch, Batch)> {
    let layout = cfg.layout();
    let train = load_dataset(&layout.train_csv(), "TRAIN data (run gen-data first)")?;
    let test = load_dataset(&layout.test_csv(), "TEST data (run gen-data first)")?;
    let stats = PreprocessStats::fit(&train)?;
    Ok((stats.clone(), standardize(&train, &stats)?, standardize(&test, &stats)?))
}

pub const TEST_GROUP: &str = "TEST";

/// Per seed and kind: k-fold calibration, full-TRAIN fit, TEST metrics. Saves every model.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let layout = cfg.layout();
    let (stats, train, test) = load_split(cfg)?;
    let kinds: Vec<ModelKind> = MODEL_ORDER
        .into_iter()
        .filter(|k| cfg.model_kinds.contains(k))
        .collect();
    run_seeds(cfg, Command::Train, Vec::new(), |seed, run| {
        for &kind in &kinds {
            let mut model = models::train_calibrated(kind, &train, &cfg.hyperparams, seed)?;
            model.meta.stats = Some(stats.clone());
            let path = layout.model(seed, kind);
            model.save(&path)?;
            fsutil::atomic_write(&path.with_extension("log.txt"), model.meta.log.to_text().as_bytes())?;
            run.artifacts.push(path);
            run.rows.push(ResultRow {
                group: TEST_GROUP.into(),
                label: kind.display().into(),
                metrics: models::evaluate(&model, &test)?,
            });
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------------------------
// attack

fn require_models(cfg: &ExperimentConfig, kinds: &[ModelKind]) -> Result<()> {
    let layout = cfg.layout();
    for &seed in &cfg.seeds {
        for &k in kinds {
            require(
                &layout.model(seed, k),
                &format!("{} model for seed {seed} (run train)", k.display()),
            )?;
        }
    }
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, seed: u64, kind: ModelKind) -> Result<TrainedModel> {
    let path = cfg.layout().model(seed, kind);
    let m = TrainedModel::load(&path)?;
    if m.kind != kind {
        return Err(Error::bad_file(
            &path,
            format!("holds a {} model, expected {}", m.kind.tag(), kind.tag()),
        ));
    }
    Ok(m)
}

fn model_stats(model: &TrainedModel) -> Result<&PreprocessStats> {
    model.meta.stats.as_ref().ok_or_else(|| {
        Error::protocol(format!(
            "{} model carries no preprocessing statistics",
            model.kind.tag()
        ))
    })
}

/// Group names of the four attack tables, in report order.
pub const ATTACK_GROUPS: [SourceKind; 4] = [
    SourceKind::RawFeatures,
    SourceKind::BaseEncoder,
    SourceKind::AdvEncoder,
    SourceKind::AdvPerEncoder,
];

/// Attack stages on raw features, the Base encoder, then (blind) the ADV and ADV_per encoders.
pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    require_models(cfg, &ModelKind::ALL)?;
    let layout = cfg.layout();
    let train_ds = load_dataset(&layout.train_csv(), "TRAIN data (run gen-data first)")?;
    let test_ds = load_dataset(&layout.test_csv(), "TEST data (run gen-data first)")?;
    let baselines = Attribute::ALL
        .iter()
        .map(|&a| {
            Ok((
                a,
                crate::attack::majority_baseline(&train_ds, a)?,
                crate::attack::majority_baseline(&test_ds, a)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    run_seeds(cfg, Command::Attack, baselines, |seed, run| {
        let base = load_model(cfg, seed, ModelKind::Base)?;
        let adv = load_model(cfg, seed, ModelKind::Adv)?;
        let adv_per = load_model(cfg, seed, ModelKind::AdvPer)?;
        let stats = model_stats(&base)?;
        for m in [&adv, &adv_per] {
            if model_stats(m)? != stats {
                return Err(Error::protocol(format!(
                    "{} model was preprocessed differently from the Base model",
                    m.kind.tag()
                )));
            }
        }
        let train = standardize(&train_ds, stats)?;
        let test = standardize(&test_ds, stats)?;
        let task = TaskModels {
            base: &base,
            adv: &adv,
            adv_per: &adv_per,
        };
        let suite = run_attack_pipeline(&train, &test, task, &cfg.hyperparams, seed, cfg.attack.threshold)?;
        for source in ATTACK_GROUPS {
            for a in Attribute::ALL {
                if let Some(r) = suite.report(source, a) {
                    run.rows.push(ResultRow {
                        group: source.tag().into(),
                        label: a.name().into(),
                        metrics: r.metrics,
                    });
                }
            }
        }
        run.artifacts = ModelKind::ALL.iter().map(|&k| layout.model(seed, k)).collect();
        Ok(())
    })
}

// ---------------------------------------------------------------------------------------------
// crosstest

/// All six subgroup cross-tests on TRAIN+TEST combined. Needs the Base and ADV artifacts of
/// every seed to exist first, so a half-trained run cannot be cross-tested by accident.
pub fn cmd_crosstest(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    require_models(cfg, &[ModelKind::Base, ModelKind::Adv])?;
    let layout = cfg.layout();
    let train = load_dataset(&layout.train_csv(), "TRAIN data (run gen-data first)")?;
    let test = load_dataset(&layout.test_csv(), "TEST data (run gen-data first)")?;
    let combined = train.concat(&test);
    run_seeds(cfg, Command::Crosstest, Vec::new(), |seed, run| {
        for res in crosstest::run_all(&combined, &cfg.hyperparams, seed)? {
            for (kind, m) in [(ModelKind::Base, res.base), (ModelKind::Adv, res.adv)] {
                run.rows.push(ResultRow {
                    group: res.label.clone(),
                    label: kind.display().into(),
                    metrics: m,
                });
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------------------------
// external

fn holdout_path(cfg: &ExperimentConfig, i: usize) -> PathBuf {
    match cfg.external.files.get(i) {
        Some(p) => p.clone(),
        None => cfg.layout().external_csv(&cfg.external.names[i]),
    }
}

/// Scores saved models on each holdout at the thresholds they were trained with. Nothing is
/// recalibrated; a threshold differing from the training manifest is an integrity error.
pub fn cmd_external(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let kinds: Vec<ModelKind> = MODEL_ORDER
        .into_iter()
        .filter(|k| cfg.model_kinds.contains(k))
        .collect();
    require_models(cfg, &kinds)?;
    let layout = cfg.layout();
    let holdouts = (0..cfg.external.names.len())
        .map(|i| {
            let name = &cfg.external.names[i];
            load_dataset(&holdout_path(cfg, i), &format!("{name} holdout (run gen-data first)"))
        })
        .collect::<Result<Vec<_>>>()?;
    let trained = RunManifest::load(&layout.manifest(Command::Train)).ok();
    run_seeds(cfg, Command::External, Vec::new(), |seed, run| {
        for &kind in &kinds {
            let model = load_model(cfg, seed, kind)?;
            let threshold = model
                .threshold()
                .ok_or_else(|| Error::protocol(format!("{} model for seed {seed} is uncalibrated", kind.tag())))?;
            if let Some(t) = trained.as_ref().and_then(|m| train_threshold(m, seed, kind)) {
                if t.to_bits() != threshold.to_bits() {
                    return Err(Error::Integrity(format!(
                        "{} seed {seed}: model threshold {threshold} differs from training manifest {t}",
                        kind.tag()
                    )));
                }
            }
            let stats = model_stats(&model)?;
            for (name, ds) in cfg.external.names.iter().zip(&holdouts) {
                let metrics = models::evaluate(&model, &standardize(ds, stats)?)?;
                run.rows.push(ResultRow {
                    group: name.clone(),
                    label: kind.display().into(),
                    metrics,
                });
            }
            run.artifacts.push(layout.model(seed, kind));
        }
        Ok(())
    })
}

/// The threshold a training manifest recorded for `(seed, kind)`.
pub fn train_threshold(manifest: &RunManifest, seed: u64, kind: ModelKind) -> Option<f64> {
    manifest
        .runs
        .iter()
        .find(|r| r.seed == seed)?
        .rows
        .iter()
        .find(|r| r.group == TEST_GROUP && r.label == kind.display())
        .map(|r| r.metrics.threshold)
}

// ---------------------------------------------------------------------------------------------
// report

fn model_rows<'a>(rows: impl Iterator<Item = &'a ResultRow>) -> Vec<(ModelKind, MetricSet)> {
    let rows: Vec<&ResultRow> = rows.collect();
    MODEL_ORDER
        .into_iter()
        .filter_map(|k| rows.iter().find(|r| r.label == k.display()).map(|r| (k, r.metrics)))
        .collect()
}

fn seeds_note(m: &RunManifest) -> String {
    let done = m.runs.iter().filter(|r| r.error.is_none()).count();
    format!("median of {done} seed{}", if done == 1 { "" } else { "s" })
}

/// The report tables a manifest renders to, as `(file stem, table)`.
pub fn tables(m: &RunManifest) -> Vec<(String, Table)> {
    let note = seeds_note(m);
    match m.command {
        Command::Train => vec![(
            "main_results".into(),
            report::main_results_table(&format!("Main task on TEST ({note})"), &model_rows(m.rows(TEST_GROUP))),
        )],
        Command::Attack => {
            let mut out = vec![(
                "attribute_baselines".to_string(),
                report::baseline_table("Majority-class share of each protected attribute", &m.baselines),
            )];
            for source in ATTACK_GROUPS {
                let reports: Vec<crate::attack::AttackReport> = m
                    .rows(source.tag())
                    .filter_map(|r| {
                        let a = Attribute::ALL.into_iter().find(|a| a.name() == r.label)?;
                        Some(crate::attack::AttackReport {
                            attribute: a,
                            source,
                            metrics: r.metrics,
                            majority_baseline: m.baselines.iter().find(|b| b.0 == a).map_or(f64::NAN, |b| b.2),
                        })
                    })
                    .collect();
                let title = match source {
                    SourceKind::RawFeatures => format!("Attack on raw features ({note})"),
                    SourceKind::BaseEncoder => format!("Attack on the Base encoder ({note})"),
                    SourceKind::AdvEncoder => {
                        format!("Base-encoder attacker on the ADV encoder ({note})")
                    }
                    SourceKind::AdvPerEncoder => {
                        format!("Base-encoder attacker on the ADV_per encoder ({note})")
                    }
                };
                out.push((
                    format!("attack_{}", source.tag()),
                    report::attack_table(&title, &reports),
                ));
            }
            out
        }
        Command::Crosstest => {
            let results: Vec<crosstest::PairedResult> = crosstest::all_cases()
                .iter()
                .filter_map(|c| {
                    let label = c.mnemonic();
                    Some(crosstest::PairedResult {
                        base: *m.median_row(&label, ModelKind::Base.display())?,
                        adv: *m.median_row(&label, ModelKind::Adv.display())?,
                        label,
                    })
                })
                .collect();
            vec![(
                "crosstest".into(),
                report::crosstest_table(&format!("Demographic cross-tests ({note})"), &results),
            )]
        }
        Command::External => m
            .config
            .external
            .names
            .iter()
            .map(|name| {
                (
                    format!("external_{}", name.to_lowercase()),
                    report::external_table(
                        &format!("External holdout {name}, training thresholds ({note})"),
                        &model_rows(m.rows(name)),
                    ),
                )
            })
            .collect(),
    }
}

fn write_tables(m: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (stem, t) in tables(m) {
        t.write(dir, &stem)?;
        written.push(dir.join(format!("{stem}.csv")));
    }
    Ok(written)
}

/// Re-renders every table from the manifests present under `out_dir`. Trains nothing.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let layout = cfg.layout();
    let mut written = Vec::new();
    for c in Command::ALL {
        let path = layout.manifest(c);
        if path.is_file() {
            written.extend(write_tables(&RunManifest::load(&path)?, &layout.reports())?);
        }
    }
    if written.is_empty() {
        return Err(Error::MissingArtifact {
            name: "run manifests (run train, attack, crosstest or external)".into(),
            path: layout.out.join("manifests"),
        });
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_config_has_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.hyperparams.learning_rate, 0.0008);
        assert_eq!(cfg.hyperparams.batch_size, 16);
        assert_eq!(cfg.seeds, [1, 2, 3]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(toml::from_str::<ExperimentConfig>("nonsense = 1").is_err());
        let cfg: ExperimentConfig = toml::from_str("[hyperparams]\nlearning_rate = -1.0").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg: ExperimentConfig = toml::from_str("seeds = [1, 1]").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_attack_threshold_parses() {
        let cfg: ExperimentConfig = toml::from_str("[attack]\nthreshold = { fixed = 0.5 }").unwrap();
        assert_eq!(cfg.attack.threshold, ThresholdMode::Fixed(0.5));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            seeds: vec![7],
            out_dir: Some("x".into()),
            model_kind: Some(ModelKind::Adv),
            threads: Some(2),
        });
        assert_eq!(cfg.seeds, [7]);
        assert_eq!(cfg.out_dir, PathBuf::from("x"));
        assert_eq!(cfg.model_kinds, [ModelKind::Adv]);
        assert_eq!(cfg.threads, Some(2));
    }

    #[test]
    fn aggregate_skips_failed_seeds() {
        use crate::metrics::{metric_set, ConfusionCounts};
        let m = |tp| {
            metric_set(
                &ConfusionCounts {
                    tp,
                    fp: 1,
                    fn_: 1,
                    tn: 5,
                },
                Some(0.8),
                0.5,
            )
        };
        let run = |seed, tp, error: Option<&str>| SeedRun {
            seed,
            artifacts: vec![],
            rows: vec![ResultRow {
                group: "g".into(),
                label: "l".into(),
                metrics: m(tp),
            }],
            error: error.map(String::from),
        };
        let rows = aggregate(&[
            run(1, 1, None),
            run(2, 3, None),
            run(3, 9, Some("boom")),
            run(4, 5, None),
        ])
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].metrics.recall, m(3).recall);
    }

    #[test]
    fn missing_data_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            out_dir: dir.path().into(),
            ..Default::default()
        };
        let e = cmd_train(&cfg).unwrap_err();
        assert!(matches!(e, Error::MissingArtifact { .. }));
        assert_eq!(e.exit_code(), 3);
        assert!(matches!(cmd_attack(&cfg), Err(Error::MissingArtifact { .. })));
        assert!(matches!(cmd_report(&cfg), Err(Error::MissingArtifact { .. })));
    }
}
