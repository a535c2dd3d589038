//! Patient table schema, CSV ingestion, preprocessing and the synthetic cohort generator.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::rng::{self, Stream};
use crate::nn::Matrix;

/// Number of clinical features: 23 blood tests followed by 7 vital signs.
pub const N_FEATURES: usize = 30;
pub const N_BLOOD: usize = 23;

/// Mean age of the reference cohort; `age >= AGE_CUTOFF` is coded as old.
pub const AGE_CUTOFF: f64 = 64.0;
pub const MIN_AGE: f64 = 18.0;

/// Feature name with a plausible adult reference mean and spread, used to put synthetic values
/// on a clinical scale.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInfo {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
}

const fn feat(name: &'static str, mean: f64, sd: f64) -> FeatureInfo {
    FeatureInfo { name, mean, sd }
}

pub const FEATURES: [FeatureInfo; N_FEATURES] = [
    feat("haemoglobin", 130.0, 20.0),
    feat("haematocrit", 0.39, 0.06),
    feat("mean_cell_volume", 90.0, 6.0),
    feat("white_cell_count", 9.0, 3.5),
    feat("neutrophil_count", 6.5, 3.0),
    feat("lymphocyte_count", 1.5, 0.7),
    feat("monocyte_count", 0.7, 0.3),
    feat("eosinophil_count", 0.15, 0.12),
    feat("basophil_count", 0.05, 0.03),
    feat("platelets", 260.0, 90.0),
    feat("prothrombin_time", 12.0, 2.0),
    feat("inr", 1.1, 0.3),
    feat("aptt", 30.0, 5.0),
    feat("sodium", 137.0, 4.0),
    feat("potassium", 4.3, 0.5),
    feat("creatinine", 90.0, 35.0),
    feat("urea", 7.0, 4.0),
    feat("egfr", 70.0, 20.0),
    feat("crp", 40.0, 45.0),
    feat("albumin", 36.0, 5.0),
    feat("alkaline_phosphatase", 95.0, 40.0),
    feat("alt", 28.0, 20.0),
    feat("bilirubin", 11.0, 7.0),
    feat("heart_rate", 90.0, 18.0),
    feat("respiratory_rate", 19.0, 4.0),
    feat("oxygen_saturation", 96.0, 3.0),
    feat("systolic_bp", 135.0, 22.0),
    feat("diastolic_bp", 76.0, 13.0),
    feat("temperature", 37.0, 0.7),
    feat("oxygen_flow_rate", 1.0, 2.0),
];

pub const COL_AGE: &str = "age_years";
pub const COL_GENDER: &str = "gender";
pub const COL_ETHNICITY: &str = "ethnicity_code";
pub const COL_LABEL: &str = "pcr_result";

/// Canonical CSV header.
pub fn csv_header() -> Vec<&'static str> {
    FEATURES
        .iter()
        .map(|f| f.name)
        .chain([COL_AGE, COL_GENDER, COL_ETHNICITY, COL_LABEL])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Gender,
    Ethnicity,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Age, Attribute::Gender, Attribute::Ethnicity];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Age => "Age",
            Attribute::Gender => "Gender",
            Attribute::Ethnicity => "Ethnicity",
        }
    }

    /// Subgroup letter for coded value 1 and 0: old/young, male/female, white/non-white.
    pub fn letters(self) -> (char, char) {
        match self {
            Attribute::Age => ('o', 'y'),
            Attribute::Gender => ('m', 'f'),
            Attribute::Ethnicity => ('w', 'n'),
        }
    }

    pub fn letter(self, value: u8) -> char {
        let (one, zero) = self.letters();
        if value == 1 {
            one
        } else {
            zero
        }
    }
}

/// One CSV row before binarization. Missing feature cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub features: [Option<f64>; N_FEATURES],
    pub age_years: f64,
    pub gender: String,
    pub ethnicity_code: String,
    pub pcr_result: u8,
}

/// One preprocessed-ready row: 30 clinical features, 3 binary protected attributes, PCR label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub features: [Option<f64>; N_FEATURES],
    /// Age, gender, ethnicity, each 0 or 1.
    pub protected: [u8; 3],
    pub label: u8,
}

impl PatientRecord {
    pub fn blood(&self) -> &[Option<f64>] {
        &self.features[..N_BLOOD]
    }

    pub fn vitals(&self) -> &[Option<f64>] {
        &self.features[N_BLOOD..]
    }

    pub fn attribute(&self, a: Attribute) -> u8 {
        self.protected[a.index()]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn attribute(&self, a: Attribute) -> Vec<u8> {
        self.records.iter().map(|r| r.attribute(a)).collect()
    }

    pub fn prevalence(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.label == 1).count() as f64 / self.len() as f64
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset::new(idx.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(records)
    }
}

/// A fully numeric view ready for training: standardized features, labels and protected
/// attributes as `0.0 / 1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<f64>,
    /// `n × 3`, columns in [`Attribute::ALL`] order.
    pub protected: Matrix,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<f64>, protected: Matrix) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::rejected("batch must contain at least one row"));
        }
        if labels.len() != n || protected.rows() != n {
            return Err(Error::rejected(format!(
                "batch has {n} feature rows, {} labels, {} protected rows",
                labels.len(),
                protected.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::rejected("batch features contain missing or non-finite values"));
        }
        let binary = |v: &f64| *v == 0.0 || *v == 1.0;
        if !labels.iter().all(binary) || !protected.as_slice().iter().all(binary) {
            return Err(Error::rejected("labels and protected attributes must be 0 or 1"));
        }
        Ok(Self {
            features,
            labels,
            protected,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            protected: self.protected.select_rows(idx),
        }
    }

    pub fn labels_u8(&self) -> Vec<u8> {
        self.labels.iter().map(|&v| v as u8).collect()
    }

    pub fn attribute(&self, a: Attribute) -> Vec<f64> {
        (0..self.len()).map(|r| self.protected.get(r, a.index())).collect()
    }

    /// Same rows with `features` replaced (e.g. by encoder representations).
    pub fn with_features(&self, features: Matrix) -> Result<Batch> {
        Batch::new(features, self.labels.clone(), self.protected.clone())
    }

    /// Same rows with the label column replaced by a protected attribute.
    pub fn relabel(&self, a: Attribute) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.attribute(a),
            protected: self.protected.clone(),
        }
    }
}

// ---------------------------------------------------------------------------------------------
// Binarization

/// Codes age, ethnicity and gender as 0/1. Returns `Ok(None)` for patients under 18, who are
/// excluded from the cohort.
///
/// Ethnicity uses NHS ethnic category letters: A, B and C (the White groups) map to 1; every
/// other code, including "not stated", maps to 0. Gender accepts M/F, male/female or 1/0.
pub fn binarize_protected(age_years: f64, ethnicity_code: &str, gender: &str) -> Result<Option<[u8; 3]>> {
    if !age_years.is_finite() {
        return Err(Error::rejected(format!("age {age_years} is not a number")));
    }
    if age_years < MIN_AGE {
        return Ok(None);
    }
    let age = u8::from(age_years >= AGE_CUTOFF);
    let code = ethnicity_code.trim().to_ascii_uppercase();
    let ethnicity = u8::from(matches!(code.as_str(), "A" | "B" | "C") || code.starts_with("WHITE"));
    let gender = match gender.trim().to_ascii_lowercase().as_str() {
        "m" | "male" | "1" => 1,
        "f" | "female" | "0" => 0,
        other => return Err(Error::rejected(format!("unrecognized gender value {other:?}"))),
    };
    Ok(Some([age, gender, ethnicity]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    /// Zero-based data row.
    pub row: usize,
    pub reason: String,
}

/// Binarizes demographics; under-18 rows are dropped and reported.
pub fn prepare(raw: &[RawRecord]) -> Result<(Dataset, Vec<Exclusion>)> {
    let mut records = Vec::with_capacity(raw.len());
    let mut excluded = Vec::new();
    for (row, r) in raw.iter().enumerate() {
        if r.pcr_result > 1 {
            return Err(Error::rejected(format!(
                "row {row}: pcr_result {} is not 0/1",
                r.pcr_result
            )));
        }
        match binarize_protected(r.age_years, &r.ethnicity_code, &r.gender)
            .map_err(|e| Error::rejected(format!("row {row}: {e}")))?
        {
            Some(protected) => records.push(PatientRecord {
                features: r.features,
                protected,
                label: r.pcr_result,
            }),
            None => excluded.push(Exclusion {
                row,
                reason: format!("age {} below {MIN_AGE}", r.age_years),
            }),
        }
    }
    Ok((Dataset::new(records), excluded))
}

// ---------------------------------------------------------------------------------------------
// CSV

fn parse_cell(path: &Path, row: usize, col: &str, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| {
        Error::bad_file(
            path,
            format!("row {row}, column {col}: cannot parse {cell:?} as a number"),
        )
    })
}

/// Reads a patient CSV. Columns may appear in any order; every canonical column is required.
pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::bad_file(path, format!("header: {e}")))?
        .clone();
    let known = csv_header();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        let Some(&name) = known.iter().find(|&&k| k == h) else {
            return Err(Error::bad_file(path, format!("unknown column {h:?}")));
        };
        if position.insert(name, i).is_some() {
            return Err(Error::bad_file(path, format!("duplicate column {h:?}")));
        }
    }
    if let Some(missing) = known.iter().find(|k| !position.contains_key(*k)) {
        return Err(Error::bad_file(path, format!("missing column {missing:?}")));
    }

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::bad_file(path, format!("row {row}: {e}")))?;
        let cell = |name: &str| rec.get(position[name]).unwrap_or("");
        let mut features = [None; N_FEATURES];
        for (slot, info) in features.iter_mut().zip(&FEATURES) {
            *slot = parse_cell(path, row, info.name, cell(info.name))?;
        }
        let age_years = parse_cell(path, row, COL_AGE, cell(COL_AGE))?
            .ok_or_else(|| Error::bad_file(path, format!("row {row}, column {COL_AGE}: missing")))?;
        let label = parse_cell(path, row, COL_LABEL, cell(COL_LABEL))?
            .ok_or_else(|| Error::bad_file(path, format!("row {row}, column {COL_LABEL}: missing")))?;
        if label != 0.0 && label != 1.0 {
            return Err(Error::bad_file(
                path,
                format!("row {row}, column {COL_LABEL}: {label} is not 0 or 1"),
            ));
        }
        out.push(RawRecord {
            features,
            age_years,
            gender: cell(COL_GENDER).trim().to_string(),
            ethnicity_code: cell(COL_ETHNICITY).trim().to_string(),
            pcr_result: label as u8,
        });
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), path)
}

pub fn write_csv_to<W: Write>(writer: W, records: &[RawRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    for r in records {
        let mut row: Vec<String> = r
            .features
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        row.push(r.age_years.to_string());
        row.push(r.gender.clone());
        row.push(r.ethnicity_code.clone());
        row.push(r.pcr_result.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

/// Writes atomically (temp file, then rename).
pub fn write_csv(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, records).map_err(|e| Error::io(path, e))?;
    fsutil::atomic_write(path, &buf)
}

// ---------------------------------------------------------------------------------------------
// Preprocessing

/// Statistics fitted on TRAIN and reused unchanged for every other split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// TRAIN median of each feature, used to fill missing cells.
    pub impute: Vec<f64>,
    pub age_cutoff: f64,
}

pub const STD_FLOOR: f64 = 1e-8;

impl PreprocessStats {
    /// Means and population standard deviations over observed values; medians for imputation.
    /// A feature with no observed value gets mean 0, std 1, median 0.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::rejected("cannot fit preprocessing on an empty dataset"));
        }
        let mut mean = Vec::with_capacity(N_FEATURES);
        let mut std = Vec::with_capacity(N_FEATURES);
        let mut impute = Vec::with_capacity(N_FEATURES);
        for j in 0..N_FEATURES {
            let vals: Vec<f64> = train.records.iter().filter_map(|r| r.features[j]).collect();
            if vals.is_empty() {
                mean.push(0.0);
                std.push(1.0);
                impute.push(0.0);
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
            impute.push(crate::metrics::median_of(&vals));
        }
        Ok(Self {
            mean,
            std,
            impute,
            age_cutoff: AGE_CUTOFF,
        })
    }

    pub fn transform_value(&self, j: usize, v: Option<f64>) -> f64 {
        let x = v.unwrap_or(self.impute[j]);
        (x - self.mean[j]) / self.std[j].max(STD_FLOOR)
    }
}

/// Imputes and scales every row with TRAIN statistics.
pub fn standardize(dataset: &Dataset, stats: &PreprocessStats) -> Result<Batch> {
    let n = dataset.len();
    let mut features = Matrix::zeros(n, N_FEATURES);
    let mut protected = Matrix::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    for (i, r) in dataset.records.iter().enumerate() {
        for j in 0..N_FEATURES {
            features.set(i, j, stats.transform_value(j, r.features[j]));
        }
        for a in 0..3 {
            protected.set(i, a, f64::from(r.protected[a]));
        }
        labels.push(f64::from(r.label));
    }
    Batch::new(features, labels, protected)
}

/// Keeps every positive and samples negatives without replacement until positives make up
/// `target_prevalence`. Row order is preserved.
pub fn subsample_balance(dataset: &Dataset, target_prevalence: f64, seed: u64) -> Result<Dataset> {
    Ok(dataset.subset(&subsample_balance_indices(&dataset.labels(), target_prevalence, seed)?))
}

/// Sorted row indices kept by [`subsample_balance`].
pub fn subsample_balance_indices(labels: &[u8], target_prevalence: f64, seed: u64) -> Result<Vec<usize>> {
    if !(target_prevalence > 0.0 && target_prevalence < 1.0) {
        return Err(Error::rejected(format!(
            "target prevalence {target_prevalence} outside (0, 1)"
        )));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() {
        return Err(Error::rejected("no positive rows to balance against"));
    }
    let want = (pos.len() as f64 * (1.0 - target_prevalence) / target_prevalence).round() as usize;
    if want > neg.len() {
        return Err(Error::rejected(format!(
            "prevalence {target_prevalence} needs {want} negatives, only {} available",
            neg.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Custom(0x5AB));
    neg.shuffle(&mut rng);
    neg.truncate(want);
    let mut keep: Vec<usize> = pos.into_iter().chain(neg).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// Rows whose attribute equals `value`.
pub fn filter_subgroup(dataset: &Dataset, attribute: Attribute, value: u8) -> Result<Dataset> {
    if value > 1 {
        return Err(Error::rejected(format!("attribute value {value} is not binary")));
    }
    let out: Vec<PatientRecord> = dataset
        .records
        .iter()
        .filter(|r| r.attribute(attribute) == value)
        .cloned()
        .collect();
    if out.is_empty() {
        return Err(Error::DegenerateSubset(format!(
            "no rows with {} = {value}",
            attribute.name()
        )));
    }
    Ok(Dataset::new(out))
}

/// Label-stratified split; `test_fraction` of each class goes to the second half.
pub fn stratified_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split_indices(&dataset.labels(), test_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Sorted `(train, test)` row indices of [`stratified_split`].
pub fn stratified_split_indices(labels: &[u8], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::rejected(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [1u8, 0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

// ---------------------------------------------------------------------------------------------
// Synthetic cohorts

/// Feature indices (and shift direction) moved by the PCR label.
pub const LABEL_FEATURES: &[(usize, f64)] = &[
    (3, -1.0),  // white cell count
    (5, -1.0),  // lymphocytes
    (7, -1.0),  // eosinophils
    (18, 1.0),  // CRP
    (19, -1.0), // albumin
    (24, 1.0),  // respiratory rate
    (25, -1.0), // oxygen saturation
    (28, 1.0),  // temperature
];

/// Feature indices (and direction) moved by each protected attribute, in [`Attribute::ALL`]
/// order. The sets are disjoint from each other and from [`LABEL_FEATURES`].
pub const ATTRIBUTE_FEATURES: [&[(usize, f64)]; 3] = [
    &[(2, 1.0), (15, 1.0), (16, 1.0), (17, -1.0), (20, 1.0), (26, 1.0)],
    &[(0, 1.0), (1, 1.0), (9, -1.0), (21, 1.0), (22, 1.0)],
    &[(4, 1.0), (6, 1.0), (13, -1.0), (27, 1.0)],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    /// Exact fraction of positive rows (rounded to a whole row count).
    pub prevalence: f64,
    /// P(attribute = 1) for age (old), gender (male), ethnicity (white).
    pub attr_priors: [f64; 3],
    /// Mean shift, in standard deviations, applied to each attribute's feature set.
    pub leakage_strength: [f64; 3],
    /// Mean shift, in standard deviations, applied to the label feature set for positives.
    pub label_signal: f64,
    /// Probability that any single feature cell is left empty.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_rows: 10_000,
            prevalence: 0.5,
            attr_priors: [0.53, 0.54, 0.68],
            leakage_strength: [0.9, 0.9, 0.9],
            label_signal: 0.6,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.n_rows == 0 {
            return Err(Error::rejected("n_rows must be positive"));
        }
        if !unit(self.prevalence) || !self.attr_priors.iter().all(|&p| unit(p)) {
            return Err(Error::rejected("prevalence and priors must lie in (0, 1)"));
        }
        if !self.leakage_strength.iter().all(|&s| s >= 0.0 && s.is_finite()) {
            return Err(Error::rejected("leakage strengths must be finite and non-negative"));
        }
        if !(self.label_signal >= 0.0 && self.label_signal.is_finite()) {
            return Err(Error::rejected("label_signal must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::rejected("missing_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

const WHITE_CODES: [&str; 3] = ["A", "B", "C"];
const OTHER_CODES: [&str; 12] = ["D", "E", "F", "G", "H", "J", "K", "L", "M", "N", "P", "Z"];

/// Draws a raw cohort: labels at the exact prevalence, attributes independent of the label,
/// then standard-normal feature noise plus label and attribute mean shifts, mapped onto each
/// feature's clinical scale.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<RawRecord>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Data);
    let n_pos = (spec.n_rows as f64 * spec.prevalence).round() as usize;
    let mut labels: Vec<u8> = (0..spec.n_rows).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let mut out = Vec::with_capacity(spec.n_rows);
    for &label in &labels {
        let attrs: [u8; 3] = std::array::from_fn(|a| u8::from(rng.random::<f64>() < spec.attr_priors[a]));
        let mut z: [f64; N_FEATURES] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        if label == 1 {
            for &(j, dir) in LABEL_FEATURES {
                z[j] += dir * spec.label_signal;
            }
        }
        for (a, set) in ATTRIBUTE_FEATURES.iter().enumerate() {
            if attrs[a] == 1 {
                for &(j, dir) in *set {
                    z[j] += dir * spec.leakage_strength[a];
                }
            }
        }
        let features: [Option<f64>; N_FEATURES] = std::array::from_fn(|j| {
            let missing = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
            (!missing).then(|| FEATURES[j].mean + FEATURES[j].sd * z[j])
        });
        let age_years = if attrs[0] == 1 {
            rng.random_range(AGE_CUTOFF..96.0)
        } else {
            rng.random_range(MIN_AGE..AGE_CUTOFF)
        };
        let gender = if attrs[1] == 1 { "M" } else { "F" };
        let ethnicity = if attrs[2] == 1 {
            WHITE_CODES[rng.random_range(0..WHITE_CODES.len())]
        } else {
            OTHER_CODES[rng.random_range(0..OTHER_CODES.len())]
        };
        out.push(RawRecord {
            features,
            age_years: age_years.floor(),
            gender: gender.to_string(),
            ethnicity_code: ethnicity.to_string(),
            pcr_result: label,
        });
    }
    Ok(out)
}

/// [`generate_synthetic`] followed by [`prepare`]. Generated ages are never under 18.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    Ok(prepare(&generate_synthetic(spec)?)?.0)
}
