//! Patient cohorts: CSV ingestion, a synthetic cohort generator calibrated to
//! population-study demographics, z-normalization, stratified splitting and
//! class-balancing subsampling.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Column order of the cohort CSV format.
pub const CSV_HEADER: [&str; 7] = ["sex", "age", "height_m", "weight_kg", "bmi", "hba1c", "label"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{}", missing_column_message(column, *row))]
    MissingColumn { column: String, row: Option<u64> },
    #[error("row {row}: {message}")]
    RowParse { row: u64, message: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("cohort size {0} is below the minimum of 100")]
    InvalidCount(usize),
    #[error("feature `{0}` has zero variance")]
    ZeroVariance(Feature),
    #[error("normalization stats do not cover feature `{0}`")]
    FeatureMismatch(Feature),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("class {label} has {count} records, need at least 2 for a stratified split")]
    TooFewPerClass { label: u8, count: usize },
    #[error("cohort contains a single class")]
    SingleClass,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("cohort mixes records with and without hba1c")]
    Heterogeneous,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

fn missing_column_message(column: &str, row: Option<u64>) -> String {
    match row {
        Some(row) => format!("row {row}: missing value for column `{column}`"),
        None => format!("missing column `{column}`"),
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    /// Model encoding: male 1.0, female 0.0.
    pub fn indicator(self) -> f64 {
        match self {
            Sex::Male => 1.0,
            Sex::Female => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

/// One participant: the model inputs plus the T2DM label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub sex: Sex,
    pub age: u32,
    pub height_m: Option<f64>,
    pub weight_kg: Option<f64>,
    pub bmi: f64,
    pub hba1c: Option<f64>,
    pub label: bool,
}

impl PatientRecord {
    /// Builds a record from height and weight, deriving BMI.
    pub fn from_measurements(
        sex: Sex,
        age: u32,
        height_m: f64,
        weight_kg: f64,
        hba1c: Option<f64>,
        label: bool,
    ) -> Result<Self> {
        let record = PatientRecord {
            sex,
            age,
            height_m: Some(height_m),
            weight_kg: Some(weight_kg),
            bmi: weight_kg / (height_m * height_m),
            hba1c,
            label,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidRecord(m));
        if !(18..=100).contains(&self.age) {
            return bad(format!("age {} outside 18..=100", self.age));
        }
        for (name, v) in [("height_m", self.height_m), ("weight_kg", self.weight_kg)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.bmi.is_finite() && self.bmi > 0.0) {
            return bad(format!("bmi must be positive, got {}", self.bmi));
        }
        if let (Some(h), Some(w)) = (self.height_m, self.weight_kg) {
            let expected = w / (h * h);
            if ((self.bmi - expected) / expected).abs() > 1e-9 {
                return bad(format!("bmi {} inconsistent with weight/height² = {expected}", self.bmi));
            }
        }
        if let Some(h) = self.hba1c {
            if !(h > 3.0 && h < 20.0) {
                return bad(format!("hba1c {h} outside (3, 20)"));
            }
        }
        Ok(())
    }

    pub fn feature(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Sex => Some(self.sex.indicator()),
            Feature::Age => Some(f64::from(self.age)),
            Feature::Bmi => Some(self.bmi),
            Feature::Hba1c => self.hba1c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Sex,
    Age,
    Bmi,
    Hba1c,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feature::Sex => "sex",
            Feature::Age => "age",
            Feature::Bmi => "bmi",
            Feature::Hba1c => "hba1c",
        })
    }
}

/// Which inputs a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// sex, age, bmi
    Basic,
    /// sex, age, bmi, hba1c
    WithHba1c,
}

impl FeatureSet {
    pub fn features(self) -> &'static [Feature] {
        match self {
            FeatureSet::Basic => &[Feature::Sex, Feature::Age, Feature::Bmi],
            FeatureSet::WithHba1c => &[Feature::Sex, Feature::Age, Feature::Bmi, Feature::Hba1c],
        }
    }

    /// Features that get z-transformed. The binary sex indicator is passed through.
    pub fn normalized_features(self) -> &'static [Feature] {
        &self.features()[1..]
    }

    pub fn dim(self) -> usize {
        self.features().len()
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(FeatureSet::Basic),
            "hba1c" | "with_hba1c" => Ok(FeatureSet::WithHba1c),
            other => Err(format!("unknown feature set `{other}` (expected basic|hba1c)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub name: String,
    pub records: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, records: Vec<PatientRecord>) -> Self {
        Cohort { name: name.into(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }

    /// The richest feature set every record supports. Errors on an empty or
    /// mixed cohort.
    pub fn feature_set(&self) -> Result<FeatureSet> {
        let first = self.records.first().ok_or(DatasetError::EmptyCohort)?;
        let has = first.hba1c.is_some();
        if self.records.iter().any(|r| r.hba1c.is_some() != has) {
            return Err(DatasetError::Heterogeneous);
        }
        Ok(if has { FeatureSet::WithHba1c } else { FeatureSet::Basic })
    }

    /// Same cohort with labels randomly permuted (null-hypothesis data).
    pub fn with_shuffled_labels(&self, seed: u64) -> Cohort {
        let mut labels = self.labels();
        labels.shuffle(&mut rng_from_seed(seed));
        let records = self
            .records
            .iter()
            .zip(labels)
            .map(|(r, label)| PatientRecord { label, ..r.clone() })
            .collect();
        Cohort::new(format!("{}-shuffled", self.name), records)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.sex.as_str().to_string(),
                r.age.to_string(),
                opt(r.height_m),
                opt(r.weight_kg),
                r.bmi.to_string(),
                opt(r.hba1c),
                u8::from(r.label).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a cohort CSV file.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".to_string());
    read_csv(file, name)
}

pub fn read_csv<R: Read>(reader: R, name: impl Into<String>) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::MissingColumn {
            column: name.to_string(),
            row: None,
        })
    };
    let idx: Vec<usize> = CSV_HEADER.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let [sex_i, age_i, h_i, w_i, bmi_i, hba1c_i, label_i] = idx[..] else { unreachable!() };

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).filter(|s| !s.is_empty());
        let required = |i: usize, column: &str| {
            field(i).ok_or_else(|| DatasetError::MissingColumn { column: column.to_string(), row: Some(line) })
        };
        let parse_err = |message: String| DatasetError::RowParse { row: line, message };
        let parse_f64 = |i: usize, column: &str| -> Result<Option<f64>> {
            field(i)
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{column}: {e}"))))
                .transpose()
        };

        let sex: Sex = required(sex_i, "sex")?.parse().map_err(parse_err)?;
        let age: u32 = required(age_i, "age")?
            .parse()
            .map_err(|e| parse_err(format!("age: {e}")))?;
        let label = match required(label_i, "label")? {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("label must be 0 or 1, got `{other}`"))),
        };
        let height_m = parse_f64(h_i, "height_m")?;
        let weight_kg = parse_f64(w_i, "weight_kg")?;
        let bmi = match (height_m, weight_kg) {
            (Some(h), Some(w)) => w / (h * h),
            _ => parse_f64(bmi_i, "bmi")?.ok_or_else(|| DatasetError::MissingColumn {
                column: "bmi".to_string(),
                row: Some(line),
            })?,
        };
        let hba1c = parse_f64(hba1c_i, "hba1c")?;
        let record = PatientRecord { sex, age, height_m, weight_kg, bmi, hba1c, label };
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(Cohort::new(name, records))
}

// ---------------------------------------------------------------------------
// Synthetic cohort

/// Per-sex demographics: (mean, sd) of age in years, height in metres and
/// weight in kilograms, plus the target T2DM prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: (f64, f64),
    pub height_m: (f64, f64),
    pub weight_kg: (f64, f64),
    pub prevalence: f64,
}

/// Generator settings. Defaults follow the population cohort the risk model
/// targets (4814 participants, 2395 male); label and HbA1c constants are
/// modeling choices exposed here for tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortConfig {
    pub male_fraction: f64,
    pub male: Demographics,
    pub female: Demographics,
    /// Ages are rounded and clamped to this range.
    pub age_range: (u32, u32),
    /// Log-odds per 10 years above `age_center`.
    pub beta_age: f64,
    pub age_center: f64,
    /// Log-odds per 5 kg/m² above `bmi_center`.
    pub beta_bmi: f64,
    pub bmi_center: f64,
    /// HbA1c (mean, sd) in percent for label 1 and label 0.
    pub hba1c_positive: (f64, f64),
    pub hba1c_negative: (f64, f64),
    /// Height and weight are truncated at mean ± this many sd.
    pub truncation_sd: f64,
}

impl Default for SyntheticCohortConfig {
    fn default() -> Self {
        SyntheticCohortConfig {
            male_fraction: 2395.0 / 4814.0,
            male: Demographics {
                age: (59.7, 7.8),
                height_m: (1.748, 0.068),
                weight_kg: (86.2, 13.2),
                prevalence: 0.175,
            },
            female: Demographics {
                age: (59.6, 7.8),
                height_m: (1.621, 0.062),
                weight_kg: (72.6, 13.8),
                prevalence: 0.098,
            },
            age_range: (45, 75),
            beta_age: 0.4,
            age_center: 60.0,
            beta_bmi: 0.9,
            bmi_center: 28.0,
            hba1c_positive: (7.0, 1.2),
            hba1c_negative: (5.4, 0.4),
            truncation_sd: 4.0,
        }
    }
}

/// Synthetic cohort with the default generator settings.
pub fn generate_synthetic_cohort(n: usize, seed: u64, with_hba1c: bool) -> Result<Cohort> {
    SyntheticCohortConfig::default().generate(n, seed, with_hba1c)
}

fn truncated_normal(rng: &mut Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("sd must be positive and finite");
    loop {
        let x = dist.sample(rng);
        if x > lo && x < hi {
            return x;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SyntheticCohortConfig {
    fn demographics(&self, sex: Sex) -> &Demographics {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    /// Label log-odds without the per-sex intercept.
    pub fn risk_score(&self, age: u32, bmi: f64) -> f64 {
        self.beta_age * (f64::from(age) - self.age_center) / 10.0
            + self.beta_bmi * (bmi - self.bmi_center) / 5.0
    }

    pub fn generate(&self, n: usize, seed: u64, with_hba1c: bool) -> Result<Cohort> {
        if n < 100 {
            return Err(DatasetError::InvalidCount(n));
        }
        let mut rng = rng_from_seed(derive_seed(seed, 1));
        let (age_lo, age_hi) = self.age_range;
        let k = self.truncation_sd;

        let mut people: Vec<(Sex, u32, f64, f64)> = Vec::with_capacity(n);
        for _ in 0..n {
            let sex = if rng.random::<f64>() < self.male_fraction { Sex::Male } else { Sex::Female };
            let d = self.demographics(sex);
            let age = Normal::new(d.age.0, d.age.1).expect("valid age sd").sample(&mut rng);
            let age = (age.round().max(0.0) as u32).clamp(age_lo, age_hi);
            let (hm, hs) = d.height_m;
            let height = truncated_normal(&mut rng, hm, hs, (hm - k * hs).max(1.0), (hm + k * hs).min(1.99));
            let (wm, ws) = d.weight_kg;
            let weight = truncated_normal(&mut rng, wm, ws, (wm - k * ws).max(30.0), wm + k * ws);
            people.push((sex, age, height, weight));
        }

        // Intercept per sex, bisected so the mean model probability over this
        // sample equals the target prevalence.
        let intercept = |sex: Sex| -> f64 {
            let scores: Vec<f64> = people
                .iter()
                .filter(|p| p.0 == sex)
                .map(|&(_, age, h, w)| self.risk_score(age, w / (h * h)))
                .collect();
            let target = self.demographics(sex).prevalence;
            if scores.is_empty() {
                return 0.0;
            }
            let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let mean = scores.iter().map(|s| sigmoid(mid + s)).sum::<f64>() / scores.len() as f64;
                if mean < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let beta0_male = intercept(Sex::Male);
        let beta0_female = intercept(Sex::Female);

        let mut label_rng = rng_from_seed(derive_seed(seed, 2));
        let mut hba1c_rng = rng_from_seed(derive_seed(seed, 3));
        let mut records = Vec::with_capacity(n);
        for (sex, age, height, weight) in people {
            let bmi = weight / (height * height);
            let beta0 = if sex == Sex::Male { beta0_male } else { beta0_female };
            let p = sigmoid(beta0 + self.risk_score(age, bmi));
            let label = label_rng.random::<f64>() < p;
            let hba1c = with_hba1c.then(|| {
                let (m, s) = if label { self.hba1c_positive } else { self.hba1c_negative };
                truncated_normal(&mut hba1c_rng, m, s, 3.0, 20.0)
            });
            records.push(PatientRecord {
                sex,
                age,
                height_m: Some(height),
                weight_kg: Some(weight),
                bmi,
                hba1c,
                label,
            });
        }
        let name = format!("synthetic-n{n}-seed{seed}{}", if with_hba1c { "-hba1c" } else { "" });
        Ok(Cohort::new(name, records))
    }
}

// ---------------------------------------------------------------------------
// Normalization

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: Feature,
    pub mean: f64,
    pub sd: f64,
}

impl FeatureStats {
    /// Sample mean and sample standard deviation (n − 1 denominator).
    pub fn fit(feature: Feature, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(DatasetError::EmptyCohort);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(DatasetError::ZeroVariance(feature));
        }
        Ok(FeatureStats { feature, mean, sd })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Per-feature z-transform parameters, fitted on a training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub features: Vec<FeatureStats>,
}

pub fn fit_normalization(cohort: &Cohort, features: &[Feature]) -> Result<NormalizationStats> {
    if cohort.is_empty() {
        return Err(DatasetError::EmptyCohort);
    }
    let stats = features
        .iter()
        .map(|&f| {
            let values: Vec<f64> = cohort
                .records
                .iter()
                .map(|r| r.feature(f).ok_or(DatasetError::FeatureMismatch(f)))
                .collect::<Result<_>>()?;
            FeatureStats::fit(f, &values)
        })
        .collect::<Result<_>>()?;
    Ok(NormalizationStats { features: stats })
}

impl NormalizationStats {
    pub fn get(&self, feature: Feature) -> Option<&FeatureStats> {
        self.features.iter().find(|s| s.feature == feature)
    }

    /// Model input vector for `record`: the sex indicator followed by the
    /// z-transformed remaining features of `feature_set`.
    pub fn apply(&self, record: &PatientRecord, feature_set: FeatureSet) -> Result<Vec<f64>> {
        feature_set
            .features()
            .iter()
            .map(|&f| {
                let x = record.feature(f).ok_or(DatasetError::FeatureMismatch(f))?;
                if f == Feature::Sex {
                    return Ok(x);
                }
                let stats = self.get(f).ok_or(DatasetError::FeatureMismatch(f))?;
                Ok(stats.normalize(x))
            })
            .collect()
    }

    pub fn apply_cohort(&self, cohort: &Cohort, feature_set: FeatureSet) -> Result<Vec<Vec<f64>>> {
        cohort.records.iter().map(|r| self.apply(r, feature_set)).collect()
    }

    /// Maps a normalized vector back to native units.
    pub fn invert(&self, z: &[f64], feature_set: FeatureSet) -> Result<Vec<f64>> {
        let features = feature_set.features();
        if z.len() != features.len() {
            return Err(DatasetError::InvalidRecord(format!(
                "expected {} features, got {}",
                features.len(),
                z.len()
            )));
        }
        features
            .iter()
            .zip(z)
            .map(|(&f, &v)| {
                if f == Feature::Sex {
                    return Ok(v);
                }
                Ok(self.get(f).ok_or(DatasetError::FeatureMismatch(f))?.denormalize(v))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Splitting and subsampling

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, seed: 0, stratified: true }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec { seed, ..SplitSpec::default() }
    }
}

/// Partitions a cohort into (train, test). Each partition keeps the cohort's
/// record order.
pub fn split(cohort: &Cohort, spec: &SplitSpec) -> Result<(Cohort, Cohort)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DatasetError::InvalidSplit(format!("train_fraction {f} must lie in (0, 1)")));
    }
    if cohort.len() < 2 {
        return Err(DatasetError::InvalidSplit("need at least 2 records".to_string()));
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, 11));
    let take = |n: usize| ((n as f64 * f).round() as usize).clamp(1, n - 1);

    let mut in_train = vec![false; cohort.len()];
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..cohort.len()).partition(|&i| cohort.records[i].label);
        for (label, group) in [(1u8, &pos), (0u8, &neg)] {
            if group.len() < 2 {
                return Err(DatasetError::TooFewPerClass { label, count: group.len() });
            }
        }
        vec![pos, neg]
    } else {
        vec![(0..cohort.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let k = take(group.len());
        for &i in &group[..k] {
            in_train[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in cohort.records.iter().zip(in_train) {
        if t { train.push(r.clone()) } else { test.push(r.clone()) }
    }
    Ok((
        Cohort::new(format!("{}-train", cohort.name), train),
        Cohort::new(format!("{}-test", cohort.name), test),
    ))
}

/// Undersamples the majority class, without replacement, down to the
/// minority count. Every minority record is kept; record order is preserved.
pub fn balance_subsample(cohort: &Cohort, seed: u64) -> Result<Cohort> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..cohort.len()).partition(|&i| cohort.records[i].label);
    if pos.is_empty() || neg.is_empty() {
        return Err(DatasetError::SingleClass);
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = rng_from_seed(derive_seed(seed, 12));
    let mut keep = vec![false; cohort.len()];
    for &i in &minority {
        keep[i] = true;
    }
    for j in index::sample(&mut rng, majority.len(), minority.len()) {
        keep[majority[j]] = true;
    }
    let records = cohort
        .records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(Cohort::new(format!("{}-balanced", cohort.name), records))
}
