//! Implementations behind the `virtdoc` subcommands. Each returns the text
//! destined for stdout; failures carry an exit code class.
//!
//! Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::anamnesis::{
    adjust_probability, decide, replay, AdjustmentConfig, AnamnesisAnswers, AnamnesisError, Decision, RawInput,
    ReplayError, RiskEstimator, Stage, PROBABILITY_FLOOR, render_report,
};
use crate::artifact::{cohort_hash, ArtifactError, ModelArtifact};
use crate::calibration::{expected_calibration_error, reliability_bins, CalibrationError, CalibrationMethod};
use crate::dataset::{generate_synthetic_cohort, ingest_csv, split, DatasetError, FeatureSet, PatientRecord, Sex, SplitSpec};
use crate::evaluation::{auc_distribution, auc_t_test, permutation_test, roc_curve, sweep, EvalError};
use crate::neuralnet::{NetError, NetworkConfig};
use crate::pipeline::{train_artifact, CalibrationSource, PipelineError, TrainOptions};
use crate::rng::derive_seed;
use crate::sensors::SensorError;
use crate::service::{ServeConfig, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
#[error("{message}")]
pub struct CommandError {
    pub class: ErrorClass,
    pub message: String,
}

impl CommandError {
    pub fn usage(message: impl Into<String>) -> Self {
        CommandError { class: ErrorClass::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CommandError { class: ErrorClass::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CommandError { class: ErrorClass::Numeric, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }

    /// One-line JSON for stderr.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: ErrorClass,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Line { error: self.class, exit_code: self.exit_code(), message: &self.message })
            .expect("error serializes")
    }
}

fn classed<E: std::fmt::Display>(class: ErrorClass) -> impl Fn(E) -> CommandError {
    move |e| CommandError { class, message: e.to_string() }
}

impl From<DatasetError> for CommandError {
    fn from(e: DatasetError) -> Self {
        CommandError::data(e.to_string())
    }
}

impl From<NetError> for CommandError {
    fn from(e: NetError) -> Self {
        let class = match &e {
            NetError::InvalidConfig(_) => ErrorClass::Usage,
            NetError::NonFiniteLoss { .. } => ErrorClass::Numeric,
            NetError::Dataset(_) | NetError::SingleClass | NetError::MissingFeature(_) | NetError::DimensionMismatch { .. } => {
                ErrorClass::Data
            }
        };
        CommandError { class, message: e.to_string() }
    }
}

impl From<CalibrationError> for CommandError {
    fn from(e: CalibrationError) -> Self {
        let class = match &e {
            CalibrationError::Invalid(_) => ErrorClass::Usage,
            CalibrationError::TooFewSamples { .. }
            | CalibrationError::SingleClass
            | CalibrationError::LengthMismatch { .. }
            | CalibrationError::Empty => ErrorClass::Data,
            CalibrationError::DegenerateClass { .. } => ErrorClass::Numeric,
        };
        CommandError { class, message: e.to_string() }
    }
}

impl From<EvalError> for CommandError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Pipeline(p) => (*p).into(),
            EvalError::Invalid(_) => CommandError::usage(e.to_string()),
            EvalError::NonFinite | EvalError::ZeroVariance => CommandError::numeric(e.to_string()),
            EvalError::SingleClass | EvalError::LengthMismatch(..) => CommandError::data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CommandError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(e) => e.into(),
            PipelineError::Net(e) => e.into(),
            PipelineError::Calibration(e) => e.into(),
            PipelineError::Eval(e) => (*e).into(),
        }
    }
}

impl From<ArtifactError> for CommandError {
    fn from(e: ArtifactError) -> Self {
        CommandError::data(e.to_string())
    }
}

impl From<SensorError> for CommandError {
    fn from(e: SensorError) -> Self {
        CommandError::usage(e.to_string())
    }
}

impl From<AnamnesisError> for CommandError {
    fn from(e: AnamnesisError) -> Self {
        match e {
            AnamnesisError::DegenerateBase(_) => CommandError::numeric(e.to_string()),
            AnamnesisError::InvalidSeverity(_) => CommandError::usage(e.to_string()),
            _ => CommandError::data(e.to_string()),
        }
    }
}

impl From<ServiceError> for CommandError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::InvalidPort(_) => CommandError::usage(e.to_string()),
            _ => CommandError::data(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CommandError> {
    std::fs::write(path, contents).map_err(|e| CommandError::data(format!("cannot write {}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

/// Parses `1-20`, `1,2,5` or a mix such as `1-3,8`.
pub fn parse_int_list(text: &str) -> Result<Vec<usize>, CommandError> {
    let bad = || CommandError::usage(format!("invalid integer list `{text}` (expected e.g. 1-20 or 1,2,3)"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub n: usize,
    pub seed: u64,
    pub with_hba1c: bool,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct GenDataSummary {
    out: String,
    records: usize,
    positives: usize,
    prevalence: f64,
}

pub fn gen_data(args: &GenDataArgs) -> Result<String, CommandError> {
    let cohort = generate_synthetic_cohort(args.n, args.seed, args.with_hba1c)?;
    cohort.save_csv(&args.out)?;
    Ok(pretty(&GenDataSummary {
        out: args.out.display().to_string(),
        records: cohort.len(),
        positives: cohort.positives(),
        prevalence: cohort.prevalence(),
    }))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub features: FeatureSet,
    /// Number of hidden layers.
    pub layers: usize,
    /// One width for every layer, or one per layer.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub calibrate: CalibrationMethod,
    pub calibration_holdout: Option<f64>,
    pub prior: Option<f64>,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        let defaults = NetworkConfig::new(3, vec![5]);
        TrainArgs {
            data: data.into(),
            features: FeatureSet::Basic,
            layers: 1,
            widths: vec![5],
            epochs: defaults.epochs,
            learning_rate: defaults.learning_rate,
            batch_size: defaults.batch_size,
            momentum: defaults.momentum,
            seed: 0,
            calibrate: CalibrationMethod::Guess,
            calibration_holdout: None,
            prior: None,
            out: out.into(),
        }
    }
}

pub fn hidden_layers(layers: usize, widths: &[usize]) -> Result<Vec<usize>, CommandError> {
    match widths {
        [w] => Ok(vec![*w; layers]),
        ws if ws.len() == layers => Ok(ws.to_vec()),
        ws => Err(CommandError::usage(format!("{} widths given for {layers} hidden layers", ws.len()))),
    }
}

pub fn train(args: &TrainArgs) -> Result<String, CommandError> {
    let cohort = ingest_csv(&args.data)?;
    let mut opts = TrainOptions::new(args.features, args.seed);
    opts.network = NetworkConfig {
        input_dim: args.features.dim(),
        hidden_layers: hidden_layers(args.layers, &args.widths)?,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        momentum: args.momentum,
        seed: args.seed,
    };
    opts.network.validate()?;
    opts.calibration = args.calibrate;
    if let Some(fraction) = args.calibration_holdout {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(CommandError::usage(format!("calibration holdout {fraction} outside (0, 1)")));
        }
        opts.calibration_source = CalibrationSource::HeldOut { fraction };
    }
    opts.prior_positive = args.prior;
    let (artifact, summary) = train_artifact(&cohort, &opts)?;
    artifact.save(&args.out)?;
    Ok(pretty(&summary))
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub repeats: usize,
    pub permutations: usize,
    pub out_prefix: String,
}

#[derive(Debug, Serialize)]
pub struct EvaluateSummary {
    /// `held_out_test_partition` when the data is the model's training
    /// cohort, otherwise `full_dataset`.
    pub evaluated_on: &'static str,
    pub records: usize,
    pub auc: f64,
    pub raw_ece: f64,
    pub calibrated_ece: f64,
    pub permutation_p_value: f64,
    pub permutations: usize,
    pub repeats: usize,
    pub repeat_auc_mean: f64,
    pub t_statistic: f64,
    pub t_test_p_value: f64,
    pub files: Vec<String>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String, CommandError> {
    let artifact = ModelArtifact::load(&args.model)?.artifact;
    let cohort = ingest_csv(&args.data)?;
    let (evaluated_on, target) = if cohort_hash(&cohort)? == artifact.metadata.data_hash {
        let (_, test) = split(&cohort, &SplitSpec::with_seed(derive_seed(artifact.metadata.seed, 1)))?;
        ("held_out_test_partition", test)
    } else {
        ("full_dataset", cohort.clone())
    };
    let labels = target.labels();
    let scores = artifact.network.predict_scores(&target)?;
    let calibrated: Vec<f64> = scores.iter().map(|&s| artifact.calibration.calibrate(s).value()).collect();
    let roc = roc_curve(&scores, &labels)?;
    let perm = permutation_test(&scores, &labels, args.permutations, derive_seed(artifact.metadata.seed, 41))?;
    let aucs = auc_distribution(
        &artifact.network.config,
        &cohort,
        artifact.network.feature_set,
        args.repeats,
        artifact.metadata.seed,
    )?;
    let t = auc_t_test(&aucs, 0.5)?;

    let roc_path = format!("{}roc.csv", args.out_prefix);
    let dist_path = format!("{}auc_distribution.csv", args.out_prefix);
    let rel_path = format!("{}reliability.csv", args.out_prefix);
    let summary_path = format!("{}summary.json", args.out_prefix);
    write_file(Path::new(&roc_path), &roc.to_csv())?;
    let mut dist = String::from("repeat,auc\n");
    for (i, a) in aucs.iter().enumerate() {
        dist.push_str(&format!("{i},{a}\n"));
    }
    write_file(Path::new(&dist_path), &dist)?;
    let mut rel = String::from("lo,hi,count,mean_confidence,accuracy\n");
    for b in reliability_bins(&calibrated, &labels, 10)? {
        rel.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.mean_confidence, b.accuracy));
    }
    write_file(Path::new(&rel_path), &rel)?;

    let summary = EvaluateSummary {
        evaluated_on,
        records: target.len(),
        auc: roc.auc,
        raw_ece: expected_calibration_error(&scores, &labels, 10)?,
        calibrated_ece: expected_calibration_error(&calibrated, &labels, 10)?,
        permutation_p_value: perm.p_value,
        permutations: args.permutations,
        repeats: args.repeats,
        repeat_auc_mean: t.mean,
        t_statistic: t.t,
        t_test_p_value: t.p_value,
        files: vec![roc_path, dist_path, rel_path, summary_path.clone()],
    };
    let text = pretty(&summary);
    write_file(Path::new(&summary_path), &text)?;
    Ok(text)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub data: PathBuf,
    pub features: FeatureSet,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub repeats: usize,
    pub epochs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run_sweep(args: &SweepArgs) -> Result<String, CommandError> {
    let cohort = ingest_csv(&args.data)?;
    let mut base = NetworkConfig::new(args.features.dim(), vec![1]);
    base.epochs = args.epochs;
    let result = sweep(&cohort, args.features, &base, &args.depths, &args.widths, args.repeats, args.seed)?;
    let csv = result.to_csv();
    write_file(&args.out, &csv)?;
    Ok(csv)
}

// ---------------------------------------------------------------------------
// predict

#[derive(Debug, Clone)]
pub enum Body {
    Measured { weight_kg: f64, height_m: f64 },
    Bmi(f64),
}

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub model: PathBuf,
    pub sex: Sex,
    pub age: u32,
    pub body: Body,
    pub hba1c: Option<f64>,
    pub answers: Option<AnamnesisAnswers>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub sex: Sex,
    pub age: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height_m: Option<f64>,
    pub bmi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hba1c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answers: Option<AnamnesisAnswers>,
    pub raw_score: f64,
    pub base_probability: f64,
    /// Equal to the base probability when no answers were given.
    pub adjusted_probability: f64,
    pub decision: Decision,
}

/// Parses `yes,no,3,1`: polyuria, polydipsia, alcohol and tobacco severity.
pub fn parse_answers(text: &str) -> Result<AnamnesisAnswers, CommandError> {
    let bad = || CommandError::usage(format!("invalid answers `{text}` (expected e.g. yes,no,3,1)"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [a, b, c, d] = parts[..] else { return Err(bad()) };
    let yn = |s: &str| match s.to_ascii_lowercase().as_str() {
        "yes" | "y" => Ok(true),
        "no" | "n" => Ok(false),
        _ => Err(bad()),
    };
    let sev = |s: &str| s.parse::<u8>().ok().filter(|v| (1..=10).contains(v)).ok_or_else(bad);
    Ok(AnamnesisAnswers { polyuria: yn(a)?, polydipsia: yn(b)?, alcohol: sev(c)?, tobacco: sev(d)? })
}

pub fn predict_with(artifact: &ModelArtifact, args: &PredictArgs) -> Result<Prediction, CommandError> {
    let (weight_kg, height_m, bmi) = match args.body {
        Body::Measured { weight_kg, height_m } => {
            (Some(weight_kg), Some(height_m), crate::sensors::bmi(weight_kg, height_m)?)
        }
        Body::Bmi(b) if b > 0.0 && b.is_finite() => (None, None, b),
        Body::Bmi(b) => return Err(CommandError::usage(format!("bmi {b} must be positive"))),
    };
    let record = PatientRecord { sex: args.sex, age: args.age, height_m, weight_kg, bmi, hba1c: args.hba1c, label: false };
    let estimate = artifact.estimate(&record)?;
    let base = estimate.probability.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
    let cfg = AdjustmentConfig::default();
    let adjusted = match &args.answers {
        Some(a) => adjust_probability(base, a, &cfg)?,
        None => base,
    };
    Ok(Prediction {
        sex: args.sex,
        age: args.age,
        weight_kg,
        height_m,
        bmi,
        hba1c: args.hba1c,
        answers: args.answers,
        raw_score: estimate.raw_score,
        base_probability: base,
        adjusted_probability: adjusted,
        decision: decide(adjusted, &cfg),
    })
}

pub fn predict(args: &PredictArgs) -> Result<String, CommandError> {
    let artifact = ModelArtifact::load(&args.model)?.artifact;
    Ok(pretty(&predict_with(&artifact, args)?))
}

// ---------------------------------------------------------------------------
// simulate-session

pub const SIMULATED_SESSION_ID: &str = "simulated";

pub fn read_script(path: &Path) -> Result<Vec<RawInput>, CommandError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CommandError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(classed(ErrorClass::Data))
}

pub fn simulate_session_with(artifact: &ModelArtifact, script: &[RawInput]) -> Result<String, CommandError> {
    let session = replay(SIMULATED_SESSION_ID, script, artifact, AdjustmentConfig::default()).map_err(|e| match e {
        ReplayError::Frame { .. } => CommandError::usage(e.to_string()),
        ReplayError::Step { source: AnamnesisError::DegenerateBase(_), .. } => CommandError::numeric(e.to_string()),
        ReplayError::Step { .. } => CommandError::data(e.to_string()),
    })?;
    if session.stage != Stage::Done {
        return Err(CommandError::data(format!("script ended at stage {} before the session was done", session.stage)));
    }
    Ok(pretty(&render_report(&session)?))
}

pub fn simulate_session(model: &Path, script: &Path) -> Result<String, CommandError> {
    let artifact = ModelArtifact::load(model)?.artifact;
    simulate_session_with(&artifact, &read_script(script)?)
}

// ---------------------------------------------------------------------------
// serve

pub fn serve(model: PathBuf, port: Option<u16>, data_dir: PathBuf, host: String) -> Result<(), CommandError> {
    let port = crate::service::resolve_port(port)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(classed(ErrorClass::Data))?;
    runtime.block_on(crate::service::serve(ServeConfig { model_path: model, data_dir, host, port }))?;
    Ok(())
}
