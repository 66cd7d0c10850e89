//! End-to-end model fitting: split, balance, normalize, train, calibrate.

use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactMetadata, ModelArtifact, SCHEMA_VERSION};
use crate::calibration::{fit_calibrator, CalibrationError, CalibrationMethod, Calibrator};
use crate::dataset::{balance_subsample, fit_normalization, split, Cohort, DatasetError, FeatureSet, SplitSpec};
use crate::evaluation::{auc, EvalError};
use crate::neuralnet::{init_network, train, NetError, NetworkConfig, RiskModel, TrainingReport};
use crate::rng::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Eval(Box<EvalError>),
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Eval(Box::new(e))
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// A network trained on one seeded split, with the partitions it saw.
#[derive(Debug, Clone)]
pub struct FittedNetwork {
    pub model: RiskModel,
    pub report: TrainingReport,
    /// Training partition before class balancing.
    pub train: Cohort,
    /// The balanced subsample the network was trained on.
    pub balanced: Cohort,
    pub test: Cohort,
}

fn check_features(cohort: &Cohort, feature_set: FeatureSet) -> Result<()> {
    if feature_set == FeatureSet::WithHba1c {
        if let Some(r) = cohort.records.iter().find(|r| r.hba1c.is_none()) {
            let _ = r;
            return Err(NetError::MissingFeature(crate::dataset::Feature::Hba1c).into());
        }
    }
    Ok(())
}

/// Stratified 80:20 split, majority undersampling of the training partition,
/// z-normalization fitted on the balanced training data, then SGD training.
/// `seed` drives the split, the subsample, initialization and batch order.
pub fn fit_network(cohort: &Cohort, feature_set: FeatureSet, config: &NetworkConfig, seed: u64) -> Result<FittedNetwork> {
    check_features(cohort, feature_set)?;
    let (train, test) = split(cohort, &SplitSpec::with_seed(derive_seed(seed, 1)))?;
    fit_network_on(train, test, feature_set, config, seed)
}

pub fn fit_network_on(
    train_part: Cohort,
    test: Cohort,
    feature_set: FeatureSet,
    config: &NetworkConfig,
    seed: u64,
) -> Result<FittedNetwork> {
    check_features(&train_part, feature_set)?;
    let balanced = balance_subsample(&train_part, derive_seed(seed, 2))?;
    let norm_stats = fit_normalization(&balanced, feature_set.normalized_features())?;
    let inputs = norm_stats.apply_cohort(&balanced, feature_set)?;
    let labels = balanced.labels();
    let config = NetworkConfig { input_dim: feature_set.dim(), seed: derive_seed(seed, 3), ..config.clone() };
    let net = init_network(&config)?;
    let (network, report) = train(&net, &inputs, &labels, &config)?;
    let model = RiskModel { config, feature_set, norm_stats, network };
    Ok(FittedNetwork { model, report, train: train_part, balanced, test })
}

/// Which scores the calibrator is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationSource {
    /// The full (unbalanced) training partition, so fitted priors reflect
    /// the cohort's prevalence.
    TrainingPartition,
    /// A stratified fraction of the training partition held out from
    /// network training.
    HeldOut { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub feature_set: FeatureSet,
    pub network: NetworkConfig,
    pub calibration: CalibrationMethod,
    pub calibration_source: CalibrationSource,
    /// Replaces the GUESS class-1 prior.
    pub prior_positive: Option<f64>,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(feature_set: FeatureSet, seed: u64) -> Self {
        TrainOptions {
            feature_set,
            network: NetworkConfig::new(feature_set.dim(), vec![5]),
            calibration: CalibrationMethod::Guess,
            calibration_source: CalibrationSource::TrainingPartition,
            prior_positive: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_records: usize,
    pub balanced_records: usize,
    pub test_records: usize,
    pub final_loss: f64,
    pub test_auc: f64,
    pub raw_test_ece: f64,
    pub calibrated_test_ece: f64,
}

/// Trains and calibrates a model, returning the serializable artifact.
pub fn train_artifact(cohort: &Cohort, opts: &TrainOptions) -> Result<(ModelArtifact, TrainSummary)> {
    let (train_part, test) = split(cohort, &SplitSpec::with_seed(derive_seed(opts.seed, 1)))?;
    let (fit_part, calib_part) = match opts.calibration_source {
        CalibrationSource::TrainingPartition => (train_part.clone(), train_part),
        CalibrationSource::HeldOut { fraction } => {
            let spec = SplitSpec { train_fraction: 1.0 - fraction, seed: derive_seed(opts.seed, 4), stratified: true };
            split(&train_part, &spec)?
        }
    };
    let fitted = fit_network_on(fit_part, test, opts.feature_set, &opts.network, opts.seed)?;

    let calib_scores = fitted.model.predict_scores(&calib_part)?;
    let mut calibrator = fit_calibrator(opts.calibration, &calib_scores, &calib_part.labels())?;
    if let (Some(p), Calibrator::Guess(g)) = (opts.prior_positive, &calibrator) {
        calibrator = Calibrator::Guess(g.clone().with_prior_positive(p)?);
    }

    let test_scores = fitted.model.predict_scores(&fitted.test)?;
    let test_labels = fitted.test.labels();
    let calibrated: Vec<f64> = test_scores.iter().map(|&s| calibrator.calibrate(s).value()).collect();
    let summary = TrainSummary {
        train_records: fitted.train.len(),
        balanced_records: fitted.balanced.len(),
        test_records: fitted.test.len(),
        final_loss: fitted.report.final_loss(),
        test_auc: auc(&test_scores, &test_labels)?,
        raw_test_ece: crate::calibration::expected_calibration_error(&test_scores, &test_labels, 10)?,
        calibrated_test_ece: crate::calibration::expected_calibration_error(&calibrated, &test_labels, 10)?,
    };

    let metadata = ArtifactMetadata {
        data_hash: crate::artifact::cohort_hash(cohort)?,
        data_records: cohort.len(),
        seed: opts.seed,
        calibration_source: opts.calibration_source,
        epoch_losses: fitted.report.epoch_losses.clone(),
        test_auc: summary.test_auc,
        created_at: None,
        generator: format!("virtdoc {}", env!("CARGO_PKG_VERSION")),
    };
    let artifact = ModelArtifact { schema_version: SCHEMA_VERSION, network: fitted.model, calibration: calibrator, metadata };
    artifact.validate().map_err(|e| PipelineError::Net(NetError::InvalidConfig(e.to_string())))?;
    Ok((artifact, summary))
}
