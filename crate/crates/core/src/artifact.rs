//! The model artifact: a trained network, its calibrator and provenance, as
//! one JSON document shared by the trainer, the CLI and the session service.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anamnesis::{RiskEstimate, RiskEstimator};
use crate::calibration::Calibrator;
use crate::dataset::{Cohort, DatasetError, PatientRecord};
use crate::neuralnet::{NetError, RiskModel};
use crate::pipeline::CalibrationSource;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid artifact json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("invalid network: {0}")]
    Network(#[from] NetError),
    #[error("invalid calibration: {0}")]
    Calibration(#[from] crate::calibration::CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    /// SHA-256 of the training cohort in canonical CSV form.
    pub data_hash: String,
    pub data_records: usize,
    pub seed: u64,
    pub calibration_source: CalibrationSource,
    pub epoch_losses: Vec<f64>,
    pub test_auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub network: RiskModel,
    pub calibration: Calibrator,
    pub metadata: ArtifactMetadata,
}

/// An artifact together with the SHA-256 of the bytes it was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedArtifact {
    pub artifact: ModelArtifact,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn cohort_hash(cohort: &Cohort) -> Result<String, DatasetError> {
    let mut buf = Vec::new();
    cohort.write_csv(&mut buf)?;
    Ok(sha256_hex(&buf))
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<(), ArtifactError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ArtifactError::SchemaVersion(self.schema_version));
        }
        self.network.validate()?;
        self.calibration.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|source| ArtifactError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedArtifact, ArtifactError> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|source| ArtifactError::Io { path: path.display().to_string(), source })?;
        let text = String::from_utf8_lossy(&bytes);
        let artifact = ModelArtifact::from_json(&text)?;
        Ok(LoadedArtifact { artifact, hash: sha256_hex(&bytes) })
    }

    pub fn raw_score(&self, record: &PatientRecord) -> Result<f64, NetError> {
        self.network.predict_score(record)
    }
}

impl RiskEstimator for ModelArtifact {
    fn estimate(&self, record: &PatientRecord) -> Result<RiskEstimate, NetError> {
        let raw_score = self.network.predict_score(record)?;
        let probability = self.calibration.calibrate(raw_score).value();
        Ok(RiskEstimate { raw_score, probability })
    }
}
