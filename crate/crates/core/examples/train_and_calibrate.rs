//! Trains the default network, calibrates it with GUESS and with Platt
//! scaling, and compares test-set calibration error.
//!
//! cargo run --release --example train_and_calibrate

use virtdoc::calibration::CalibrationMethod;
use virtdoc::dataset::{generate_synthetic_cohort, FeatureSet};
use virtdoc::pipeline::{train_artifact, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(4814, 3, false)?;
    for method in [CalibrationMethod::Guess, CalibrationMethod::Platt] {
        let mut opts = TrainOptions::new(FeatureSet::Basic, 11);
        opts.calibration = method;
        let (artifact, summary) = train_artifact(&cohort, &opts)?;
        println!(
            "{method:?}: loss {:.4}  test AUC {:.3}  ECE raw {:.3} -> calibrated {:.3}",
            summary.final_loss, summary.test_auc, summary.raw_test_ece, summary.calibrated_test_ece
        );
        if method == CalibrationMethod::Guess {
            let path = std::env::temp_dir().join("virtdoc-example-model.json");
            artifact.save(&path)?;
            println!("artifact written to {}", path.display());
        }
    }
    Ok(())
}
