//! Mean test AUC over hidden-layer depth and width.
//!
//! cargo run --release --example capacity_sweep

use virtdoc::dataset::{generate_synthetic_cohort, FeatureSet};
use virtdoc::evaluation::sweep;
use virtdoc::neuralnet::NetworkConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(2000, 4, false)?;
    let mut base = NetworkConfig::new(FeatureSet::Basic.dim(), vec![1]);
    base.epochs = 40;
    let widths: Vec<usize> = vec![1, 2, 5, 10, 20];
    let result = sweep(&cohort, FeatureSet::Basic, &base, &[1, 2, 3], &widths, 3, 8)?;
    print!("{}", result.to_csv());
    for depth in 1..=3 {
        let best = result.best(depth).unwrap();
        println!("depth {depth}: best width {} (AUC {:.4})", best.width, best.mean_auc);
    }
    Ok(())
}
