//! Generates a synthetic cohort, splits it, balances the training partition
//! and prints summary statistics.
//!
//! cargo run --example synthetic_cohort

use virtdoc::dataset::{balance_subsample, fit_normalization, generate_synthetic_cohort, split, FeatureSet, SplitSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(4814, 7, true)?;
    println!("records {}  positives {}  prevalence {:.3}", cohort.len(), cohort.positives(), cohort.prevalence());

    let (train, test) = split(&cohort, &SplitSpec::with_seed(1))?;
    let balanced = balance_subsample(&train, 2)?;
    println!("train {}  test {}  balanced {} ({} positive)", train.len(), test.len(), balanced.len(), balanced.positives());

    let stats = fit_normalization(&balanced, FeatureSet::WithHba1c.normalized_features())?;
    for &f in FeatureSet::WithHba1c.normalized_features() {
        let s = stats.get(f).unwrap();
        println!("{f:?}: mean {:.3} sd {:.3}", s.mean, s.sd);
    }

    let mut head = Vec::new();
    cohort.write_csv(&mut head)?;
    for line in String::from_utf8(head)?.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
