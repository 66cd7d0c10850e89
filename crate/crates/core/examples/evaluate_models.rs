//! Compares the basic and HbA1c-augmented models: AUC distributions, a
//! one-sided t-test against chance, a permutation test and DeLong's test.
//!
//! cargo run --release --example evaluate_models

use virtdoc::dataset::{generate_synthetic_cohort, split, FeatureSet, SplitSpec};
use virtdoc::evaluation::{auc_distribution, auc_t_test, delong_test, permutation_test, roc_curve, Sided};
use virtdoc::neuralnet::NetworkConfig;
use virtdoc::pipeline::fit_network_on;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(4814, 5, true)?;
    let (train, test) = split(&cohort, &SplitSpec::with_seed(9))?;
    let mut scores = Vec::new();
    for fs in [FeatureSet::Basic, FeatureSet::WithHba1c] {
        let cfg = NetworkConfig::new(fs.dim(), vec![5]);
        let fitted = fit_network_on(train.clone(), test.clone(), fs, &cfg, 1)?;
        let s = fitted.model.predict_scores(&test)?;
        let roc = roc_curve(&s, &test.labels())?;
        let perm = permutation_test(&s, &test.labels(), 999, 2)?;
        let aucs = auc_distribution(&cfg, &cohort, fs, 10, 3)?;
        let t = auc_t_test(&aucs, 0.5)?;
        println!(
            "{fs:?}: AUC {:.3} ({} ROC points)  permutation p {:.4}  mean AUC over 10 splits {:.3} (t-test p {:.2e})",
            roc.trapezoid_area(),
            roc.points.len(),
            perm.p_value,
            aucs.iter().sum::<f64>() / aucs.len() as f64,
            t.p_value
        );
        scores.push(s);
    }
    let cmp = delong_test(&scores[1], &scores[0], &test.labels(), Sided::One)?;
    println!("DeLong HbA1c > basic: z {:.2}  p {:.2e}", cmp.z, cmp.p_value);
    Ok(())
}
