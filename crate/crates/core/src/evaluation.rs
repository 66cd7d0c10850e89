//! Discrimination statistics: ROC curves and AUC, DeLong's paired AUC
//! comparison, one-sample t-tests on AUC distributions, label-permutation
//! tests and the hidden-layer capacity sweep.

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{Cohort, FeatureSet};
use crate::neuralnet::NetworkConfig;
use crate::pipeline::{fit_network, PipelineError};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("scores must be finite")]
    NonFinite,
    #[error("sample variance is zero")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] Box<PipelineError>),
}

impl From<PipelineError> for EvalError {
    fn from(e: PipelineError) -> Self {
        EvalError::Pipeline(Box::new(e))
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// 1-based ranks with ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC: the probability a random positive outscores a random
/// negative, ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores ≥ threshold are called positive. The first point uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    /// `fpr,tpr,threshold` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        out
    }
}

/// ROC curve over the distinct score values, highest first. Tied scores move
/// both rates in one step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] { tp += 1 } else { fp += 1 }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold });
    }
    Ok(RocCurve { points, auc: auc(scores, labels)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    /// Alternative: AUC of the first model is greater.
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p_value: f64,
    pub sided: Sided,
    /// The variance of the AUC difference was zero; z and p are reported as
    /// 0 and the null value rather than computed.
    pub degenerate: bool,
}

/// DeLong structural components (V10 over positives, V01 over negatives)
/// computed from midranks.
fn structural_components(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>, f64) {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|x| *x.1).map(|x| *x.0).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|x| !*x.1).map(|x| *x.0).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all = midranks(scores);
    let (all_pos, all_neg): (Vec<f64>, Vec<f64>) = {
        let mut p = Vec::new();
        let mut q = Vec::new();
        for (&r, &l) in all.iter().zip(labels) {
            if l { p.push(r) } else { q.push(r) }
        }
        (p, q)
    };
    let within_pos = midranks(&pos);
    let within_neg = midranks(&neg);
    let v10: Vec<f64> = all_pos.iter().zip(&within_pos).map(|(a, w)| (a - w) / n).collect();
    let v01: Vec<f64> = all_neg.iter().zip(&within_neg).map(|(a, w)| 1.0 - (a - w) / m).collect();
    let auc = v10.iter().sum::<f64>() / m;
    (v10, v01, auc)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Paired DeLong test of AUC(a) against AUC(b) on the same labelled samples.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool], sided: Sided) -> Result<AucComparison> {
    let (pos, neg) = check(scores_a, labels)?;
    check(scores_b, labels)?;
    if pos < 2 || neg < 2 {
        return Err(EvalError::Invalid("DeLong needs at least two samples per class".into()));
    }
    let (v10a, v01a, auc_a) = structural_components(scores_a, labels);
    let (v10b, v01b, auc_b) = structural_components(scores_b, labels);
    let (m, n) = (pos as f64, neg as f64);
    let var = |x10: &[f64], y10: &[f64], x01: &[f64], y01: &[f64]| covariance(x10, y10) / m + covariance(x01, y01) / n;
    let var_a = var(&v10a, &v10a, &v01a, &v01a);
    let var_b = var(&v10b, &v10b, &v01b, &v01b);
    let cov_ab = var(&v10a, &v10b, &v01a, &v01b);
    let var_diff = var_a + var_b - 2.0 * cov_ab;

    let scale = var_a.abs().max(var_b.abs()).max(f64::MIN_POSITIVE);
    if !(var_diff > 1e-12 * scale) {
        let p_value = match sided {
            Sided::Two => 1.0,
            Sided::One => 0.5,
        };
        return Ok(AucComparison { auc_a, auc_b, z: 0.0, p_value, sided, degenerate: true });
    }
    let z = (auc_a - auc_b) / var_diff.sqrt();
    let p_value = normal_p_value(z, sided);
    Ok(AucComparison { auc_a, auc_b, z, p_value, sided, degenerate: false })
}

fn normal_p_value(z: f64, sided: Sided) -> f64 {
    let std = Normal::standard();
    match sided {
        Sided::One => std.sf(z),
        Sided::Two => (2.0 * std.sf(z.abs())).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    pub mean: f64,
}

/// One-sample Student's t-test with the alternative mean > `mu0`.
pub fn auc_t_test(aucs: &[f64], mu0: f64) -> Result<TTest> {
    if aucs.len() < 2 {
        return Err(EvalError::Invalid("t-test needs at least two values".into()));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(EvalError::ZeroVariance);
    }
    let t = (mean - mu0) / (var / n).sqrt();
    let df = aucs.len() - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df ≥ 1");
    Ok(TTest { t, p_value: dist.sf(t), df, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_auc: f64,
    pub permuted_aucs: Vec<f64>,
    pub p_value: f64,
}

/// AUC of fixed scores against `permutations` seeded shufflings of the
/// labels; p = (1 + #{permuted ≥ observed}) / (B + 1).
pub fn permutation_test(scores: &[f64], labels: &[bool], permutations: usize, seed: u64) -> Result<PermutationResult> {
    if permutations < 99 {
        return Err(EvalError::Invalid(format!("{permutations} permutations, need at least 99")));
    }
    let observed_auc = auc(scores, labels)?;
    let mut rng = rng_from_seed(derive_seed(seed, 41));
    let mut shuffled = labels.to_vec();
    let mut permuted_aucs = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        permuted_aucs.push(auc(scores, &shuffled)?);
    }
    let exceed = permuted_aucs.iter().filter(|&&a| a >= observed_auc).count();
    let p_value = (1 + exceed) as f64 / (permutations + 1) as f64;
    Ok(PermutationResult { observed_auc, permuted_aucs, p_value })
}

/// Test-set AUCs of `repeats` independently split, balanced, normalized and
/// trained networks. Repeat seeds derive from `seed`.
pub fn auc_distribution(
    config: &NetworkConfig,
    cohort: &Cohort,
    feature_set: FeatureSet,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if repeats < 2 {
        return Err(EvalError::Invalid("repeats must be at least 2".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 42));
    let seeds: Vec<u64> = (0..repeats).map(|_| rng.next_u64()).collect();
    seeds
        .into_par_iter()
        .map(|s| {
            let fitted = fit_network(cohort, feature_set, config, s)?;
            let scores = fitted.model.predict_scores(&fitted.test).map_err(PipelineError::from)?;
            auc(&scores, &fitted.test.labels())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub depth: usize,
    pub width: usize,
    pub mean_auc: f64,
    pub aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn at(&self, depth: usize, width: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.depth == depth && p.width == width)
    }

    pub fn best(&self, depth: usize) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.depth == depth)
            .max_by(|a, b| a.mean_auc.total_cmp(&b.mean_auc))
    }

    /// `width,depth,mean_auc` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("width,depth,mean_auc\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.width, p.depth, p.mean_auc));
        }
        out
    }
}

/// Mean test AUC for every (depth, width) with `depth` equal-width hidden
/// layers. Grid points run in parallel; each one's repeats use the same seed
/// so points differ only in architecture.
pub fn sweep(
    cohort: &Cohort,
    feature_set: FeatureSet,
    base: &NetworkConfig,
    depths: &[usize],
    widths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<SweepResult> {
    let grid: Vec<(usize, usize)> = depths.iter().flat_map(|&d| widths.iter().map(move |&w| (d, w))).collect();
    for &(d, w) in &grid {
        let cfg = NetworkConfig { hidden_layers: vec![w; d], ..base.clone() };
        cfg.validate().map_err(PipelineError::from)?;
    }
    let points = grid
        .into_par_iter()
        .map(|(depth, width)| {
            let cfg = NetworkConfig { hidden_layers: vec![width; depth], ..base.clone() };
            let aucs = auc_distribution(&cfg, cohort, feature_set, repeats, seed)?;
            let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
            Ok(SweepPoint { depth, width, mean_auc, aucs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1;
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auc_examples() {
        let labels = [true, true, false, false];
        assert_eq!(auc(&[0.9, 0.4, 0.6, 0.2], &labels).unwrap(), 0.75);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn roc_examples() {
        let labels = [true, true, false, false];
        for scores in [[0.9, 0.4, 0.6, 0.2], [0.9, 0.8, 0.2, 0.1], [0.3; 4]] {
            let roc = roc_curve(&scores, &labels).unwrap();
            assert_eq!(roc.auc, brute_auc(&scores, &labels));
            assert!((roc.trapezoid_area() - roc.auc).abs() < 1e-12);
            let first = roc.points[0];
            let last = *roc.points.last().unwrap();
            assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        }
        let roc = roc_curve(&[0.3; 4], &labels).unwrap();
        assert_eq!(roc.points.len(), 2);
        assert!(roc.to_csv().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    #[test]
    fn delong_self_comparison() {
        let labels = [true, false, true, false, true, false, false];
        let s = [0.9, 0.1, 0.5, 0.6, 0.7, 0.2, 0.4];
        let c = delong_test(&s, &s, &labels, Sided::Two).unwrap();
        assert_eq!(c.z, 0.0);
        assert_eq!(c.p_value, 1.0);
        assert!(c.degenerate);
    }

    #[test]
    fn delong_components_match_pairwise_definition() {
        let mut rng = rng_from_seed(2);
        let scores: Vec<f64> = (0..40).map(|_| f64::from(rng.random_range(0..8u8))).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let (v10, v01, a) = structural_components(&scores, &labels);
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|x| *x.1).map(|x| *x.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|x| !*x.1).map(|x| *x.0).collect();
        let psi = |x: f64, y: f64| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        for (i, &x) in pos.iter().enumerate() {
            let expected = neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64;
            assert!((v10[i] - expected).abs() < 1e-12);
        }
        for (j, &y) in neg.iter().enumerate() {
            let expected = pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64;
            assert!((v01[j] - expected).abs() < 1e-12);
        }
        assert!((a - brute_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn t_test_textbook() {
        let t = auc_t_test(&[0.70, 0.72, 0.68, 0.71, 0.69], 0.5).unwrap();
        let sd = (0.001f64 / 4.0).sqrt();
        let expected = 0.2 / (sd / 5f64.sqrt());
        assert!((t.t - expected).abs() < 1e-6);
        assert!((t.t - 28.28).abs() < 0.01);
        assert!(t.p_value < 1e-5);
        assert!(matches!(auc_t_test(&[0.5; 4], 0.5), Err(EvalError::ZeroVariance)));
        let centered = auc_t_test(&[0.4, 0.6, 0.45, 0.55], 0.5).unwrap();
        assert!((centered.p_value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn permutation_bounds() {
        let labels = [true, true, true, true, false, false, false, false];
        let perfect = [8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let r = permutation_test(&perfect, &labels, 999, 1).unwrap();
        // Exhaustively only 1 of C(8,4) = 70 labelings reaches AUC 1.
        assert!(r.p_value <= 0.05, "{}", r.p_value);
        assert_eq!(r.permuted_aucs.len(), 999);

        let worst = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let r = permutation_test(&worst, &labels, 999, 1).unwrap();
        assert_eq!(r.observed_auc, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(matches!(permutation_test(&worst, &labels, 50, 1), Err(EvalError::Invalid(_))));
    }
}
