//! Score-to-probability calibration.
//!
//! [`GuessModel`] fits one parametric density per class by maximum likelihood
//! (normal or logistic, whichever scores the higher log-likelihood) and
//! combines them with class priors through Bayes' rule. [`PlattModel`] is the
//! classic two-parameter sigmoid fit. [`expected_calibration_error`] and
//! [`reliability_bins`] measure how well probabilities match outcomes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::neuralnet::sigmoid;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalibrationError {
    #[error("class {label} has {count} scores, need at least {min}")]
    TooFewSamples { label: u8, count: usize, min: usize },
    #[error("class {label} scores have zero variance")]
    DegenerateClass { label: u8 },
    #[error("scores contain a single class")]
    SingleClass,
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = CalibrationError> = std::result::Result<T, E>;

/// Minimum scores per class accepted by [`fit_guess`].
pub const GUESS_MIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub family: Family,
    pub location: f64,
    pub scale: f64,
}

impl Density {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let u = (x - self.location) / self.scale;
        match self.family {
            Family::Normal => -0.5 * u * u - self.scale.ln() - 0.5 * (2.0 * PI).ln(),
            // −u − ln s − 2 ln(1 + e^{−u}), symmetric form for large |u|
            Family::Logistic => {
                let a = u.abs();
                -a - self.scale.ln() - 2.0 * (-a).exp().ln_1p()
            }
        }
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.ln_pdf(x)).sum()
    }

    fn fit_normal(xs: &[f64]) -> Density {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Density { family: Family::Normal, location: mean, scale: var.sqrt() }
    }

    /// Moment start (location = mean, scale = sd·√3/π) refined by damped
    /// Newton ascent on the log-likelihood in (location, ln scale).
    fn fit_logistic(xs: &[f64]) -> Density {
        let start = Density::fit_normal(xs);
        let mut d = Density {
            family: Family::Logistic,
            location: start.location,
            scale: start.scale * 3f64.sqrt() / PI,
        };
        let mut ll = d.log_likelihood(xs);
        for _ in 0..50 {
            let s = d.scale;
            let (mut g_mu, mut g_t) = (0.0, 0.0);
            let (mut h_mm, mut h_mt, mut h_tt) = (0.0, 0.0, 0.0);
            for &x in xs {
                let u = (x - d.location) / s;
                let g = (0.5 * u).tanh();
                let gp = 0.5 * (1.0 - g * g);
                g_mu += g / s;
                g_t += u * g - 1.0;
                h_mm += -gp / (s * s);
                h_mt += -(u * gp + g) / s;
                h_tt += -u * g - u * u * gp;
            }
            let det = h_mm * h_tt - h_mt * h_mt;
            // Newton direction when the Hessian is negative definite, else gradient.
            let (step_mu, step_t) = if h_mm < 0.0 && det > 0.0 {
                (-(h_tt * g_mu - h_mt * g_t) / det, -(-h_mt * g_mu + h_mm * g_t) / det)
            } else {
                (g_mu * s * s / xs.len() as f64, g_t / xs.len() as f64)
            };
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-10 {
                let cand = Density {
                    location: d.location + t * step_mu,
                    scale: s * (t * step_t).exp(),
                    ..d
                };
                let cand_ll = cand.log_likelihood(xs);
                if cand_ll.is_finite() && cand_ll >= ll {
                    improved = cand_ll > ll;
                    d = cand;
                    ll = cand_ll;
                    break;
                }
                t *= 0.5;
            }
            if !improved || (g_mu * s).abs() + g_t.abs() < 1e-9 * xs.len() as f64 {
                break;
            }
        }
        d
    }

    /// Maximum-likelihood fit for each candidate family; keeps the best.
    pub fn fit_best(xs: &[f64], families: &[Family]) -> Density {
        families
            .iter()
            .map(|f| match f {
                Family::Normal => Density::fit_normal(xs),
                Family::Logistic => Density::fit_logistic(xs),
            })
            .map(|d| (d.log_likelihood(xs), d))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, d)| d)
            .expect("at least one candidate family")
    }
}

/// A probability in [0, 1] produced by a calibrator.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CalibratedProbability(f64);

impl CalibratedProbability {
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(CalibratedProbability(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessModel {
    pub negative: Density,
    pub positive: Density,
    pub prior_negative: f64,
    pub prior_positive: f64,
}

fn class_split(scores: &[f64], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch { probs: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CalibrationError::Invalid("scores must be finite".into()));
    }
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l { pos.push(s) } else { neg.push(s) }
    }
    Ok((neg, pos))
}

pub fn fit_guess(scores: &[f64], labels: &[bool]) -> Result<GuessModel> {
    fit_guess_with(scores, labels, &[Family::Normal, Family::Logistic])
}

pub fn fit_guess_with(scores: &[f64], labels: &[bool], families: &[Family]) -> Result<GuessModel> {
    if families.is_empty() {
        return Err(CalibrationError::Invalid("no candidate families".into()));
    }
    let (neg, pos) = class_split(scores, labels)?;
    for (label, xs) in [(0u8, &neg), (1u8, &pos)] {
        if xs.len() < GUESS_MIN_PER_CLASS {
            return Err(CalibrationError::TooFewSamples { label, count: xs.len(), min: GUESS_MIN_PER_CLASS });
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Err(CalibrationError::DegenerateClass { label });
        }
    }
    let n = scores.len() as f64;
    Ok(GuessModel {
        negative: Density::fit_best(&neg, families),
        positive: Density::fit_best(&pos, families),
        prior_negative: neg.len() as f64 / n,
        prior_positive: pos.len() as f64 / n,
    })
}

impl GuessModel {
    /// Replaces the empirical priors, e.g. with the natural prevalence when
    /// the calibration scores came from a rebalanced sample.
    pub fn with_prior_positive(mut self, prior_positive: f64) -> Result<Self> {
        if !(prior_positive > 0.0 && prior_positive < 1.0) {
            return Err(CalibrationError::Invalid(format!("prior {prior_positive} outside (0, 1)")));
        }
        self.prior_positive = prior_positive;
        self.prior_negative = 1.0 - prior_positive;
        Ok(self)
    }

    /// Posterior log-odds of class 1 at `score`.
    pub fn log_odds(&self, score: f64) -> f64 {
        (self.prior_positive.ln() + self.positive.ln_pdf(score))
            - (self.prior_negative.ln() + self.negative.ln_pdf(score))
    }

    pub fn calibrate(&self, score: f64) -> CalibratedProbability {
        let lo = self.log_odds(score);
        let p = if lo.is_nan() { self.prior_positive } else { sigmoid(lo) };
        CalibratedProbability(p.clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        for d in [&self.negative, &self.positive] {
            if !(d.scale > 0.0 && d.scale.is_finite() && d.location.is_finite()) {
                return Err(CalibrationError::Invalid("density scale must be positive and finite".into()));
            }
        }
        let (a, b) = (self.prior_negative, self.prior_positive);
        if !(a > 0.0 && b > 0.0 && ((a + b) - 1.0).abs() < 1e-9) {
            return Err(CalibrationError::Invalid("priors must be positive and sum to 1".into()));
        }
        Ok(())
    }
}

pub fn calibrate_guess(model: &GuessModel, score: f64) -> CalibratedProbability {
    model.calibrate(score)
}

/// p = 1 / (1 + exp(a·s + b)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub a: f64,
    pub b: f64,
}

impl PlattModel {
    pub fn calibrate(&self, score: f64) -> CalibratedProbability {
        CalibratedProbability(sigmoid(-(self.a * score + self.b)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(CalibrationError::Invalid("Platt parameters must be finite".into()))
        }
    }
}

/// Platt's sigmoid fit with smoothed targets, solved by Newton's method with
/// backtracking (Lin, Lin and Weng's formulation).
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattModel> {
    let (neg, pos) = class_split(scores, labels)?;
    if neg.is_empty() || pos.is_empty() {
        return Err(CalibrationError::SingleClass);
    }
    let (n_pos, n_neg) = (pos.len() as f64, neg.len() as f64);
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    // Negative log-likelihood of p = 1/(1+exp(f)), f = a·s + b.
    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let f = a * s + b;
                if f >= 0.0 {
                    t * f + (-f).exp().ln_1p()
                } else {
                    (t - 1.0) * f + f.exp().ln_1p()
                }
            })
            .sum()
    };

    const SIGMA: f64 = 1e-12;
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let f = a * s + b;
            // p = P(y=1) = 1/(1+e^f), q = 1 − p
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if (g1 * g1 + g2 * g2).sqrt() < 1e-8 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(PlattModel { a, b })
}

/// Serialized calibrator, tagged by `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Calibrator {
    Guess(GuessModel),
    Platt(PlattModel),
}

impl Calibrator {
    pub fn calibrate(&self, score: f64) -> CalibratedProbability {
        match self {
            Calibrator::Guess(m) => m.calibrate(score),
            Calibrator::Platt(m) => m.calibrate(score),
        }
    }

    pub fn method(&self) -> CalibrationMethod {
        match self {
            Calibrator::Guess(_) => CalibrationMethod::Guess,
            Calibrator::Platt(_) => CalibrationMethod::Platt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Calibrator::Guess(m) => m.validate(),
            Calibrator::Platt(m) => m.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Guess,
    Platt,
}

impl std::str::FromStr for CalibrationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "guess" => Ok(CalibrationMethod::Guess),
            "platt" => Ok(CalibrationMethod::Platt),
            other => Err(format!("unknown calibration method `{other}` (expected guess|platt)")),
        }
    }
}

pub fn fit_calibrator(method: CalibrationMethod, scores: &[f64], labels: &[bool]) -> Result<Calibrator> {
    Ok(match method {
        CalibrationMethod::Guess => Calibrator::Guess(fit_guess(scores, labels)?),
        CalibrationMethod::Platt => Calibrator::Platt(fit_platt(scores, labels)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean predicted probability; 0 for an empty bin.
    pub mean_confidence: f64,
    /// Fraction of label-1 samples; 0 for an empty bin.
    pub accuracy: f64,
}

/// Equal-width bins over [0, 1]; a probability of exactly 1 lands in the last bin.
pub fn reliability_bins(probs: &[f64], labels: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if probs.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    if probs.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if bins == 0 {
        return Err(CalibrationError::Invalid("bins must be at least 1".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CalibrationError::Invalid(format!("probability {p} outside [0, 1]")));
    }
    let width = 1.0 / bins as f64;
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for (&p, &l) in probs.iter().zip(labels) {
        let i = ((p * bins as f64) as usize).min(bins - 1);
        sums[i].0 += 1;
        sums[i].1 += p;
        sums[i].2 += usize::from(l);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf, pos))| {
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf / count as f64, pos as f64 / count as f64)
            };
            ReliabilityBin { lo: i as f64 * width, hi: (i + 1) as f64 * width, count, mean_confidence, accuracy }
        })
        .collect())
}

/// Σ_b (n_b / N) · |accuracy_b − confidence_b| over equal-width bins.
pub fn expected_calibration_error(probs: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    let n = probs.len() as f64;
    Ok(reliability_bins(probs, labels, bins)?
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum())
}
