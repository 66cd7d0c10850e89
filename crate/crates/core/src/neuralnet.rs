//! Feed-forward network with tanh hidden layers and a sigmoid output unit,
//! trained by mini-batch SGD with momentum on binary cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, DatasetError, FeatureSet, NormalizationStats, PatientRecord};
use crate::rng::{derive_seed, rng_from_seed};

pub const MAX_HIDDEN_LAYERS: usize = 3;
pub const MAX_LAYER_WIDTH: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} input features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("record is missing feature `{0}`")]
    MissingFeature(crate::dataset::Feature),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl NetworkConfig {
    /// Defaults: 100 epochs, learning rate 0.1, batch 32, momentum 0.9.
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>) -> Self {
        NetworkConfig {
            input_dim,
            hidden_layers,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1".into());
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.len() > MAX_HIDDEN_LAYERS {
            return bad(format!(
                "{} hidden layers requested, allowed 1..={MAX_HIDDEN_LAYERS}",
                self.hidden_layers.len()
            ));
        }
        if let Some(w) = self.hidden_layers.iter().find(|w| !(1..=MAX_LAYER_WIDTH).contains(*w)) {
            return bad(format!("hidden width {w} outside 1..={MAX_LAYER_WIDTH}"));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

/// Dense layer; `weights[i][j]` connects input `j` to output unit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(outputs: usize, inputs: usize) -> Self {
        Layer { weights: vec![vec![0.0; inputs]; outputs], bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().flatten().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.bias.iter())
    }
}

/// Layer stack. Every layer but the last applies tanh; the last has one
/// unit and applies the logistic sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + eˣ) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of sigmoid(logit) against `label`, evaluated as
/// softplus(z) − y·z so it stays finite and smooth when the output saturates.
pub fn bce_from_logit(logit: f64, label: bool) -> f64 {
    if label {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Uniform ±1/√fan_in weights, zero biases.
pub fn init_network(config: &NetworkConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(config.seed, 21));
    let mut layers = Vec::with_capacity(config.hidden_layers.len() + 1);
    let mut fan_in = config.input_dim;
    for &width in config.hidden_layers.iter().chain(std::iter::once(&1)) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut layer = Layer::zeros(width, fan_in);
        for w in layer.weights.iter_mut().flatten() {
            *w = rng.random_range(-bound..=bound);
        }
        layers.push(layer);
        fan_in = width;
    }
    Ok(Network { layers })
}

struct Trace {
    /// Layer inputs: activations[0] is the network input.
    activations: Vec<Vec<f64>>,
    logit: f64,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len().saturating_sub(1)].iter().map(Layer::outputs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().count()).sum()
    }

    /// Checks that shapes chain to a single output and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.layers.len() < 2 {
            return bad("network needs at least one hidden layer".into());
        }
        let mut fan_in = self.input_dim();
        if fan_in == 0 {
            return bad("input dimension is zero".into());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.bias.len() {
                return bad(format!("layer {i}: {} weight rows but {} biases", layer.weights.len(), layer.bias.len()));
            }
            if layer.weights.iter().any(|row| row.len() != fan_in) {
                return bad(format!("layer {i}: rows must have {fan_in} columns"));
            }
            if layer.params().any(|p| !p.is_finite()) {
                return bad(format!("layer {i}: non-finite parameter"));
            }
            fan_in = layer.outputs();
        }
        if fan_in != 1 {
            return bad(format!("output layer has {fan_in} units, expected 1"));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let (output, hidden) = self.layers.split_last().expect("network has layers");
        for layer in hidden {
            let next: Vec<f64> = layer.affine(&current).into_iter().map(f64::tanh).collect();
            activations.push(std::mem::replace(&mut current, next));
        }
        let logit = output.affine(&current)[0];
        activations.push(current);
        Trace { activations, logit }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    /// Output-unit pre-activation.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.trace(x).logit)
    }

    /// Network score in (0, 1).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn loss(&self, x: &[f64], label: bool) -> Result<f64> {
        Ok(bce_from_logit(self.logit(x)?, label))
    }

    /// Backpropagated gradient of the cross-entropy loss, in layer order
    /// (weights row-major, then biases), and the loss itself.
    fn backprop(&self, x: &[f64], label: bool, grads: &mut [Layer]) -> f64 {
        let trace = self.trace(x);
        let p = sigmoid(trace.logit);
        let mut delta = vec![p - f64::from(u8::from(label))];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let g = &mut grads[i];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, a) in g.weights[o].iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if i > 0 {
                delta = (0..layer.inputs())
                    .map(|j| {
                        let back: f64 = layer.weights.iter().zip(&delta).map(|(row, d)| row[j] * d).sum();
                        back * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
        bce_from_logit(trace.logit, label)
    }

    fn zero_like(&self) -> Vec<Layer> {
        self.layers.iter().map(|l| Layer::zeros(l.outputs(), l.inputs())).collect()
    }

    /// Analytic gradient for one sample, flattened in parameter order.
    pub fn gradient(&self, x: &[f64], label: bool) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut grads = self.zero_like();
        self.backprop(x, label, &mut grads);
        Ok(grads.iter().flat_map(|l| l.params().copied().collect::<Vec<_>>()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub epochs: usize,
    pub config: NetworkConfig,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Mini-batch SGD with momentum. The sample order of every epoch comes from
/// the config seed, so (data, config) fully determines the result.
pub fn train(
    net: &Network,
    inputs: &[Vec<f64>],
    labels: &[bool],
    config: &NetworkConfig,
) -> Result<(Network, TrainingReport)> {
    config.validate()?;
    if inputs.len() != labels.len() {
        return Err(NetError::InvalidConfig(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(NetError::SingleClass);
    }
    for x in inputs {
        net.check_dim(x)?;
    }

    let mut net = net.clone();
    let mut velocity = net.zero_like();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = rng_from_seed(derive_seed(config.seed, 22));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = net.zero_like();
            for &i in batch {
                total += net.backprop(&inputs[i], labels[i], &mut grads);
            }
            let scale = config.learning_rate / batch.len() as f64;
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((p, v), g) in layer.params_mut().zip(v.params_mut()).zip(g.params()) {
                    *v = config.momentum * *v - scale * g;
                    *p += *v;
                }
            }
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || net.layers.iter().any(|l| l.params().any(|p| !p.is_finite())) {
            return Err(NetError::NonFiniteLoss { epoch: epoch + 1 });
        }
        epoch_losses.push(mean);
    }
    let report = TrainingReport { epoch_losses, epochs: config.epochs, config: config.clone() };
    Ok((net, report))
}

/// Largest relative disagreement between the backprop gradient and central
/// finite differences (step 1e-5) over every parameter, using
/// |a − n| / max(1e-8, |a| + |n|).
pub fn gradient_check(net: &Network, x: &[f64], label: bool) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = net.gradient(x, label)?;
    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    let mut k = 0;
    for li in 0..probe.layers.len() {
        let n_params = probe.layers[li].params().count();
        for pi in 0..n_params {
            let original = *probe.layers[li].params_mut().nth(pi).expect("param index");
            *probe.layers[li].params_mut().nth(pi).expect("param index") = original + STEP;
            let up = probe.loss(x, label)?;
            *probe.layers[li].params_mut().nth(pi).expect("param index") = original - STEP;
            let down = probe.loss(x, label)?;
            *probe.layers[li].params_mut().nth(pi).expect("param index") = original;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            k += 1;
        }
    }
    Ok(worst)
}

/// A trained network bundled with the input normalization it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub config: NetworkConfig,
    pub feature_set: FeatureSet,
    pub norm_stats: NormalizationStats,
    #[serde(flatten)]
    pub network: Network,
}

impl RiskModel {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.input_dim() != self.feature_set.dim() {
            return Err(NetError::InvalidConfig(format!(
                "network takes {} inputs, feature set {:?} has {}",
                self.network.input_dim(),
                self.feature_set,
                self.feature_set.dim()
            )));
        }
        for &f in self.feature_set.normalized_features() {
            match self.norm_stats.get(f) {
                Some(s) if s.sd > 0.0 && s.sd.is_finite() && s.mean.is_finite() => {}
                _ => return Err(NetError::Dataset(DatasetError::FeatureMismatch(f))),
            }
        }
        Ok(())
    }

    pub fn features(&self, record: &PatientRecord) -> Result<Vec<f64>> {
        for &f in self.feature_set.features() {
            if record.feature(f).is_none() {
                return Err(NetError::MissingFeature(f));
            }
        }
        Ok(self.norm_stats.apply(record, self.feature_set)?)
    }

    /// Uncalibrated network score for a record.
    pub fn predict_score(&self, record: &PatientRecord) -> Result<f64> {
        self.network.forward(&self.features(record)?)
    }

    pub fn predict_scores(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        cohort.records.iter().map(|r| self.predict_score(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_normalization, Sex};

    fn zero_net(input_dim: usize, hidden: usize) -> Network {
        Network { layers: vec![Layer::zeros(hidden, input_dim), Layer::zeros(1, hidden)] }
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let net = init_network(&NetworkConfig::new(3, vec![4])).unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!((net.layers[0].outputs(), net.layers[0].inputs()), (4, 3));
        assert_eq!((net.layers[1].outputs(), net.layers[1].inputs()), (1, 4));
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = 1.0 / 3f64.sqrt();
        assert!(net.layers[0].weights.iter().flatten().all(|w| w.abs() <= bound));
        net.validate().unwrap();
    }

    #[test]
    fn init_bounds() {
        for hidden in [vec![20, 20, 20, 20], vec![], vec![0], vec![21]] {
            assert!(matches!(init_network(&NetworkConfig::new(3, hidden)), Err(NetError::InvalidConfig(_))));
        }
        let mut cfg = NetworkConfig::new(3, vec![4]);
        cfg.epochs = 0;
        assert!(matches!(init_network(&cfg), Err(NetError::InvalidConfig(_))));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetworkConfig::new(3, vec![5, 2]).with_seed(9);
        assert_eq!(init_network(&cfg).unwrap(), init_network(&cfg).unwrap());
        let other = init_network(&cfg.clone().with_seed(10)).unwrap();
        assert_ne!(init_network(&cfg).unwrap(), other);
    }

    #[test]
    fn forward_limits() {
        let mut net = zero_net(3, 4);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), 0.5);
        net.layers[1].bias[0] = 10.0;
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((net.forward(&[0.0; 3]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.99995).abs() < 1e-5);
        assert!(matches!(net.forward(&[0.0; 2]), Err(NetError::DimensionMismatch { expected: 3, actual: 2 })));
    }

    #[test]
    fn forward_stays_open_interval_for_moderate_logits() {
        let mut net = zero_net(1, 1);
        net.layers[1].bias[0] = -30.0;
        let p = net.forward(&[0.0]).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn gradient_check_small_net() {
        let net = init_network(&NetworkConfig::new(3, vec![4]).with_seed(3)).unwrap();
        let err = gradient_check(&net, &[0.3, -1.2, 0.8], true).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_saturated_output() {
        let mut net = init_network(&NetworkConfig::new(3, vec![4]).with_seed(1)).unwrap();
        net.layers[1].bias[0] = 40.0;
        let err = gradient_check(&net, &[0.5, 0.1, -0.4], true).unwrap();
        assert!(err < 1e-4, "{err}");
        assert!(net.gradient(&[0.5, 0.1, -0.4], true).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    fn separable_toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        // Two clusters either side of the line x0 + x1 = 0.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.2 - 0.9;
            xs.push(vec![1.0 + t * 0.3, 0.8 - t]);
            ys.push(true);
            xs.push(vec![-1.0 - t * 0.3, -0.8 + t]);
            ys.push(false);
        }
        (xs, ys)
    }

    #[test]
    fn toy_set_is_linearly_separable() {
        // Oracle: plain logistic regression by gradient descent separates it.
        let (xs, ys) = separable_toy();
        let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
        for _ in 0..2000 {
            let mut g = [0.0; 3];
            for (x, &y) in xs.iter().zip(&ys) {
                let d = sigmoid(w[0] * x[0] + w[1] * x[1] + b) - f64::from(u8::from(y));
                g[0] += d * x[0];
                g[1] += d * x[1];
                g[2] += d;
            }
            w[0] -= 0.5 * g[0] / 20.0;
            w[1] -= 0.5 * g[1] / 20.0;
            b -= 0.5 * g[2] / 20.0;
        }
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(w[0] * x[0] + w[1] * x[1] + b > 0.0, y);
        }
    }

    #[test]
    fn training_separates_toy_set() {
        let (xs, ys) = separable_toy();
        let mut cfg = NetworkConfig::new(2, vec![4]).with_seed(5);
        cfg.batch_size = 4;
        let net = init_network(&cfg).unwrap();
        let (trained, report) = train(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 100);
        assert!(report.final_loss() < 0.25, "{}", report.final_loss());
        assert!(report.epoch_losses[9] < report.epoch_losses[0]);
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(trained.forward(x).unwrap() > 0.5, y);
        }
        let (again, _) = train(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(trained, again);
    }

    #[test]
    fn training_errors() {
        let (xs, _) = separable_toy();
        let cfg = NetworkConfig::new(2, vec![4]);
        let net = init_network(&cfg).unwrap();
        assert!(matches!(train(&net, &xs, &vec![true; xs.len()], &cfg), Err(NetError::SingleClass)));
        let mut bad = cfg.clone();
        bad.epochs = 0;
        let ys: Vec<bool> = (0..xs.len()).map(|i| i % 2 == 0).collect();
        assert!(matches!(train(&net, &xs, &ys, &bad), Err(NetError::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (xs, ys) = separable_toy();
        let mut cfg = NetworkConfig::new(2, vec![4]);
        cfg.learning_rate = 1e308;
        let net = init_network(&cfg).unwrap();
        assert!(matches!(train(&net, &xs, &ys, &cfg), Err(NetError::NonFiniteLoss { .. })));
    }

    fn small_cohort() -> Cohort {
        let records = (0..20)
            .map(|i| PatientRecord {
                sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
                age: 45 + i,
                height_m: None,
                weight_kg: None,
                bmi: 22.0 + i as f64,
                hba1c: None,
                label: i % 3 == 0,
            })
            .collect();
        Cohort::new("small", records)
    }

    #[test]
    fn predict_score_at_feature_means() {
        let cohort = small_cohort();
        let stats = fit_normalization(&cohort, FeatureSet::Basic.normalized_features()).unwrap();
        let model = RiskModel {
            config: NetworkConfig::new(3, vec![2]),
            feature_set: FeatureSet::Basic,
            norm_stats: stats.clone(),
            network: zero_net(3, 2),
        };
        let mean_age = stats.get(crate::dataset::Feature::Age).unwrap().mean;
        let record = PatientRecord {
            age: mean_age.round() as u32,
            bmi: stats.get(crate::dataset::Feature::Bmi).unwrap().mean,
            ..cohort.records[0].clone()
        };
        assert_eq!(model.predict_score(&record).unwrap(), 0.5);
        model.validate().unwrap();
    }

    #[test]
    fn hba1c_model_requires_hba1c() {
        let cohort = small_cohort();
        let mut stats = fit_normalization(&cohort, FeatureSet::Basic.normalized_features()).unwrap();
        stats.features.push(crate::dataset::FeatureStats { feature: crate::dataset::Feature::Hba1c, mean: 5.6, sd: 0.8 });
        let model = RiskModel {
            config: NetworkConfig::new(4, vec![2]),
            feature_set: FeatureSet::WithHba1c,
            norm_stats: stats,
            network: zero_net(4, 2),
        };
        assert!(matches!(
            model.predict_score(&cohort.records[0]),
            Err(NetError::MissingFeature(crate::dataset::Feature::Hba1c))
        ));
    }
}
