//! Empirical-risk-minimisation classifiers trained by plain gradient descent:
//! logistic regression and a one-hidden-layer tanh network, plus the SPLIT
//! probe that retrains a linear head on a frozen backbone.

mod model;
mod net;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use model::{
    Activation, LinearModel, MlpModel, Model, ModelParams, TrainingHistory, LOGIT_CLAMP,
};
use net::{mean_loss, Matrix, Net};

use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{group_metrics, roc_auc, MetricsReport};
use crate::seeding::{self, derive_seed, tag};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const GRADIENT_CHECK_MAX_SAMPLES: usize = 64;
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Linear => "linear",
            Arch::Mlp => "mlp",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Arch::Linear),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::domain(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Which column a classifier learns to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    ObservedLabel,
    Group,
}

impl Target {
    pub fn of(self, s: &Sample) -> u8 {
        match self {
            Target::ObservedLabel => s.observed_label,
            Target::Group => s.group,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::ObservedLabel => "observed_label",
            Target::Group => "group",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed_label" | "label" => Ok(Target::ObservedLabel),
            "group" => Ok(Target::Group),
            other => Err(Error::domain(format!("unknown target `{other}`"))),
        }
    }
}

/// Mini-batch size; serialized as `"full"` or a positive integer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchSizeRepr", into = "BatchSizeRepr")]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchSizeRepr {
    Size(usize),
    Name(String),
}

impl TryFrom<BatchSizeRepr> for BatchSize {
    type Error = Error;

    fn try_from(r: BatchSizeRepr) -> Result<Self> {
        match r {
            BatchSizeRepr::Size(n) => Ok(BatchSize::Size(n)),
            BatchSizeRepr::Name(s) => s.parse(),
        }
    }
}

impl From<BatchSize> for BatchSizeRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchSizeRepr::Name("full".into()),
            BatchSize::Size(n) => BatchSizeRepr::Size(n),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Size(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(BatchSize::Full);
        }
        s.parse::<usize>()
            .map(BatchSize::Size)
            .map_err(|_| Error::domain(format!("batch size must be `full` or a positive integer, got `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub batch_size: BatchSize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 500,
            patience: 5,
            val_fraction: 0.2,
            batch_size: BatchSize::Full,
            hidden_width: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted: it yields the initialization unchanged.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::domain(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::domain("max_epochs must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::domain("patience must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::domain(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::domain("batch_size must be positive"));
        }
        if self.hidden_width == 0 {
            return Err(Error::domain("hidden_width must be positive"));
        }
        Ok(())
    }
}

fn net_for(arch: Arch, dim: usize, config: &TrainConfig) -> Net {
    match arch {
        Arch::Linear => Net::Linear { dim },
        Arch::Mlp => Net::Mlp {
            dim,
            width: config.hidden_width,
        },
    }
}

/// Zeros for the linear model; Xavier-uniform weights and zero biases for
/// the MLP.
fn init_params(net: Net, seed: u64) -> Vec<f64> {
    let mut p = vec![0.0; net.n_params()];
    if let Net::Mlp { dim, width } = net {
        let mut rng = seeding::rng(derive_seed(seed, &[tag("init")]));
        let a1 = (6.0 / (dim + width) as f64).sqrt();
        for w in &mut p[..width * dim] {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (width + 1) as f64).sqrt();
        let o_w2 = width * dim + width;
        for w in &mut p[o_w2..o_w2 + width] {
            *w = rng.random_range(-a2..a2);
        }
    }
    p
}

fn assemble(net: Net, p: &[f64], target: Target, config: &TrainConfig, history: TrainingHistory) -> Model {
    let params = match net {
        Net::Linear { .. } => ModelParams::Linear(LinearModel::from_flat(p)),
        Net::Mlp { dim, width } => ModelParams::Mlp(MlpModel::from_flat(dim, width, p)),
    };
    Model {
        params,
        target,
        train_config: config.clone(),
        history,
    }
}

impl Model {
    /// The untrained model `train_classifier` would start from.
    pub fn initial(arch: Arch, dim: usize, target: Target, config: &TrainConfig) -> Result<Model> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::domain("dim must be positive"));
        }
        let net = net_for(arch, dim, config);
        Ok(assemble(net, &init_params(net, config.seed), target, config, TrainingHistory::default()))
    }
}

/// Seeded split of `0..n` into `(kept, held_out)` with
/// `round(fraction * n)` held out, clamped so both parts are nonempty.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::DegenerateDataset(format!("need at least 2 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng(seed));
    let held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let kept = order.split_off(held);
    let (mut kept, mut held) = (kept, order);
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}

fn design(dataset: &Dataset, target: Target) -> Result<(Matrix, Vec<f64>)> {
    let dim = dataset.dim();
    if dim == 0 {
        return Err(Error::domain("dataset has no features"));
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::domain(format!(
            "ragged features: expected {dim}, found {}",
            s.features.len()
        )));
    }
    let x = Matrix::from_rows(dataset.samples.iter().map(|s| s.features.as_slice()), dim);
    let y = dataset.samples.iter().map(|s| f64::from(target.of(s))).collect();
    Ok((x, y))
}

/// Fits `arch` to `target` by minimizing mean binary cross-entropy with
/// gradient descent. A `val_fraction` share of `dataset` is held out for
/// early stopping; the parameters with the lowest validation loss are
/// returned.
pub fn train_classifier(dataset: &Dataset, target: Target, arch: Arch, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    let (x, y) = design(dataset, target)?;
    let (train, val) = holdout_split(dataset.len(), config.val_fraction, derive_seed(config.seed, &[tag("validation")]))
        .map_err(|_| Error::DegenerateTarget("need at least 2 samples to train".into()))?;
    let positives = train.iter().filter(|&&i| y[i] == 1.0).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::DegenerateTarget(format!(
            "training split has a single {target} class"
        )));
    }

    let net = net_for(arch, x.cols, config);
    let mut p = init_params(net, config.seed);
    let mut grad = vec![0.0; p.len()];
    let mut history = TrainingHistory {
        val_loss: vec![mean_loss(net, &p, &x, &y, &val, None)],
        ..TrainingHistory::default()
    };
    let mut best = p.clone();
    let batch = match config.batch_size {
        BatchSize::Full => train.len(),
        BatchSize::Size(b) => b.min(train.len()),
    };
    let mut rng = seeding::rng(derive_seed(config.seed, &[tag("batches")]));
    let mut order = train.clone();

    for epoch in 1..=config.max_epochs {
        if batch < order.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let loss = mean_loss(net, &p, &x, &y, chunk, Some(&mut grad));
            epoch_loss += loss * chunk.len() as f64;
            for (pi, gi) in p.iter_mut().zip(&grad) {
                *pi -= config.learning_rate * gi;
            }
        }
        epoch_loss /= order.len() as f64;
        let val_loss = mean_loss(net, &p, &x, &y, &val, None);
        if !epoch_loss.is_finite() || !val_loss.is_finite() || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::TrainingFailure {
                epoch,
                message: format!("loss diverged (train {epoch_loss}, validation {val_loss})"),
            });
        }
        history.train_loss.push(epoch_loss);
        history.val_loss.push(val_loss);
        history.epochs_run = epoch;
        if val_loss < history.best_val_loss() {
            history.best_epoch = epoch;
            best.copy_from_slice(&p);
        } else if epoch - history.best_epoch >= config.patience {
            break;
        }
    }
    Ok(assemble(net, &best, target, config, history))
}

/// Per-group metrics of `model` against the true labels of `data`.
pub fn evaluate(model: &Model, data: &Dataset, threshold: f64) -> Result<MetricsReport> {
    let scores = model.score_dataset(data)?;
    let predictions: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    group_metrics(&predictions, &scores, &data.true_labels(), &data.groups(), threshold)
}

/// Outcome of a SPLIT probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitProbe {
    pub probe: LinearModel,
    /// Probe AUC for predicting the group on held-out samples.
    pub split_auc: f64,
}

fn representation_dataset(model: &Model, data: &Dataset) -> Result<Dataset> {
    let samples = data
        .samples
        .iter()
        .map(|s| {
            Ok(Sample {
                features: model.representation(&s.features)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

fn require_both_groups(data: &Dataset, what: &str) -> Result<()> {
    let ones = data.samples.iter().filter(|s| s.group == 1).count();
    if ones == 0 || ones == data.len() {
        return Err(Error::DegenerateTarget(format!("{what} contains a single group")));
    }
    Ok(())
}

/// Freezes the backbone of an MLP `model`, trains a linear probe on its
/// representation to predict the group, and reports the probe's AUC on a
/// seeded half of `dataset` not used for fitting.
pub fn split_probe(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<SplitProbe> {
    model.representation(&vec![0.0; model.input_dim()])?;
    require_both_groups(dataset, "dataset")?;
    let (fit, held) = holdout_split(dataset.len(), 0.5, derive_seed(config.seed, &[tag("split-probe")]))?;
    split_probe_with_holdout(model, &dataset.select(&fit), &dataset.select(&held), config)
}

/// As [`split_probe`] with explicit fitting and scoring sets.
pub fn split_probe_with_holdout(
    model: &Model,
    fit: &Dataset,
    held_out: &Dataset,
    config: &TrainConfig,
) -> Result<SplitProbe> {
    model.representation(&vec![0.0; model.input_dim()])?;
    require_both_groups(fit, "probe fitting set")?;
    require_both_groups(held_out, "probe scoring set")?;
    let fit_rep = representation_dataset(model, fit)?;
    let probe = train_classifier(&fit_rep, Target::Group, Arch::Linear, config)?;
    let held_rep = representation_dataset(model, held_out)?;
    let scores = probe.score_dataset(&held_rep)?;
    let split_auc = roc_auc(&scores, &held_out.groups())?;
    let ModelParams::Linear(probe) = probe.params else {
        unreachable!("probe is trained as a linear model")
    };
    Ok(SplitProbe { probe, split_auc })
}

/// Largest relative discrepancy between the analytic gradient of the mean
/// loss and central finite differences, over every parameter, at a seeded
/// random parameter vector.
pub fn check_gradients(arch: Arch, config: &TrainConfig, dataset: &Dataset, target: Target) -> Result<f64> {
    config.validate()?;
    if dataset.is_empty() || dataset.len() > GRADIENT_CHECK_MAX_SAMPLES {
        return Err(Error::domain(format!(
            "gradient check takes 1..={GRADIENT_CHECK_MAX_SAMPLES} samples, got {}",
            dataset.len()
        )));
    }
    let (x, y) = design(dataset, target)?;
    let net = net_for(arch, x.cols, config);
    let mut rng = seeding::rng(derive_seed(config.seed, &[tag("gradient-check")]));
    let mut p: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut analytic = vec![0.0; p.len()];
    mean_loss(net, &p, &x, &y, &idx, Some(&mut analytic));
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + GRADIENT_CHECK_STEP;
        let up = mean_loss(net, &p, &x, &y, &idx, None);
        p[k] = orig - GRADIENT_CHECK_STEP;
        let down = mean_loss(net, &p, &x, &y, &idx, None);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_population, PopulationSpec};
    use proptest::prelude::*;

    fn sample(features: Vec<f64>, group: u8, label: u8) -> Sample {
        Sample {
            features,
            group,
            true_label: label,
            observed_label: label,
        }
    }

    /// Two clouds around (-3, 0) and (3, 0) with jitter below 1.
    fn separable_toy() -> Dataset {
        let mut rng = seeding::rng(5);
        let samples = (0..200)
            .map(|i| {
                let label = (i % 2) as u8;
                let cx = if label == 1 { 3.0 } else { -3.0 };
                let f = vec![cx + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                sample(f, (i % 3 == 0) as u8, label)
            })
            .collect();
        Dataset::new(samples)
    }

    fn accuracy(model: &Model, data: &Dataset) -> f64 {
        let hits = data
            .samples
            .iter()
            .filter(|s| model.predict(&s.features, DEFAULT_THRESHOLD).unwrap() == s.observed_label)
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let data = separable_toy();
        // x_0 = 0 separates the clouds.
        assert!(data.samples.iter().all(|s| (s.features[0] > 0.0) == (s.true_label == 1)));
        for arch in [Arch::Linear, Arch::Mlp] {
            let model = train_classifier(&data, Target::ObservedLabel, arch, &TrainConfig::default()).unwrap();
            assert_eq!(accuracy(&model, &data), 1.0, "{arch}");
        }
    }

    #[test]
    fn single_class_target_is_degenerate() {
        let mut data = separable_toy();
        for s in &mut data.samples {
            s.observed_label = 1;
        }
        let err = train_classifier(&data, Target::ObservedLabel, Arch::Linear, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateTarget(_)));
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut data = separable_toy();
        for s in &mut data.samples {
            s.features[0] *= 1e300;
        }
        let config = TrainConfig {
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        let err = train_classifier(&data, Target::ObservedLabel, Arch::Linear, &config).unwrap_err();
        assert!(matches!(err, Error::TrainingFailure { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn zero_model_scores_half() {
        let config = TrainConfig::default();
        let model = Model::initial(Arch::Linear, 3, Target::ObservedLabel, &config).unwrap();
        for x in [[0.0, 0.0, 0.0], [5.0, -2.0, 1e6]] {
            assert_eq!(model.predict_proba(&x).unwrap(), 0.5);
            assert_eq!(model.predict(&x, DEFAULT_THRESHOLD).unwrap(), 0);
        }
        assert!(model.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn scores_monotone_and_threshold_endpoints() {
        let model = Model {
            params: ModelParams::Linear(LinearModel {
                weights: vec![2.0],
                bias: -1.0,
            }),
            ..Model::initial(Arch::Linear, 1, Target::ObservedLabel, &TrainConfig::default()).unwrap()
        };
        let xs: Vec<f64> = (-50..50).map(|i| i as f64 * 2.0).collect();
        let scores: Vec<f64> = xs.iter().map(|&x| model.predict_proba(&[x]).unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        for &x in &xs {
            assert_eq!(model.predict(&[x], 0.0).unwrap(), 1);
            assert_eq!(model.predict(&[x], 1.0).unwrap(), 0);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = separable_toy();
        for arch in [Arch::Linear, Arch::Mlp] {
            let config = TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            };
            let start = Model::initial(arch, 2, Target::ObservedLabel, &config).unwrap();
            let model = train_classifier(&data, Target::ObservedLabel, arch, &config).unwrap();
            assert_eq!(model.params, start.params);
            let v = &model.history.val_loss;
            assert!(v.iter().all(|&l| l == v[0]));
            assert_eq!(model.history.epochs_run, config.patience);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = PopulationSpec::default().with_separability(0.8).unwrap();
        let data = sample_population(&spec, 600, 3).unwrap();
        let config = TrainConfig {
            batch_size: BatchSize::Size(32),
            max_epochs: 30,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_classifier(&data, Target::ObservedLabel, Arch::Mlp, &config).unwrap();
        let b = train_classifier(&data, Target::ObservedLabel, Arch::Mlp, &config).unwrap();
        assert_eq!(a, b);
        let c = train_classifier(&data, Target::ObservedLabel, Arch::Mlp, &config.with_seed(12)).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn early_stopping_returns_best_snapshot() {
        let spec = PopulationSpec::default().with_separability(0.7).unwrap();
        let data = sample_population(&spec, 300, 9).unwrap();
        let config = TrainConfig {
            learning_rate: 0.5,
            batch_size: BatchSize::Size(8),
            hidden_width: 32,
            patience: 3,
            ..TrainConfig::default()
        };
        let model = train_classifier(&data, Target::ObservedLabel, Arch::Mlp, &config).unwrap();
        let h = &model.history;
        assert!(h.epochs_run < config.max_epochs, "expected an early stop");
        assert_eq!(h.epochs_run - h.best_epoch, config.patience);
        assert!(h.val_loss.iter().all(|&v| h.best_val_loss() <= v));

        // the returned parameters reproduce the recorded best loss
        let (train, val) = holdout_split(data.len(), config.val_fraction, derive_seed(config.seed, &[tag("validation")])).unwrap();
        assert_eq!(train.len() + val.len(), data.len());
        let (x, y) = design(&data, Target::ObservedLabel).unwrap();
        let loss = mean_loss(model.net(), &model.flat(), &x, &y, &val, None);
        assert_eq!(loss, h.best_val_loss());
    }

    #[test]
    fn representation_contract() {
        let config = TrainConfig {
            hidden_width: 7,
            ..TrainConfig::default()
        };
        let model = Model::initial(Arch::Mlp, 2, Target::ObservedLabel, &config).unwrap();
        let x = [0.3, -1.2];
        let r = model.representation(&x).unwrap();
        assert_eq!(r.len(), 7);
        assert_eq!(r, model.representation(&x).unwrap());
        assert!(r.iter().all(|v| v.abs() <= 1.0));
        let linear = Model::initial(Arch::Linear, 2, Target::ObservedLabel, &config).unwrap();
        assert!(matches!(linear.representation(&x), Err(Error::UnsupportedArchitecture(_))));
    }

    #[test]
    fn representation_ignores_labels() {
        let model = Model::initial(Arch::Mlp, 2, Target::ObservedLabel, &TrainConfig::default()).unwrap();
        let mut data = separable_toy();
        let before = representation_dataset(&model, &data).unwrap();
        for s in &mut data.samples {
            s.observed_label = 1 - s.observed_label;
        }
        let after = representation_dataset(&model, &data).unwrap();
        for (a, b) in before.samples.iter().zip(&after.samples) {
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn split_probe_leaves_backbone_untouched() {
        let spec = PopulationSpec::default().with_separability(0.9).unwrap();
        let data = sample_population(&spec, 800, 1).unwrap();
        let config = TrainConfig::default();
        let model = train_classifier(&data, Target::ObservedLabel, Arch::Mlp, &config).unwrap();
        let before = serde_json::to_string(&model).unwrap();
        let probe = split_probe(&model, &data, &config).unwrap();
        assert_eq!(serde_json::to_string(&model).unwrap(), before);
        assert!(probe.split_auc > 0.5 && probe.split_auc <= 1.0);
        assert_eq!(probe.probe.weights.len(), config.hidden_width);
    }

    #[test]
    fn random_backbone_finds_no_group_signal() {
        let spec = PopulationSpec::default();
        assert_eq!(spec.group_separation, 0.0);
        let data = sample_population(&spec, 8000, 21).unwrap();
        let config = TrainConfig::default();
        let model = Model::initial(Arch::Mlp, 2, Target::ObservedLabel, &config).unwrap();
        let probe = split_probe(&model, &data, &config).unwrap();
        assert!((probe.split_auc - 0.5).abs() < 0.03, "{}", probe.split_auc);
    }

    #[test]
    fn split_probe_errors() {
        let config = TrainConfig::default();
        let mlp = Model::initial(Arch::Mlp, 2, Target::ObservedLabel, &config).unwrap();
        let mut data = separable_toy();
        for s in &mut data.samples {
            s.group = 0;
        }
        assert!(matches!(split_probe(&mlp, &data, &config), Err(Error::DegenerateTarget(_))));
        let linear = Model::initial(Arch::Linear, 2, Target::ObservedLabel, &config).unwrap();
        assert!(matches!(
            split_probe(&linear, &separable_toy(), &config),
            Err(Error::UnsupportedArchitecture(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let data = separable_toy();
        let config = TrainConfig {
            batch_size: BatchSize::Size(16),
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let model = train_classifier(&data, Target::Group, Arch::Mlp, &config).unwrap();
        let json = model.to_json();
        assert!(json.contains(r#""architecture": "mlp""#));
        assert!(json.contains(r#""batch_size": 16"#));
        let back = Model::from_json(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.fingerprint(), model.fingerprint());
    }

    #[test]
    fn config_parsing() {
        let c: TrainConfig = serde_json::from_str(r#"{"batch_size": "full", "patience": 3}"#).unwrap();
        assert_eq!(c.batch_size, BatchSize::Full);
        assert_eq!(c.patience, 3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batch_size": "half"}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"momentum": 0.9}"#).is_err());
        assert!(TrainConfig { val_fraction: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: BatchSize::Size(0), ..TrainConfig::default() }.validate().is_err());
        assert_eq!("64".parse::<BatchSize>().unwrap(), BatchSize::Size(64));
    }

    #[test]
    fn holdout_split_partitions() {
        let (a, b) = holdout_split(10, 0.2, 4).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(holdout_split(2, 0.01, 0).unwrap().1.len(), 1);
    }

    fn small_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..5, 2usize..=GRADIENT_CHECK_MAX_SAMPLES).prop_flat_map(|(dim, n)| {
            prop::collection::vec(
                (prop::collection::vec(-3.0f64..3.0, dim), 0u8..2, 0u8..2),
                n,
            )
            .prop_map(|rows| {
                Dataset::new(rows.into_iter().map(|(f, g, y)| sample(f, g, y)).collect())
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linear_gradients_match_finite_differences(data in small_dataset(), seed in 0u64..1000) {
            let config = TrainConfig::default().with_seed(seed);
            let err = check_gradients(Arch::Linear, &config, &data, Target::ObservedLabel).unwrap();
            prop_assert!(err < 1e-5, "relative error {err}");
        }

        #[test]
        fn mlp_gradients_match_finite_differences(data in small_dataset(), seed in 0u64..1000, width in 1usize..12) {
            let config = TrainConfig { hidden_width: width, ..TrainConfig::default().with_seed(seed) };
            let err = check_gradients(Arch::Mlp, &config, &data, Target::Group).unwrap();
            prop_assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn gradient_check_size_limit() {
        let data = separable_toy();
        assert!(check_gradients(Arch::Linear, &TrainConfig::default(), &data, Target::Group).is_err());
    }
}
