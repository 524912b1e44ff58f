//! Training loop: minibatch Adam with an optional clamp after every step.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::data::{load_mnist, make_spike_dataset, Dataset, Split, Targets, MNIST_MEAN, MNIST_STD};
use crate::error::{Error, Result};
use crate::mlp::{argmax_rows, rows, BatchTargets, Loss, Mlp};

const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Standard,
    /// Weights of layer `l` clamped to `[-c / d_(l-1), c / d_(l-1)]` after each step.
    Dense,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::Dense => "dense",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "dense" => Ok(Mode::Dense),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected standard or dense"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSpec {
    Mnist,
    /// `size` training rows chosen by `subset_seed`; the full test set.
    MnistSubset {
        size: usize,
        #[serde(default)]
        subset_seed: u64,
    },
    /// Spike regression with grid size `grid` in `[0, 1]^d0`.
    Spike {
        d0: usize,
        grid: usize,
        samples: usize,
        #[serde(default)]
        data_seed: u64,
    },
}

impl DataSpec {
    pub fn loss(&self) -> Loss {
        match self {
            DataSpec::Spike { .. } => Loss::Squared,
            _ => Loss::CrossEntropy,
        }
    }

    /// A regression prediction counts as correct within `1 / (4N)`.
    pub fn tolerance(&self) -> f64 {
        match self {
            DataSpec::Spike { grid, .. } => 1.0 / (4 * (*grid).max(1)) as f64,
            _ => 0.0,
        }
    }

    pub fn load(&self, mnist_dir: &Path) -> Result<Split> {
        match self {
            DataSpec::Mnist => load_mnist(mnist_dir),
            DataSpec::MnistSubset { size, subset_seed } => {
                let full = load_mnist(mnist_dir)?;
                Ok(Split { train: full.train.subset(*size, *subset_seed)?, test: full.test })
            }
            DataSpec::Spike { d0, grid, samples, data_seed } => {
                Ok(make_spike_dataset(*d0, *grid, *data_seed, *samples)?.split)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub width: usize,
    pub mode: Mode,
    pub clamp_numerator: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dataset: DataSpec,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Standardize MNIST pixels with the training-set mean and deviation.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            width: 128,
            mode: Mode::Standard,
            clamp_numerator: 10.0,
            lr: 1e-3,
            batch: 128,
            epochs: 20,
            seed: 0,
            dataset: DataSpec::Mnist,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            standardize: true,
        }
    }
}

impl TrainConfig {
    /// Loads the configured dataset, standardized when asked.
    pub fn load_data(&self, mnist_dir: &Path) -> Result<Split> {
        let mut split = self.dataset.load(mnist_dir)?;
        if self.standardize && self.dataset.loss() == Loss::CrossEntropy {
            split.standardize(MNIST_MEAN, MNIST_STD);
        }
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clamp-numerator", self.clamp_numerator),
            ("lr", self.lr),
            ("adam-eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.width == 0 || self.batch == 0 {
            return Err(Error::Config("width and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Minibatch accuracy over the epoch, in percent.
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Accuracy of the final network on the whole training set, in percent.
    pub train_acc: f64,
    pub test_acc: f64,
    /// Loss of the final network on the whole training set.
    pub final_loss: f64,
    pub wall_s: f64,
}

fn batch_targets<'a>(data: &'a Dataset) -> BatchTargets<'a> {
    match &data.targets {
        Targets::Classes { labels, .. } => BatchTargets::Classes(labels),
        Targets::Values(v) => BatchTargets::Values(v),
    }
}

fn correct(y: &Array2<f64>, targets: BatchTargets, tolerance: f64) -> usize {
    match targets {
        BatchTargets::Classes(labels) => argmax_rows(y).iter().zip(labels).filter(|(p, l)| p == l).count(),
        BatchTargets::Values(values) => {
            y.column(0).iter().zip(values).filter(|(p, t)| (*p - *t).abs() < tolerance).count()
        }
    }
}

fn slice<'a>(targets: BatchTargets<'a>, start: usize, end: usize) -> BatchTargets<'a> {
    match targets {
        BatchTargets::Classes(l) => BatchTargets::Classes(&l[start..end]),
        BatchTargets::Values(v) => BatchTargets::Values(&v[start..end]),
    }
}

/// Mean loss and accuracy (percent) of `net` on `data`.
pub fn evaluate(net: &Mlp, data: &Dataset, loss: Loss, tolerance: f64) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let targets = batch_targets(data);
    let (mut total, mut hits) = (0.0, 0);
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let y = net.forward(rows(&data.inputs, start, end));
        let t = slice(targets, start, end);
        total += crate::mlp::output_loss_value(&y, t, loss) * (end - start) as f64;
        hits += correct(&y, t, tolerance);
    }
    (total / data.len() as f64, 100.0 * hits as f64 / data.len() as f64)
}

/// Initial network of a run: He-uniform from stream 0 of the seed.
pub fn initial_network(config: &TrainConfig, input: usize, output: usize) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    Mlp::he_uniform(input, config.width, output, &mut rng)
}

pub fn train(config: &TrainConfig, split: &Split) -> Result<RunMetrics> {
    Ok(train_observed(config, split, |_| {})?.0)
}

/// Trains and returns the final network; `observe` sees the network after
/// every optimizer step (and clamp).
pub fn train_observed(config: &TrainConfig, split: &Split, mut observe: impl FnMut(&Mlp)) -> Result<(RunMetrics, Mlp)> {
    config.validate()?;
    let start = Instant::now();
    let data = &split.train;
    if split.test.input_dim() != data.input_dim() || split.test.output_dim() != data.output_dim() {
        return Err(Error::Config("train and test sets have different shapes".into()));
    }
    let loss = config.dataset.loss();
    let tolerance = config.dataset.tolerance();
    let mut net = initial_network(config, data.input_dim(), data.output_dim());
    let mut adam = Adam::new(net.params().len(), config.lr, config.beta1, config.beta2, config.adam_eps);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.params().len()];
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut hits) = (0.0, 0);
        for idx in order.chunks(config.batch) {
            let batch = data.select(idx);
            let targets = batch_targets(&batch);
            let (value, y) = net.loss_and_grad(batch.inputs.view(), targets, loss, &mut grad);
            adam.step(net.params_mut(), &grad);
            if config.mode == Mode::Dense {
                net.clamp(config.clamp_numerator);
            }
            observe(&net);
            total += value * idx.len() as f64;
            hits += correct(&y, targets, tolerance);
        }
        let n = data.len().max(1) as f64;
        epochs.push(EpochMetrics { epoch, loss: total / n, train_acc: 100.0 * hits as f64 / n });
    }
    let (final_loss, train_acc) = evaluate(&net, data, loss, tolerance);
    let (_, test_acc) = evaluate(&net, &split.test, loss, tolerance);
    let metrics = RunMetrics {
        seed: config.seed,
        epochs,
        train_acc,
        test_acc,
        final_loss,
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok((metrics, net))
}

/// Standard deviation with the `n - 1` denominator; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
