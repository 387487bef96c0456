use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, check_arch_data, forward, ArchKind, Model, ModelArch, ModelWeights, OutputSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    FullBatchGd,
    MinibatchSgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::FullBatchGd,
            loss: Loss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ModelArch) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.loss == Loss::CrossEntropy && arch.output == OutputSpec::Regression {
            return Err(Error::Config("cross-entropy loss needs a classification output".into()));
        }
        Ok(())
    }
}

/// Initial weights: zeros for linear and polynomial models, Xavier-uniform
/// matrices with zero biases for MLPs, drawn from the seed's init stream.
pub fn init_weights(arch: &ModelArch, seed: u64) -> Vec<f64> {
    let n = arch.num_weights();
    if !matches!(arch.kind, ArchKind::Mlp { .. }) {
        return vec![0.0; n];
    }
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let mut w = Vec::with_capacity(n);
    for pair in arch.layer_sizes().windows(2) {
        let (n_in, n_out) = (pair[0], pair[1]);
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_in * n_out {
            w.push(rng.random_range(-a..a));
        }
        w.extend(std::iter::repeat_n(0.0, n_out));
    }
    w
}

/// Stateful batch-stepping trainer. Local training, synchronized fusion and
/// the protocol's training service all drive this same loop, so a run of
/// `k` batches is identical however it is split into rounds.
#[derive(Clone, Debug)]
pub struct Trainer {
    arch: ModelArch,
    sizes: Vec<usize>,
    cfg: TrainConfig,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    steps: usize,
}

impl Trainer {
    /// Rows are canonicalized first, so row order in `data` never matters.
    pub fn new(arch: &ModelArch, data: &Dataset, cfg: &TrainConfig, init: Option<&[f64]>) -> Result<Self> {
        arch.validate()?;
        cfg.validate(arch)?;
        if data.is_empty() {
            return Err(Error::EmptyInput("training data".into()));
        }
        check_arch_data(arch, data)?;
        let weights = match init {
            Some(w) if w.len() != arch.num_weights() => {
                return Err(Error::ArchMismatch {
                    expected: format!("{} weights", arch.num_weights()),
                    actual: format!("{} weights", w.len()),
                })
            }
            Some(w) => w.to_vec(),
            None => init_weights(arch, cfg.seed),
        };
        let data = data.canonicalized();
        Ok(Self {
            sizes: arch.layer_sizes(),
            inputs: data.features.iter().map(|x| arch.expand(x)).collect(),
            targets: data.labels.clone(),
            order: (0..data.len()).collect(),
            arch: arch.clone(),
            cfg: cfg.clone(),
            weights,
            rng: rng::stream(cfg.seed, rng::STREAM_SHUFFLE),
            cursor: 0,
            steps: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        match self.cfg.optimizer {
            Optimizer::FullBatchGd => 1,
            Optimizer::MinibatchSgd => self.targets.len().div_ceil(self.cfg.batch_size),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::ArchMismatch {
                expected: format!("{} weights", self.weights.len()),
                actual: format!("{} weights", w.len()),
            });
        }
        self.weights.copy_from_slice(w);
        Ok(())
    }

    /// Restarts the shuffle stream and batch cursor as if freshly built.
    pub fn reset_schedule(&mut self) {
        self.rng = rng::stream(self.cfg.seed, rng::STREAM_SHUFFLE);
        self.order = (0..self.targets.len()).collect();
        self.cursor = 0;
    }

    pub fn model(&self) -> Model {
        Model {
            arch: self.arch.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn into_model(self) -> Model {
        Model {
            arch: self.arch,
            weights: self.weights,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        match self.cfg.optimizer {
            Optimizer::FullBatchGd => self.order.clone(),
            Optimizer::MinibatchSgd => {
                if self.cursor == 0 {
                    self.order.shuffle(&mut self.rng);
                }
                let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
                let batch = self.order[self.cursor..end].to_vec();
                self.cursor = if end == self.order.len() { 0 } else { end };
                batch
            }
        }
    }

    /// d loss / d output for one row, already divided by the batch size.
    fn output_gradient(&self, out: &[f64], target: f64, scale: f64) -> Vec<f64> {
        match (&self.arch.output, self.cfg.loss) {
            (OutputSpec::Regression, _) => vec![2.0 * (out[0] - target) * scale],
            (OutputSpec::Classes(_), Loss::Mse) => out
                .iter()
                .enumerate()
                .map(|(c, &o)| 2.0 * (o - one_hot(c, target)) * scale)
                .collect(),
            (OutputSpec::Classes(_), Loss::CrossEntropy) => softmax(out)
                .iter()
                .enumerate()
                .map(|(c, &p)| (p - one_hot(c, target)) * scale)
                .collect(),
        }
    }

    pub fn step(&mut self) {
        let batch = self.next_batch();
        let scale = 1.0 / batch.len() as f64;
        let act = self.arch.activation();
        let mut grad = vec![0.0; self.weights.len()];
        for &i in &batch {
            let acts = forward(&self.sizes, act, &self.weights, &self.inputs[i]);
            let dout = self.output_gradient(acts.last().expect("output layer"), self.targets[i], scale);
            backward(&self.sizes, act, &self.weights, &acts, &dout, &mut grad);
        }
        let lr = self.cfg.learning_rate;
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        self.steps += 1;
    }

    pub fn run_batches(&mut self, n: usize) {
        for _ in 0..n {
            self.step();
        }
    }

    pub fn run_epochs(&mut self, epochs: usize) {
        self.run_batches(epochs * self.batches_per_epoch());
    }

    /// Mean training loss over every row at the current weights.
    pub fn loss(&self) -> f64 {
        let act = self.arch.activation();
        let total: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, &t)| {
                let out = forward(&self.sizes, act, &self.weights, x).pop().expect("output layer");
                match (&self.arch.output, self.cfg.loss) {
                    (OutputSpec::Regression, _) => (out[0] - t).powi(2),
                    (OutputSpec::Classes(_), Loss::Mse) => out
                        .iter()
                        .enumerate()
                        .map(|(c, &o)| (o - one_hot(c, t)).powi(2))
                        .sum(),
                    (OutputSpec::Classes(_), Loss::CrossEntropy) => -softmax(&out)[t as usize].max(1e-300).ln(),
                }
            })
            .sum();
        total / self.targets.len() as f64
    }
}

fn one_hot(c: usize, target: f64) -> f64 {
    if c as f64 == target {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Trains for `cfg.epochs` epochs from `init` (or the seeded default init).
pub fn train(arch: &ModelArch, data: &Dataset, cfg: &TrainConfig, init: Option<&ModelWeights>) -> Result<Model> {
    let init_values = match init {
        Some(w) => {
            let expected = arch.fingerprint();
            if w.fingerprint != expected {
                return Err(Error::ArchMismatch {
                    expected,
                    actual: w.fingerprint.clone(),
                });
            }
            Some(w.values.as_slice())
        }
        None => None,
    };
    let mut trainer = Trainer::new(arch, data, cfg, init_values)?;
    trainer.run_epochs(cfg.epochs);
    Ok(trainer.into_model())
}
