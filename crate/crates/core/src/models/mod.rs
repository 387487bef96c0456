//! Small deterministic trainable models: linear, Legendre-polynomial and
//! multilayer perceptrons, all stored as a flat weight vector.
//!
//! Weight layout, per dense layer in order: the `out × in` matrix row-major,
//! then the `out` biases. Hidden layers use the arch activation, the output
//! layer is linear (softmax is applied for classification).

mod arch;
mod io;
mod train;

pub use arch::{Activation, ArchKind, ModelArch, OutputSpec};
pub use train::{init_weights, train, Loss, Optimizer, TrainConfig, Trainer};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, LabelSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub fingerprint: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: ModelArch,
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Accuracy,
}

impl Model {
    pub fn new(arch: ModelArch, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.num_weights() {
            return Err(Error::ArchMismatch {
                expected: format!("{} weights", arch.num_weights()),
                actual: format!("{} weights", weights.len()),
            });
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: ModelArch) -> Result<Self> {
        let n = arch.num_weights();
        Self::new(arch, vec![0.0; n])
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get_weights(&self) -> ModelWeights {
        ModelWeights {
            fingerprint: self.arch.fingerprint(),
            values: self.weights.clone(),
        }
    }

    pub fn set_weights(&self, w: &ModelWeights) -> Result<Model> {
        let expected = self.arch.fingerprint();
        if w.fingerprint != expected {
            return Err(Error::ArchMismatch {
                expected,
                actual: w.fingerprint.clone(),
            });
        }
        Model::new(self.arch.clone(), w.values.clone())
    }

    /// Raw output-layer values (pre-softmax for classification).
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        let input = self.arch.expand(x);
        forward(&self.arch.layer_sizes(), self.arch.activation(), &self.weights, &input)
            .pop()
            .expect("at least one layer")
    }

    /// Regression value, or the argmax class index (lowest index on ties).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let out = self.outputs(x);
        match self.arch.output {
            OutputSpec::Regression => out[0],
            OutputSpec::Classes(_) => argmax(&out) as f64,
        }
    }

    pub fn evaluate(&self, data: &Dataset, metric: Metric) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("evaluation dataset".into()));
        }
        self.check_data(data)?;
        let n = data.len() as f64;
        match metric {
            Metric::Mse => Ok(data
                .features
                .iter()
                .zip(&data.labels)
                .map(|(x, &y)| (self.predict(x) - y).powi(2))
                .sum::<f64>()
                / n),
            Metric::Accuracy => {
                if !data.schema.labels.is_classification() {
                    return Err(Error::Config("accuracy needs class labels".into()));
                }
                let hits = data
                    .features
                    .iter()
                    .zip(&data.labels)
                    .filter(|(x, &y)| self.predict(x) == y)
                    .count();
                Ok(hits as f64 / n)
            }
        }
    }

    /// Default metric for the arch's output: MSE for regression, accuracy
    /// for classification.
    pub fn default_metric(&self) -> Metric {
        match self.arch.output {
            OutputSpec::Regression => Metric::Mse,
            OutputSpec::Classes(_) => Metric::Accuracy,
        }
    }

    /// SHA-256 over the serialized model file; equal iff arch and every
    /// weight bit agree.
    pub fn content_hash(&self) -> String {
        crate::hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        check_arch_data(&self.arch, data)
    }
}

pub(crate) fn check_arch_data(arch: &ModelArch, data: &Dataset) -> Result<()> {
    if data.dim() != arch.input_dim {
        return Err(Error::Schema(format!(
            "dataset has {} fields, arch expects {}",
            data.dim(),
            arch.input_dim
        )));
    }
    match (&arch.output, &data.schema.labels) {
        (OutputSpec::Regression, LabelSpec::Range { .. }) => Ok(()),
        (OutputSpec::Classes(k), LabelSpec::Classes(c)) if *k == c.len() => Ok(()),
        _ => Err(Error::Schema("dataset labels do not match the arch output".into())),
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Activations of every layer, input first; the last entry is the linear output.
pub(crate) fn forward(sizes: &[usize], act: Activation, w: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(sizes.len());
    acts.push(input.to_vec());
    let mut off = 0;
    let last = sizes.len() - 2;
    for (l, pair) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let (mat, rest) = w[off..].split_at(n_in * n_out);
        let bias = &rest[..n_out];
        let prev = &acts[l];
        let out: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &mat[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(prev).fold(bias[o], |acc, (a, b)| acc + a * b);
                if l == last {
                    z
                } else {
                    act.apply(z)
                }
            })
            .collect();
        acts.push(out);
        off += n_in * n_out + n_out;
    }
    acts
}

/// Accumulates `d loss / d w` into `grad` given `d loss / d output`.
pub(crate) fn backward(
    sizes: &[usize],
    act: Activation,
    w: &[f64],
    acts: &[Vec<f64>],
    dout: &[f64],
    grad: &mut [f64],
) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for pair in sizes.windows(2) {
        offsets.push(off);
        off += pair[0] * pair[1] + pair[1];
    }
    let mut delta = dout.to_vec();
    for l in (0..sizes.len() - 1).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let base = offsets[l];
        let input = &acts[l];
        for o in 0..n_out {
            let d = delta[o];
            let row = base + o * n_in;
            for i in 0..n_in {
                grad[row + i] += d * input[i];
            }
            grad[base + n_in * n_out + o] += d;
        }
        if l > 0 {
            delta = (0..n_in)
                .map(|i| {
                    let s: f64 = (0..n_out).map(|o| w[base + o * n_in + i] * delta[o]).sum();
                    s * act.derivative_from_output(input[i])
                })
                .collect();
        }
    }
}
