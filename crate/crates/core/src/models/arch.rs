use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed in terms of the activation output `a`.
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArchKind {
    Linear,
    /// Per-coordinate Legendre expansion of degree `degree`, after mapping
    /// `[lo, hi]` onto `[-1, 1]`. No cross terms.
    Polynomial { degree: usize, lo: f64, hi: f64 },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpec {
    Regression,
    Classes(usize),
}

impl OutputSpec {
    pub fn width(&self) -> usize {
        match self {
            OutputSpec::Regression => 1,
            OutputSpec::Classes(k) => *k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub kind: ArchKind,
    pub input_dim: usize,
    pub output: OutputSpec,
}

impl ModelArch {
    pub fn linear(input_dim: usize, output: OutputSpec) -> Self {
        Self {
            kind: ArchKind::Linear,
            input_dim,
            output,
        }
    }

    pub fn polynomial(degree: usize, lo: f64, hi: f64, input_dim: usize, output: OutputSpec) -> Self {
        Self {
            kind: ArchKind::Polynomial { degree, lo, hi },
            input_dim,
            output,
        }
    }

    pub fn mlp(hidden: Vec<usize>, activation: Activation, input_dim: usize, output: OutputSpec) -> Self {
        Self {
            kind: ArchKind::Mlp { hidden, activation },
            input_dim,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        match &self.output {
            OutputSpec::Classes(k) if *k < 2 => {
                return Err(Error::Config("classification needs at least 2 classes".into()))
            }
            _ => {}
        }
        match &self.kind {
            ArchKind::Linear => Ok(()),
            ArchKind::Polynomial { degree, lo, hi } => {
                if *degree == 0 {
                    Err(Error::Config("polynomial degree must be >= 1".into()))
                } else if !(lo < hi) {
                    Err(Error::Config(format!("polynomial range [{lo}, {hi}] is empty")))
                } else {
                    Ok(())
                }
            }
            ArchKind::Mlp { hidden, .. } => {
                if hidden.contains(&0) {
                    Err(Error::Config("hidden layer sizes must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Width of the expanded input fed to the first dense layer.
    pub fn feature_dim(&self) -> usize {
        match &self.kind {
            ArchKind::Polynomial { degree, .. } => self.input_dim * degree,
            _ => self.input_dim,
        }
    }

    /// Dense layer widths, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.feature_dim()];
        if let ArchKind::Mlp { hidden, .. } = &self.kind {
            sizes.extend(hidden.iter().copied());
        }
        sizes.push(self.output.width());
        sizes
    }

    pub fn activation(&self) -> Activation {
        match &self.kind {
            ArchKind::Mlp { activation, .. } => *activation,
            _ => Activation::Tanh,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Hex SHA-256 of the canonical JSON encoding, truncated to 128 bits.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("arch serializes");
        let digest = Sha256::digest(json.as_bytes());
        crate::hex(&digest[..16])
    }

    /// Maps a raw input row onto the dense-layer input.
    pub(crate) fn expand(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ArchKind::Polynomial { degree, lo, hi } => {
                let mut out = Vec::with_capacity(self.input_dim * degree);
                for &v in x {
                    let u = 2.0 * (v - lo) / (hi - lo) - 1.0;
                    let (mut prev, mut cur) = (1.0, u);
                    out.push(cur);
                    for n in 1..*degree {
                        let n = n as f64;
                        let next = ((2.0 * n + 1.0) * u * cur - n * prev) / (n + 1.0);
                        prev = cur;
                        cur = next;
                        out.push(cur);
                    }
                }
                out
            }
            _ => x.to_vec(),
        }
    }
}
