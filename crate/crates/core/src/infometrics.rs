//! Quality and value of information.
//!
//! QoI is a distance Δ between a dataset and the ground truth it samples;
//! VoI of new data J given existing data I under analysis task A is the
//! decision-space distance δ(a(I ∪ J), a(I)). Both metrics are traits so
//! callers can plug in their own; the defaults are label disagreement for Δ
//! and probe-set prediction disagreement for δ.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelSpec};
use crate::datagen::PiecewisePolynomial;
use crate::error::{Error, Result};
use crate::models::{init_weights, train, Model, ModelArch, OutputSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Oracle {
    /// Regression ground truth `y = f(x)` over a one-dimensional domain.
    Curve { curve: PiecewisePolynomial },
    /// Class of the nearest centroid (Euclidean, lowest index on ties).
    NearestCentroid { centroids: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub oracle: Oracle,
    /// Per-axis `[lo, hi]` on which the oracle is defined.
    pub domain: Vec<(f64, f64)>,
}

const DOMAIN_SLACK: f64 = 1e-9;

impl GroundTruth {
    pub fn label(&self, x: &[f64]) -> f64 {
        match &self.oracle {
            Oracle::Curve { curve } => curve.eval(x[0]),
            Oracle::NearestCentroid { centroids } => {
                let mut best = (0usize, f64::INFINITY);
                for (i, c) in centroids.iter().enumerate() {
                    let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best.0 as f64
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.domain.len()
            && x
                .iter()
                .zip(&self.domain)
                .all(|(&v, &(lo, hi))| v >= lo - DOMAIN_SLACK && v <= hi + DOMAIN_SLACK)
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.oracle, Oracle::NearestCentroid { .. })
    }

    /// Range of oracle values over the domain (grid-sampled for curves).
    pub fn label_range(&self) -> (f64, f64) {
        match &self.oracle {
            Oracle::Curve { curve } => {
                let (lo, hi) = self.domain[0];
                let n = 1000;
                (0..=n)
                    .map(|i| curve.eval(lo + (hi - lo) * i as f64 / n as f64))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
            }
            Oracle::NearestCentroid { centroids } => (0.0, centroids.len().saturating_sub(1) as f64),
        }
    }
}

/// Δ over the information space.
pub trait InfoDistance {
    fn distance(&self, data: &Dataset, truth: &GroundTruth) -> Result<f64>;
}

/// Fraction of rows whose label disagrees with the oracle. For regression a
/// row disagrees when `|y - f(x)| > tolerance`; the default tolerance is 5%
/// of the oracle's label range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelDisagreement {
    pub tolerance: Option<f64>,
}

impl InfoDistance for LabelDisagreement {
    fn distance(&self, data: &Dataset, truth: &GroundTruth) -> Result<f64> {
        let tolerance = self.tolerance.unwrap_or_else(|| {
            let (lo, hi) = truth.label_range();
            0.05 * (hi - lo)
        });
        let mut wrong = 0usize;
        for (i, (x, &y)) in data.features.iter().zip(&data.labels).enumerate() {
            if !truth.contains(x) {
                return Err(Error::Domain(format!("row {i} lies outside the ground-truth domain")));
            }
            let expected = truth.label(x);
            let disagrees = if truth.is_classification() {
                y != expected
            } else {
                (y - expected).abs() > tolerance
            };
            if disagrees {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiScore {
    pub distance: f64,
    /// `1 / (1 + distance)`, higher is better.
    pub score: f64,
}

pub fn qoi(data: &Dataset, truth: &GroundTruth, metric: &dyn InfoDistance) -> Result<QoiScore> {
    if data.is_empty() {
        return Err(Error::EmptyInput("qoi of an empty dataset".into()));
    }
    let distance = metric.distance(data, truth)?;
    Ok(QoiScore {
        distance,
        score: 1.0 / (1.0 + distance),
    })
}

/// The analysis task `a(·)`: training a fixed arch with a fixed config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTask {
    pub arch: ModelArch,
    pub train_config: TrainConfig,
}

impl AnalysisTask {
    pub fn run(&self, data: &Dataset) -> Result<Model> {
        train(&self.arch, data, &self.train_config, None)
    }
}

/// δ over the decision space. `default_probe` holds the feature rows of
/// `existing ∪ new`, for metrics that need inputs and have none of their own.
pub trait DecisionDistance {
    fn distance(&self, a: &Model, b: &Model, default_probe: &[Vec<f64>]) -> Result<f64>;
}

/// Mean prediction disagreement on a probe set: disagreement rate for
/// classifiers, mean absolute difference for regressors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeDisagreement {
    pub probe: Option<Vec<Vec<f64>>>,
}

impl DecisionDistance for ProbeDisagreement {
    fn distance(&self, a: &Model, b: &Model, default_probe: &[Vec<f64>]) -> Result<f64> {
        let probe = self.probe.as_deref().unwrap_or(default_probe);
        if probe.is_empty() {
            return Err(Error::EmptyInput("probe set".into()));
        }
        let total: f64 = probe
            .iter()
            .map(|x| {
                let (pa, pb) = (a.predict(x), b.predict(x));
                match a.arch().output {
                    OutputSpec::Regression => (pa - pb).abs(),
                    OutputSpec::Classes(_) => f64::from(u8::from(pa != pb)),
                }
            })
            .sum();
        Ok(total / probe.len() as f64)
    }
}

/// Euclidean distance between weight vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightL2;

impl DecisionDistance for WeightL2 {
    fn distance(&self, a: &Model, b: &Model, _: &[Vec<f64>]) -> Result<f64> {
        if a.arch() != b.arch() {
            return Err(Error::ArchMismatch {
                expected: a.arch().fingerprint(),
                actual: b.arch().fingerprint(),
            });
        }
        Ok(a.weights()
            .iter()
            .zip(b.weights())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// `δ(a(existing ∪ new), a(existing))`, both fits sharing the task's seed.
/// With no existing data the baseline is the task's initial model.
pub fn voi(new_data: &Dataset, existing: &Dataset, task: &AnalysisTask, metric: &dyn DecisionDistance) -> Result<f64> {
    if !new_data.schema.compatible_with(&existing.schema) {
        return Err(Error::Schema(
            "new data schema differs from the existing data; relabel before valuing".into(),
        ));
    }
    if new_data.is_empty() {
        return Ok(0.0);
    }
    if existing.is_empty() {
        // a(∅) is the untrained initial model
        let baseline = Model::new(task.arch.clone(), init_weights(&task.arch, task.train_config.seed))?;
        let fitted = task.run(new_data)?;
        return metric.distance(&fitted, &baseline, &new_data.features);
    }
    let mut union = existing.clone();
    union.extend_from(new_data)?;
    let (with_new, baseline) = std::thread::scope(|s| {
        let handle = s.spawn(|| task.run(&union));
        let baseline = task.run(existing);
        (handle.join().expect("training thread panicked"), baseline)
    });
    metric.distance(&with_new?, &baseline?, &union.features)
}

/// Class-balance statistic reported alongside QoI: smallest class count over
/// largest, across the declared classes (0 when a class is missing).
pub fn class_balance(data: &Dataset) -> Option<f64> {
    let LabelSpec::Classes(classes) = &data.schema.labels else {
        return None;
    };
    let hist = data.class_histogram();
    let counts: Vec<usize> = classes.iter().map(|c| hist.get(c).copied().unwrap_or(0)).collect();
    let max = *counts.iter().max()?;
    if max == 0 {
        return Some(0.0);
    }
    Some(*counts.iter().min()? as f64 / max as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{inject_noise, synth_classification, synth_curve, ClassSkewSpec, CurveSpec};
    use crate::dataset::Schema;
    use crate::models::{ArchKind, Optimizer};

    fn line_task() -> AnalysisTask {
        AnalysisTask {
            arch: ModelArch::linear(1, OutputSpec::Regression),
            train_config: TrainConfig {
                learning_rate: 0.1,
                epochs: 4000,
                optimizer: Optimizer::FullBatchGd,
                ..Default::default()
            },
        }
    }

    fn line_on(lo: f64, hi: f64, n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Dataset::from_rows(
            Schema {
                format: "canonical".into(),
                fields: vec!["x".into()],
                labels: LabelSpec::Range { lo: 0.0, hi: 3.0 },
            },
            xs.iter().map(|&x| vec![x]).collect(),
            xs.clone(),
            "p",
        )
        .unwrap()
    }

    #[test]
    fn exact_samples_have_zero_distance() {
        let spec = CurveSpec {
            noise_sigma: 0.0,
            ..CurveSpec::reference()
        };
        let (sites, truth) = synth_curve(&spec).unwrap();
        let q = qoi(&sites[0], &truth, &LabelDisagreement::default()).unwrap();
        assert_eq!(q.distance, 0.0);
        assert_eq!(q.score, 1.0);
    }

    #[test]
    fn flipped_labels_counted_exactly() {
        let spec = ClassSkewSpec {
            samples_per_site: 100,
            ..ClassSkewSpec::balanced(3, 1, 4)
        };
        let site = synth_classification(&spec).unwrap().remove(0);
        let truth = spec.ground_truth();
        let mut noisy = inject_noise(&site, 0.2, 11).unwrap();
        let flips = noisy.noise_marks.as_ref().unwrap().iter().filter(|&&m| m).count();
        let q = qoi(&noisy, &truth, &LabelDisagreement::default()).unwrap();
        assert_eq!(q.distance, flips as f64 / 100.0);

        // force exactly 20 flips to pin the worked value
        noisy = site.clone();
        for i in 0..20 {
            noisy.labels[i] = (noisy.labels[i] + 1.0) % 3.0;
        }
        let q = qoi(&noisy, &truth, &LabelDisagreement::default()).unwrap();
        assert!((q.distance - 0.2).abs() < 1e-15);
        assert!((q.score - 1.0 / 1.2).abs() < 1e-15);

        let all = inject_noise(&site, 1.0, 5).unwrap();
        let q = qoi(&all, &truth, &LabelDisagreement::default()).unwrap();
        assert_eq!(q.distance, 1.0);
        assert_eq!(q.score, 0.5);
    }

    #[test]
    fn qoi_errors() {
        let (sites, truth) = synth_curve(&CurveSpec::reference()).unwrap();
        let empty = Dataset::empty(sites[0].schema.clone());
        assert!(matches!(
            qoi(&empty, &truth, &LabelDisagreement::default()),
            Err(Error::EmptyInput(_))
        ));
        let mut outside = sites[0].clone();
        outside.features[0][0] = 10.0;
        assert!(matches!(
            qoi(&outside, &truth, &LabelDisagreement::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn voi_of_empty_new_data_is_zero() {
        let existing = line_on(0.0, 1.0, 20);
        let empty = Dataset::empty(existing.schema.clone());
        assert_eq!(voi(&empty, &existing, &line_task(), &ProbeDisagreement::default()).unwrap(), 0.0);
    }

    #[test]
    fn voi_of_consistent_extension_is_near_zero() {
        let existing = line_on(0.0, 1.0, 21);
        let new = line_on(2.0, 3.0, 21);
        let probe: Vec<Vec<f64>> = (0..=30).map(|i| vec![i as f64 / 10.0]).collect();
        let metric = ProbeDisagreement { probe: Some(probe) };
        let v = voi(&new, &existing, &line_task(), &metric).unwrap();
        assert!(v < 1e-4, "voi {v}");
    }

    #[test]
    fn voi_rewards_new_regions_over_duplicates() {
        let (sites, _) = synth_curve(&CurveSpec::reference()).unwrap();
        let CurveSpec { domain, .. } = CurveSpec::reference();
        let task = AnalysisTask {
            arch: ModelArch {
                kind: ArchKind::Polynomial {
                    degree: 3,
                    lo: domain.0,
                    hi: domain.1,
                },
                input_dim: 1,
                output: OutputSpec::Regression,
            },
            train_config: TrainConfig {
                learning_rate: 0.5,
                epochs: 500,
                ..Default::default()
            },
        };
        let metric = ProbeDisagreement::default();
        let region_b = voi(&sites[1], &sites[0], &task, &metric).unwrap();
        let duplicate = voi(&sites[0], &sites[0], &task, &metric).unwrap();
        assert!(region_b > duplicate, "{region_b} vs {duplicate}");
        assert!(duplicate < 1e-9);
    }

    #[test]
    fn voi_is_permutation_invariant() {
        let existing = line_on(0.0, 1.0, 10);
        let new = line_on(1.5, 2.5, 10);
        let mut shuffled = new.clone();
        shuffled.features.reverse();
        shuffled.labels.reverse();
        shuffled.provenance.reverse();
        let m = ProbeDisagreement::default();
        let task = AnalysisTask {
            train_config: TrainConfig {
                epochs: 50,
                ..line_task().train_config
            },
            ..line_task()
        };
        assert_eq!(
            voi(&new, &existing, &task, &m).unwrap(),
            voi(&shuffled, &existing, &task, &m).unwrap()
        );
    }

    #[test]
    fn voi_rejects_schema_mismatch() {
        let existing = line_on(0.0, 1.0, 5);
        let mut other = line_on(0.0, 1.0, 5);
        other.schema.fields = vec!["volts".into()];
        assert!(matches!(
            voi(&other, &existing, &line_task(), &ProbeDisagreement::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn decision_distances_are_symmetric_and_zero_on_identity() {
        let arch = ModelArch::linear(1, OutputSpec::Regression);
        let a = Model::new(arch.clone(), vec![1.0, 0.0]).unwrap();
        let b = Model::new(arch, vec![2.0, 1.0]).unwrap();
        let probe = vec![vec![0.0], vec![1.0]];
        let m = ProbeDisagreement::default();
        assert_eq!(m.distance(&a, &a, &probe).unwrap(), 0.0);
        assert_eq!(m.distance(&a, &b, &probe).unwrap(), m.distance(&b, &a, &probe).unwrap());
        assert_eq!(m.distance(&a, &b, &probe).unwrap(), 1.5);
        assert_eq!(WeightL2.distance(&a, &a, &[]).unwrap(), 0.0);
        assert_eq!(WeightL2.distance(&a, &b, &[]).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn class_balance_reports_ratio() {
        let spec = ClassSkewSpec {
            priors: vec![vec![1.0, 0.0, 0.0]],
            ..ClassSkewSpec::balanced(3, 1, 2)
        };
        let site = synth_classification(&spec).unwrap().remove(0);
        assert_eq!(class_balance(&site), Some(0.0));
    }
}
