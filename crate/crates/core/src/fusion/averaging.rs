use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{init_weights, Model, ModelArch, TrainConfig, Trainer};
use crate::rng;

/// Elementwise weighted mean of the weight vectors, uniform when `weights`
/// is `None`. A single model comes back bit-for-bit.
pub fn average_weights(models: &[Model], weights: Option<&[f64]>) -> Result<Model> {
    let first = models.first().ok_or_else(|| Error::EmptyInput("no models to average".into()))?;
    let fp = first.arch().fingerprint();
    for m in &models[1..] {
        if m.arch().fingerprint() != fp {
            return Err(Error::ArchMismatch {
                expected: fp,
                actual: m.arch().fingerprint(),
            });
        }
    }
    let coefs: Vec<f64> = match weights {
        None => vec![1.0 / models.len() as f64; models.len()],
        Some(w) => {
            if w.len() != models.len() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("averaging weights must be positive, one per model".into()));
            }
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect()
        }
    };
    Model::new(first.arch().clone(), combine(models.iter().map(Model::weights), &coefs))
}

fn combine<'a>(vectors: impl Iterator<Item = &'a [f64]>, coefs: &[f64]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for (i, (v, &c)) in vectors.zip(coefs).enumerate() {
        if i == 0 {
            acc = v.iter().map(|x| x * c).collect();
        } else {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x * c;
            }
        }
    }
    acc
}

/// One-shot unweighted average of independently trained models.
pub fn naive_fusion(models: &[Model]) -> Result<Model> {
    average_weights(models, None)
}

/// Synchronized federated training. Every round each partner runs
/// `local_batches` steps from the shared weights, then the server averages
/// by sample count and re-broadcasts. The shared init comes from the first
/// partner's seed.
pub fn sync_fused_training(
    partners: &[(Dataset, TrainConfig)],
    arch: &ModelArch,
    rounds: usize,
    local_batches: usize,
) -> Result<Model> {
    let (_, first_cfg) = partners
        .first()
        .ok_or_else(|| Error::EmptyInput("no partners".into()))?;
    let mut current = init_weights(arch, first_cfg.seed);
    let mut trainers = partners
        .iter()
        .map(|(data, cfg)| {
            if data.is_empty() {
                return Err(Error::EmptyInput("a partner has no training data".into()));
            }
            Trainer::new(arch, data, cfg, Some(&current))
        })
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<f64> = trainers.iter().map(|t| t.num_samples() as f64).collect();
    let total: f64 = counts.iter().sum();
    let coefs: Vec<f64> = counts.iter().map(|c| c / total).collect();
    for _ in 0..rounds {
        for t in &mut trainers {
            t.set_weights(&current)?;
            t.run_batches(local_batches);
        }
        current = combine(trainers.iter().map(Trainer::weights), &coefs);
    }
    Model::new(arch.clone(), current)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRobinOutcome {
    pub model: Model,
    pub rounds_used: usize,
    pub converged: bool,
    /// Max-norm change between consecutive round-end models, one per round.
    pub deltas: Vec<f64>,
}

pub(crate) fn max_norm_delta(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Partner `j` (1-based within the round) trains fully from the running
/// model `m_{j-1}` and is merged as `m_j = m_{j-1} + (w_j - m_{j-1}) / j`.
/// Stops once a round moves the model by less than `tol` in max-norm.
pub fn round_robin_training(
    partners: &[Dataset],
    arch: &ModelArch,
    cfg: &TrainConfig,
    tol: f64,
    max_rounds: usize,
    init: Option<&[f64]>,
) -> Result<RoundRobinOutcome> {
    if partners.is_empty() {
        return Err(Error::EmptyInput("no partners".into()));
    }
    if partners.iter().any(Dataset::is_empty) {
        return Err(Error::EmptyInput("a partner has no training data".into()));
    }
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be >= 1".into()));
    }
    let mut trainers = partners
        .iter()
        .map(|d| Trainer::new(arch, d, cfg, init))
        .collect::<Result<Vec<_>>>()?;
    let mut current = match init {
        Some(w) => w.to_vec(),
        None => init_weights(arch, cfg.seed),
    };
    let mut deltas = Vec::new();
    for round in 1..=max_rounds {
        let start = current.clone();
        let mut running = start.clone();
        for (j, t) in trainers.iter_mut().enumerate() {
            let w = rr_local(t, &running, cfg)?;
            if j == 0 {
                running = w;
            } else {
                let n = (j + 1) as f64;
                for (r, x) in running.iter_mut().zip(&w) {
                    *r += (x - *r) / n;
                }
            }
        }
        current = running;
        let delta = max_norm_delta(&current, &start);
        deltas.push(delta);
        if partners.len() == 1 || delta < tol {
            return Ok(RoundRobinOutcome {
                model: Model::new(arch.clone(), current)?,
                rounds_used: round,
                converged: true,
                deltas,
            });
        }
    }
    Ok(RoundRobinOutcome {
        model: Model::new(arch.clone(), current)?,
        rounds_used: max_rounds,
        converged: false,
        deltas,
    })
}

/// Full local training (all configured epochs) from `start`, with the
/// shuffle stream restarted so every visit is the same function of `start`.
pub(crate) fn rr_local(t: &mut Trainer, start: &[f64], cfg: &TrainConfig) -> Result<Vec<f64>> {
    t.reset_schedule();
    t.set_weights(start)?;
    t.run_epochs(cfg.epochs);
    Ok(t.weights().to_vec())
}

/// Every partner receives `k` rows (or the whole donor if smaller) drawn
/// without replacement from each other partner. Donor `j` is sampled once
/// from `rng::stream(seed, j)` after canonical ordering, so all recipients
/// get the same rows from it.
pub fn sample_exchange(partners: &[Dataset], k: usize, seed: u64) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Ok(partners.to_vec());
    }
    if let Some(first) = partners.first() {
        if partners.iter().any(|p| !p.schema.compatible_with(&first.schema)) {
            return Err(Error::Schema("sample exchange needs a common schema".into()));
        }
    }
    let donations: Vec<Dataset> = partners
        .iter()
        .enumerate()
        .map(|(j, donor)| {
            let donor = donor.canonicalized();
            let take = k.min(donor.len());
            let mut r = rng::stream(seed, j as u64);
            let mut rows = index::sample(&mut r, donor.len(), take).into_vec();
            rows.sort_unstable();
            donor.select(&rows)
        })
        .collect();
    partners
        .iter()
        .enumerate()
        .map(|(i, own)| {
            let mut out = own.clone();
            for (j, d) in donations.iter().enumerate() {
                if j != i {
                    out.extend_from(d)?;
                }
            }
            Ok(out)
        })
        .collect()
}
