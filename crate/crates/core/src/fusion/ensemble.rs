use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::averaging::{average_weights, round_robin_training};
use super::pca::pca2;
use super::regions::{applicability_region, model_id_for, partition_regions, Basis, RegionCell};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{Model, TrainConfig};
use crate::policy::{self, generate_policies, Context, GuidancePackage, PolicySet, Subject, Template, Terminal};
use crate::PartnerId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFusion {
    Naive,
    #[default]
    RoundRobin,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Raw,
    Pca2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    NearestCell,
    Refuse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub fusion: CellFusion,
    pub basis: BasisKind,
    pub margin: f64,
    /// Used for round-robin retraining inside multi-owner cells.
    pub train: TrainConfig,
    pub tol: f64,
    pub max_rounds: usize,
    pub fallback: Fallback,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            fusion: CellFusion::default(),
            basis: BasisKind::default(),
            margin: 0.0,
            train: TrainConfig::default(),
            tol: 1e-6,
            max_rounds: 50,
            fallback: Fallback::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub basis: Basis,
    pub members: BTreeMap<String, Model>,
    pub cells: Vec<RegionCell>,
    pub selector: PolicySet,
    pub fallback: Fallback,
}

/// Closed-box view of the cells, in cell order, for selector generation.
pub fn selector_table(cells: &[RegionCell]) -> Vec<policy::RegionCell> {
    cells
        .iter()
        .map(|c| policy::RegionCell {
            bounds: c.bounds.iter().map(|b| (b.lo, b.hi)).collect(),
            model_id: c.model_id.clone(),
        })
        .collect()
}

/// One member per cover set: single owners keep their model, shared cells
/// get the owners' models fused (naively, or by round-robin retraining on
/// the owners' rows that fall in cells of that cover set).
pub fn build_ensemble(
    models: &BTreeMap<PartnerId, Model>,
    data: &BTreeMap<PartnerId, Dataset>,
    cfg: &EnsembleConfig,
) -> Result<EnsembleModel> {
    for id in data.keys() {
        if !models.contains_key(id) {
            return Err(Error::Config(format!("partner `{id}` has data but no model")));
        }
    }
    let owners: Vec<(&PartnerId, &Dataset)> = data.iter().filter(|(_, d)| !d.is_empty()).collect();
    if owners.is_empty() {
        return Err(Error::EmptyInput("no partner has data, so no region exists".into()));
    }
    let basis = match cfg.basis {
        BasisKind::Raw => Basis::RawFeatures,
        BasisKind::Pca2 => {
            let all: Vec<Vec<f64>> = owners.iter().flat_map(|(_, d)| d.features.iter().cloned()).collect();
            Basis::Pca2(pca2(&all)?)
        }
    };
    let regions = owners
        .iter()
        .map(|(id, d)| applicability_region(d, &basis, id, cfg.margin))
        .collect::<Result<Vec<_>>>()?;
    let cells = partition_regions(&regions)?;

    let mut members = BTreeMap::new();
    let cover_sets: BTreeSet<&BTreeSet<PartnerId>> = cells.iter().map(|c| &c.applicable).collect();
    for set in cover_sets {
        let id = model_id_for(set);
        let owned: Vec<Model> = set.iter().map(|p| models[p].clone()).collect();
        let member = if owned.len() == 1 {
            owned.into_iter().next().expect("one owner")
        } else {
            let naive = average_weights(&owned, None)?;
            match cfg.fusion {
                CellFusion::Naive => naive,
                CellFusion::RoundRobin => {
                    let in_class: Vec<&RegionCell> = cells.iter().filter(|c| &c.applicable == set).collect();
                    let restricted: Vec<Dataset> = set
                        .iter()
                        .map(|p| {
                            let d = &data[p];
                            let rows: Vec<usize> = (0..d.len())
                                .filter(|&i| {
                                    let z = basis.project(&d.features[i]);
                                    in_class.iter().any(|c| c.contains(&z))
                                })
                                .collect();
                            d.select(&rows)
                        })
                        .filter(|d| !d.is_empty())
                        .collect();
                    if restricted.is_empty() {
                        naive
                    } else {
                        round_robin_training(
                            &restricted,
                            naive.arch(),
                            &cfg.train,
                            cfg.tol,
                            cfg.max_rounds,
                            Some(naive.weights()),
                        )?
                        .model
                    }
                }
            }
        };
        members.insert(id, member);
    }

    let schema = owners[0].1.schema.clone();
    let context = Context {
        partners: vec![],
        canonical: schema,
        helper_services: vec![],
        synonyms: Default::default(),
        region_table: Some(selector_table(&cells)),
    };
    let guidance = GuidancePackage {
        templates: BTreeSet::from([Template::ModelSelection]),
        ..Default::default()
    };
    let selector = generate_policies(&guidance, &context)?;
    Ok(EnsembleModel {
        basis,
        members,
        cells,
        selector,
        fallback: cfg.fallback,
    })
}

impl EnsembleModel {
    /// Member chosen for `x`: the first selector policy matching the
    /// projected point, else the fallback.
    pub fn select(&self, x: &[f64]) -> Result<&str> {
        let z = self.basis.project(x);
        let mut subject = Subject::new();
        for (i, v) in z.iter().enumerate() {
            subject.set(&format!("component{}", i + 1), *v);
        }
        if let Terminal::UseModel(id) = self.selector.evaluate(&subject)?.terminal {
            let (key, _) = self
                .members
                .get_key_value(&id)
                .ok_or_else(|| Error::UndefinedReference(format!("selector names unknown model `{id}`")))?;
            return Ok(key);
        }
        match self.fallback {
            Fallback::Refuse => Err(Error::OutOfDomain),
            Fallback::NearestCell => {
                let mut best: Option<(&RegionCell, f64)> = None;
                for c in &self.cells {
                    let d = c.distance(&z);
                    if best.is_none_or(|(_, b)| d < b) {
                        best = Some((c, d));
                    }
                }
                let cell = best.ok_or(Error::OutOfDomain)?.0;
                Ok(&cell.model_id)
            }
        }
    }
}

pub fn ensemble_predict(e: &EnsembleModel, x: &[f64]) -> Result<f64> {
    let id = e.select(x)?;
    Ok(e.members[id].predict(x))
}
