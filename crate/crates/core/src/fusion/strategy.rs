use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// AI task categories by input kind and output kind.
///
/// | | known output | unknown output |
/// |---|---|---|
/// | features | I | III |
/// | raw input | II | IV |
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    I,
    II,
    III,
    IV,
}

impl TaskCategory {
    pub fn new(features_input: bool, known_output: bool) -> Self {
        match (features_input, known_output) {
            (true, true) => TaskCategory::I,
            (false, true) => TaskCategory::II,
            (true, false) => TaskCategory::III,
            (false, false) => TaskCategory::IV,
        }
    }

    pub fn features_input(self) -> bool {
        matches!(self, TaskCategory::I | TaskCategory::III)
    }

    pub fn known_output(self) -> bool {
        matches!(self, TaskCategory::I | TaskCategory::II)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Naive,
    Sync,
    RoundRobin,
    SampleExchange,
    Ensemble,
}

/// Weight averaging always applies; sample exchange whenever partners may
/// exchange samples; the region ensemble only for feature-input tasks.
pub fn select_fusion_strategy(cat: TaskCategory, can_exchange_samples: bool) -> BTreeSet<FusionStrategy> {
    let mut out = BTreeSet::from([FusionStrategy::Naive, FusionStrategy::Sync, FusionStrategy::RoundRobin]);
    if can_exchange_samples {
        out.insert(FusionStrategy::SampleExchange);
    }
    if cat.features_input() {
        out.insert(FusionStrategy::Ensemble);
    }
    out
}
