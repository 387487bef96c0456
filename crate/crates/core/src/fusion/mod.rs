//! Model-sharing fusion: weight averaging, synchronized and round-robin
//! federated training, sample exchange, and the region ensemble fronted by
//! a generated policy selector.

mod averaging;
mod ensemble;
mod pca;
mod regions;
mod strategy;

pub use averaging::{
    average_weights, naive_fusion, round_robin_training, sample_exchange, sync_fused_training, RoundRobinOutcome,
};
pub use ensemble::{
    build_ensemble, ensemble_predict, selector_table, BasisKind, CellFusion, EnsembleConfig, EnsembleModel, Fallback,
};
pub use pca::{pca2, Pca2};
pub use regions::{
    applicability_region, cell_classes, model_id_for, partition_regions, write_cell_table, Basis, Interval, Region,
    RegionCell,
};
pub use strategy::{select_fusion_strategy, FusionStrategy, TaskCategory};

pub(crate) use averaging::{max_norm_delta, rr_local};
