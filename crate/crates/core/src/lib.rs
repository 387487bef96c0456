//! Federated learning among coalition partners.
//!
//! Two federation modes are supported: data sharing, where a curator
//! translates, deduplicates and gates partner datasets before consolidating
//! them, and model sharing, where partner models are fused by weight
//! averaging, round-robin training, sample exchange or a region-of-
//! applicability ensemble. A deterministic discrete-event simulation carries
//! the training-service / fusion-service session protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod curator;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod infometrics;
pub mod models;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

/// Partner identifiers are plain strings (`"1"`, `"UK"`, ...).
pub type PartnerId = String;

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
