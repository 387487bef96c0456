//! Fusion-session choreography between partner training services and the
//! fusion server, carried over a deterministic simulated network.

mod message;
mod server;
mod sim;
mod training;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use message::{
    decode_frame, encode_frame, read_frame, write_frame, Body, ConfigureTraining, ControlConfig, DataSampleOffer,
    Envelope, ErrorReport, FusionResult, Message, MessageKind, ModelUpdate, PolicyRequest, PolicyResponse, Register,
    StatsReport, ValidationReport,
};
pub use server::{FusionOutcome, FusionPhase, FusionService};
pub use sim::{run_session, SessionSpec, SessionTranscript, SimulatedTransport, TranscriptEntry, Transport};
pub use training::{TrainingPhase, TrainingService};

use crate::dataset::Schema;
use crate::error::{Error, Result};
use crate::models::{ModelArch, TrainConfig};
use crate::policy::{GuidancePackage, HelperService, SynonymTable};
use crate::PartnerId;

/// Node id of the fusion server.
pub const FUSION: &str = "fusion";
/// Node id of the session driver that configures partners and receives the
/// validation report.
pub const COORDINATOR: &str = "coordinator";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Synchronized,
    Asynchronous,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionFlavor {
    /// Local batches from shared weights, sample-count averaging each round.
    #[default]
    Synchronized,
    /// Sequential full local training from the running average.
    RoundRobin,
}

fn default_trust() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartnerSpec {
    pub id: PartnerId,
    #[serde(default = "default_trust")]
    pub trustworthiness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default)]
    pub flavor: FusionFlavor,
    pub partners: Vec<PartnerSpec>,
    pub canonical: Schema,
    #[serde(default)]
    pub helper_services: Vec<HelperService>,
    #[serde(default)]
    pub synonyms: SynonymTable,
    #[serde(default)]
    pub guidance: GuidancePackage,
    pub arch: ModelArch,
    #[serde(default)]
    pub train: TrainConfig,
    pub rounds: usize,
    pub local_batches: usize,
    #[serde(default)]
    pub exchange_k: usize,
    #[serde(default)]
    pub exchange_seed: u64,
    pub tol: f64,
    pub max_rounds: usize,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&str> = self.partners.iter().map(|p| p.id.as_str()).collect();
        if ids.len() != self.partners.len() {
            return Err(Error::Config("partner ids must be unique".into()));
        }
        if ids.contains(FUSION) || ids.contains(COORDINATOR) {
            return Err(Error::Config(format!("`{FUSION}` and `{COORDINATOR}` are reserved node ids")));
        }
        self.arch.validate()?;
        self.train.validate(&self.arch)?;
        self.guidance.validate()?;
        if self.mode == SessionMode::Asynchronous {
            if self.flavor == FusionFlavor::Synchronized {
                return Err(Error::Config("asynchronous sessions need the round-robin flavor".into()));
            }
            if self.exchange_k > 0 {
                return Err(Error::Config("sample exchange needs a synchronized session".into()));
            }
        }
        match self.flavor {
            FusionFlavor::Synchronized if self.rounds > 0 && self.local_batches == 0 => {
                Err(Error::Config("local_batches must be >= 1".into()))
            }
            FusionFlavor::RoundRobin if self.max_rounds == 0 => Err(Error::Config("max_rounds must be >= 1".into())),
            FusionFlavor::RoundRobin if !(self.tol >= 0.0) => Err(Error::Config("tol must be >= 0".into())),
            _ => Ok(()),
        }
    }
}
