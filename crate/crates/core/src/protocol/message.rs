use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema};
use crate::error::{Error, Result};
use crate::models::{ModelArch, TrainConfig};
use crate::policy::HelperService;

use super::FusionFlavor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Register,
    ConfigureTraining,
    StatsReport,
    ControlConfig,
    PolicyRequest,
    PolicyResponse,
    DataSampleOffer,
    ModelUpdate,
    FusionResult,
    ValidationReport,
    Error,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Register {
    pub declared_format: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigureTraining {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub rows: usize,
    /// Empty for regression data.
    pub label_histogram: BTreeMap<String, usize>,
    pub label_vocabulary: Vec<String>,
    pub label_bounds: Option<(f64, f64)>,
    pub fields: Vec<String>,
    pub declared_format: String,
    pub feature_bounds: Option<Vec<(f64, f64)>>,
}

impl StatsReport {
    pub fn of(data: &Dataset) -> Self {
        Self {
            rows: data.len(),
            label_histogram: data.class_histogram(),
            label_vocabulary: data.schema.labels.class_names().to_vec(),
            label_bounds: data.label_bounds(),
            fields: data.schema.fields.clone(),
            declared_format: data.schema.format.clone(),
            feature_bounds: data.feature_bounds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub flavor: FusionFlavor,
    pub rounds: usize,
    pub local_batches: usize,
    pub exchange_k: usize,
    pub exchange_seed: u64,
    /// Position of the recipient in the session's partner list.
    pub partner_index: usize,
    pub canonical: Schema,
    pub arch: ModelArch,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub policies: String,
    pub helper_services: Vec<HelperService>,
}

/// Partner to server: its exchange sample (none when the session does no
/// exchange); also signals that local policies are applied. Server to
/// partner: the other partners' samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSampleOffer {
    pub samples: Option<Dataset>,
    /// Reserved for a synthetic-data generator description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub round: usize,
    pub weights: Vec<f64>,
    pub num_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub weights: Vec<f64>,
    pub fingerprint: String,
    pub rounds_used: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Body {
    Register(Register),
    ConfigureTraining(ConfigureTraining),
    StatsReport(StatsReport),
    ControlConfig(Box<ControlConfig>),
    PolicyRequest(PolicyRequest),
    PolicyResponse(PolicyResponse),
    DataSampleOffer(DataSampleOffer),
    ModelUpdate(ModelUpdate),
    FusionResult(FusionResult),
    ValidationReport(ValidationReport),
    Error(ErrorReport),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Register(_) => MessageKind::Register,
            Body::ConfigureTraining(_) => MessageKind::ConfigureTraining,
            Body::StatsReport(_) => MessageKind::StatsReport,
            Body::ControlConfig(_) => MessageKind::ControlConfig,
            Body::PolicyRequest(_) => MessageKind::PolicyRequest,
            Body::PolicyResponse(_) => MessageKind::PolicyResponse,
            Body::DataSampleOffer(_) => MessageKind::DataSampleOffer,
            Body::ModelUpdate(_) => MessageKind::ModelUpdate,
            Body::FusionResult(_) => MessageKind::FusionResult,
            Body::ValidationReport(_) => MessageKind::ValidationReport,
            Body::Error(_) => MessageKind::Error,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Body::Error(ErrorReport { message: message.into() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(flatten)]
    pub body: Body,
    pub session_id: String,
    pub sender: String,
    pub seq: u64,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}

/// A message plus its destination node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub to: String,
    pub message: Message,
}

/// Per-sender sequence numbering, starting at 1.
#[derive(Clone, Debug, Default)]
pub(crate) struct Outbox {
    pub session_id: String,
    pub sender: String,
    pub seq: u64,
}

impl Outbox {
    pub fn new(session_id: &str, sender: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            sender: sender.to_string(),
            seq: 0,
        }
    }

    pub fn envelope(&mut self, to: &str, body: Body) -> Envelope {
        self.seq += 1;
        Envelope {
            to: to.to_string(),
            message: Message {
                body,
                session_id: self.session_id.clone(),
                sender: self.sender.clone(),
                seq: self.seq,
            },
        }
    }
}

const MAX_FRAME: usize = 1 << 30;

/// 4-byte big-endian length, then the UTF-8 JSON object.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(msg)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Protocol("message too large for one frame".into()))?;
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize)> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::Protocol("truncated frame header".into()))?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {len} exceeds limit")));
    }
    let body = bytes
        .get(4..4 + len)
        .ok_or_else(|| Error::Protocol(format!("truncated frame: need {len} bytes")))?;
    Ok((serde_json::from_slice(body)?, 4 + len))
}

pub fn write_frame<W: Write>(mut w: W, msg: &Message) -> Result<()> {
    w.write_all(&encode_frame(msg)?)?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(mut r: R) -> Result<Option<Message>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(Error::Protocol("truncated frame header".into()))
            };
        }
        got += n;
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}
