use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::message::{decode_frame, encode_frame, Body, ConfigureTraining, Envelope, Message, Outbox};
use super::server::{FusionOutcome, FusionPhase, FusionService};
use super::training::{TrainingPhase, TrainingService};
use super::{SessionConfig, COORDINATOR, FUSION};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::{rng, PartnerId};

/// Virtual-time network. A message from `a` to `b` takes
/// `latency(a) + latency(b)` ticks plus up to `jitter` extra, and each
/// directed link stays FIFO.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedTransport {
    pub base_latency: u64,
    pub node_latency: BTreeMap<String, u64>,
    pub jitter: u64,
    pub seed: u64,
    pub max_events: usize,
}

impl Default for SimulatedTransport {
    fn default() -> Self {
        Self {
            base_latency: 5,
            node_latency: BTreeMap::new(),
            jitter: 0,
            seed: 0,
            max_events: 1_000_000,
        }
    }
}

impl SimulatedTransport {
    fn latency(&self, node: &str) -> u64 {
        self.node_latency.get(node).copied().unwrap_or(self.base_latency)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[non_exhaustive]
pub enum Transport {
    Simulated(SimulatedTransport),
}

/// Everything a session needs: the server config, each partner's local
/// data, and the server's validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionSpec {
    pub config: SessionConfig,
    pub data: BTreeMap<PartnerId, Dataset>,
    pub validation: Option<Dataset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub t: u64,
    pub to: String,
    pub message: Message,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub entries: Vec<TranscriptEntry>,
    pub fingerprint: String,
    pub outcome: FusionOutcome,
    /// Each partner's training set as it stood when the session ended.
    #[serde(skip)]
    pub partner_data: BTreeMap<PartnerId, Dataset>,
    /// Errors the server received or hit while validating.
    pub warnings: Vec<String>,
}

impl SessionTranscript {
    /// One JSON object per line, delivery time first.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_validation_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["metric", "value"])?;
        for (k, v) in &self.outcome.metrics {
            csv.write_record([k.as_str(), &v.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn count(&self, kind: super::MessageKind) -> usize {
        self.entries.iter().filter(|e| e.message.kind() == kind).count()
    }
}

type QueueKey = (u64, String, u64);

struct Network<'a> {
    transport: &'a SimulatedTransport,
    queue: BTreeMap<QueueKey, (String, Vec<u8>)>,
    link_clock: BTreeMap<(String, String), u64>,
    jitter: rand_chacha::ChaCha8Rng,
}

impl Network<'_> {
    fn send(&mut self, now: u64, env: Envelope) -> Result<()> {
        let from = env.message.sender.clone();
        let mut t = now + self.transport.latency(&from) + self.transport.latency(&env.to);
        if self.transport.jitter > 0 {
            t += self.jitter.random_range(0..=self.transport.jitter);
        }
        let link = self.link_clock.entry((from.clone(), env.to.clone())).or_insert(0);
        t = t.max(*link);
        *link = t;
        let key = (t, from, env.message.seq);
        let frame = encode_frame(&env.message)?;
        if self.queue.insert(key, (env.to, frame)).is_some() {
            return Err(Error::Protocol("duplicate (time, sender, seq) key".into()));
        }
        Ok(())
    }
}

/// Drives every state machine until no message is in flight. Delivery is
/// in `(time, sender, seq)` order.
pub fn run_session(spec: &SessionSpec, transport: &Transport) -> Result<SessionTranscript> {
    let Transport::Simulated(sim) = transport;
    let cfg = &spec.config;
    cfg.validate()?;
    for id in spec.data.keys() {
        if !cfg.partners.iter().any(|p| &p.id == id) {
            return Err(Error::Config(format!("data given for unknown partner `{id}`")));
        }
    }
    let mut partners: BTreeMap<PartnerId, TrainingService> = BTreeMap::new();
    for p in &cfg.partners {
        let data = spec
            .data
            .get(&p.id)
            .ok_or_else(|| Error::Config(format!("partner `{}` has no data", p.id)))?;
        partners.insert(p.id.clone(), TrainingService::new(&cfg.session_id, &p.id, data.clone()));
    }
    let mut fusion = FusionService::new(cfg.clone(), spec.validation.clone())?;
    let mut net = Network {
        transport: sim,
        queue: BTreeMap::new(),
        link_clock: BTreeMap::new(),
        jitter: rng::stream(sim.seed, rng::STREAM_JITTER),
    };
    let mut coordinator = Outbox::new(&cfg.session_id, COORDINATOR);
    for p in &cfg.partners {
        net.send(0, coordinator.envelope(&p.id, Body::ConfigureTraining(ConfigureTraining {})))?;
    }

    let mut entries = Vec::new();
    let mut events = 0usize;
    while let Some(((t, _, _), (to, frame))) = net.queue.pop_first() {
        events += 1;
        if events > sim.max_events {
            return Err(Error::Protocol(format!("no completion within {} deliveries", sim.max_events)));
        }
        let (message, _) = decode_frame(&frame)?;
        let outbound = if to == FUSION {
            fusion.step(&message)
        } else if let Some(p) = partners.get_mut(&to) {
            p.step(&message)
        } else if to == COORDINATOR {
            vec![]
        } else {
            return Err(Error::Protocol(format!("message addressed to unknown node `{to}`")));
        };
        entries.push(TranscriptEntry { t, to, message });
        for env in outbound {
            net.send(t, env)?;
        }
    }

    if let Some(p) = partners.values().find(|p| p.phase() == TrainingPhase::Failed) {
        return Err(Error::Protocol(format!(
            "partner `{}` failed: {}",
            p.id(),
            p.failure().unwrap_or("unknown reason")
        )));
    }
    let outcome = match fusion.outcome() {
        Some(o) if fusion.phase() == FusionPhase::Complete && partners.values().all(|p| p.phase().is_terminal()) => {
            o.clone()
        }
        _ => {
            let mut phases = vec![format!("{FUSION}: {:?}", fusion.phase())];
            phases.extend(partners.values().map(|p| format!("{}: {:?}", p.id(), p.phase())));
            return Err(Error::Deadlock { phases });
        }
    };
    Ok(SessionTranscript {
        entries,
        fingerprint: outcome.model.content_hash(),
        partner_data: partners
            .values()
            .filter_map(|p| p.training_data().map(|d| (p.id().to_string(), d.clone())))
            .collect(),
        outcome,
        warnings: fusion.partner_errors().to_vec(),
    })
}
