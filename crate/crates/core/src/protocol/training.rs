use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::message::{
    Body, ControlConfig, DataSampleOffer, Envelope, FusionResult, Message, ModelUpdate, Outbox, PolicyRequest,
    PolicyResponse, Register, StatsReport,
};
use super::{FusionFlavor, FUSION};
use crate::curator::apply_transforms;
use crate::dataset::Dataset;
use crate::error::Result;
use crate::fusion::rr_local;
use crate::models::{Model, Trainer};
use crate::policy::{Context, PolicySet};
use crate::{rng, PartnerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainingPhase {
    Idle,
    Configured,
    StatsSent,
    ControlReceived,
    PoliciesApplied,
    Training,
    Done,
    Failed,
}

impl TrainingPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, TrainingPhase::Done | TrainingPhase::Failed)
    }
}

/// The partner-side service: configured once, then driven entirely by the
/// fusion server's messages.
pub struct TrainingService {
    id: PartnerId,
    out: Outbox,
    phase: TrainingPhase,
    local: Dataset,
    control: Option<ControlConfig>,
    transformed: Option<Dataset>,
    applied: Vec<String>,
    received_samples: bool,
    trainer: Option<Trainer>,
    result: Option<FusionResult>,
    failure: Option<String>,
}

impl TrainingService {
    pub fn new(session_id: &str, id: &str, local: Dataset) -> Self {
        Self {
            id: id.to_string(),
            out: Outbox::new(session_id, id),
            phase: TrainingPhase::Idle,
            local,
            control: None,
            transformed: None,
            applied: Vec::new(),
            received_samples: false,
            trainer: None,
            result: None,
            failure: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> TrainingPhase {
        self.phase
    }

    /// Local data after the server's policies, plus any exchanged rows.
    pub fn training_data(&self) -> Option<&Dataset> {
        self.transformed.as_ref()
    }

    pub fn applied_policies(&self) -> &[String] {
        &self.applied
    }

    pub fn result(&self) -> Option<&FusionResult> {
        self.result.as_ref()
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    fn advance(&mut self, to: TrainingPhase) {
        debug_assert!(to == TrainingPhase::Failed || to >= self.phase, "{:?} -> {:?}", self.phase, to);
        self.phase = to;
    }

    fn fail(&mut self, to: &str, reason: String) -> Vec<Envelope> {
        self.advance(TrainingPhase::Failed);
        self.failure = Some(reason.clone());
        vec![self.out.envelope(to, Body::error(reason))]
    }

    pub fn step(&mut self, msg: &Message) -> Vec<Envelope> {
        if msg.session_id != self.out.session_id {
            if matches!(msg.body, Body::Error(_)) {
                return vec![];
            }
            return vec![self
                .out
                .envelope(&msg.sender, Body::error(format!("unknown session `{}`", msg.session_id)))];
        }
        if let Body::Error(e) = &msg.body {
            if !self.phase.is_terminal() {
                self.advance(TrainingPhase::Failed);
                self.failure = Some(format!("{} reported: {}", msg.sender, e.message));
            }
            return vec![];
        }
        match self.handle(msg) {
            Ok(out) => out,
            Err(reason) => {
                if self.phase.is_terminal() {
                    vec![self.out.envelope(&msg.sender, Body::error(reason))]
                } else {
                    self.fail(&msg.sender, reason)
                }
            }
        }
    }

    fn handle(&mut self, msg: &Message) -> std::result::Result<Vec<Envelope>, String> {
        use TrainingPhase::*;
        let illegal = || format!("{:?} is not legal here", msg.kind());
        let from_server = msg.sender == FUSION;
        match (&msg.body, self.phase) {
            (Body::ConfigureTraining(_), Idle) => {
                self.advance(Configured);
                let stats = StatsReport::of(&self.local);
                let register = Register {
                    declared_format: self.local.schema.format.clone(),
                };
                self.advance(StatsSent);
                Ok(vec![
                    self.out.envelope(FUSION, Body::Register(register)),
                    self.out.envelope(FUSION, Body::StatsReport(stats)),
                ])
            }
            (Body::ControlConfig(c), StatsSent) if from_server => {
                c.arch.validate().map_err(|e| e.to_string())?;
                c.train.validate(&c.arch).map_err(|e| e.to_string())?;
                self.control = Some((**c).clone());
                self.advance(ControlReceived);
                Ok(vec![self.out.envelope(FUSION, Body::PolicyRequest(PolicyRequest {}))])
            }
            (Body::PolicyResponse(p), ControlReceived) if from_server => {
                let offer = self.apply(p).map_err(|e| e.to_string())?;
                self.advance(PoliciesApplied);
                Ok(vec![self.out.envelope(FUSION, Body::DataSampleOffer(offer))])
            }
            (Body::DataSampleOffer(o), PoliciesApplied) if from_server => {
                let control = self.control.as_ref().expect("configured");
                if control.exchange_k == 0 || self.received_samples {
                    return Err(illegal());
                }
                if let Some(s) = &o.samples {
                    self.transformed
                        .as_mut()
                        .expect("policies applied")
                        .extend_from(s)
                        .map_err(|e| e.to_string())?;
                }
                self.received_samples = true;
                Ok(vec![])
            }
            (Body::ModelUpdate(u), PoliciesApplied | Training) if from_server => {
                let control = self.control.as_ref().expect("configured");
                if control.exchange_k > 0 && !self.received_samples {
                    return Err("model update before the sample exchange finished".into());
                }
                let w = self.train_round(&u.weights).map_err(|e| e.to_string())?;
                self.advance(Training);
                let n = self.trainer.as_ref().map_or(0, Trainer::num_samples);
                Ok(vec![self.out.envelope(
                    FUSION,
                    Body::ModelUpdate(ModelUpdate {
                        round: u.round,
                        weights: w,
                        num_samples: n,
                    }),
                )])
            }
            (Body::FusionResult(r), p) if from_server && !p.is_terminal() && p != Idle => {
                self.result = Some(r.clone());
                self.advance(Done);
                Ok(vec![])
            }
            _ => Err(illegal()),
        }
    }

    fn apply(&mut self, p: &PolicyResponse) -> Result<DataSampleOffer> {
        let control = self.control.as_ref().expect("configured");
        let policies = PolicySet::parse(&p.policies)?;
        let context = Context {
            partners: vec![],
            canonical: control.canonical.clone(),
            helper_services: p.helper_services.clone(),
            synonyms: Default::default(),
            region_table: None,
        };
        let (data, applied) = apply_transforms(&self.local, &self.id, &self.local.schema.format, &context, &policies)?;
        let samples = (control.exchange_k > 0).then(|| {
            let donor = data.canonicalized();
            let take = control.exchange_k.min(donor.len());
            let mut r = rng::stream(control.exchange_seed, control.partner_index as u64);
            let mut rows = index::sample(&mut r, donor.len(), take).into_vec();
            rows.sort_unstable();
            donor.select(&rows)
        });
        self.transformed = Some(data);
        self.applied = applied;
        Ok(DataSampleOffer {
            samples,
            generator: None,
        })
    }

    fn train_round(&mut self, start: &[f64]) -> Result<Vec<f64>> {
        let control = self.control.as_ref().expect("configured");
        if self.trainer.is_none() {
            let data = self.transformed.as_ref().expect("policies applied");
            self.trainer = Some(Trainer::new(&control.arch, data, &control.train, Some(start))?);
        }
        let t = self.trainer.as_mut().expect("trainer");
        match control.flavor {
            FusionFlavor::Synchronized => {
                t.set_weights(start)?;
                t.run_batches(control.local_batches);
                Ok(t.weights().to_vec())
            }
            FusionFlavor::RoundRobin => rr_local(t, start, &control.train),
        }
    }

    /// The model the server last reported as final.
    pub fn final_model(&self) -> Option<Result<Model>> {
        let r = self.result.as_ref()?;
        let arch = self.control.as_ref()?.arch.clone();
        Some(Model::new(arch, r.weights.clone()))
    }
}
