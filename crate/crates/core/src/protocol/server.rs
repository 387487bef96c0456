use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::message::{
    Body, ControlConfig, DataSampleOffer, Envelope, FusionResult, Message, ModelUpdate, Outbox, PolicyResponse,
    StatsReport, ValidationReport,
};
use super::{FusionFlavor, SessionConfig, SessionMode, COORDINATOR, FUSION};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::fusion::{average_weights, max_norm_delta};
use crate::models::{init_weights, Metric, Model};
use crate::policy::{generate_policies, Context, PartnerDescriptor, PolicySet};
use crate::PartnerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionPhase {
    Waiting,
    SessionConfigured,
    PoliciesIssued,
    Fusing,
    Validating,
    Complete,
}

/// Final model and convergence record of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub model: Model,
    pub rounds_used: usize,
    pub converged: bool,
    pub deltas: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Default)]
struct SyncRound {
    round: usize,
    updates: BTreeMap<PartnerId, (Vec<f64>, usize)>,
}

#[derive(Default)]
struct RoundRobinState {
    round: usize,
    start: Vec<f64>,
    running: Vec<f64>,
    merged: usize,
    visited: BTreeSet<PartnerId>,
    busy: Option<PartnerId>,
    deltas: Vec<f64>,
}

/// The server-side service. Partners are taken in the configured order
/// wherever order matters (averaging, round-robin visits, sample pooling).
pub struct FusionService {
    cfg: SessionConfig,
    validation: Option<Dataset>,
    out: Outbox,
    phase: FusionPhase,
    registered: BTreeSet<PartnerId>,
    stats: BTreeMap<PartnerId, StatsReport>,
    policies: BTreeMap<PartnerId, PolicySet>,
    answered: BTreeSet<PartnerId>,
    ready: BTreeMap<PartnerId, Option<Dataset>>,
    started: bool,
    current: Vec<f64>,
    sync: SyncRound,
    rr: RoundRobinState,
    outcome: Option<FusionOutcome>,
    partner_errors: Vec<String>,
}

impl FusionService {
    pub fn new(cfg: SessionConfig, validation: Option<Dataset>) -> Result<Self> {
        cfg.validate()?;
        let current = init_weights(&cfg.arch, cfg.train.seed);
        Ok(Self {
            out: Outbox::new(&cfg.session_id, FUSION),
            cfg,
            validation,
            phase: FusionPhase::Waiting,
            registered: BTreeSet::new(),
            stats: BTreeMap::new(),
            policies: BTreeMap::new(),
            answered: BTreeSet::new(),
            ready: BTreeMap::new(),
            started: false,
            current,
            sync: SyncRound::default(),
            rr: RoundRobinState::default(),
            outcome: None,
            partner_errors: Vec::new(),
        })
    }

    pub fn phase(&self) -> FusionPhase {
        self.phase
    }

    pub fn registered(&self) -> &BTreeSet<PartnerId> {
        &self.registered
    }

    pub fn outcome(&self) -> Option<&FusionOutcome> {
        self.outcome.as_ref()
    }

    pub fn partner_errors(&self) -> &[String] {
        &self.partner_errors
    }

    /// Policies issued to each partner.
    pub fn issued_policies(&self) -> &BTreeMap<PartnerId, PolicySet> {
        &self.policies
    }

    fn advance(&mut self, to: FusionPhase) {
        if to > self.phase {
            self.phase = to;
        }
    }

    fn order(&self) -> impl Iterator<Item = &PartnerId> {
        self.cfg.partners.iter().map(|p| &p.id)
    }

    fn expected(&self) -> usize {
        self.cfg.partners.len()
    }

    pub fn step(&mut self, msg: &Message) -> Vec<Envelope> {
        if let Body::Error(e) = &msg.body {
            self.partner_errors.push(format!("{}: {}", msg.sender, e.message));
            return vec![];
        }
        if msg.session_id != self.cfg.session_id {
            return vec![self
                .out
                .envelope(&msg.sender, Body::error(format!("unknown session `{}`", msg.session_id)))];
        }
        if self.phase == FusionPhase::Complete {
            // late joiners get the final result; registered partners already have it
            let known = self.order().any(|p| *p == msg.sender);
            if known && self.registered.contains(&msg.sender) {
                return vec![];
            }
            return match (&self.outcome, &msg.body) {
                (Some(o), Body::Register(_)) if known => {
                    let result = Self::result_of(o);
                    self.registered.insert(msg.sender.clone());
                    vec![self.out.envelope(&msg.sender, Body::FusionResult(result))]
                }
                _ => vec![self.out.envelope(&msg.sender, Body::error("session is complete"))],
            };
        }
        match self.handle(msg) {
            Ok(out) => out,
            Err(reason) => vec![self.out.envelope(&msg.sender, Body::error(reason))],
        }
    }

    fn handle(&mut self, msg: &Message) -> std::result::Result<Vec<Envelope>, String> {
        let from = msg.sender.clone();
        let known = self.order().any(|p| *p == from);
        match &msg.body {
            Body::Register(_) => {
                if !known {
                    return Err(format!("`{from}` is not a partner of this session"));
                }
                if !self.registered.insert(from.clone()) {
                    return Err(format!("`{from}` is already registered"));
                }
                Ok(vec![])
            }
            Body::StatsReport(s) => {
                if !self.registered.contains(&from) {
                    return Err(format!("`{from}` sent statistics before registering"));
                }
                if self.stats.contains_key(&from) {
                    return Err(format!("`{from}` already sent statistics"));
                }
                self.stats.insert(from.clone(), s.clone());
                match self.cfg.mode {
                    SessionMode::Synchronized if self.stats.len() == self.expected() => {
                        let all: Vec<PartnerId> = self.order().cloned().collect();
                        self.configure(&all)
                    }
                    SessionMode::Synchronized => Ok(vec![]),
                    SessionMode::Asynchronous => self.configure(&[from]),
                }
            }
            Body::PolicyRequest(_) => {
                let Some(policies) = self.policies.get(&from) else {
                    return Err(format!("`{from}` has not been configured"));
                };
                if !self.answered.insert(from.clone()) {
                    return Err(format!("`{from}` already received its policies"));
                }
                let response = PolicyResponse {
                    policies: policies.to_text(),
                    helper_services: self.cfg.helper_services.clone(),
                };
                self.advance(FusionPhase::PoliciesIssued);
                Ok(vec![self.out.envelope(&from, Body::PolicyResponse(response))])
            }
            Body::DataSampleOffer(o) => {
                if !self.answered.contains(&from) || self.ready.contains_key(&from) {
                    return Err(format!("unexpected sample offer from `{from}`"));
                }
                self.ready.insert(from, o.samples.clone());
                self.try_start()
            }
            Body::ModelUpdate(u) if self.phase == FusionPhase::Fusing => match self.cfg.flavor {
                FusionFlavor::Synchronized => self.on_sync_update(&from, u),
                FusionFlavor::RoundRobin => self.on_rr_update(&from, u),
            },
            _ => Err(format!("{:?} is not legal in phase {:?}", msg.kind(), self.phase)),
        }
    }

    fn configure(&mut self, ids: &[PartnerId]) -> std::result::Result<Vec<Envelope>, String> {
        let partners: Vec<PartnerDescriptor> = self
            .cfg
            .partners
            .iter()
            .filter_map(|p| {
                self.stats.get(&p.id).map(|s| PartnerDescriptor {
                    id: p.id.clone(),
                    declared_format: s.declared_format.clone(),
                    declared_labels: s.label_vocabulary.clone(),
                    declared_fields: s.fields.clone(),
                    trustworthiness: p.trustworthiness,
                })
            })
            .collect();
        let context = Context {
            partners,
            canonical: self.cfg.canonical.clone(),
            helper_services: self.cfg.helper_services.clone(),
            synonyms: self.cfg.synonyms.clone(),
            region_table: None,
        };
        let policies = match generate_policies(&self.cfg.guidance, &context) {
            Ok(p) => p,
            Err(e) => {
                let reason = e.to_string();
                return Ok(ids
                    .iter()
                    .map(|id| self.out.envelope(id, Body::error(reason.clone())))
                    .collect());
            }
        };
        let mut out = Vec::new();
        for id in ids {
            let index = self.cfg.partners.iter().position(|p| &p.id == id).expect("known partner");
            self.policies.insert(id.clone(), policies.clone());
            let control = ControlConfig {
                flavor: self.cfg.flavor,
                rounds: self.cfg.rounds,
                local_batches: self.cfg.local_batches,
                exchange_k: self.cfg.exchange_k,
                exchange_seed: self.cfg.exchange_seed,
                partner_index: index,
                canonical: self.cfg.canonical.clone(),
                arch: self.cfg.arch.clone(),
                train: self.cfg.train.clone(),
            };
            out.push(self.out.envelope(id, Body::ControlConfig(Box::new(control))));
        }
        self.advance(FusionPhase::SessionConfigured);
        Ok(out)
    }

    fn try_start(&mut self) -> std::result::Result<Vec<Envelope>, String> {
        let mut out = Vec::new();
        if !self.started {
            let enough = match self.cfg.mode {
                SessionMode::Synchronized => self.ready.len() == self.expected(),
                SessionMode::Asynchronous => !self.ready.is_empty(),
            };
            if !enough {
                return Ok(out);
            }
            self.started = true;
            self.advance(FusionPhase::Fusing);
            if self.cfg.exchange_k > 0 {
                out.extend(self.distribute_samples()?);
            }
            match self.cfg.flavor {
                FusionFlavor::Synchronized => {
                    if self.cfg.rounds == 0 {
                        out.extend(self.finish(self.current.clone(), 0, true, vec![]));
                        return Ok(out);
                    }
                    self.sync.round = 1;
                    out.extend(self.broadcast_round());
                    return Ok(out);
                }
                FusionFlavor::RoundRobin => {
                    self.rr = RoundRobinState {
                        round: 1,
                        start: self.current.clone(),
                        running: self.current.clone(),
                        ..Default::default()
                    };
                }
            }
        }
        if self.cfg.flavor == FusionFlavor::RoundRobin {
            out.extend(self.schedule());
        }
        Ok(out)
    }

    /// Each partner gets every other partner's sample, in partner order.
    fn distribute_samples(&mut self) -> std::result::Result<Vec<Envelope>, String> {
        let ids: Vec<PartnerId> = self.order().cloned().collect();
        let mut out = Vec::new();
        for id in &ids {
            let mut pooled: Option<Dataset> = None;
            for donor in ids.iter().filter(|d| *d != id) {
                let Some(s) = self.ready.get(donor).and_then(Option::as_ref) else {
                    continue;
                };
                match &mut pooled {
                    None => pooled = Some(s.clone()),
                    Some(p) => p.extend_from(s).map_err(|e| e.to_string())?,
                }
            }
            let offer = DataSampleOffer {
                samples: pooled,
                generator: None,
            };
            out.push(self.out.envelope(id, Body::DataSampleOffer(offer)));
        }
        Ok(out)
    }

    fn broadcast_round(&mut self) -> Vec<Envelope> {
        let ids: Vec<PartnerId> = self.order().cloned().collect();
        ids.iter()
            .map(|id| {
                let u = ModelUpdate {
                    round: self.sync.round,
                    weights: self.current.clone(),
                    num_samples: 0,
                };
                self.out.envelope(id, Body::ModelUpdate(u))
            })
            .collect()
    }

    fn on_sync_update(&mut self, from: &str, u: &ModelUpdate) -> std::result::Result<Vec<Envelope>, String> {
        if u.round != self.sync.round || self.sync.updates.contains_key(from) {
            return Err(format!("unexpected update for round {} from `{from}`", u.round));
        }
        if u.weights.len() != self.current.len() || u.num_samples == 0 {
            return Err(format!("malformed update from `{from}`"));
        }
        self.sync.updates.insert(from.to_string(), (u.weights.clone(), u.num_samples));
        if self.sync.updates.len() < self.expected() {
            return Ok(vec![]);
        }
        let updates = std::mem::take(&mut self.sync.updates);
        let mut models = Vec::new();
        let mut counts = Vec::new();
        for id in self.order() {
            let (w, n) = &updates[id];
            models.push(Model::new(self.cfg.arch.clone(), w.clone()).map_err(|e| e.to_string())?);
            counts.push(*n as f64);
        }
        self.current = average_weights(&models, Some(&counts))
            .map_err(|e| e.to_string())?
            .weights()
            .to_vec();
        if self.sync.round == self.cfg.rounds {
            return Ok(self.finish(self.current.clone(), self.cfg.rounds, true, vec![]));
        }
        self.sync.round += 1;
        Ok(self.broadcast_round())
    }

    fn on_rr_update(&mut self, from: &str, u: &ModelUpdate) -> std::result::Result<Vec<Envelope>, String> {
        if self.rr.busy.as_deref() != Some(from) || u.round != self.rr.round {
            return Err(format!("unexpected update for round {} from `{from}`", u.round));
        }
        if u.weights.len() != self.current.len() {
            return Err(format!("malformed update from `{from}`"));
        }
        if self.rr.merged == 0 {
            self.rr.running = u.weights.clone();
        } else {
            let n = (self.rr.merged + 1) as f64;
            for (r, x) in self.rr.running.iter_mut().zip(&u.weights) {
                *r += (x - *r) / n;
            }
        }
        self.rr.merged += 1;
        self.rr.visited.insert(from.to_string());
        self.rr.busy = None;
        Ok(self.schedule())
    }

    /// Hands the running model to the next ready, unvisited partner. A round
    /// closes when none is left; convergence is only judged on rounds every
    /// partner took part in.
    fn schedule(&mut self) -> Vec<Envelope> {
        loop {
            if self.rr.busy.is_some() || self.phase != FusionPhase::Fusing {
                return vec![];
            }
            let next = self
                .order()
                .find(|p| self.ready.contains_key(*p) && !self.rr.visited.contains(*p))
                .cloned();
            if let Some(p) = next {
                let u = ModelUpdate {
                    round: self.rr.round,
                    weights: self.rr.running.clone(),
                    num_samples: 0,
                };
                self.rr.busy = Some(p.clone());
                return vec![self.out.envelope(&p, Body::ModelUpdate(u))];
            }
            if self.rr.visited.is_empty() {
                return vec![];
            }
            self.current = self.rr.running.clone();
            let delta = max_norm_delta(&self.current, &self.rr.start);
            self.rr.deltas.push(delta);
            let full = self.rr.visited.len() == self.expected();
            if full && (self.expected() == 1 || delta < self.cfg.tol) {
                let deltas = self.rr.deltas.clone();
                return self.finish(self.current.clone(), self.rr.round, true, deltas);
            }
            if self.rr.round == self.cfg.max_rounds {
                let deltas = self.rr.deltas.clone();
                return self.finish(self.current.clone(), self.rr.round, false, deltas);
            }
            self.rr.round += 1;
            self.rr.start = self.current.clone();
            self.rr.merged = 0;
            self.rr.visited.clear();
        }
    }

    fn result_of(o: &FusionOutcome) -> FusionResult {
        FusionResult {
            weights: o.model.weights().to_vec(),
            fingerprint: o.model.content_hash(),
            rounds_used: o.rounds_used,
            converged: o.converged,
        }
    }

    fn finish(&mut self, weights: Vec<f64>, rounds_used: usize, converged: bool, deltas: Vec<f64>) -> Vec<Envelope> {
        self.advance(FusionPhase::Validating);
        let model = Model::new(self.cfg.arch.clone(), weights).expect("weights match the session architecture");
        let mut metrics = BTreeMap::new();
        metrics.insert("rounds".to_string(), rounds_used as f64);
        metrics.insert("converged".to_string(), f64::from(u8::from(converged)));
        metrics.insert("partners".to_string(), self.ready.len() as f64);
        if let Some(v) = self.validation.as_ref().filter(|v| !v.is_empty()) {
            let metric = model.default_metric();
            let name = match metric {
                Metric::Mse => "mse",
                Metric::Accuracy => "accuracy",
            };
            match model.evaluate(v, metric) {
                Ok(value) => {
                    metrics.insert(name.to_string(), value);
                }
                Err(e) => self.partner_errors.push(format!("validation failed: {e}")),
            }
        }
        let outcome = FusionOutcome {
            model,
            rounds_used,
            converged,
            deltas,
            metrics: metrics.clone(),
        };
        let result = Self::result_of(&outcome);
        self.outcome = Some(outcome);
        let mut out: Vec<Envelope> = self
            .registered
            .clone()
            .iter()
            .map(|id| self.out.envelope(id, Body::FusionResult(result.clone())))
            .collect();
        out.push(self.out.envelope(COORDINATOR, Body::ValidationReport(ValidationReport { metrics })));
        self.advance(FusionPhase::Complete);
        out
    }
}
