//! Data-sharing aggregator: translates, relabels, deduplicates and gates
//! partner offers, then merges survivors into one consolidated dataset.
//!
//! The pipeline order is fixed: format helpers, relabel/rename, dedup against
//! the current data, QoI/VoI, terminal acceptance policies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bounds::{effective_union, PartnerDataStats, UnionStats};
use crate::dataset::{Dataset, LabelSpec};
use crate::error::{Error, Result};
use crate::infometrics::{
    class_balance, qoi, voi, AnalysisTask, GroundTruth, LabelDisagreement, ProbeDisagreement, QoiScore,
};
use crate::policy::{
    matching_policies, serialize_policy, Context, GuidancePackage, PolicyAction, PolicySet, Subject, Template,
    Terminal,
};
use crate::PartnerId;

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataOffer {
    pub source: PartnerId,
    pub declared_format: String,
    pub dataset: Dataset,
    pub declared_stats: PartnerDataStats,
}

impl DataOffer {
    /// Offer with stats `q = rows`, `ν = nu`.
    pub fn new(source: &str, declared_format: &str, dataset: Dataset, nu: f64) -> Result<Self> {
        let declared_stats = PartnerDataStats::new(source, dataset.len() as u64, nu)?;
        Ok(Self {
            source: source.to_string(),
            declared_format: declared_format.to_string(),
            dataset,
            declared_stats,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.declared_stats.q != self.dataset.len() as u64 {
            return Err(Error::Config(format!(
                "offer from `{}` declares q = {} but carries {} rows",
                self.source,
                self.declared_stats.q,
                self.dataset.len()
            )));
        }
        self.dataset.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub incoming_rows: usize,
    pub duplicate_rows: usize,
    pub union_size_after: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    TrustBelowThreshold,
    QoiBelowThreshold,
    VoiBelowThreshold,
    PolicyRejected,
    NoAcceptingPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    /// `None` when no ground truth was available; the QoI gate then passes.
    pub qoi: Option<QoiScore>,
    pub voi: f64,
    pub dedup: DedupReport,
    /// Serialized text of every policy that fired, in firing order.
    pub applied_policies: Vec<String>,
    pub rejection_reason: Option<RejectionReason>,
    /// Effective union relative to the offering partner, when computable.
    pub union: Option<UnionStats>,
    pub class_histogram: BTreeMap<String, usize>,
    /// Smallest over largest class count; reported, never gated on.
    pub class_balance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationResult {
    pub accepted: bool,
    /// The offer in the canonical schema; present whenever the transforms
    /// succeeded, always present on acceptance.
    pub transformed: Option<Dataset>,
    pub report: CurationReport,
}

/// Everything an offer is judged against besides the current data.
#[derive(Clone, Debug)]
pub struct CurationEnv {
    pub context: Context,
    pub policies: PolicySet,
    pub guidance: GuidancePackage,
    pub truth: Option<GroundTruth>,
    pub task: AnalysisTask,
    pub epsilon: f64,
}

fn fire(policies: &PolicySet, subject: &Subject, applied: &mut Vec<String>) -> Result<Vec<PolicyAction>> {
    let mut actions = Vec::new();
    for i in matching_policies(&policies.policies, subject)? {
        let p = &policies.policies[i];
        applied.push(serialize_policy(p));
        actions.push(p.action.clone());
    }
    Ok(actions)
}

/// Steps 1 and 2 of the pipeline: format helpers, then label and field
/// renames, then reordering into the canonical field and class order.
/// Returns the canonical-schema dataset and the policies that fired.
pub fn apply_transforms(
    data: &Dataset,
    source: &str,
    declared_format: &str,
    context: &Context,
    policies: &PolicySet,
) -> Result<(Dataset, Vec<String>)> {
    let canonical = &context.canonical;
    let mut applied = Vec::new();
    let mut out = data.clone();
    out.schema.format = declared_format.to_string();

    let subject = Subject::new()
        .with("source-name", source)
        .with("source-format", declared_format);
    for action in fire(policies, &subject, &mut applied)? {
        let PolicyAction::InvokeHelper { service } = action else {
            continue;
        };
        let helper = context
            .helper_services
            .iter()
            .find(|h| h.name == service)
            .ok_or_else(|| Error::UnresolvableFormat {
                partners: vec![source.to_string()],
            })?;
        if helper.from_format != out.schema.format {
            continue;
        }
        if let Some(affine) = &helper.affine {
            if affine.scale.len() != out.dim() || affine.offset.len() != out.dim() {
                return Err(Error::Config(format!("helper `{}` affine map has the wrong width", helper.name)));
            }
            for row in &mut out.features {
                for ((v, s), o) in row.iter_mut().zip(&affine.scale).zip(&affine.offset) {
                    *v = *v * s + o;
                }
            }
        }
        out.schema.format = helper.to_format.clone();
    }
    if out.schema.format != canonical.format {
        return Err(Error::UnresolvableFormat {
            partners: vec![source.to_string()],
        });
    }

    let mut fields = Vec::with_capacity(out.dim());
    for f in &out.schema.fields {
        let subject = Subject::new()
            .with("source-name", source)
            .with("field-name", f.as_str())
            .with("feature-name", f.as_str());
        let renamed = fire(policies, &subject, &mut applied)?.into_iter().find_map(|a| match a {
            PolicyAction::RenameField { to } => Some(to),
            _ => None,
        });
        fields.push(renamed.unwrap_or_else(|| f.clone()));
    }
    let column: Vec<usize> = canonical
        .fields
        .iter()
        .map(|f| fields.iter().position(|g| g == f))
        .collect::<Option<_>>()
        .filter(|_| fields.len() == canonical.fields.len() && fields.iter().collect::<BTreeSet<_>>().len() == fields.len())
        .ok_or_else(|| {
            Error::Schema(format!(
                "fields {fields:?} from `{source}` do not match canonical fields {:?}",
                canonical.fields
            ))
        })?;
    for row in &mut out.features {
        *row = column.iter().map(|&c| row[c]).collect();
    }

    match (&data.schema.labels, &canonical.labels) {
        (LabelSpec::Classes(own), LabelSpec::Classes(target)) => {
            let mut index = Vec::with_capacity(own.len());
            for name in own {
                let subject = Subject::new()
                    .with("source-name", source)
                    .with("label-name", name.as_str())
                    .with("label", name.as_str());
                let renamed = fire(policies, &subject, &mut applied)?
                    .into_iter()
                    .find_map(|a| match a {
                        PolicyAction::Relabel { to } => Some(to),
                        _ => None,
                    })
                    .unwrap_or_else(|| name.clone());
                let i = target.iter().position(|t| *t == renamed).ok_or_else(|| {
                    Error::Schema(format!("label `{renamed}` from `{source}` is not a canonical label"))
                })?;
                index.push(i as f64);
            }
            for l in &mut out.labels {
                *l = index[*l as usize];
            }
        }
        (LabelSpec::Range { .. }, LabelSpec::Range { .. }) => {}
        _ => {
            return Err(Error::Schema(format!(
                "labels from `{source}` are of a different kind than the canonical labels"
            )))
        }
    }
    out.schema = canonical.clone();
    out.validate()?;
    Ok((out, applied))
}

fn same_row(a: &[f64], la: f64, b: &[f64], lb: f64, eps: f64) -> bool {
    la == lb && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= eps)
}

/// Per incoming row, whether it duplicates a row of `current`: every feature
/// within `epsilon` and the same label.
pub fn dedup_mask(current: &Dataset, incoming: &Dataset, epsilon: f64) -> Result<(DedupReport, Vec<bool>)> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if !current.is_empty() && !incoming.is_empty() && current.dim() != incoming.dim() {
        return Err(Error::Schema("cannot dedup datasets of different widths".into()));
    }
    let mut order: Vec<usize> = (0..current.len()).collect();
    let key = |i: usize| current.features[i].first().copied().unwrap_or(0.0);
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mask: Vec<bool> = incoming
        .features
        .iter()
        .zip(&incoming.labels)
        .map(|(row, &label)| {
            let x0 = row.first().copied().unwrap_or(0.0);
            let start = order.partition_point(|&i| key(i) < x0 - epsilon);
            order[start..]
                .iter()
                .take_while(|&&i| key(i) <= x0 + epsilon)
                .any(|&i| same_row(&current.features[i], current.labels[i], row, label, epsilon))
        })
        .collect();
    let duplicate_rows = mask.iter().filter(|&&d| d).count();
    let report = DedupReport {
        incoming_rows: incoming.len(),
        duplicate_rows,
        union_size_after: current.len() + incoming.len() - duplicate_rows,
    };
    Ok((report, mask))
}

pub fn dedup(current: &Dataset, incoming: &Dataset, epsilon: f64) -> Result<DedupReport> {
    Ok(dedup_mask(current, incoming, epsilon)?.0)
}

/// Appends each accepted dataset's rows that do not duplicate the running
/// union, then canonicalizes.
pub fn merge(current: &Dataset, accepted: &[Dataset], epsilon: f64) -> Result<Dataset> {
    let mut out = current.clone();
    for ds in accepted {
        let (_, mask) = dedup_mask(&out, ds, epsilon)?;
        let fresh: Vec<usize> = (0..ds.len()).filter(|&i| !mask[i]).collect();
        out.extend_from(&ds.select(&fresh))?;
    }
    out.canonicalize();
    Ok(out)
}

pub fn ingest(offer: &DataOffer, current: &Dataset, env: &CurationEnv) -> Result<CurationResult> {
    offer.validate()?;
    let partner = env
        .context
        .partner(&offer.source)
        .ok_or_else(|| Error::Config(format!("partner `{}` is not in the context", offer.source)))?;
    let (transformed, mut applied) = apply_transforms(
        &offer.dataset,
        &offer.source,
        &offer.declared_format,
        &env.context,
        &env.policies,
    )?;

    let (dedup, mask) = dedup_mask(current, &transformed, env.epsilon)?;
    let fresh: Vec<usize> = (0..transformed.len()).filter(|&i| !mask[i]).collect();
    let unique = transformed.select(&fresh);

    let qoi_score = match (&env.truth, transformed.is_empty()) {
        (Some(truth), false) => Some(qoi(&transformed, truth, &LabelDisagreement::default())?),
        _ => None,
    };
    let baseline = if current.is_empty() {
        Dataset::empty(transformed.schema.clone())
    } else {
        current.clone()
    };
    let voi_value = voi(&unique, &baseline, &env.task, &ProbeDisagreement::default())?;
    let qoi_value = qoi_score.map_or(f64::INFINITY, |q| q.score);

    let mut labels: Vec<Option<&str>> = match &transformed.schema.labels {
        LabelSpec::Classes(names) => transformed
            .labels
            .iter()
            .map(|&l| Some(names[l as usize].as_str()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        LabelSpec::Range { .. } => vec![],
    };
    if labels.is_empty() {
        labels.push(None);
    }
    let mut terminals = Vec::with_capacity(labels.len());
    for label in labels {
        let mut subject = Subject::new()
            .with("source-name", offer.source.as_str())
            .with("source-trustworthiness", partner.trustworthiness)
            .with("data-qoi", qoi_value)
            .with("data-voi", voi_value);
        if let Some(l) = label {
            subject.set("label", l);
        }
        let mut terminal = Terminal::None;
        for i in matching_policies(&env.policies.policies, &subject)? {
            let p = &env.policies.policies[i];
            let t = match &p.action {
                PolicyAction::Accept => Terminal::Accept,
                PolicyAction::Reject => Terminal::Reject,
                _ => continue,
            };
            applied.push(serialize_policy(p));
            terminal = t;
            break;
        }
        terminals.push(terminal);
    }
    let accepted = terminals.iter().all(|t| *t == Terminal::Accept);
    let rejection_reason = if accepted {
        None
    } else {
        let g = &env.guidance;
        let on = |t: Template| g.templates.contains(&t);
        Some(if on(Template::TrustAcceptance) && partner.trustworthiness <= g.trust_threshold {
            RejectionReason::TrustBelowThreshold
        } else if terminals.contains(&Terminal::Reject) {
            RejectionReason::PolicyRejected
        } else if on(Template::QualityAcceptance) && qoi_value <= g.qoi_threshold {
            RejectionReason::QoiBelowThreshold
        } else if on(Template::QualityAcceptance) && voi_value <= g.voi_threshold {
            RejectionReason::VoiBelowThreshold
        } else {
            RejectionReason::NoAcceptingPolicy
        })
    };

    applied.dedup();
    Ok(CurationResult {
        accepted,
        report: CurationReport {
            qoi: qoi_score,
            voi: voi_value,
            dedup,
            applied_policies: applied,
            rejection_reason,
            union: None,
            class_histogram: transformed.class_histogram(),
            class_balance: class_balance(&transformed),
        },
        transformed: Some(transformed),
    })
}

/// Single-writer owner of the consolidated dataset.
#[derive(Clone, Debug)]
pub struct Curator {
    env: CurationEnv,
    consolidated: Dataset,
    accepted_stats: Vec<PartnerDataStats>,
}

impl Curator {
    pub fn new(env: CurationEnv) -> Self {
        let consolidated = Dataset::empty(env.context.canonical.clone());
        Self {
            env,
            consolidated,
            accepted_stats: Vec::new(),
        }
    }

    pub fn env(&self) -> &CurationEnv {
        &self.env
    }

    pub fn consolidated(&self) -> &Dataset {
        &self.consolidated
    }

    pub fn accepted_stats(&self) -> &[PartnerDataStats] {
        &self.accepted_stats
    }

    /// Runs the pipeline and merges the offer on acceptance. The report's
    /// union stats treat the offering partner as the reference.
    pub fn offer(&mut self, offer: &DataOffer) -> Result<CurationResult> {
        let mut result = ingest(offer, &self.consolidated, &self.env)?;
        let mut stats = self.accepted_stats.clone();
        stats.push(offer.declared_stats.clone());
        result.report.union = effective_union(&stats, result.report.dedup.union_size_after as u64, &offer.source).ok();
        if result.accepted {
            let transformed = result.transformed.as_ref().expect("accepted offers carry data");
            self.consolidated = merge(&self.consolidated, std::slice::from_ref(transformed), self.env.epsilon)?;
            self.accepted_stats.push(offer.declared_stats.clone());
        }
        Ok(result)
    }
}
