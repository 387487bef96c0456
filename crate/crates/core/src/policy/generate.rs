use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AttributePredicate, Op, Policy, PolicyAction, PolicySet};
use crate::dataset::{LabelSpec, Schema};
use crate::error::{Error, Result};
use crate::PartnerId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartnerDescriptor {
    pub id: PartnerId,
    pub declared_format: String,
    #[serde(default)]
    pub declared_labels: Vec<String>,
    #[serde(default)]
    pub declared_fields: Vec<String>,
    pub trustworthiness: f64,
}

/// Per-feature `x' = scale * x + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Converts rows from `from_format` directly to `to_format`. Feature values
/// pass through unchanged unless an affine map is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelperService {
    pub name: String,
    pub from_format: String,
    pub to_format: String,
    #[serde(default)]
    pub affine: Option<AffineTransform>,
}

/// Partner vocabulary to canonical vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynonymTable {
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

/// Closed per-axis bounds of one selector cell, in the projected space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub bounds: Vec<(f64, f64)>,
    pub model_id: String,
}

impl RegionCell {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.bounds.len() && z.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub partners: Vec<PartnerDescriptor>,
    pub canonical: Schema,
    #[serde(default)]
    pub helper_services: Vec<HelperService>,
    #[serde(default)]
    pub synonyms: SynonymTable,
    #[serde(default)]
    pub region_table: Option<Vec<RegionCell>>,
}

impl Context {
    pub fn validate(&self) -> Result<()> {
        if self.canonical.fields.is_empty() {
            return Err(Error::Config("canonical schema has no fields".into()));
        }
        if let LabelSpec::Classes(c) = &self.canonical.labels {
            if c.is_empty() {
                return Err(Error::Config("canonical schema has no labels".into()));
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.partners {
            if !seen.insert(&p.id) {
                return Err(Error::Config(format!("partner `{}` is declared twice", p.id)));
            }
            if !(0.0..=1.0).contains(&p.trustworthiness) {
                return Err(Error::Config(format!(
                    "partner `{}` trustworthiness {} is outside [0, 1]",
                    p.id, p.trustworthiness
                )));
            }
        }
        if let Some(cells) = &self.region_table {
            for c in cells {
                if c.bounds.iter().any(|&(lo, hi)| !(lo <= hi)) {
                    return Err(Error::Config(format!("region cell for model `{}` is empty", c.model_id)));
                }
            }
        }
        Ok(())
    }

    pub fn partner(&self, id: &str) -> Option<&PartnerDescriptor> {
        self.partners.iter().find(|p| p.id == id)
    }

    /// First helper converting `format` straight into the canonical format.
    pub fn helper_for(&self, format: &str) -> Option<&HelperService> {
        self.helper_services
            .iter()
            .find(|h| h.from_format == format && h.to_format == self.canonical.format)
    }

    fn partner_map(&self) -> BTreeMap<&str, &PartnerDescriptor> {
        self.partners.iter().map(|p| (p.id.as_str(), p)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    FormatTranslation,
    Relabel,
    RenameField,
    TrustAcceptance,
    QualityAcceptance,
    ModelSelection,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::FormatTranslation,
        Template::Relabel,
        Template::RenameField,
        Template::TrustAcceptance,
        Template::QualityAcceptance,
        Template::ModelSelection,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidancePackage {
    pub qoi_threshold: f64,
    pub voi_threshold: f64,
    pub trust_threshold: f64,
    pub templates: BTreeSet<Template>,
}

impl Default for GuidancePackage {
    fn default() -> Self {
        Self {
            qoi_threshold: 0.7,
            voi_threshold: 0.0,
            trust_threshold: 0.5,
            templates: Template::ALL.into_iter().collect(),
        }
    }
}

impl GuidancePackage {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("qoi_threshold", self.qoi_threshold),
            ("voi_threshold", self.voi_threshold),
            ("trust_threshold", self.trust_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn enabled(&self, t: Template) -> bool {
        self.templates.contains(&t)
    }
}

fn eq(attr: &str, value: &str) -> AttributePredicate {
    AttributePredicate::new(attr, Op::Eq, value)
}

fn policy(conditions: Vec<AttributePredicate>, action: PolicyAction) -> Policy {
    Policy {
        priority: 0,
        conditions,
        action,
    }
}

pub fn generate_policies(guidance: &GuidancePackage, context: &Context) -> Result<PolicySet> {
    guidance.validate()?;
    context.validate()?;
    let canonical = &context.canonical;
    let mut out = Vec::new();

    if guidance.enabled(Template::FormatTranslation) {
        let mut unresolved = Vec::new();
        for p in &context.partners {
            if p.declared_format == canonical.format {
                continue;
            }
            match context.helper_for(&p.declared_format) {
                Some(h) => out.push(policy(
                    vec![eq("source-name", &p.id), eq("source-format", &p.declared_format)],
                    PolicyAction::InvokeHelper { service: h.name.clone() },
                )),
                None => unresolved.push(p.id.clone()),
            }
        }
        if !unresolved.is_empty() {
            return Err(Error::UnresolvableFormat { partners: unresolved });
        }
    }

    if guidance.enabled(Template::Relabel) {
        let labels = canonical.labels.class_names();
        for p in &context.partners {
            for l in &p.declared_labels {
                if labels.contains(l) {
                    continue;
                }
                if let Some(to) = context.synonyms.labels.get(l) {
                    out.push(policy(
                        vec![eq("source-name", &p.id), eq("label-name", l)],
                        PolicyAction::Relabel { to: to.clone() },
                    ));
                }
            }
        }
    }

    if guidance.enabled(Template::RenameField) {
        for p in &context.partners {
            for f in &p.declared_fields {
                if canonical.fields.contains(f) {
                    continue;
                }
                if let Some(to) = context.synonyms.fields.get(f) {
                    out.push(policy(
                        vec![eq("source-name", &p.id), eq("field-name", f)],
                        PolicyAction::RenameField { to: to.clone() },
                    ));
                }
            }
        }
    }

    if guidance.enabled(Template::TrustAcceptance) {
        out.push(policy(
            vec![AttributePredicate::new("source-trustworthiness", Op::Le, guidance.trust_threshold)],
            PolicyAction::Reject,
        ));
    }

    if guidance.enabled(Template::QualityAcceptance) {
        out.push(policy(
            vec![
                AttributePredicate::new("data-qoi", Op::Gt, guidance.qoi_threshold),
                AttributePredicate::new("data-voi", Op::Gt, guidance.voi_threshold),
            ],
            PolicyAction::Accept,
        ));
    }

    if guidance.enabled(Template::ModelSelection) {
        for cell in context.region_table.iter().flatten() {
            out.push(selector_policy(cell));
        }
    }

    Ok(PolicySet::new(out))
}

fn selector_policy(cell: &RegionCell) -> Policy {
    let mut conditions = Vec::new();
    for (d, &(lo, hi)) in cell.bounds.iter().enumerate() {
        let attr = format!("component{}", d + 1);
        if hi.is_finite() {
            conditions.push(AttributePredicate::new(&attr, Op::Le, hi));
        }
        if lo.is_finite() {
            conditions.push(AttributePredicate::new(&attr, Op::Ge, lo));
        }
    }
    if conditions.is_empty() {
        // unbounded cell: a condition every finite point satisfies
        conditions.push(AttributePredicate::new("component1", Op::Ge, f64::MIN));
    }
    policy(
        conditions,
        PolicyAction::UseModel {
            model: cell.model_id.clone(),
        },
    )
}

/// Regenerates when the partner set, a partner descriptor, the helper set or
/// the region table changed; otherwise returns `prior` untouched.
pub fn on_context_change(
    old: &Context,
    new: &Context,
    guidance: &GuidancePackage,
    prior: &PolicySet,
) -> Result<(bool, PolicySet)> {
    let helpers = |c: &Context| {
        let mut h: Vec<String> = c
            .helper_services
            .iter()
            .map(|h| serde_json::to_string(h).expect("helper serializes"))
            .collect();
        h.sort();
        h
    };
    let changed = old.partner_map() != new.partner_map()
        || helpers(old) != helpers(new)
        || old.region_table != new.region_table;
    if changed {
        Ok((true, generate_policies(guidance, new)?))
    } else {
        Ok((false, prior.clone()))
    }
}
