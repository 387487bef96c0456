//! Conjunctive attribute policies.
//!
//! ```text
//! if (<attr> <op> <value>) [and (<attr> <op> <value>)]* then <action>.
//! ```
//!
//! Actions: `invoke helper-service S`, `accept data`, `reject data`,
//! `change label to L`, `rename field to F`, `use model M`. Attribute names
//! are normalized to lowercase hyphenated tokens, so `source trustworthiness`
//! and `Source_Trustworthiness` name the same attribute.

mod eval;
mod generate;
mod grammar;

pub use eval::{evaluate, matching_policies, Decision, Subject, Terminal};
pub use generate::{
    generate_policies, on_context_change, AffineTransform, Context, GuidancePackage, HelperService,
    PartnerDescriptor, RegionCell, SynonymTable, Template,
};
pub use grammar::{normalize_attribute, parse_policy, serialize_policy};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "==",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Lt => "<",
            Op::Le => "<=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    /// Number when the text is a finite decimal, text otherwise.
    pub fn from_token(token: &str) -> Value {
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Value::Number(v),
            _ => Value::Text(token.to_string()),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Text(t) => t.trim().parse::<f64>().ok().filter(|v| v.is_finite()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Text(t) => f.write_str(t),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributePredicate {
    pub attribute: String,
    pub op: Op,
    pub value: Value,
}

impl AttributePredicate {
    pub fn new(attribute: &str, op: Op, value: impl Into<Value>) -> Self {
        Self {
            attribute: normalize_attribute(attribute),
            op,
            value: value.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyAction {
    InvokeHelper { service: String },
    Accept,
    Reject,
    /// The label being replaced is read from the subject's `label-name` (or
    /// `label`) attribute when the policy fires.
    Relabel { to: String },
    /// The field being renamed is read from the subject's `field-name` (or
    /// `feature-name`) attribute when the policy fires.
    RenameField { to: String },
    UseModel { model: String },
}

impl PolicyAction {
    pub fn is_terminal(&self) -> bool {
        matches!(self, PolicyAction::Accept | PolicyAction::Reject | PolicyAction::UseModel { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Higher runs first; equal priorities keep declaration order. The text
    /// form carries no priority, so parsed policies get 0.
    #[serde(default)]
    pub priority: i64,
    pub conditions: Vec<AttributePredicate>,
    pub action: PolicyAction,
}

impl Policy {
    pub fn new(conditions: Vec<AttributePredicate>, action: PolicyAction) -> Result<Self> {
        let p = Self {
            priority: 0,
            conditions,
            action,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Config("a policy needs at least one condition".into()));
        }
        for c in &self.conditions {
            if c.op != Op::Eq && !matches!(c.value, Value::Number(_)) {
                return Err(Error::Config(format!(
                    "ordering comparison on `{}` needs a numeric value",
                    c.attribute
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_policy(self))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub policies: Vec<Policy>,
}

impl PolicySet {
    pub fn new(policies: Vec<Policy>) -> Self {
        Self { policies }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// One policy per line; blank lines and lines starting with `#` are
    /// skipped. Error positions are byte offsets into `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut policies = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let p = parse_policy(line).map_err(|e| match e {
                    Error::Parse { position, message } => Error::Parse {
                        position: offset + position,
                        message,
                    },
                    other => other,
                })?;
                policies.push(p);
            }
            offset += line.len();
        }
        Ok(Self { policies })
    }

    pub fn to_text(&self) -> String {
        self.policies.iter().map(|p| serialize_policy(p) + "\n").collect()
    }

    pub fn evaluate(&self, subject: &Subject) -> Result<Decision> {
        evaluate(&self.policies, subject)
    }
}
