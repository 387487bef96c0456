use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{normalize_attribute, AttributePredicate, Op, Policy, PolicyAction, Value};
use crate::error::{Error, Result};

/// Attribute values describing the thing a policy set is asked about.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subject(BTreeMap<String, Value>);

impl Subject {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, attribute: &str, value: impl Into<Value>) -> Self {
        self.set(attribute, value);
        self
    }

    pub fn set(&mut self, attribute: &str, value: impl Into<Value>) {
        self.0.insert(normalize_attribute(attribute), value.into());
    }

    pub fn get(&self, attribute: &str) -> Option<&Value> {
        self.0.get(&normalize_attribute(attribute))
    }

    /// Re-keys a deserialized subject under normalized attribute names.
    pub fn normalized(self) -> Self {
        Self(self.0.into_iter().map(|(k, v)| (normalize_attribute(&k), v)).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Terminal {
    #[default]
    None,
    Accept,
    Reject,
    UseModel(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub transforms: Vec<PolicyAction>,
    pub terminal: Terminal,
}

/// Missing attributes make a predicate false. Equality compares numerically
/// when either side is a number and the other parses as one.
fn matches(pred: &AttributePredicate, subject: &Subject) -> Result<bool> {
    let Some(actual) = subject.0.get(&pred.attribute) else {
        return Ok(false);
    };
    let mismatch = || Error::Evaluation {
        attribute: pred.attribute.clone(),
        message: format!("cannot compare `{actual}` with `{}` using {}", pred.value, pred.op.symbol()),
    };
    if pred.op == Op::Eq {
        return match (actual, &pred.value) {
            (Value::Text(a), Value::Text(b)) => Ok(a == b),
            (a, b) => match (a.as_number(), b.as_number()) {
                (Some(x), Some(y)) => Ok(x == y),
                _ => Err(mismatch()),
            },
        };
    }
    let (Value::Number(a), Some(b)) = (actual, pred.value.as_number()) else {
        return Err(mismatch());
    };
    Ok(match pred.op {
        Op::Gt => *a > b,
        Op::Ge => *a >= b,
        Op::Lt => *a < b,
        Op::Le => *a <= b,
        Op::Eq => unreachable!(),
    })
}

/// Indices of the policies whose conditions all hold, in evaluation order
/// (higher priority first, then declaration order).
pub fn matching_policies(policies: &[Policy], subject: &Subject) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..policies.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(policies[i].priority));
    let mut hits = Vec::new();
    'policies: for i in order {
        for c in &policies[i].conditions {
            if !matches(c, subject)? {
                continue 'policies;
            }
        }
        hits.push(i);
    }
    Ok(hits)
}

/// Matching transforms in evaluation order; the first matching terminal
/// action in that order wins.
pub fn evaluate(policies: &[Policy], subject: &Subject) -> Result<Decision> {
    let mut decision = Decision::default();
    for i in matching_policies(policies, subject)? {
        let action = &policies[i].action;
        if !action.is_terminal() {
            decision.transforms.push(action.clone());
        } else if decision.terminal == Terminal::None {
            decision.terminal = match action {
                PolicyAction::Accept => Terminal::Accept,
                PolicyAction::Reject => Terminal::Reject,
                PolicyAction::UseModel { model } => Terminal::UseModel(model.clone()),
                _ => unreachable!(),
            };
        }
    }
    Ok(decision)
}
