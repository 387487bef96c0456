use super::{AttributePredicate, Op, Policy, PolicyAction, Value};
use crate::error::{Error, Result};

/// Lowercase, with runs of whitespace, `_` and `-` collapsed to one `-`.
pub fn normalize_attribute(name: &str) -> String {
    name.split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

// Longest spellings first so `>=` is not read as `>` followed by `=`.
const OPERATORS: &[(&str, Op)] = &[
    ("$\\leq$", Op::Le),
    ("$\\geq$", Op::Ge),
    ("$>$", Op::Gt),
    ("$<$", Op::Lt),
    ("==", Op::Eq),
    (">=", Op::Ge),
    ("<=", Op::Le),
    ("≤", Op::Le),
    ("≥", Op::Ge),
    ("=", Op::Eq),
    (">", Op::Gt),
    ("<", Op::Lt),
];

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .find(|c: char| c.is_whitespace() || c == '(')
            .unwrap_or(rest.len());
        if rest[..end].eq_ignore_ascii_case(word) {
            self.pos += end;
            true
        } else {
            false
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.pos, message)
    }
}

pub fn parse_policy(text: &str) -> Result<Policy> {
    let mut cur = Cursor { text, pos: 0 };
    if !cur.keyword("if") {
        return Err(cur.error("expected `if`"));
    }
    let mut conditions = Vec::new();
    loop {
        cur.skip_ws();
        if !cur.rest().starts_with('(') {
            return Err(cur.error("expected `(`"));
        }
        let start = cur.pos + 1;
        let close = cur.rest().find(')').ok_or_else(|| cur.error("unclosed `(`"))?;
        let inner = &text[start..cur.pos + close];
        if let Some(nested) = inner.find('(') {
            return Err(Error::parse(start + nested, "nested `(` in condition"));
        }
        conditions.push(parse_predicate(inner, start)?);
        cur.pos += close + 1;
        if cur.keyword("and") {
            continue;
        }
        if cur.keyword("then") {
            break;
        }
        return Err(cur.error("expected `and` or `then`"));
    }
    cur.skip_ws();
    let action_start = cur.pos;
    let body = cur.rest().trim_end();
    let body = body
        .strip_suffix('.')
        .ok_or_else(|| Error::parse(action_start + body.len(), "expected `.` after the action"))?;
    let action = parse_action(body, action_start)?;
    let policy = Policy {
        priority: 0,
        conditions,
        action,
    };
    policy.validate().map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(policy)
}

fn parse_predicate(inner: &str, offset: usize) -> Result<AttributePredicate> {
    let (at, sym, op) = inner
        .char_indices()
        .find_map(|(i, _)| {
            OPERATORS
                .iter()
                .find(|(s, _)| inner[i..].starts_with(s))
                .map(|&(s, op)| (i, s, op))
        })
        .ok_or_else(|| Error::parse(offset, "expected a comparison operator"))?;
    let attribute = normalize_attribute(&inner[..at]);
    if attribute.is_empty() {
        return Err(Error::parse(offset, "missing attribute name"));
    }
    let value_text = inner[at + sym.len()..].split_whitespace().collect::<Vec<_>>().join(" ");
    if value_text.is_empty() {
        return Err(Error::parse(offset + at + sym.len(), "missing value"));
    }
    let value = Value::from_token(&value_text);
    if op != Op::Eq && !matches!(value, Value::Number(_)) {
        return Err(Error::parse(
            offset + at + sym.len(),
            format!("`{}` needs a numeric value, found `{value_text}`", op.symbol()),
        ));
    }
    Ok(AttributePredicate { attribute, op, value })
}

fn parse_action(body: &str, offset: usize) -> Result<PolicyAction> {
    let words: Vec<&str> = body.split_whitespace().collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let lower: Vec<&str> = lower.iter().map(String::as_str).collect();
    let arg = |n: usize| -> Result<String> {
        if words.len() > n {
            Ok(words[n..].join(" "))
        } else {
            Err(Error::parse(offset + body.len(), "action is missing its argument"))
        }
    };
    match lower.as_slice() {
        ["invoke", "helper-service", ..] => Ok(PolicyAction::InvokeHelper { service: arg(2)? }),
        ["accept"] | ["accept", "data"] => Ok(PolicyAction::Accept),
        ["reject"] | ["reject", "data"] => Ok(PolicyAction::Reject),
        ["change", "label", "to", ..] => Ok(PolicyAction::Relabel { to: arg(3)? }),
        ["rename", "field", "to", ..] => Ok(PolicyAction::RenameField { to: arg(3)? }),
        ["use", "model", ..] => Ok(PolicyAction::UseModel { model: arg(2)? }),
        _ => Err(Error::parse(offset, format!("unknown action `{body}`"))),
    }
}

/// Canonical text: single spaces, `==` for equality, trailing period.
pub fn serialize_policy(p: &Policy) -> String {
    let conditions: Vec<String> = p
        .conditions
        .iter()
        .map(|c| format!("({} {} {})", c.attribute, c.op.symbol(), c.value))
        .collect();
    let action = match &p.action {
        PolicyAction::InvokeHelper { service } => format!("invoke helper-service {service}"),
        PolicyAction::Accept => "accept data".into(),
        PolicyAction::Reject => "reject data".into(),
        PolicyAction::Relabel { to } => format!("change label to {to}"),
        PolicyAction::RenameField { to } => format!("rename field to {to}"),
        PolicyAction::UseModel { model } => format!("use model {model}"),
    };
    format!("if {} then {action}.", conditions.join(" and "))
}
