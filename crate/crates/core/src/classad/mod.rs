//! Attribute advertisements for jobs and machine slots, and the symmetric
//! matchmaking that pairs them.

mod expr;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use expr::{CmpOp, Expr, ParseError, Scope};

/// Nested attribute references deeper than this evaluate to UNDEFINED, so
/// self-referential ads cannot loop.
const MAX_EVAL_DEPTH: usize = 32;

/// Result of evaluating an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
    Undefined,
}

impl Value {
    pub fn is_true(&self) -> bool {
        matches!(self, Value::Bool(true))
    }

    fn truth(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Bool(true) => f.write_str("TRUE"),
            Value::Bool(false) => f.write_str("FALSE"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Undefined => f.write_str("UNDEFINED"),
        }
    }
}

/// A stored attribute: a literal or an unevaluated expression.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
    Expr(Expr),
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Real(v)
    }
}

impl From<bool> for AttrValue {
    fn from(v: bool) -> Self {
        AttrValue::Bool(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Text(v.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(v: String) -> Self {
        AttrValue::Text(v)
    }
}

impl From<Expr> for AttrValue {
    fn from(v: Expr) -> Self {
        AttrValue::Expr(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdKind {
    Job,
    Machine,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassAdError {
    #[error("{kind:?} ad is missing required attribute {name}")]
    MissingAttribute { kind: AdKind, name: &'static str },
}

const MACHINE_REQUIRED: [&str; 5] = ["Name", "State", "Activity", "LoadAvg", "Memory"];
const JOB_REQUIRED: [&str; 3] = ["Owner", "Cmd", "Requirements"];

/// Attribute map keyed case-insensitively. The spelling used on first
/// insertion is kept for display.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAd {
    kind: AdKind,
    attrs: BTreeMap<String, (String, AttrValue)>,
}

impl ClassAd {
    pub fn new(kind: AdKind) -> Self {
        ClassAd {
            kind,
            attrs: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> AdKind {
        self.kind
    }

    pub fn set(&mut self, name: &str, value: impl Into<AttrValue>) -> &mut Self {
        let key = name.to_ascii_lowercase();
        let value = value.into();
        match self.attrs.get_mut(&key) {
            Some(slot) => slot.1 = value,
            None => {
                self.attrs.insert(key, (name.to_string(), value));
            }
        }
        self
    }

    pub fn with(mut self, name: &str, value: impl Into<AttrValue>) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(&name.to_ascii_lowercase()).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AttrValue)> {
        self.attrs.values().map(|(n, v)| (n.as_str(), v))
    }

    /// Checks the required attribute set for this ad's kind.
    pub fn validate(&self) -> Result<(), ClassAdError> {
        let required: &[&'static str] = match self.kind {
            AdKind::Machine => &MACHINE_REQUIRED,
            AdKind::Job => &JOB_REQUIRED,
        };
        for name in required {
            if self.get(name).is_none() {
                return Err(ClassAdError::MissingAttribute {
                    kind: self.kind,
                    name,
                });
            }
        }
        Ok(())
    }

    /// The `Name` attribute as text, if present.
    pub fn name(&self) -> Option<&str> {
        match self.get("Name") {
            Some(AttrValue::Text(s)) => Some(s),
            _ => None,
        }
    }
}

/// Evaluates `expr` with `my` as the MY scope and `target` as TARGET.
pub fn eval(expr: &Expr, my: &ClassAd, target: &ClassAd) -> Value {
    eval_depth(expr, my, target, 0)
}

fn eval_depth(expr: &Expr, my: &ClassAd, target: &ClassAd, depth: usize) -> Value {
    if depth > MAX_EVAL_DEPTH {
        return Value::Undefined;
    }
    match expr {
        Expr::Int(i) => Value::Int(*i),
        Expr::Real(r) => Value::Real(*r),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Ref(scope, name) => {
            let (in_my, in_target) = (my.get(name), target.get(name));
            match (scope, in_my, in_target) {
                (Scope::My, Some(v), _) | (Scope::Any, Some(v), _) => {
                    attr_value(v, my, target, depth)
                }
                (Scope::Target, _, Some(v)) | (Scope::Any, None, Some(v)) => {
                    // A TARGET attribute is evaluated from the target's point of view.
                    attr_value(v, target, my, depth)
                }
                _ => Value::Undefined,
            }
        }
        Expr::Cmp(op, a, b) => compare(
            *op,
            &eval_depth(a, my, target, depth + 1),
            &eval_depth(b, my, target, depth + 1),
        ),
        Expr::And(a, b) => {
            let l = eval_depth(a, my, target, depth + 1).truth();
            if l == Some(false) {
                return Value::Bool(false);
            }
            let r = eval_depth(b, my, target, depth + 1).truth();
            match (l, r) {
                (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => Value::Undefined,
            }
        }
        Expr::Or(a, b) => {
            let l = eval_depth(a, my, target, depth + 1).truth();
            if l == Some(true) {
                return Value::Bool(true);
            }
            let r = eval_depth(b, my, target, depth + 1).truth();
            match (l, r) {
                (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => Value::Undefined,
            }
        }
        Expr::Not(a) => match eval_depth(a, my, target, depth + 1).truth() {
            Some(b) => Value::Bool(!b),
            None => Value::Undefined,
        },
    }
}

fn attr_value(v: &AttrValue, my: &ClassAd, target: &ClassAd, depth: usize) -> Value {
    match v {
        AttrValue::Int(i) => Value::Int(*i),
        AttrValue::Real(r) => Value::Real(*r),
        AttrValue::Bool(b) => Value::Bool(*b),
        AttrValue::Text(s) => Value::Str(s.clone()),
        AttrValue::Expr(e) => eval_depth(e, my, target, depth + 1),
    }
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> Value {
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => Some(x.to_lowercase().cmp(&y.to_lowercase())),
        (Value::Bool(x), Value::Bool(y)) => {
            return match op {
                CmpOp::Eq => Value::Bool(x == y),
                CmpOp::Ne => Value::Bool(x != y),
                _ => Value::Undefined,
            }
        }
        _ => match (a.number(), b.number()) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => None,
        },
    };
    let Some(ord) = ord else {
        return Value::Undefined;
    };
    Value::Bool(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

/// Evaluates an ad's own attribute against a target.
fn eval_attr(ad: &ClassAd, name: &str, target: &ClassAd) -> Option<Value> {
    ad.get(name).map(|v| attr_value(v, ad, target, 0))
}

/// Both sides' Requirements must evaluate to TRUE. A machine without a
/// Requirements attribute accepts every job; a job without one matches
/// nothing.
pub fn matches(job: &ClassAd, machine: &ClassAd) -> bool {
    let job_ok = eval_attr(job, "Requirements", machine).is_some_and(|v| v.is_true());
    let machine_ok = eval_attr(machine, "Requirements", job).is_none_or(|v| v.is_true());
    job_ok && machine_ok
}

fn rank_of(job: &ClassAd, machine: &ClassAd) -> f64 {
    match eval_attr(job, "Rank", machine) {
        Some(Value::Int(i)) => i as f64,
        Some(Value::Real(r)) if r.is_finite() => r,
        Some(Value::Bool(true)) => 1.0,
        _ => 0.0,
    }
}

fn is_unclaimed(machine: &ClassAd) -> bool {
    matches!(machine.get("State"), Some(AttrValue::Text(s)) if s.eq_ignore_ascii_case("Unclaimed"))
}

/// Names of Unclaimed machines that match `job`, best Rank first with
/// name-ascending tie-break. Ads without a Name, and repeated names, are
/// skipped.
pub fn matchmake(job: &ClassAd, machines: &[ClassAd]) -> Vec<String> {
    let mut hits: Vec<(f64, &str)> = machines
        .iter()
        .filter(|m| is_unclaimed(m) && matches(job, m))
        .filter_map(|m| m.name().map(|n| (rank_of(job, m), n)))
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut out: Vec<String> = Vec::with_capacity(hits.len());
    for (_, name) in hits {
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    out
}
