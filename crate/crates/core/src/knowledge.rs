//! User knowledge: point values or priors over a subset of hyperparameters,
//! and the JSON interaction dialect used to script or submit them.
//!
//! An interaction document is a JSON array of records:
//!
//! ```json
//! [
//!   {"type": "good", "kind": "point", "intervention": {"N": 3, "W": 16}, "iteration": 15},
//!   {"type": "good", "kind": "dist",
//!    "intervention": {"Op_0": {"dist": "cat", "parameters": [1, 1, 1e4, 1, 1]}},
//!    "iteration": 5},
//!   {"type": "good", "intervention": null, "iteration": 20}
//! ]
//! ```
//!
//! A `null` intervention clears the active knowledge. Records without `kind`
//! are point masses unless an entry is a distribution object.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{FieldError, KnowledgeError};
use crate::space::{Domain, SearchSpace, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    #[serde(rename = "point")]
    PointMass,
    #[serde(rename = "dist")]
    Prior,
}

/// A prior over a single hyperparameter, already validated against its domain.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    /// Normalized weights over explicit domain values.
    Categorical {
        values: Vec<Value>,
        weights: Vec<f64>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    IntUniform {
        lo: i64,
        hi: i64,
    },
    /// Normal prior truncated to the hyperparameter's domain.
    Normal {
        mu: f64,
        sigma: f64,
    },
}

/// One entry of user knowledge: a fixed value or a distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorEntry {
    Fixed(Value),
    Dist(DistributionSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserKnowledge {
    pub kind: KnowledgeKind,
    pub entries: IndexMap<String, PriorEntry>,
    /// Iteration at which the knowledge takes effect.
    pub received_at: usize,
    pub polarity: Option<String>,
    /// The intervention object as submitted, kept for logging.
    pub source: Json,
}

impl UserKnowledge {
    /// Point mass over the given values. Values must already be valid.
    pub fn point(values: impl IntoIterator<Item = (String, Value)>, received_at: usize) -> Self {
        let entries: IndexMap<String, PriorEntry> =
            values.into_iter().map(|(k, v)| (k, PriorEntry::Fixed(v))).collect();
        let source = Json::Object(
            entries
                .iter()
                .map(|(k, e)| match e {
                    PriorEntry::Fixed(v) => (k.clone(), serde_json::to_value(v).unwrap_or(Json::Null)),
                    PriorEntry::Dist(_) => unreachable!(),
                })
                .collect(),
        );
        Self {
            kind: KnowledgeKind::PointMass,
            entries,
            received_at,
            polarity: None,
            source,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// A parsed interaction record.
#[derive(Debug, Clone, PartialEq)]
pub enum Interaction {
    Set(UserKnowledge),
    Clear { at: usize, polarity: Option<String> },
}

impl Interaction {
    pub fn iteration(&self) -> usize {
        match self {
            Interaction::Set(k) => k.received_at,
            Interaction::Clear { at, .. } => *at,
        }
    }

    pub fn with_iteration(mut self, iteration: usize) -> Self {
        match &mut self {
            Interaction::Set(k) => k.received_at = iteration,
            Interaction::Clear { at, .. } => *at = iteration,
        }
        self
    }
}

struct Diagnostics {
    errors: Vec<FieldError>,
}

impl Diagnostics {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Parses a scripted interaction document (a JSON array with `iteration` keys).
pub fn parse_interactions(text: &str, space: &SearchSpace) -> Result<Vec<Interaction>, KnowledgeError> {
    let doc: Json = serde_json::from_str(text).map_err(|e| {
        KnowledgeError(vec![FieldError {
            field: "$".into(),
            message: format!("invalid JSON: {e}"),
        }])
    })?;
    let records = match doc {
        Json::Array(items) => items,
        // A single record is accepted as a one-element document.
        obj @ Json::Object(_) => vec![obj],
        _ => {
            return Err(KnowledgeError(vec![FieldError {
                field: "$".into(),
                message: "expected an array of interaction records".into(),
            }]))
        }
    };
    let mut diag = Diagnostics { errors: Vec::new() };
    let mut out = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let prefix = format!("[{i}]");
        if let Some(x) = parse_record(record, space, &prefix, true, &mut diag) {
            out.push(x);
        }
    }
    if diag.errors.is_empty() {
        Ok(out)
    } else {
        Err(KnowledgeError(diag.errors))
    }
}

/// Parses one live interaction object. The `iteration` key is not required;
/// the returned interaction carries iteration 0 until it is scheduled.
pub fn parse_live_interaction(record: &Json, space: &SearchSpace) -> Result<Interaction, KnowledgeError> {
    let mut diag = Diagnostics { errors: Vec::new() };
    match parse_record(record, space, "", false, &mut diag) {
        Some(x) if diag.errors.is_empty() => Ok(x),
        _ => Err(KnowledgeError(diag.errors)),
    }
}

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

fn parse_record(
    record: &Json,
    space: &SearchSpace,
    prefix: &str,
    require_iteration: bool,
    diag: &mut Diagnostics,
) -> Option<Interaction> {
    let Json::Object(map) = record else {
        diag.push(
            if prefix.is_empty() { "$" } else { prefix },
            "interaction record must be an object",
        );
        return None;
    };
    let before = diag.errors.len();
    for key in map.keys() {
        if !matches!(key.as_str(), "type" | "kind" | "intervention" | "iteration") {
            diag.push(join(prefix, key), "unknown key");
        }
    }
    let polarity = match map.get("type") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) => Some(s.clone()),
        Some(_) => {
            diag.push(join(prefix, "type"), "expected a string");
            None
        }
    };
    let kind = match map.get("kind") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) if s == "point" => Some(KnowledgeKind::PointMass),
        Some(Json::String(s)) if s == "dist" => Some(KnowledgeKind::Prior),
        Some(other) => {
            diag.push(
                join(prefix, "kind"),
                format!("expected \"point\" or \"dist\", got {other}"),
            );
            None
        }
    };
    let iteration = match map.get("iteration") {
        None if !require_iteration => Some(0),
        None => {
            diag.push(join(prefix, "iteration"), "missing");
            None
        }
        Some(Json::Number(n)) => match n.as_i64() {
            Some(v) if v >= 0 => Some(v as usize),
            Some(_) => {
                diag.push(join(prefix, "iteration"), "iteration must be >= 0");
                None
            }
            None => {
                diag.push(join(prefix, "iteration"), format!("{n} is not a non-negative integer"));
                None
            }
        },
        Some(other) => {
            diag.push(join(prefix, "iteration"), format!("expected an integer, got {other}"));
            None
        }
    };
    let field = join(prefix, "intervention");
    let entries = match map.get("intervention") {
        None => {
            diag.push(&field, "missing");
            None
        }
        Some(Json::Null) => Some(None),
        Some(Json::Array(_)) => {
            diag.push(
                &field,
                "list-shaped interventions are not supported; use a map keyed by hyperparameter name",
            );
            None
        }
        Some(Json::Object(obj)) => {
            if obj.is_empty() {
                diag.push(&field, "intervention must name at least one hyperparameter");
            }
            let mut entries = IndexMap::new();
            for (name, spec) in obj {
                let f = format!("{field}.{name}");
                if space.get(name).is_none() {
                    diag.push(&f, format!("unknown hyperparameter `{name}`"));
                    continue;
                }
                let entry = if spec.is_object() {
                    if kind == Some(KnowledgeKind::PointMass) {
                        diag.push(&f, "point interventions take plain values");
                        continue;
                    }
                    parse_distribution(spec, name, space, &f, diag).map(PriorEntry::Dist)
                } else {
                    match space.coerce(name, spec) {
                        Ok(v) => Some(PriorEntry::Fixed(v)),
                        Err(e) => {
                            diag.push(&f, e);
                            None
                        }
                    }
                };
                if let Some(e) = entry {
                    entries.insert(name.clone(), e);
                }
            }
            Some(Some((entries, Json::Object(obj.clone()))))
        }
        Some(other) => {
            diag.push(&field, format!("expected an object or null, got {other}"));
            None
        }
    };
    if diag.errors.len() > before {
        return None;
    }
    let iteration = iteration?;
    match entries? {
        None => Some(Interaction::Clear {
            at: iteration,
            polarity,
        }),
        Some((entries, source)) => {
            let any_dist = entries.values().any(|e| matches!(e, PriorEntry::Dist(_)));
            let kind = kind.unwrap_or(if any_dist {
                KnowledgeKind::Prior
            } else {
                KnowledgeKind::PointMass
            });
            Some(Interaction::Set(UserKnowledge {
                kind,
                entries,
                received_at: iteration,
                polarity,
                source,
            }))
        }
    }
}

fn numbers(json: Option<&Json>, field: &str, diag: &mut Diagnostics) -> Option<Vec<f64>> {
    match json {
        Some(Json::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, x) in items.iter().enumerate() {
                match x.as_f64() {
                    Some(v) if v.is_finite() => out.push(v),
                    _ => {
                        diag.push(format!("{field}[{i}]"), format!("expected a number, got {x}"));
                        return None;
                    }
                }
            }
            Some(out)
        }
        Some(other) => {
            diag.push(field, format!("expected an array of numbers, got {other}"));
            None
        }
        None => {
            diag.push(field, "missing");
            None
        }
    }
}

fn parse_distribution(
    spec: &Json,
    name: &str,
    space: &SearchSpace,
    field: &str,
    diag: &mut Diagnostics,
) -> Option<DistributionSpec> {
    let obj = spec.as_object()?;
    let domain = &space.get(name)?.domain;
    for key in obj.keys() {
        if !matches!(key.as_str(), "dist" | "parameters" | "values") {
            diag.push(format!("{field}.{key}"), "unknown key");
        }
    }
    let family = match obj.get("dist") {
        Some(Json::String(s)) => s.as_str(),
        other => {
            diag.push(
                format!("{field}.dist"),
                format!("expected a family name, got {other:?}"),
            );
            return None;
        }
    };
    let pfield = format!("{field}.parameters");
    let params = numbers(obj.get("parameters"), &pfield, diag)?;
    let need = |n: usize, diag: &mut Diagnostics| {
        if params.len() != n {
            diag.push(
                &pfield,
                format!("`{family}` takes {n} parameters, got {}", params.len()),
            );
            false
        } else {
            true
        }
    };
    if family != "cat" && obj.contains_key("values") {
        diag.push(
            format!("{field}.values"),
            format!("`values` is only valid for `cat`, not `{family}`"),
        );
        return None;
    }
    match family {
        "cat" => {
            let values: Vec<Value> = match obj.get("values") {
                Some(Json::Array(items)) => {
                    let mut vals = Vec::with_capacity(items.len());
                    for (i, item) in items.iter().enumerate() {
                        match space.coerce(name, item) {
                            Ok(v) if !vals.contains(&v) => vals.push(v),
                            Ok(v) => {
                                diag.push(format!("{field}.values[{i}]"), format!("duplicate value {v}"));
                                return None;
                            }
                            Err(e) => {
                                diag.push(format!("{field}.values[{i}]"), e);
                                return None;
                            }
                        }
                    }
                    vals
                }
                Some(other) => {
                    diag.push(format!("{field}.values"), format!("expected an array, got {other}"));
                    return None;
                }
                None => match domain {
                    Domain::Categorical { labels } => labels.iter().cloned().map(Value::Label).collect(),
                    Domain::Integer { lo, hi, .. } => (*lo..=*hi).map(Value::Int).collect(),
                    Domain::Continuous { .. } => {
                        diag.push(
                            &pfield,
                            "`cat` over a continuous hyperparameter needs explicit `values`",
                        );
                        return None;
                    }
                },
            };
            if params.len() != values.len() {
                diag.push(&pfield, format!("{} weights for {} values", params.len(), values.len()));
                return None;
            }
            if params.iter().any(|w| *w < 0.0) {
                diag.push(&pfield, "categorical weights must be non-negative");
                return None;
            }
            let total: f64 = params.iter().sum();
            if total <= 0.0 {
                diag.push(&pfield, "categorical weights must not all be zero");
                return None;
            }
            Some(DistributionSpec::Categorical {
                values,
                weights: params.iter().map(|w| w / total).collect(),
            })
        }
        "uniform" => {
            if !need(2, diag) {
                return None;
            }
            let (lo, hi) = (params[0], params[1]);
            if lo >= hi {
                diag.push(&pfield, format!("uniform needs lo < hi, got [{lo}, {hi}]"));
                return None;
            }
            check_support(domain, lo, hi, &pfield, diag)?;
            Some(DistributionSpec::Uniform { lo, hi })
        }
        "int_uniform" => {
            if !need(2, diag) {
                return None;
            }
            let (lo, hi) = (params[0], params[1]);
            if lo.fract() != 0.0 || hi.fract() != 0.0 {
                diag.push(&pfield, "int_uniform bounds must be integers");
                return None;
            }
            if lo > hi {
                diag.push(&pfield, format!("int_uniform needs lo <= hi, got [{lo}, {hi}]"));
                return None;
            }
            check_support(domain, lo, hi, &pfield, diag)?;
            Some(DistributionSpec::IntUniform {
                lo: lo as i64,
                hi: hi as i64,
            })
        }
        "normal" => {
            if !need(2, diag) {
                return None;
            }
            let (mu, sigma) = (params[0], params[1]);
            if sigma <= 0.0 {
                diag.push(&pfield, format!("normal needs sigma > 0, got {sigma}"));
                return None;
            }
            // The prior is truncated to the domain, so only its center must lie inside.
            check_support(domain, mu, mu, &pfield, diag)?;
            Some(DistributionSpec::Normal { mu, sigma })
        }
        other => {
            diag.push(
                format!("{field}.dist"),
                format!("unknown distribution family `{other}`"),
            );
            None
        }
    }
}

fn check_support(domain: &Domain, lo: f64, hi: f64, field: &str, diag: &mut Diagnostics) -> Option<()> {
    let Some((dlo, dhi)) = domain.bounds() else {
        diag.push(field, "numeric distribution over a categorical hyperparameter");
        return None;
    };
    if lo < dlo || hi > dhi {
        diag.push(field, format!("support [{lo}, {hi}] exceeds the domain [{dlo}, {dhi}]"));
        return None;
    }
    Some(())
}

impl DistributionSpec {
    /// Draws one value inside `domain`.
    pub fn sample<R: Rng + ?Sized>(&self, domain: &Domain, rng: &mut R) -> Value {
        match self {
            DistributionSpec::Categorical { values, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return v.clone();
                    }
                }
                // Rounding left a sliver of mass at the top; return the last positive entry.
                let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(values.len() - 1);
                values[last].clone()
            }
            DistributionSpec::Uniform { lo, hi } => {
                let x = rng.random_range(*lo..=*hi);
                numeric_value(domain, x)
            }
            DistributionSpec::IntUniform { lo, hi } => {
                let x = rng.random_range(*lo..=*hi);
                match domain {
                    Domain::Integer { .. } => Value::Int(x),
                    _ => Value::Real(x as f64),
                }
            }
            DistributionSpec::Normal { mu, sigma } => {
                let (dlo, dhi) = domain.bounds().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                let normal = Normal::new(*mu, *sigma).expect("sigma validated positive");
                for _ in 0..10_000 {
                    let x = normal.sample(rng);
                    let v = numeric_value(domain, x);
                    if domain.contains(&v) {
                        return v;
                    }
                }
                numeric_value(domain, mu.clamp(dlo, dhi))
            }
        }
    }
}

fn numeric_value(domain: &Domain, x: f64) -> Value {
    match domain {
        Domain::Integer { .. } => Value::Int(x.round() as i64),
        _ => Value::Real(x),
    }
}

/// Draws one assignment to exactly the hyperparameters named by `knowledge`.
pub fn sample_prior<R: Rng + ?Sized>(
    knowledge: &UserKnowledge,
    space: &SearchSpace,
    rng: &mut R,
) -> IndexMap<String, Value> {
    knowledge
        .entries
        .iter()
        .map(|(name, entry)| {
            let value = match entry {
                PriorEntry::Fixed(v) => v.clone(),
                PriorEntry::Dist(d) => {
                    let domain = &space.get(name).expect("knowledge validated against space").domain;
                    d.sample(domain, rng)
                }
            };
            (name.clone(), value)
        })
        .collect()
}
