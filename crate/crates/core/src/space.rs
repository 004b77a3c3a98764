//! Hybrid search spaces over named hyperparameters.
//!
//! A space is an ordered list of hyperparameter definitions plus the name of
//! the score variable. Spaces are read from a small line-oriented text format:
//!
//! ```text
//! # comments start with '#'
//! score accuracy
//! Activation   cat   Mish,ReLU,Hardswish
//! LearningRate float 1e-3 1e0 log
//! N            int   1 15
//! ```

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SpaceError;

pub const DEFAULT_SCORE_NAME: &str = "score";

/// Integer ranges up to this many values are modeled as ordered categoricals.
pub const MAX_DISCRETE_INTEGER_VALUES: i64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    #[serde(rename = "cat")]
    Categorical { labels: Vec<String> },
    #[serde(rename = "int")]
    Integer {
        lo: i64,
        hi: i64,
        #[serde(default)]
        log: bool,
    },
    #[serde(rename = "float")]
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
}

impl Domain {
    fn validate(&self, name: &str) -> Result<(), SpaceError> {
        match self {
            Domain::Categorical { labels } => {
                if labels.is_empty() {
                    return Err(SpaceError::invalid(name, "categorical domain has no labels"));
                }
                let mut seen = std::collections::HashSet::new();
                for l in labels {
                    if l.is_empty() {
                        return Err(SpaceError::invalid(name, "empty categorical label"));
                    }
                    if !seen.insert(l.as_str()) {
                        return Err(SpaceError::invalid(name, format!("duplicate label `{l}`")));
                    }
                }
            }
            Domain::Integer { lo, hi, log } => {
                if lo >= hi {
                    return Err(SpaceError::invalid(name, format!("empty range [{lo}, {hi}]")));
                }
                if *log && *lo <= 0 {
                    return Err(SpaceError::invalid(name, "log scale requires lo > 0"));
                }
            }
            Domain::Continuous { lo, hi, log } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(SpaceError::invalid(name, "bounds must be finite"));
                }
                if lo >= hi {
                    return Err(SpaceError::invalid(name, format!("empty range [{lo}, {hi}]")));
                }
                if *log && *lo <= 0.0 {
                    return Err(SpaceError::invalid(name, "log scale requires lo > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::Categorical { labels }, Value::Label(l)) => labels.iter().any(|x| x == l),
            (Domain::Integer { lo, hi, .. }, Value::Int(v)) => lo <= v && v <= hi,
            (Domain::Continuous { lo, hi, .. }, Value::Real(v)) => v.is_finite() && lo <= v && v <= hi,
            _ => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Domain::Categorical { .. })
    }

    /// Number of distinct values for finite domains.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Domain::Categorical { labels } => Some(labels.len()),
            Domain::Integer { lo, hi, .. } => Some((hi - lo + 1) as usize),
            Domain::Continuous { .. } => None,
        }
    }

    /// Numeric bounds as reals, `None` for categoricals.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Domain::Categorical { .. } => None,
            Domain::Integer { lo, hi, .. } => Some((*lo as f64, *hi as f64)),
            Domain::Continuous { lo, hi, .. } => Some((*lo, *hi)),
        }
    }

    pub fn is_log(&self) -> bool {
        match self {
            Domain::Categorical { .. } => false,
            Domain::Integer { log, .. } | Domain::Continuous { log, .. } => *log,
        }
    }

    /// Draw from the initial uniform prior. Log-scaled numeric domains are
    /// uniform in log space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Domain::Categorical { labels } => Value::Label(labels[rng.random_range(0..labels.len())].clone()),
            Domain::Integer { lo, hi, log } => {
                if *log && hi - lo + 1 > MAX_DISCRETE_INTEGER_VALUES {
                    let u: f64 = rng.random_range((*lo as f64).ln()..=(*hi as f64).ln());
                    Value::Int((u.exp().round() as i64).clamp(*lo, *hi))
                } else {
                    Value::Int(rng.random_range(*lo..=*hi))
                }
            }
            Domain::Continuous { lo, hi, log } => {
                let v = if *log {
                    rng.random_range(lo.ln()..=hi.ln()).exp()
                } else {
                    rng.random_range(*lo..=*hi)
                };
                Value::Real(v.clamp(*lo, *hi))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterDef {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl HyperparameterDef {
    pub fn categorical<S: Into<String>>(name: &str, labels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            domain: Domain::Categorical {
                labels: labels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            name: name.to_string(),
            domain: Domain::Integer { lo, hi, log: false },
        }
    }

    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            domain: Domain::Continuous { lo, hi, log: false },
        }
    }

    /// Marks a numeric hyperparameter as log-scaled.
    pub fn log(mut self) -> Self {
        match &mut self.domain {
            Domain::Integer { log, .. } | Domain::Continuous { log, .. } => *log = true,
            Domain::Categorical { .. } => {}
        }
        self
    }
}

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Label(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            Value::Label(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Label(l) => f.write_str(l),
        }
    }
}

/// An assignment of values to hyperparameters, in space order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub values: IndexMap<String, Value>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Value) {
        self.values.insert(name.into(), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stable textual key, used for table lookups and hashing.
    pub fn key(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl<S: Into<String>> FromIterator<(S, Value)> for Configuration {
    fn from_iter<T: IntoIterator<Item = (S, Value)>>(iter: T) -> Self {
        Self {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    hyperparameters: Vec<HyperparameterDef>,
    score_name: String,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawSpace {
    hyperparameters: Vec<HyperparameterDef>,
    #[serde(default = "default_score_name")]
    score_name: String,
}

fn default_score_name() -> String {
    DEFAULT_SCORE_NAME.to_string()
}

impl<'de> Deserialize<'de> for SearchSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawSpace::deserialize(d)?;
        SearchSpace::with_score_name(raw.hyperparameters, raw.score_name).map_err(serde::de::Error::custom)
    }
}

impl SearchSpace {
    pub fn new(hyperparameters: Vec<HyperparameterDef>) -> Result<Self, SpaceError> {
        Self::with_score_name(hyperparameters, DEFAULT_SCORE_NAME)
    }

    pub fn with_score_name(
        hyperparameters: Vec<HyperparameterDef>,
        score_name: impl Into<String>,
    ) -> Result<Self, SpaceError> {
        let score_name = score_name.into();
        if hyperparameters.is_empty() {
            return Err(SpaceError::Parse {
                line: 0,
                message: "search space has no hyperparameters".into(),
            });
        }
        let mut index = HashMap::new();
        for (i, def) in hyperparameters.iter().enumerate() {
            if def.name.is_empty() || def.name.chars().any(char::is_whitespace) {
                return Err(SpaceError::invalid(
                    &def.name,
                    "names must be non-empty without whitespace",
                ));
            }
            if def.name == score_name {
                return Err(SpaceError::invalid(&def.name, "name collides with the score variable"));
            }
            def.domain.validate(&def.name)?;
            if index.insert(def.name.clone(), i).is_some() {
                return Err(SpaceError::invalid(&def.name, "duplicate hyperparameter name"));
            }
        }
        Ok(Self {
            hyperparameters,
            score_name,
            index,
        })
    }

    pub fn hyperparameters(&self) -> &[HyperparameterDef] {
        &self.hyperparameters
    }

    pub fn score_name(&self) -> &str {
        &self.score_name
    }

    pub fn len(&self) -> usize {
        self.hyperparameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyperparameters.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&HyperparameterDef> {
        self.index_of(name).map(|i| &self.hyperparameters[i])
    }

    /// Checks that `config` assigns every hyperparameter exactly once and in domain.
    pub fn validate(&self, config: &Configuration) -> Result<(), SpaceError> {
        for (name, value) in &config.values {
            let def = self
                .get(name)
                .ok_or_else(|| SpaceError::UnknownHyperparameter(name.clone()))?;
            if !def.domain.contains(value) {
                return Err(SpaceError::invalid(name, format!("value {value} outside domain")));
            }
        }
        for def in &self.hyperparameters {
            if !config.values.contains_key(&def.name) {
                return Err(SpaceError::invalid(&def.name, "missing from configuration"));
            }
        }
        Ok(())
    }

    /// Draws a configuration from the independent uniform prior over the space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        self.hyperparameters
            .iter()
            .map(|d| (d.name.clone(), d.domain.sample_uniform(rng)))
            .collect()
    }

    /// Reorders a configuration into space order.
    pub fn canonicalize(&self, config: &Configuration) -> Configuration {
        self.hyperparameters
            .iter()
            .filter_map(|d| config.get(&d.name).map(|v| (d.name.clone(), v.clone())))
            .collect()
    }

    /// Interprets a JSON value as a value of hyperparameter `name`.
    ///
    /// Categorical values may be given by label, by a number or boolean whose
    /// text matches a label, or by a zero-based label index.
    pub fn coerce(&self, name: &str, json: &serde_json::Value) -> Result<Value, String> {
        let def = self
            .get(name)
            .ok_or_else(|| format!("unknown hyperparameter `{name}`"))?;
        let value = match (&def.domain, json) {
            (Domain::Categorical { labels }, serde_json::Value::String(s)) => {
                if labels.iter().any(|l| l == s) {
                    Value::Label(s.clone())
                } else {
                    return Err(format!("`{s}` is not one of {labels:?}"));
                }
            }
            (Domain::Categorical { labels }, serde_json::Value::Bool(b)) => {
                let text = if *b { "true" } else { "false" };
                labels
                    .iter()
                    .find(|l| l.eq_ignore_ascii_case(text))
                    .map(|l| Value::Label(l.clone()))
                    .ok_or_else(|| format!("{b} is not one of {labels:?}"))?
            }
            (Domain::Categorical { labels }, serde_json::Value::Number(n)) => {
                let text = n.to_string();
                let as_f = n.as_f64();
                if let Some(l) = labels
                    .iter()
                    .find(|l| **l == text || (as_f.is_some() && l.parse::<f64>().ok() == as_f))
                {
                    Value::Label(l.clone())
                } else if let Some(i) = n.as_u64().filter(|i| (*i as usize) < labels.len()) {
                    Value::Label(labels[i as usize].clone())
                } else {
                    return Err(format!("{n} is neither a label nor a label index of {labels:?}"));
                }
            }
            (Domain::Integer { .. }, serde_json::Value::Number(n)) => {
                let v = n.as_f64().ok_or("not a number")?;
                if v.fract() != 0.0 {
                    return Err(format!("{n} is not an integer"));
                }
                Value::Int(v as i64)
            }
            (Domain::Continuous { .. }, serde_json::Value::Number(n)) => Value::Real(n.as_f64().ok_or("not a number")?),
            (_, other) => return Err(format!("unexpected value {other}")),
        };
        if def.domain.contains(&value) {
            Ok(value)
        } else {
            Err(format!("value {value} outside domain {}", DomainText(&def.domain)))
        }
    }

    /// Parses the line-oriented space format.
    pub fn parse(text: &str) -> Result<Self, SpaceError> {
        let mut defs: Vec<HyperparameterDef> = Vec::new();
        let mut score_name = DEFAULT_SCORE_NAME.to_string();
        let mut lines_of: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let perr = |message: String| SpaceError::Parse { line: line_no, message };
            if fields[0] == "score" {
                if fields.len() != 2 {
                    return Err(perr("expected `score <name>`".into()));
                }
                score_name = fields[1].to_string();
                continue;
            }
            if fields.len() < 3 {
                return Err(perr(format!("expected `<name> <cat|int|float> <range>`, got `{line}`")));
            }
            let name = fields[0];
            let rest = &fields[2..];
            let (args, log) = match rest.last() {
                Some(&"log") => (&rest[..rest.len() - 1], true),
                _ => (rest, false),
            };
            let domain = match fields[1] {
                "cat" => {
                    if log {
                        return Err(perr(format!("`{name}`: categorical domains cannot be log-scaled")));
                    }
                    let joined = args.join(" ");
                    let labels: Vec<String> = joined
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    Domain::Categorical { labels }
                }
                "int" => {
                    let [lo, hi] = args else {
                        return Err(perr(format!("`{name}`: int needs `lo hi`")));
                    };
                    let lo = lo.parse::<i64>().map_err(|e| perr(format!("`{name}` lo: {e}")))?;
                    let hi = hi.parse::<i64>().map_err(|e| perr(format!("`{name}` hi: {e}")))?;
                    Domain::Integer { lo, hi, log }
                }
                "float" => {
                    let [lo, hi] = args else {
                        return Err(perr(format!("`{name}`: float needs `lo hi`")));
                    };
                    let lo = lo.parse::<f64>().map_err(|e| perr(format!("`{name}` lo: {e}")))?;
                    let hi = hi.parse::<f64>().map_err(|e| perr(format!("`{name}` hi: {e}")))?;
                    Domain::Continuous { lo, hi, log }
                }
                other => return Err(perr(format!("`{name}`: unknown type `{other}`"))),
            };
            if let Some(prev) = lines_of.insert(name.to_string(), line_no) {
                return Err(SpaceError::invalid(
                    name,
                    format!("duplicate hyperparameter name (first defined on line {prev})"),
                ));
            }
            defs.push(HyperparameterDef {
                name: name.to_string(),
                domain,
            });
        }
        SearchSpace::with_score_name(defs, score_name)
    }

    /// Writes the space in the format accepted by [`SearchSpace::parse`].
    pub fn emit(&self) -> String {
        let mut out = String::new();
        if self.score_name != DEFAULT_SCORE_NAME {
            out.push_str(&format!("score {}\n", self.score_name));
        }
        for def in &self.hyperparameters {
            out.push_str(&format!("{} {}\n", def.name, DomainText(&def.domain)));
        }
        out
    }
}

struct DomainText<'a>(&'a Domain);

impl fmt::Display for DomainText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Domain::Categorical { labels } => write!(f, "cat {}", labels.join(",")),
            Domain::Integer { lo, hi, log } => {
                write!(f, "int {lo} {hi}{}", if *log { " log" } else { "" })
            }
            Domain::Continuous { lo, hi, log } => {
                write!(f, "float {lo:?} {hi:?}{}", if *log { " log" } else { "" })
            }
        }
    }
}

pub fn parse_space(text: &str) -> Result<SearchSpace, SpaceError> {
    SearchSpace::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const JAHS_LIKE: &str = "
        # three hyperparameters
        Activation   cat   Mish,ReLU,Hardswish
        LearningRate float 1e-3 1e0 log
        N            int   1 15
    ";

    #[test]
    fn parses_three_hyperparameters() {
        let space = parse_space(JAHS_LIKE).unwrap();
        assert_eq!(space.len(), 3);
        assert_eq!(space.score_name(), "score");
        assert_eq!(
            space.get("Activation").unwrap().domain,
            Domain::Categorical {
                labels: vec!["Mish".into(), "ReLU".into(), "Hardswish".into()]
            }
        );
        assert_eq!(
            space.get("LearningRate").unwrap().domain,
            Domain::Continuous {
                lo: 1e-3,
                hi: 1.0,
                log: true
            }
        );
        assert_eq!(
            space.get("N").unwrap().domain,
            Domain::Integer {
                lo: 1,
                hi: 15,
                log: false
            }
        );
    }

    #[test]
    fn rejects_empty_interval() {
        let err = parse_space("x float 1.0 1.0").unwrap_err();
        assert!(
            matches!(err, SpaceError::Invalid { ref name, .. } if name == "x"),
            "{err}"
        );
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = parse_space("N int 1 3\nN int 1 5\n").unwrap_err();
        assert!(
            matches!(err, SpaceError::Invalid { ref name, .. } if name == "N"),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_space("a int 1 2\n\nb float x 2\n").unwrap_err();
        assert!(matches!(err, SpaceError::Parse { line: 3, .. }), "{err}");
        let err = parse_space("a blob 1 2").unwrap_err();
        assert!(matches!(err, SpaceError::Parse { line: 1, .. }));
    }

    #[test]
    fn log_scale_needs_positive_lower_bound() {
        assert!(parse_space("lr float 0 1 log").is_err());
        assert!(parse_space("k int 0 100 log").is_err());
    }

    #[test]
    fn score_name_must_not_collide() {
        assert!(parse_space("score acc\nacc float 0 1").is_err());
        let s = parse_space("score acc\nx float 0 1").unwrap();
        assert_eq!(s.score_name(), "acc");
    }

    #[test]
    fn coerces_label_indices_and_numeric_labels() {
        let space = SearchSpace::new(vec![
            HyperparameterDef::categorical("act", ["Mish", "ReLU", "Hardswish"]),
            HyperparameterDef::categorical("units", ["16", "32", "64"]),
            HyperparameterDef::categorical("aug", ["True", "False"]),
            HyperparameterDef::integer("n", 1, 15),
            HyperparameterDef::continuous("r", 0.0, 1.0),
        ])
        .unwrap();
        use serde_json::json;
        assert_eq!(space.coerce("act", &json!(1)).unwrap(), Value::Label("ReLU".into()));
        assert_eq!(space.coerce("units", &json!(32)).unwrap(), Value::Label("32".into()));
        assert_eq!(space.coerce("aug", &json!(0)).unwrap(), Value::Label("True".into()));
        assert_eq!(
            space.coerce("aug", &json!(false)).unwrap(),
            Value::Label("False".into())
        );
        assert_eq!(space.coerce("n", &json!(3)).unwrap(), Value::Int(3));
        assert_eq!(space.coerce("r", &json!(1)).unwrap(), Value::Real(1.0));
        assert!(space.coerce("n", &json!(16)).is_err());
        assert!(space.coerce("n", &json!(2.5)).is_err());
        assert!(space.coerce("r", &json!(1.5)).is_err());
        assert!(space.coerce("act", &json!(7)).is_err());
        assert!(space.coerce("nope", &json!(1)).is_err());
    }

    #[test]
    fn uniform_samples_are_valid() {
        let space = parse_space(JAHS_LIKE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = space.sample_uniform(&mut rng);
            space.validate(&c).unwrap();
        }
    }

    #[test]
    fn validate_rejects_missing_and_foreign_values() {
        let space = parse_space(JAHS_LIKE).unwrap();
        let mut c: Configuration = [
            ("Activation", Value::Label("ReLU".into())),
            ("LearningRate", Value::Real(0.1)),
        ]
        .into_iter()
        .collect();
        assert!(space.validate(&c).is_err());
        c.insert("N", Value::Int(3));
        space.validate(&c).unwrap();
        c.insert("N", Value::Real(3.0));
        assert!(space.validate(&c).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let space = parse_space(JAHS_LIKE).unwrap();
        let json = serde_json::to_string(&space).unwrap();
        let back: SearchSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, space);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_domain() -> impl Strategy<Value = Domain> {
            prop_oneof![
                prop::collection::btree_set("[a-z][a-z0-9_]{0,5}", 1..6).prop_map(|s| Domain::Categorical {
                    labels: s.into_iter().collect()
                }),
                (-1000i64..1000, 1i64..500, any::<bool>()).prop_map(|(lo, w, log)| {
                    let lo = if log { lo.abs() + 1 } else { lo };
                    Domain::Integer { lo, hi: lo + w, log }
                }),
                (-1e6f64..1e6, 1e-6f64..1e6, any::<bool>()).prop_map(|(lo, w, log)| {
                    let lo = if log { lo.abs() + 1e-9 } else { lo };
                    Domain::Continuous { lo, hi: lo + w, log }
                }),
            ]
        }

        proptest! {
            #[test]
            fn emit_parse_roundtrip(domains in prop::collection::vec(arb_domain(), 1..6)) {
                let defs = domains
                    .into_iter()
                    .enumerate()
                    .map(|(i, domain)| HyperparameterDef { name: format!("h{i}"), domain })
                    .collect();
                let space = SearchSpace::new(defs).unwrap();
                let back = parse_space(&space.emit()).unwrap();
                prop_assert_eq!(back, space);
            }
        }
    }
}
