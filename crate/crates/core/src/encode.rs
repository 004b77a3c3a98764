//! Mapping between configurations and the numeric variables of the surrogate.
//!
//! Categoricals and integer ranges with at most
//! [`MAX_DISCRETE_INTEGER_VALUES`] values become discrete codes. Every other
//! numeric hyperparameter is modeled on `[0, 1]`, the position inside its
//! (log-)range. The score is z-scored over the current data.

use indexmap::IndexMap;

use crate::circuit::{VarKind, Variable};
use crate::space::{Configuration, Domain, SearchSpace, Value, MAX_DISCRETE_INTEGER_VALUES};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Labels(usize),
    Codes { lo: i64, n: usize },
    Unit { lo: f64, hi: f64, log: bool, integer: bool },
}

#[derive(Debug, Clone)]
pub struct Encoder {
    space: SearchSpace,
    encodings: Vec<Encoding>,
}

impl Encoder {
    pub fn new(space: &SearchSpace) -> Self {
        let encodings = space
            .hyperparameters()
            .iter()
            .map(|h| match &h.domain {
                Domain::Categorical { labels } => Encoding::Labels(labels.len()),
                Domain::Integer { lo, hi, .. } if hi - lo < MAX_DISCRETE_INTEGER_VALUES => Encoding::Codes {
                    lo: *lo,
                    n: (hi - lo + 1) as usize,
                },
                Domain::Integer { lo, hi, log } => Encoding::Unit {
                    lo: *lo as f64,
                    hi: *hi as f64,
                    log: *log,
                    integer: true,
                },
                Domain::Continuous { lo, hi, log } => Encoding::Unit {
                    lo: *lo,
                    hi: *hi,
                    log: *log,
                    integer: false,
                },
            })
            .collect();
        Self {
            space: space.clone(),
            encodings,
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Surrogate variables: one per hyperparameter, then the score.
    pub fn variables(&self) -> Vec<Variable> {
        let mut vars: Vec<Variable> = self
            .space
            .hyperparameters()
            .iter()
            .zip(&self.encodings)
            .map(|(h, e)| match e {
                Encoding::Labels(n) | Encoding::Codes { n, .. } => Variable::discrete(h.name.clone(), *n),
                Encoding::Unit { .. } => Variable::continuous(h.name.clone()),
            })
            .collect();
        vars.push(Variable::continuous(self.space.score_name()));
        vars
    }

    /// Index of the score variable in [`Encoder::variables`].
    pub fn score_index(&self) -> usize {
        self.encodings.len()
    }

    pub fn is_continuous(&self, index: usize) -> bool {
        matches!(self.encodings[index], Encoding::Unit { .. })
    }

    /// Encodes one hyperparameter value. The value must lie in the domain.
    pub fn encode_value(&self, index: usize, value: &Value) -> f64 {
        match (&self.encodings[index], value) {
            (Encoding::Labels(_), Value::Label(l)) => {
                let Domain::Categorical { labels } = &self.space.hyperparameters()[index].domain else {
                    unreachable!()
                };
                labels.iter().position(|x| x == l).expect("label in domain") as f64
            }
            (Encoding::Codes { lo, .. }, Value::Int(v)) => (v - lo) as f64,
            (Encoding::Unit { lo, hi, log, .. }, v) => {
                let x = v.as_f64().expect("numeric value");
                if *log {
                    (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            (e, v) => panic!("value {v} does not match encoding {e:?}"),
        }
    }

    pub fn decode_value(&self, index: usize, x: f64) -> Value {
        match &self.encodings[index] {
            Encoding::Labels(n) => {
                let Domain::Categorical { labels } = &self.space.hyperparameters()[index].domain else {
                    unreachable!()
                };
                Value::Label(labels[(x.round().max(0.0) as usize).min(n - 1)].clone())
            }
            Encoding::Codes { lo, n } => Value::Int(lo + (x.round().max(0.0) as i64).min(*n as i64 - 1)),
            Encoding::Unit { lo, hi, log, integer } => {
                let u = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.5 };
                let v = if *log {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                };
                let v = v.clamp(*lo, *hi);
                if *integer {
                    Value::Int((v.round() as i64).clamp(*lo as i64, *hi as i64))
                } else {
                    Value::Real(v)
                }
            }
        }
    }

    /// Hyperparameter coordinates of a configuration, without the score.
    pub fn encode(&self, config: &Configuration) -> Vec<f64> {
        self.space
            .hyperparameters()
            .iter()
            .enumerate()
            .map(|(i, h)| self.encode_value(i, config.get(&h.name).expect("complete configuration")))
            .collect()
    }

    /// Decodes the hyperparameter coordinates of a surrogate sample.
    pub fn decode(&self, xs: &[f64]) -> Configuration {
        self.space
            .hyperparameters()
            .iter()
            .enumerate()
            .map(|(i, h)| (h.name.clone(), self.decode_value(i, xs[i])))
            .collect()
    }

    /// Encodes a partial assignment by name.
    pub fn encode_partial(&self, values: &IndexMap<String, Value>) -> Vec<Option<f64>> {
        let mut out = vec![None; self.encodings.len() + 1];
        for (name, v) in values {
            let i = self.space.index_of(name).expect("validated name");
            out[i] = Some(self.encode_value(i, v));
        }
        out
    }

    /// Variance of each coordinate under the uniform prior, on the model scale.
    pub fn uniform_variance(&self, index: usize) -> f64 {
        match self.encodings[index] {
            Encoding::Labels(n) | Encoding::Codes { n, .. } => ((n * n) as f64 - 1.0) / 12.0,
            Encoding::Unit { .. } => 1.0 / 12.0,
        }
    }

    /// Divisor mapping a model-scale variance onto `[0, 1/4]`.
    pub fn variance_scale(&self, index: usize) -> f64 {
        match self.encodings[index] {
            Encoding::Labels(n) | Encoding::Codes { n, .. } => ((n.max(2) - 1) as f64).powi(2),
            Encoding::Unit { .. } => 1.0,
        }
    }

    /// One coordinate drawn from the uniform prior on the model scale.
    pub fn sample_uniform_coordinate<R: rand::Rng + ?Sized>(&self, index: usize, rng: &mut R) -> f64 {
        match self.encodings[index] {
            Encoding::Labels(n) | Encoding::Codes { n, .. } => rng.random_range(0..n) as f64,
            Encoding::Unit { .. } => rng.random::<f64>(),
        }
    }

    /// Log density of the uniform prior for one coordinate on the model scale.
    pub fn log_uniform_density(&self, index: usize) -> f64 {
        match self.encodings[index] {
            Encoding::Labels(n) | Encoding::Codes { n, .. } => -(n as f64).ln(),
            Encoding::Unit { .. } => 0.0,
        }
    }

    pub fn kind(&self, index: usize) -> VarKind {
        match self.encodings[index] {
            Encoding::Labels(n) | Encoding::Codes { n, .. } => VarKind::Discrete { cardinality: n },
            Encoding::Unit { .. } => VarKind::Continuous,
        }
    }
}

/// Mean and standard deviation used to z-score the score column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreScale {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreScale {
    pub fn fit(scores: &[f64]) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }

    pub fn forward(&self, f: f64) -> f64 {
        (f - self.mean) / self.sd
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}
