//! Black-box objectives. Scores are maximized.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::ObjectiveError;
use crate::space::{Configuration, Domain, HyperparameterDef, SearchSpace, Value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    /// Cost in seconds, real or synthetic.
    pub cost: f64,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn space(&self) -> &SearchSpace;
    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError>;

    /// Best attainable score, when known.
    fn optimum(&self) -> Option<f64> {
        None
    }

    /// A configuration attaining [`Objective::optimum`], when known.
    fn optimal_configuration(&self) -> Option<Configuration> {
        None
    }
}

fn real(config: &Configuration, name: &str) -> f64 {
    config
        .get(name)
        .and_then(Value::as_f64)
        .expect("validated configuration")
}

/// Negated 2-D Branin over x1 in [-5, 10], x2 in [0, 15]. Maximum -0.397887.
pub struct Branin {
    space: SearchSpace,
    cost: f64,
}

impl Branin {
    pub fn new() -> Self {
        let space = SearchSpace::new(vec![
            HyperparameterDef::continuous("x1", -5.0, 10.0),
            HyperparameterDef::continuous("x2", 0.0, 15.0),
        ])
        .expect("static space");
        Self { space, cost: 1.0 }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn value(x1: f64, x2: f64) -> f64 {
        use std::f64::consts::PI;
        let b = 5.1 / (4.0 * PI * PI);
        let c = 5.0 / PI;
        let t = 1.0 / (8.0 * PI);
        let inner = x2 - b * x1 * x1 + c * x1 - 6.0;
        -(inner * inner + 10.0 * (1.0 - t) * x1.cos() + 10.0)
    }
}

impl Default for Branin {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for Branin {
    fn name(&self) -> &str {
        "branin"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        Ok(Evaluation {
            score: Self::value(real(config, "x1"), real(config, "x2")),
            cost: self.cost,
        })
    }

    fn optimum(&self) -> Option<f64> {
        Some(Self::value(std::f64::consts::PI, 2.275))
    }

    fn optimal_configuration(&self) -> Option<Configuration> {
        Some(Configuration::from_iter([
            ("x1", Value::Real(std::f64::consts::PI)),
            ("x2", Value::Real(2.275)),
        ]))
    }
}

/// Hybrid test function over `C in {a,b,c}`, `K in [0,9]`, `x in [0,1]`.
/// Each label has its own optimum; the global one is `(a, 3, 0.2)` with score 1.
pub struct MixedSynthetic {
    space: SearchSpace,
    cost: f64,
}

impl MixedSynthetic {
    pub fn new() -> Self {
        let space = SearchSpace::new(vec![
            HyperparameterDef::categorical("C", ["a", "b", "c"]),
            HyperparameterDef::integer("K", 0, 9),
            HyperparameterDef::continuous("x", 0.0, 1.0),
        ])
        .expect("static space");
        Self { space, cost: 1.0 }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn value(c: &str, k: i64, x: f64) -> f64 {
        let (base, k_star, x_star) = match c {
            "a" => (1.0, 3, 0.2),
            "b" => (0.5, 7, 0.8),
            _ => (0.0, 0, 0.5),
        };
        base - ((k - k_star) as f64).powi(2) / 10.0 - 5.0 * (x - x_star).powi(2)
    }
}

impl Default for MixedSynthetic {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for MixedSynthetic {
    fn name(&self) -> &str {
        "mixed_synthetic"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        let Some(Value::Label(c)) = config.get("C") else {
            panic!("validated configuration")
        };
        let Some(Value::Int(k)) = config.get("K") else {
            panic!("validated configuration")
        };
        Ok(Evaluation {
            score: Self::value(c, *k, real(config, "x")),
            cost: self.cost,
        })
    }

    fn optimum(&self) -> Option<f64> {
        Some(1.0)
    }

    fn optimal_configuration(&self) -> Option<Configuration> {
        Some(Configuration::from_iter([
            ("C", Value::Label("a".into())),
            ("K", Value::Int(3)),
            ("x", Value::Real(0.2)),
        ]))
    }
}

/// Lookup table of pre-computed scores. Numeric coordinates snap to the
/// nearest value present in the table; configurations absent after snapping
/// fall back to the nearest row.
pub struct TabularObjective {
    name: String,
    space: SearchSpace,
    rows: Vec<(Configuration, Evaluation)>,
    index: HashMap<String, usize>,
    /// Sorted distinct values per numeric hyperparameter.
    grids: Vec<Vec<f64>>,
}

impl TabularObjective {
    pub fn new(
        name: impl Into<String>,
        space: SearchSpace,
        rows: Vec<(Configuration, Evaluation)>,
    ) -> Result<Self, ObjectiveError> {
        if rows.is_empty() {
            return Err(ObjectiveError::Table("table has no rows".into()));
        }
        let mut index = HashMap::new();
        for (i, (config, eval)) in rows.iter().enumerate() {
            space
                .validate(config)
                .map_err(|e| ObjectiveError::Table(format!("row {}: {e}", i + 1)))?;
            if !(eval.score.is_finite() && eval.cost >= 0.0) {
                return Err(ObjectiveError::Table(format!("row {}: bad score or cost", i + 1)));
            }
            index.insert(config.key(), i);
        }
        let grids = space
            .hyperparameters()
            .iter()
            .map(|h| {
                let mut g: Vec<f64> = rows
                    .iter()
                    .filter_map(|(c, _)| c.get(&h.name).and_then(Value::as_f64))
                    .collect();
                g.sort_by(f64::total_cmp);
                g.dedup();
                g
            })
            .collect();
        Ok(Self {
            name: name.into(),
            space,
            rows,
            index,
            grids,
        })
    }

    /// Reads a CSV file whose header names every hyperparameter plus `score`
    /// and `cost` columns.
    pub fn from_csv(path: &Path, space: SearchSpace) -> Result<Self, ObjectiveError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| ObjectiveError::Table(e.to_string()))?;
        let header = reader
            .headers()
            .map_err(|e| ObjectiveError::Table(e.to_string()))?
            .clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| ObjectiveError::Table(format!("missing column `{name}`")))
        };
        let hp_cols: Vec<usize> = space
            .hyperparameters()
            .iter()
            .map(|h| col(&h.name))
            .collect::<Result<_, _>>()?;
        let score_col = col("score")?;
        let cost_col = col("cost")?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| ObjectiveError::Table(format!("line {line}: {e}")))?;
            let field = |c: usize| record.get(c).unwrap_or("").trim();
            let mut config = Configuration::new();
            for (h, &c) in space.hyperparameters().iter().zip(&hp_cols) {
                let raw = field(c);
                let json = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
                let value = space
                    .coerce(&h.name, &json)
                    .map_err(|m| ObjectiveError::Table(format!("line {line}: `{}`: {m}", h.name)))?;
                config.insert(h.name.clone(), value);
            }
            let num = |c: usize| {
                field(c)
                    .parse::<f64>()
                    .map_err(|_| ObjectiveError::Table(format!("line {line}: bad number `{}`", field(c))))
            };
            rows.push((
                config,
                Evaluation {
                    score: num(score_col)?,
                    cost: num(cost_col)?,
                },
            ));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, space, rows)
    }

    /// Snaps numeric coordinates to the nearest table value.
    pub fn round(&self, config: &Configuration) -> Configuration {
        self.space
            .hyperparameters()
            .iter()
            .zip(&self.grids)
            .map(|(h, grid)| {
                let v = config.get(&h.name).expect("complete configuration").clone();
                let snapped = match (&h.domain, v.as_f64()) {
                    (Domain::Categorical { .. }, _) | (_, None) => v,
                    (domain, Some(x)) => {
                        let i = grid.partition_point(|g| *g < x);
                        let best = [i.checked_sub(1), (i < grid.len()).then_some(i)]
                            .into_iter()
                            .flatten()
                            .min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs()))
                            .map(|j| grid[j])
                            .unwrap_or(x);
                        match domain {
                            Domain::Integer { .. } => Value::Int(best.round() as i64),
                            _ => Value::Real(best),
                        }
                    }
                };
                (h.name.clone(), snapped)
            })
            .collect()
    }

    fn nearest_row(&self, config: &Configuration) -> usize {
        let distance = |other: &Configuration| -> f64 {
            self.space
                .hyperparameters()
                .iter()
                .map(|h| {
                    let (a, b) = (config.get(&h.name).unwrap(), other.get(&h.name).unwrap());
                    match (&h.domain, a.as_f64(), b.as_f64()) {
                        (Domain::Categorical { .. }, _, _) => f64::from(a != b),
                        (d, Some(x), Some(y)) => {
                            let (lo, hi) = d.bounds().unwrap();
                            ((x - y) / (hi - lo)).powi(2)
                        }
                        _ => 1.0,
                    }
                })
                .sum()
        };
        (0..self.rows.len())
            .min_by(|&i, &j| distance(&self.rows[i].0).total_cmp(&distance(&self.rows[j].0)))
            .expect("non-empty table")
    }
}

impl Objective for TabularObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        self.space
            .validate(config)
            .map_err(|e| ObjectiveError::Lookup(e.to_string()))?;
        let rounded = self.round(config);
        let i = match self.index.get(&rounded.key()) {
            Some(i) => *i,
            None => self.nearest_row(&rounded),
        };
        Ok(self.rows[i].1)
    }

    fn optimum(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.1.score).max_by(f64::total_cmp)
    }

    fn optimal_configuration(&self) -> Option<Configuration> {
        self.rows
            .iter()
            .max_by(|a, b| a.1.score.total_cmp(&b.1.score))
            .map(|r| r.0.clone())
    }
}

/// Runs a shell command per evaluation. `{name}` in the template is replaced
/// by the hyperparameter's value; the last non-empty output line must read
/// `score=<real>`.
pub struct ExternalCommand {
    space: SearchSpace,
    template: String,
    timeout: Duration,
}

impl ExternalCommand {
    pub fn new(space: SearchSpace, template: impl Into<String>, timeout: Duration) -> Self {
        Self {
            space,
            template: template.into(),
            timeout,
        }
    }

    pub fn command_line(&self, config: &Configuration) -> String {
        config.values.iter().fold(self.template.clone(), |cmd, (k, v)| {
            cmd.replace(&format!("{{{k}}}"), &v.to_string())
        })
    }
}

fn parse_score(stdout: &str) -> Result<f64, ObjectiveError> {
    let last = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| ObjectiveError::Parse("no output".into()))?;
    let value = last
        .trim()
        .strip_prefix("score=")
        .ok_or_else(|| ObjectiveError::Parse(format!("last line `{}` is not `score=<real>`", last.trim())))?;
    let score: f64 = value
        .trim()
        .parse()
        .map_err(|_| ObjectiveError::Parse(format!("`{value}` is not a number")))?;
    if score.is_finite() {
        Ok(score)
    } else {
        Err(ObjectiveError::Parse(format!("non-finite score `{value}`")))
    }
}

impl Objective for ExternalCommand {
    fn name(&self) -> &str {
        "command"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        let start = Instant::now();
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(self.command_line(config))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ObjectiveError::Spawn(e.to_string()))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let status = loop {
            if let Some(status) = child.try_wait().map_err(|e| ObjectiveError::Spawn(e.to_string()))? {
                break status;
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ObjectiveError::Timeout(self.timeout.as_secs_f64()));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let output = reader.join().unwrap_or_default();
        if !status.success() {
            return Err(ObjectiveError::Exit(status.to_string()));
        }
        Ok(Evaluation {
            score: parse_score(&output)?,
            cost: start.elapsed().as_secs_f64(),
        })
    }
}

/// Adds Gaussian noise to another objective's score.
pub struct Noisy<O> {
    inner: O,
    noise: Normal<f64>,
    rng: Mutex<ChaCha8Rng>,
}

impl<O: Objective> Noisy<O> {
    pub fn new(inner: O, sigma: f64, seed: u64) -> Self {
        Self {
            inner,
            noise: Normal::new(0.0, sigma).expect("finite non-negative sigma"),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl<O: Objective> Objective for Noisy<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn space(&self) -> &SearchSpace {
        self.inner.space()
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        let mut e = self.inner.evaluate(config)?;
        let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
        e.score += self.noise.sample(&mut *rng);
        Ok(e)
    }

    fn optimum(&self) -> Option<f64> {
        self.inner.optimum()
    }

    fn optimal_configuration(&self) -> Option<Configuration> {
        self.inner.optimal_configuration()
    }
}

/// Negates scores so that a loss can be minimized by the maximizing loop.
pub struct Minimize<O>(pub O);

impl<O: Objective> Objective for Minimize<O> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn space(&self) -> &SearchSpace {
        self.0.space()
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        self.0.evaluate(config).map(|e| Evaluation { score: -e.score, ..e })
    }
}

impl Objective for Box<dyn Objective> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn space(&self) -> &SearchSpace {
        (**self).space()
    }

    fn evaluate(&self, config: &Configuration) -> Result<Evaluation, ObjectiveError> {
        (**self).evaluate(config)
    }

    fn optimum(&self) -> Option<f64> {
        (**self).optimum()
    }

    fn optimal_configuration(&self) -> Option<Configuration> {
        (**self).optimal_configuration()
    }
}
