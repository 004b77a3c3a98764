//! Python bindings. Configurations, trials and knowledge documents cross the
//! boundary as plain dicts and lists.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyTuple;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use circuit_hpo::knowledge::parse_live_interaction;
use circuit_hpo::learn::{learn as learn_circuit, DataMatrix, LearnParams};
use circuit_hpo::objectives::{Branin, MixedSynthetic};
use circuit_hpo::optimizer::{ei_lower_bound as ei_bound, GaussianComponent};
use circuit_hpo::{
    parse_interactions, Circuit, Configuration, Evaluation, Interaction, Optimizer, OptimizerParams, SearchSpace,
    Variable,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn config_from_py(space: &SearchSpace, obj: &Bound<'_, PyAny>) -> PyResult<Configuration> {
    let serde_json::Value::Object(map) = from_py(obj)? else {
        return Err(PyValueError::new_err("configuration must be a dict"));
    };
    let mut config = Configuration::new();
    for (name, v) in &map {
        config.insert(
            name.clone(),
            space.coerce(name, v).map_err(|e| value_error(format!("{name}: {e}")))?,
        );
    }
    space.validate(&config).map_err(value_error)?;
    Ok(space.canonicalize(&config))
}

/// A hyperparameter search space in the line-oriented text format.
#[pyclass(name = "SearchSpace", from_py_object)]
#[derive(Clone)]
struct PySearchSpace {
    inner: SearchSpace,
}

#[pymethods]
impl PySearchSpace {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SearchSpace::parse(text).map_err(value_error)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.hyperparameters().iter().map(|h| h.name.clone()).collect()
    }

    #[getter]
    fn score_name(&self) -> &str {
        self.inner.score_name()
    }

    /// One configuration drawn uniformly.
    #[pyo3(signature = (seed=0))]
    fn sample<'py>(&self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Raises ValueError unless `config` is a complete, in-domain assignment.
    fn validate(&self, config: &Bound<'_, PyAny>) -> PyResult<()> {
        config_from_py(&self.inner, config).map(|_| ())
    }

    /// Checks a scripted interaction document and returns how many records it has.
    fn check_interactions(&self, text: &str) -> PyResult<usize> {
        parse_interactions(text, &self.inner)
            .map(|v| v.len())
            .map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        self.inner.emit()
    }
}

/// A smooth, decomposable probabilistic circuit.
#[pyclass(name = "Circuit", from_py_object)]
#[derive(Clone)]
struct PyCircuit {
    inner: Circuit,
}

impl PyCircuit {
    fn evidence(&self, values: HashMap<String, f64>) -> PyResult<circuit_hpo::Evidence> {
        self.inner
            .evidence(values.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(value_error)
    }
}

#[pymethods]
impl PyCircuit {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Circuit::from_text(text).map_err(value_error)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.variables().iter().map(|v| v.name.clone()).collect()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.nodes().len()
    }

    /// Log density of a partial assignment; missing variables are marginalized.
    fn log_density(&self, values: HashMap<String, f64>) -> PyResult<f64> {
        Ok(self.inner.log_density(&self.evidence(values)?))
    }

    fn marginal(&self, keep: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self
                .inner
                .marginal_circuit(keep.iter().map(String::as_str))
                .map_err(value_error)?,
        })
    }

    fn condition(&self, values: HashMap<String, f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.condition(&self.evidence(values)?).map_err(value_error)?,
        })
    }

    /// `n` joint samples, conditioned on `evidence` if given.
    #[pyo3(signature = (n, seed=0, evidence=None))]
    fn sample(&self, n: usize, seed: u64, evidence: Option<HashMap<String, f64>>) -> PyResult<Vec<Vec<f64>>> {
        let ev = match evidence {
            Some(v) => self.evidence(v)?,
            None => self.inner.empty_evidence(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.inner.conditional_sample(&ev, &mut rng)).collect())
    }

    /// Per-variable (mean, variance).
    fn moments(&self) -> Vec<(f64, f64)> {
        self.inner.moments()
    }
}

/// Learns a circuit from rows of data. Columns named in `discrete` hold
/// integer codes below the given cardinality; the rest are continuous.
#[pyfunction]
#[pyo3(signature = (rows, names, discrete=None, seed=0))]
fn learn(
    rows: Vec<Vec<f64>>,
    names: Vec<String>,
    discrete: Option<HashMap<String, usize>>,
    seed: u64,
) -> PyResult<PyCircuit> {
    let discrete = discrete.unwrap_or_default();
    let vars = names
        .iter()
        .map(|n| match discrete.get(n) {
            Some(k) => Variable::discrete(n.clone(), *k),
            None => Variable::continuous(n.clone()),
        })
        .collect();
    let data = DataMatrix::from_rows(vars, &rows).map_err(value_error)?;
    let params = LearnParams {
        seed,
        ..Default::default()
    };
    Ok(PyCircuit {
        inner: learn_circuit(&data, &params).map_err(value_error)?,
    })
}

/// The interactive optimizer. Drive it with `suggest`/`observe`, or hand
/// `run` a callable.
#[pyclass(name = "Optimizer")]
struct PyOptimizer {
    inner: Optimizer,
}

impl PyOptimizer {
    fn record<'py>(&mut self, py: Python<'py>, outcome: Result<Evaluation, String>) -> PyResult<Bound<'py, PyAny>> {
        self.inner.suggest().map_err(value_error)?;
        let trial = self.inner.observe(outcome).map_err(value_error)?;
        to_py(py, trial)
    }
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (
        space, seed=0, max_iterations=200, gamma=None, rho=None, refit_every=None,
        init_samples=None, n_conditions=None, b_samples=None, prior_weight=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        space: PySearchSpace,
        seed: u64,
        max_iterations: usize,
        gamma: Option<f64>,
        rho: Option<f64>,
        refit_every: Option<usize>,
        init_samples: Option<usize>,
        n_conditions: Option<usize>,
        b_samples: Option<usize>,
        prior_weight: Option<f64>,
    ) -> PyResult<Self> {
        let mut p = OptimizerParams {
            seed,
            max_iterations,
            ..Default::default()
        };
        p.gamma = gamma.unwrap_or(p.gamma);
        p.rho = rho.unwrap_or(p.rho);
        p.refit_every = refit_every.unwrap_or(p.refit_every);
        p.init_samples = init_samples.unwrap_or(p.init_samples);
        p.n_conditions = n_conditions.unwrap_or(p.n_conditions);
        p.b_samples = b_samples.unwrap_or(p.b_samples);
        p.prior_weight = prior_weight.unwrap_or(p.prior_weight);
        Ok(Self {
            inner: Optimizer::new(&space.inner, p).map_err(value_error)?,
        })
    }

    /// The next configuration to evaluate. Repeated calls return the same one
    /// until it is observed.
    fn suggest<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = self.inner.suggest().map_err(value_error)?;
        to_py(py, &s.config)
    }

    #[pyo3(signature = (score, cost=1.0))]
    fn observe<'py>(&mut self, py: Python<'py>, score: f64, cost: f64) -> PyResult<Bound<'py, PyAny>> {
        self.record(py, Ok(Evaluation { score, cost }))
    }

    /// Records the pending suggestion as a failed evaluation.
    fn fail<'py>(&mut self, py: Python<'py>, message: String) -> PyResult<Bound<'py, PyAny>> {
        self.record(py, Err(message))
    }

    /// Evaluates `objective(config)` until the iteration budget is spent. The
    /// callable returns a score or a `(score, cost)` tuple; exceptions become
    /// failed trials.
    fn run(&mut self, py: Python<'_>, objective: &Bound<'_, PyAny>) -> PyResult<Option<f64>> {
        while !self.inner.is_finished() {
            let config = self.suggest(py)?;
            let outcome = match objective.call1((config,)) {
                Ok(r) if r.is_instance_of::<PyTuple>() => {
                    let (score, cost): (f64, f64) = r.extract()?;
                    Ok(Evaluation { score, cost })
                }
                Ok(r) => Ok(Evaluation {
                    score: r.extract()?,
                    cost: 1.0,
                }),
                Err(e) => Err(e.to_string()),
            };
            self.record(py, outcome)?;
        }
        Ok(self.inner.history().incumbent_score())
    }

    /// Activates knowledge from an interaction object such as
    /// `{"kind": "dist", "intervention": {"x": {"dist": "normal", "parameters": [0.2, 0.1]}}}`.
    fn inject(&mut self, record: &Bound<'_, PyAny>) -> PyResult<()> {
        let json = from_py(record)?;
        let interaction = parse_live_interaction(&json, self.inner.space()).map_err(value_error)?;
        self.inner.inject(interaction).map_err(value_error)
    }

    fn clear_knowledge(&mut self) -> PyResult<()> {
        self.inner
            .inject(Interaction::Clear { at: 0, polarity: None })
            .map_err(value_error)
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    /// Probability that the next iteration uses the active knowledge.
    #[getter]
    fn gate_probability(&self) -> f64 {
        self.inner.gate_probability()
    }

    /// `(config, score)` of the best trial so far.
    #[getter]
    fn incumbent<'py>(&self, py: Python<'py>) -> PyResult<Option<(Bound<'py, PyAny>, f64)>> {
        match self.inner.history().incumbent() {
            Some(t) => Ok(Some((to_py(py, &t.config)?, t.score.unwrap_or(f64::NAN)))),
            None => Ok(None),
        }
    }

    fn trials<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.history().trials())
    }

    fn refits<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.refits())
    }

    /// The learned part of the current surrogate, if one has been fitted.
    fn surrogate(&self) -> Option<PyCircuit> {
        self.inner.surrogate().map(|s| PyCircuit {
            inner: s.circuit.clone(),
        })
    }
}

/// Negated Branin function; the maximum is about -0.3979.
#[pyfunction]
fn branin(x1: f64, x2: f64) -> f64 {
    Branin::value(x1, x2)
}

#[pyfunction]
fn mixed_synthetic(c: &str, k: i64, x: f64) -> f64 {
    MixedSynthetic::value(c, k, x)
}

/// Search space text of a built-in objective.
#[pyfunction]
fn builtin_space(name: &str) -> PyResult<PySearchSpace> {
    use circuit_hpo::Objective;
    let inner = match name {
        "branin" => Branin::new().space().clone(),
        "mixed_synthetic" => MixedSynthetic::new().space().clone(),
        other => return Err(PyValueError::new_err(format!("unknown objective `{other}`"))),
    };
    Ok(PySearchSpace { inner })
}

/// Expected-improvement lower bound. `components` holds
/// `(weight, mean, diagonal)` tuples.
#[pyfunction]
#[pyo3(signature = (components, theta_t, theta_star, lipschitz=1.0))]
fn ei_lower_bound(
    components: Vec<(f64, Vec<f64>, Vec<f64>)>,
    theta_t: Vec<f64>,
    theta_star: Vec<f64>,
    lipschitz: f64,
) -> PyResult<f64> {
    let cs: Vec<GaussianComponent> = components
        .into_iter()
        .map(|(weight, mean, diag)| GaussianComponent { weight, mean, diag })
        .collect();
    ei_bound(&cs, &theta_t, &theta_star, lipschitz).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "circuit_hpo")]
fn circuit_hpo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySearchSpace>()?;
    m.add_class::<PyCircuit>()?;
    m.add_class::<PyOptimizer>()?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(branin, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_space, m)?)?;
    m.add_function(wrap_pyfunction!(ei_lower_bound, m)?)?;
    Ok(())
}
