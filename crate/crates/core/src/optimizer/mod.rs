//! The optimization loop: uniform initialization, periodic surrogate refits,
//! and candidate selection by sampling the surrogate conditioned on the
//! incumbent score. Active user knowledge is used with a probability that
//! decays geometrically from the iteration it arrived.

pub mod ei;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, MAX_INDUCED_TREES};
use crate::encode::{Encoder, ScoreScale};
use crate::error::OptimizerError;
use crate::knowledge::{sample_prior, Interaction, UserKnowledge};
use crate::learn::{learn, DataMatrix, LearnParams};
use crate::objectives::{Evaluation, Objective};
use crate::space::{Configuration, SearchSpace};

pub use ei::{ei_lower_bound, GaussianComponent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerParams {
    /// Uniform trials before the first surrogate fit.
    pub init_samples: usize,
    /// Iterations between surrogate refits.
    pub refit_every: usize,
    pub gamma: f64,
    pub rho: f64,
    /// Conditions drawn from the user prior per selection.
    pub n_conditions: usize,
    /// Surrogate samples per condition.
    pub b_samples: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Lipschitz constant assumed by the expected-improvement diagnostic.
    pub lipschitz: f64,
    /// Weight of the uniform prior mixed into the surrogate; bounds the
    /// probability of every configuration away from zero.
    pub prior_weight: f64,
    pub learn: LearnParams,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            init_samples: 5,
            refit_every: 20,
            gamma: 0.9,
            rho: 1.0,
            n_conditions: 20,
            b_samples: 1,
            max_iterations: 200,
            seed: 0,
            lipschitz: 1.0,
            prior_weight: 0.1,
            learn: LearnParams::default(),
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::Params(m.to_string()));
        if self.init_samples == 0 || self.refit_every == 0 || self.n_conditions == 0 || self.b_samples == 0 {
            return bad("init_samples, refit_every, n_conditions and b_samples must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight < 1.0) {
            return bad("prior_weight must lie in [0, 1)");
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return bad("lipschitz must be finite and non-negative");
        }
        self.learn.validate()?;
        Ok(())
    }

    /// Whether the surrogate is refit before selecting at `iteration`.
    pub fn is_refit_iteration(&self, iteration: usize) -> bool {
        iteration >= self.init_samples && (iteration - self.init_samples).is_multiple_of(self.refit_every)
    }
}

/// One evaluated (or failed) candidate, as written to the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub iteration: usize,
    pub config: Configuration,
    /// `None` when evaluation failed.
    pub score: Option<f64>,
    pub cost: f64,
    pub incumbent_score: Option<f64>,
    pub cumulative_cost: f64,
    pub used_knowledge: bool,
    pub refit_flag: bool,
    pub sampling_variance_per_hyperparameter: IndexMap<String, f64>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TrialHistory {
    trials: Vec<Trial>,
    incumbent: Option<usize>,
    cumulative_cost: f64,
}

impl TrialHistory {
    /// Appends a trial, filling in its running incumbent and cost totals.
    pub fn push(&mut self, mut trial: Trial) -> &Trial {
        if let Some(last) = self.trials.last() {
            assert!(trial.iteration > last.iteration, "iterations must increase");
        }
        self.cumulative_cost += trial.cost;
        let best = self.incumbent_score();
        if let Some(s) = trial.score {
            if best.is_none_or(|b| s > b) {
                self.incumbent = Some(self.trials.len());
            }
        }
        trial.incumbent_score = match (best, trial.score) {
            (Some(b), Some(s)) => Some(b.max(s)),
            (b, s) => b.or(s),
        };
        trial.cumulative_cost = self.cumulative_cost;
        self.trials.push(trial);
        self.trials.last().unwrap()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn incumbent(&self) -> Option<&Trial> {
        self.incumbent.map(|i| &self.trials[i])
    }

    pub fn incumbent_score(&self) -> Option<f64> {
        self.incumbent().and_then(|t| t.score)
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.cumulative_cost
    }

    /// Successful trials as `(config, score)`.
    pub fn observations(&self) -> impl Iterator<Item = (&Configuration, f64)> {
        self.trials.iter().filter_map(|t| t.score.map(|s| (&t.config, s)))
    }
}

/// Active knowledge and the clock its gate probability decays on.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayState {
    pub knowledge: Option<UserKnowledge>,
    /// Iteration the active knowledge arrived at.
    pub since: usize,
    pub rho: f64,
    pub gamma: f64,
}

impl DecayState {
    pub fn new(gamma: f64, rho: f64) -> Self {
        Self {
            knowledge: None,
            since: 0,
            rho,
            gamma,
        }
    }
}

/// `gamma^(iteration - T) * rho`, or 0 without active knowledge.
pub fn gate_probability(state: &DecayState, iteration: usize) -> f64 {
    if state.knowledge.is_none() {
        return 0.0;
    }
    let t = iteration.saturating_sub(state.since);
    (state.gamma.powi(t.min(i32::MAX as usize) as i32) * state.rho).clamp(0.0, 1.0)
}

/// A fitted surrogate over the encoded hyperparameters and z-scored score.
///
/// The selection model is the mixture
/// `(1 - prior_weight) * s(H, F) + prior_weight * u(H) * s(F)` of the learned
/// circuit and the uniform prior `u`, paired with the circuit's own score
/// marginal. It is again a smooth, decomposable circuit, and conditioning on
/// any score leaves exactly `prior_weight` on `u(H)`, so every configuration
/// keeps probability at least `prior_weight * u(theta)`.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub circuit: Circuit,
    pub scale: ScoreScale,
    pub fitted_at: usize,
    pub prior_weight: f64,
}

impl Surrogate {
    pub fn fit(
        encoder: &Encoder,
        history: &TrialHistory,
        params: &LearnParams,
        iteration: usize,
        prior_weight: f64,
    ) -> Result<Self, OptimizerError> {
        let scores: Vec<f64> = history.observations().map(|(_, s)| s).collect();
        let scale = ScoreScale::fit(&scores);
        let rows: Vec<Vec<f64>> = history
            .observations()
            .map(|(c, s)| {
                let mut row = encoder.encode(c);
                row.push(scale.forward(s));
                row
            })
            .collect();
        let data = DataMatrix::from_rows(encoder.variables(), &rows)?.with_score(encoder.space().score_name())?;
        let circuit = learn(&data, params)?;
        Ok(Self {
            circuit,
            scale,
            fitted_at: iteration,
            prior_weight,
        })
    }

    /// The learned part `s(H | F = f_star)`, `f_star` on the original score scale.
    pub fn condition(&self, f_star: f64) -> Result<Circuit, OptimizerError> {
        Ok(self.circuit.condition_score(self.scale.forward(f_star))?)
    }

    /// Log density of the full selection model at `values` (model scale,
    /// aligned with the circuit variables; `None` marginalizes).
    pub fn log_density(&self, encoder: &Encoder, values: &[Option<f64>]) -> Result<f64, OptimizerError> {
        let learned = self
            .circuit
            .log_density(&self.circuit.evidence_from_values(values.to_vec())?);
        if self.prior_weight <= 0.0 {
            return Ok(learned);
        }
        let score = encoder.score_index();
        let mut score_only = vec![None; values.len()];
        score_only[score] = values[score];
        let marginal = self
            .circuit
            .log_density(&self.circuit.evidence_from_values(score_only)?);
        let uniform: f64 = (0..score)
            .filter(|&i| values[i].is_some())
            .map(|i| encoder.log_uniform_density(i))
            .sum();
        Ok(crate::circuit::log_sum_exp(
            [
                (1.0 - self.prior_weight).ln() + learned,
                self.prior_weight.ln() + uniform + marginal,
            ]
            .into_iter(),
        ))
    }

    /// Posterior probability of the uniform component given the evidence.
    fn prior_posterior(&self, encoder: &Encoder, values: &[Option<f64>]) -> Result<f64, OptimizerError> {
        if self.prior_weight <= 0.0 {
            return Ok(0.0);
        }
        if self.prior_weight >= 1.0 {
            return Ok(1.0);
        }
        let learned = self
            .circuit
            .log_density(&self.circuit.evidence_from_values(values.to_vec())?);
        let total = self.log_density(encoder, values)?;
        Ok((1.0 - ((1.0 - self.prior_weight).ln() + learned - total).exp()).clamp(0.0, 1.0))
    }

    /// Samples every unassigned hyperparameter coordinate given `values`.
    fn sample_given<R: Rng + ?Sized>(
        &self,
        encoder: &Encoder,
        values: Vec<Option<f64>>,
        rng: &mut R,
    ) -> Result<Vec<f64>, OptimizerError> {
        let p = self.prior_posterior(encoder, &values)?;
        let from_prior = p > 0.0 && rng.random::<f64>() < p;
        if from_prior {
            Ok(values
                .iter()
                .enumerate()
                .map(|(i, v)| v.unwrap_or_else(|| encoder.sample_uniform_coordinate(i, rng)))
                .collect())
        } else {
            let evidence = self.circuit.evidence_from_values(values)?;
            Ok(self.circuit.conditional_sample(&evidence, rng))
        }
    }
}

/// Draws a configuration from the surrogate conditioned on `F = f_star`.
/// Also returns the per-coordinate variance of that distribution on the
/// model scale.
pub fn select_without_knowledge<R: Rng + ?Sized>(
    surrogate: &Surrogate,
    encoder: &Encoder,
    f_star: f64,
    rng: &mut R,
) -> Result<(Configuration, Vec<f64>), OptimizerError> {
    let mut values = vec![None; encoder.score_index() + 1];
    values[encoder.score_index()] = Some(surrogate.scale.forward(f_star));
    let x = surrogate.sample_given(encoder, values, rng)?;
    let eta = surrogate.prior_weight;
    let variance = surrogate
        .condition(f_star)?
        .moments()
        .into_iter()
        .enumerate()
        .map(|(i, (m, v))| {
            // Moments of the mixture with the uniform prior.
            let (mu, vu) = uniform_moments(encoder, i);
            let mean = (1.0 - eta) * m + eta * mu;
            ((1.0 - eta) * (v + m * m) + eta * (vu + mu * mu) - mean * mean).max(0.0)
        })
        .collect();
    Ok((encoder.decode(&x), variance))
}

fn uniform_moments(encoder: &Encoder, index: usize) -> (f64, f64) {
    let var = encoder.uniform_variance(index);
    match encoder.kind(index) {
        crate::circuit::VarKind::Discrete { cardinality } => ((cardinality as f64 - 1.0) / 2.0, var),
        crate::circuit::VarKind::Continuous => (0.5, var),
    }
}

/// Draws `n_conditions` assignments from the user prior, completes each by
/// the best of `b_samples` draws from `s(H' | H^ = h, F = f_star)`, and
/// returns one completion uniformly at random. The user-specified
/// coordinates of the result are the prior draws themselves.
///
/// Also returns the encoded survivors.
pub fn select_with_knowledge<R: Rng + ?Sized>(
    surrogate: &Surrogate,
    encoder: &Encoder,
    f_star: f64,
    knowledge: &UserKnowledge,
    n_conditions: usize,
    b_samples: usize,
    rng: &mut R,
) -> Result<(Configuration, Vec<Vec<f64>>), OptimizerError> {
    let score = encoder.score_index();
    let z_star = surrogate.scale.forward(f_star);
    let mut survivors = Vec::with_capacity(n_conditions);
    let mut encoded = Vec::with_capacity(n_conditions);
    for _ in 0..n_conditions {
        let fixed = sample_prior(knowledge, encoder.space(), rng);
        let mut values = encoder.encode_partial(&fixed);
        values[score] = Some(z_star);
        let mut best = surrogate.sample_given(encoder, values.clone(), rng)?;
        if b_samples > 1 {
            let ll = |x: &[f64]| surrogate.log_density(encoder, &x.iter().copied().map(Some).collect::<Vec<_>>());
            let mut best_ll = ll(&best)?;
            for _ in 1..b_samples {
                let x = surrogate.sample_given(encoder, values.clone(), rng)?;
                let l = ll(&x)?;
                if l > best_ll {
                    best = x;
                    best_ll = l;
                }
            }
        }
        let mut config = encoder.decode(&best);
        for (name, v) in fixed {
            config.insert(name, v);
        }
        encoded.push(best[..score].to_vec());
        survivors.push(config);
    }
    let pick = rng.random_range(0..survivors.len());
    Ok((survivors.swap_remove(pick), encoded))
}

/// A candidate chosen for evaluation at `iteration`.
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub iteration: usize,
    pub config: Configuration,
    pub used_knowledge: bool,
    pub refit: bool,
    pub sampling_variance: IndexMap<String, f64>,
}

/// Summary of a surrogate refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitInfo {
    pub iteration: usize,
    pub observations: usize,
    pub nodes: usize,
    pub edges: usize,
    /// Expected-improvement lower bound over the continuous hyperparameters.
    pub ei_lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Optimizer {
    params: OptimizerParams,
    encoder: Encoder,
    history: TrialHistory,
    decay: DecayState,
    surrogate: Option<Surrogate>,
    rng: ChaCha8Rng,
    refits: Vec<RefitInfo>,
    reference_optimum: Option<Configuration>,
    pending: Option<Suggestion>,
}

impl Optimizer {
    pub fn new(space: &SearchSpace, params: OptimizerParams) -> Result<Self, OptimizerError> {
        params.validate()?;
        Ok(Self {
            encoder: Encoder::new(space),
            history: TrialHistory::default(),
            decay: DecayState::new(params.gamma, params.rho),
            surrogate: None,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            refits: Vec::new(),
            reference_optimum: None,
            pending: None,
            params,
        })
    }

    /// Known optimum used by the expected-improvement diagnostic. Without it
    /// the incumbent stands in.
    pub fn set_reference_optimum(&mut self, config: Option<Configuration>) {
        self.reference_optimum = config;
    }

    pub fn params(&self) -> &OptimizerParams {
        &self.params
    }

    pub fn space(&self) -> &SearchSpace {
        self.encoder.space()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// The iteration the next suggestion will carry.
    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.iteration() >= self.params.max_iterations
    }

    pub fn history(&self) -> &TrialHistory {
        &self.history
    }

    pub fn decay(&self) -> &DecayState {
        &self.decay
    }

    pub fn surrogate(&self) -> Option<&Surrogate> {
        self.surrogate.as_ref()
    }

    pub fn refits(&self) -> &[RefitInfo] {
        &self.refits
    }

    pub fn gate_probability(&self) -> f64 {
        gate_probability(&self.decay, self.iteration())
    }

    /// Applies knowledge at the current iteration boundary. A new set
    /// replaces any active knowledge and restarts the decay clock.
    pub fn inject(&mut self, interaction: Interaction) -> Result<(), OptimizerError> {
        match interaction {
            Interaction::Set(mut k) => {
                for (name, _) in &k.entries {
                    if self.space().index_of(name).is_none() {
                        return Err(crate::error::SpaceError::UnknownHyperparameter(name.clone()).into());
                    }
                }
                k.received_at = self.iteration();
                self.decay.since = self.iteration();
                self.decay.rho = self.params.rho;
                self.decay.knowledge = Some(k);
            }
            Interaction::Clear { .. } => self.decay.knowledge = None,
        }
        Ok(())
    }

    fn refit(&mut self, iteration: usize) {
        let learn = LearnParams {
            seed: self.params.learn.seed ^ self.params.seed.rotate_left(17) ^ iteration as u64,
            ..self.params.learn.clone()
        };
        let observations = self.history.observations().count();
        let info = if observations == 0 {
            RefitInfo {
                iteration,
                observations,
                nodes: 0,
                edges: 0,
                ei_lower_bound: None,
                error: Some("no successful trials to learn from".into()),
            }
        } else {
            match Surrogate::fit(
                &self.encoder,
                &self.history,
                &learn,
                iteration,
                self.params.prior_weight,
            ) {
                Ok(s) => {
                    let info = RefitInfo {
                        iteration,
                        observations,
                        nodes: s.circuit.nodes().len(),
                        edges: s.circuit.num_edges(),
                        ei_lower_bound: None,
                        error: None,
                    };
                    self.surrogate = Some(s);
                    RefitInfo {
                        ei_lower_bound: self.ei_diagnostic(),
                        ..info
                    }
                }
                Err(e) => {
                    tracing::warn!(iteration, error = %e, "surrogate refit failed; keeping the previous model");
                    RefitInfo {
                        iteration,
                        observations,
                        nodes: 0,
                        edges: 0,
                        ei_lower_bound: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        };
        self.refits.push(info);
    }

    /// Expected-improvement lower bound of `s(H | f*)` restricted to the
    /// continuous hyperparameters.
    pub fn ei_diagnostic(&self) -> Option<f64> {
        let surrogate = self.surrogate.as_ref()?;
        let incumbent = self.history.incumbent()?;
        let cont: Vec<usize> = (0..self.space().len())
            .filter(|&i| self.encoder.is_continuous(i))
            .collect();
        if cont.is_empty() {
            return None;
        }
        let names: Vec<&str> = cont
            .iter()
            .map(|&i| self.space().hyperparameters()[i].name.as_str())
            .collect();
        let conditioned = surrogate.condition(incumbent.score?).ok()?;
        let marginal = conditioned.marginal_circuit(names.iter().copied()).ok()?;
        let (components, _) = ei::gaussian_components(&marginal, MAX_INDUCED_TREES)?;
        let project = |c: &Configuration| -> Vec<f64> {
            let x = self.encoder.encode(c);
            cont.iter().map(|&i| x[i]).collect()
        };
        let theta_t = project(&incumbent.config);
        let theta_star = self.reference_optimum.as_ref().map_or_else(|| theta_t.clone(), project);
        ei_lower_bound(&components, &theta_t, &theta_star, self.params.lipschitz).ok()
    }

    fn uniform_variance(&self) -> Vec<f64> {
        (0..self.space().len())
            .map(|i| self.encoder.uniform_variance(i))
            .collect()
    }

    fn named_variance(&self, variance: &[f64]) -> IndexMap<String, f64> {
        self.space()
            .hyperparameters()
            .iter()
            .enumerate()
            .map(|(i, h)| (h.name.clone(), variance[i] / self.encoder.variance_scale(i)))
            .collect()
    }

    /// Chooses the next candidate. Refits the surrogate first when scheduled.
    pub fn suggest(&mut self) -> Result<Suggestion, OptimizerError> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let iteration = self.iteration();
        let refit = self.params.is_refit_iteration(iteration);
        if refit {
            self.refit(iteration);
        }
        let f_star = self.history.incumbent_score();
        let (config, used_knowledge, variance) = match (&self.surrogate, f_star) {
            (Some(surrogate), Some(f_star)) if iteration >= self.params.init_samples => {
                let gate = gate_probability(&self.decay, iteration);
                let use_knowledge = self.decay.knowledge.is_some() && self.rng.random::<f64>() < gate;
                if use_knowledge {
                    let knowledge = self.decay.knowledge.as_ref().unwrap();
                    let (config, draws) = select_with_knowledge(
                        surrogate,
                        &self.encoder,
                        f_star,
                        knowledge,
                        self.params.n_conditions,
                        self.params.b_samples,
                        &mut self.rng,
                    )?;
                    (config, true, sample_variance(&draws))
                } else {
                    let (config, variance) = select_without_knowledge(surrogate, &self.encoder, f_star, &mut self.rng)?;
                    (config, false, variance)
                }
            }
            _ => (
                self.encoder.space().sample_uniform(&mut self.rng),
                false,
                self.uniform_variance(),
            ),
        };
        let suggestion = Suggestion {
            iteration,
            config: self.space().canonicalize(&config),
            used_knowledge,
            refit,
            sampling_variance: self.named_variance(&variance),
        };
        self.pending = Some(suggestion.clone());
        Ok(suggestion)
    }

    /// Records the outcome of the pending suggestion.
    pub fn observe(&mut self, outcome: Result<Evaluation, String>) -> Result<&Trial, OptimizerError> {
        let s = self
            .pending
            .take()
            .ok_or_else(|| OptimizerError::Params("observe called without a pending suggestion".into()))?;
        let (score, cost, error) = match outcome {
            Ok(e) if e.score.is_finite() => (Some(e.score), e.cost.max(0.0), None),
            Ok(e) => (None, e.cost.max(0.0), Some(format!("non-finite score {}", e.score))),
            Err(message) => (None, 0.0, Some(message)),
        };
        Ok(self.history.push(Trial {
            iteration: s.iteration,
            config: s.config,
            score,
            cost,
            incumbent_score: None,
            cumulative_cost: 0.0,
            used_knowledge: s.used_knowledge,
            refit_flag: s.refit,
            sampling_variance_per_hyperparameter: s.sampling_variance,
            failed: score.is_none(),
            error,
        }))
    }

    /// One suggest-evaluate-observe round.
    pub fn step(&mut self, objective: &dyn Objective) -> Result<&Trial, OptimizerError> {
        let s = self.suggest()?;
        let outcome = objective.evaluate(&s.config).map_err(|e| {
            tracing::warn!(iteration = s.iteration, error = %e, "evaluation failed");
            e.to_string()
        });
        self.observe(outcome)
    }
}

fn sample_variance(draws: &[Vec<f64>]) -> Vec<f64> {
    let n = draws.len() as f64;
    let d = draws.first().map_or(0, Vec::len);
    (0..d)
        .map(|j| {
            let mean = draws.iter().map(|x| x[j]).sum::<f64>() / n;
            draws.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

#[cfg(test)]
mod tests;
