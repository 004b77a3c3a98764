//! Running an optimizer to completion while other threads watch and steer it.
//!
//! The loop owns the [`Optimizer`]. Observers share a [`Monitor`]: a mailbox
//! for live interactions, drained at the next iteration boundary, and a
//! read-mostly copy of the run state that status snapshots are built from.

use std::sync::{Arc, Mutex, RwLock};

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::error::{LogError, OptimizerError};
use crate::knowledge::{Interaction, KnowledgeKind};
use crate::objectives::Objective;
use crate::optimizer::{gate_probability, Optimizer, Trial};
use crate::space::{Configuration, SearchSpace};
use crate::tracking::{KnowledgeEvent, LogEvent, Origin, TrialLog};

/// Number of trials carried in a snapshot's `recent_trials`.
pub const RECENT_TRIALS: usize = 20;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("the run has completed")]
pub struct Closed;

#[derive(Default)]
struct MailboxState {
    queue: Vec<Interaction>,
    closed: bool,
}

/// Live interactions waiting for the next iteration boundary.
#[derive(Default)]
pub struct Mailbox {
    state: Mutex<MailboxState>,
}

impl Mailbox {
    pub fn post(&self, interaction: Interaction) -> Result<(), Closed> {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return Err(Closed);
        }
        s.queue.push(interaction);
        Ok(())
    }

    fn drain(&self) -> Vec<Interaction> {
        std::mem::take(&mut self.state.lock().unwrap().queue)
    }

    fn close(&self) -> Vec<Interaction> {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        std::mem::take(&mut s.queue)
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incumbent {
    pub iteration: usize,
    pub config: Configuration,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeSummary {
    pub kind: KnowledgeKind,
    pub hyperparameters: Vec<String>,
    /// Iteration the knowledge arrived at.
    pub since: usize,
    pub gamma: f64,
    pub rho: f64,
    /// Probability of using the knowledge at the next iteration.
    pub gate_probability: f64,
    pub intervention: Json,
}

/// Point-in-time view of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusSnapshot {
    /// Completed trials, which is also the index of the next iteration.
    pub iteration: usize,
    pub max_iterations: usize,
    pub completed: bool,
    pub incumbent: Option<Incumbent>,
    pub cumulative_cost: f64,
    pub recent_trials: Vec<Trial>,
    pub knowledge: Option<KnowledgeSummary>,
    pub sampling_variance: IndexMap<String, Vec<f64>>,
    pub refit_iterations: Vec<usize>,
}

struct RunState {
    trials: Vec<Trial>,
    incumbent: Option<usize>,
    knowledge: Option<KnowledgeSummary>,
    variance: IndexMap<String, Vec<f64>>,
    refit_iterations: Vec<usize>,
    completed: bool,
}

/// State shared between the optimization loop and its observers.
pub struct Monitor {
    space: SearchSpace,
    max_iterations: usize,
    mailbox: Mailbox,
    state: RwLock<RunState>,
}

impl Monitor {
    pub fn new(space: &SearchSpace, max_iterations: usize) -> Self {
        Self {
            space: space.clone(),
            max_iterations,
            mailbox: Mailbox::default(),
            state: RwLock::new(RunState {
                trials: Vec::new(),
                incumbent: None,
                knowledge: None,
                variance: space
                    .hyperparameters()
                    .iter()
                    .map(|h| (h.name.clone(), Vec::new()))
                    .collect(),
                refit_iterations: Vec::new(),
                completed: false,
            }),
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn is_completed(&self) -> bool {
        self.state.read().unwrap().completed
    }

    pub fn snapshot(&self) -> StatusSnapshot {
        let s = self.state.read().unwrap();
        let start = s.trials.len().saturating_sub(RECENT_TRIALS);
        StatusSnapshot {
            iteration: s.trials.len(),
            max_iterations: self.max_iterations,
            completed: s.completed,
            incumbent: s.incumbent.map(|i| {
                let t = &s.trials[i];
                Incumbent {
                    iteration: t.iteration,
                    config: t.config.clone(),
                    score: t.score.expect("incumbent has a score"),
                }
            }),
            cumulative_cost: s.trials.last().map_or(0.0, |t| t.cumulative_cost),
            recent_trials: s.trials[start..].to_vec(),
            knowledge: s.knowledge.clone(),
            sampling_variance: s.variance.clone(),
            refit_iterations: s.refit_iterations.clone(),
        }
    }

    /// Trials from index `from` on.
    pub fn trials_from(&self, from: usize) -> Vec<Trial> {
        let s = self.state.read().unwrap();
        s.trials.get(from..).map(<[Trial]>::to_vec).unwrap_or_default()
    }

    fn sync_knowledge(&self, optimizer: &Optimizer) {
        let summary = optimizer.decay().knowledge.as_ref().map(|k| KnowledgeSummary {
            kind: k.kind,
            hyperparameters: k.names().map(str::to_string).collect(),
            since: optimizer.decay().since,
            gamma: optimizer.decay().gamma,
            rho: optimizer.decay().rho,
            gate_probability: gate_probability(optimizer.decay(), optimizer.iteration()),
            intervention: k.source.clone(),
        });
        self.state.write().unwrap().knowledge = summary;
    }

    fn record(&self, trial: Trial, optimizer: &Optimizer) {
        let mut s = self.state.write().unwrap();
        for (name, v) in &trial.sampling_variance_per_hyperparameter {
            if let Some(series) = s.variance.get_mut(name) {
                series.push(*v);
            }
        }
        if trial.refit_flag {
            s.refit_iterations.push(trial.iteration);
        }
        if trial.score.is_some() && trial.score == trial.incumbent_score {
            let better = s.incumbent.is_none_or(|i| trial.score > s.trials[i].score);
            if better {
                s.incumbent = Some(s.trials.len());
            }
        }
        s.trials.push(trial);
        if let (Some(k), Some(_)) = (s.knowledge.as_mut(), optimizer.decay().knowledge.as_ref()) {
            k.gate_probability = gate_probability(optimizer.decay(), optimizer.iteration());
        }
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub trials: usize,
    pub incumbent: Option<Incumbent>,
    /// Live interactions still queued when the run finished.
    pub discarded: usize,
}

pub struct Session {
    optimizer: Optimizer,
    objective: Box<dyn Objective>,
    scripted: Vec<Interaction>,
    log: Option<TrialLog>,
    monitor: Arc<Monitor>,
}

impl Session {
    /// Scripted interactions fire once their iteration is reached, in file
    /// order among equal iterations.
    pub fn new(optimizer: Optimizer, objective: Box<dyn Objective>, mut scripted: Vec<Interaction>) -> Self {
        scripted.sort_by_key(Interaction::iteration);
        scripted.reverse();
        let monitor = Arc::new(Monitor::new(optimizer.space(), optimizer.params().max_iterations));
        Self {
            optimizer,
            objective,
            scripted,
            log: None,
            monitor,
        }
    }

    pub fn with_log(mut self, log: TrialLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn monitor(&self) -> Arc<Monitor> {
        Arc::clone(&self.monitor)
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    fn emit(&mut self, event: LogEvent) -> Result<(), SessionError> {
        if let Some(log) = &mut self.log {
            log.write(&event)?;
        }
        Ok(())
    }

    fn apply(&mut self, interaction: Interaction, origin: Origin) -> Result<(), SessionError> {
        let t = self.optimizer.iteration();
        let event = KnowledgeEvent::from_interaction(&interaction, t, origin);
        self.optimizer.inject(interaction)?;
        self.emit(LogEvent::Knowledge(event))?;
        self.monitor.sync_knowledge(&self.optimizer);
        Ok(())
    }

    /// Runs one iteration, applying any due interactions first.
    pub fn step(&mut self) -> Result<(), SessionError> {
        let t = self.optimizer.iteration();
        while self.scripted.last().is_some_and(|i| i.iteration() <= t) {
            let next = self.scripted.pop().unwrap();
            self.apply(next, Origin::Scripted)?;
        }
        for interaction in self.monitor.mailbox.drain() {
            if let Err(e) = self.apply(interaction, Origin::Live) {
                tracing::warn!(iteration = t, error = %e, "live interaction rejected");
            }
        }
        let refits = self.optimizer.refits().len();
        self.optimizer.step(self.objective.as_ref())?;
        let new_refits: Vec<_> = self.optimizer.refits()[refits..].to_vec();
        for r in new_refits {
            self.emit(LogEvent::Refit(r))?;
        }
        let trial = self.optimizer.history().trials().last().unwrap().clone();
        self.emit(LogEvent::Trial(trial.clone()))?;
        self.monitor.record(trial, &self.optimizer);
        Ok(())
    }

    pub fn run(mut self) -> Result<(RunSummary, Optimizer), SessionError> {
        while !self.optimizer.is_finished() {
            self.step()?;
        }
        let discarded = self.monitor.mailbox.close().len();
        if discarded > 0 {
            tracing::warn!(discarded, "live interactions arrived after the last iteration");
        }
        self.monitor.state.write().unwrap().completed = true;
        let snapshot = self.monitor.snapshot();
        Ok((
            RunSummary {
                trials: snapshot.iteration,
                incumbent: snapshot.incumbent,
                discarded,
            },
            self.optimizer,
        ))
    }
}
