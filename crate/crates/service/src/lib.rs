//! Run configuration and the HTTP control surface.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use clap::Parser;
use serde::Deserialize;
use serde_json::json;

use circuit_hpo::knowledge::parse_live_interaction;
use circuit_hpo::objectives::{Branin, ExternalCommand, Minimize, MixedSynthetic, Noisy, TabularObjective};
use circuit_hpo::tracking::TrialLog;
use circuit_hpo::{
    parse_interactions, Interaction, Monitor, Objective, Optimizer, OptimizerParams, SearchSpace, Session,
};

/// Optimize a black-box objective with a probabilistic-circuit surrogate.
#[derive(Debug, Clone, Parser)]
#[command(name = "circuit-hpo", version)]
pub struct RunConfig {
    /// Search space file. Required for `tabular:` and `command:` objectives.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// `branin`, `mixed_synthetic`, `tabular:<csv>` or `command:<template>`.
    #[arg(long, default_value = "mixed_synthetic")]
    pub objective: String,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scripted interaction file replayed during the run.
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// Serve the control API on this port.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub serve: Option<u16>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub init_samples: Option<usize>,
    #[arg(long)]
    pub n_conditions: Option<usize>,
    #[arg(long)]
    pub b_samples: Option<usize>,
    /// The objective reports a loss; lower is better.
    #[arg(long)]
    pub minimize: bool,
    #[arg(long, default_value = "trials.jsonl")]
    pub log: PathBuf,
    /// Standard deviation of Gaussian noise added to every score.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Timeout in seconds for `command:` objectives.
    #[arg(long, default_value_t = 3600.0)]
    pub timeout: f64,
}

impl RunConfig {
    pub fn optimizer_params(&self) -> OptimizerParams {
        let mut p = OptimizerParams {
            max_iterations: self.iterations,
            seed: self.seed,
            ..Default::default()
        };
        p.gamma = self.gamma.unwrap_or(p.gamma);
        p.rho = self.rho.unwrap_or(p.rho);
        p.refit_every = self.refit_every.unwrap_or(p.refit_every);
        p.init_samples = self.init_samples.unwrap_or(p.init_samples);
        p.n_conditions = self.n_conditions.unwrap_or(p.n_conditions);
        p.b_samples = self.b_samples.unwrap_or(p.b_samples);
        p
    }

    fn read_space(&self) -> anyhow::Result<Option<SearchSpace>> {
        let Some(path) = &self.space else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            SearchSpace::parse(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }

    pub fn objective(&self) -> anyhow::Result<Box<dyn Objective>> {
        let space = self.read_space()?;
        let builtin = |obj: Box<dyn Objective>| -> anyhow::Result<Box<dyn Objective>> {
            if let Some(s) = &space {
                if s.hyperparameters() != obj.space().hyperparameters() {
                    bail!("--space does not match the built-in {} space", obj.name());
                }
            }
            Ok(obj)
        };
        let needs_space = || space.clone().context("--space is required for this objective");
        let mut obj: Box<dyn Objective> = match self.objective.split_once(':') {
            None if self.objective == "branin" => builtin(Box::new(Branin::new()))?,
            None if self.objective == "mixed_synthetic" => builtin(Box::new(MixedSynthetic::new()))?,
            Some(("tabular", path)) => Box::new(
                TabularObjective::from_csv(path.as_ref(), needs_space()?).with_context(|| format!("loading {path}"))?,
            ),
            Some(("command", template)) => {
                if self.timeout.is_nan() || self.timeout <= 0.0 {
                    bail!("--timeout must be positive");
                }
                Box::new(ExternalCommand::new(
                    needs_space()?,
                    template,
                    Duration::from_secs_f64(self.timeout),
                ))
            }
            _ => bail!("unknown objective `{}`", self.objective),
        };
        if let Some(sigma) = self.noise_sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                bail!("--noise-sigma must be finite and non-negative");
            }
            obj = Box::new(Noisy::new(obj, sigma, self.seed ^ 0x6e6f697365));
        }
        if self.minimize {
            obj = Box::new(Minimize(obj));
        }
        Ok(obj)
    }

    /// Validates everything and assembles a ready-to-run session.
    pub fn session(&self) -> anyhow::Result<Session> {
        let objective = self.objective()?;
        let optimizer = Optimizer::new(objective.space(), self.optimizer_params())?;
        let scripted = match &self.interactions {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_interactions(&text, objective.space()).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Vec::new(),
        };
        let log = TrialLog::create(&self.log).with_context(|| format!("creating {}", self.log.display()))?;
        Ok(Session::new(optimizer, objective, scripted).with_log(log))
    }
}

#[derive(Debug, Deserialize)]
struct TrialsQuery {
    #[serde(default)]
    from: usize,
}

fn error_body(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

fn submit(monitor: &Monitor, interaction: Interaction) -> Response {
    match monitor.mailbox().post(interaction) {
        Ok(()) => (
            StatusCode::ACCEPTED,
            Json(json!({ "status": "accepted", "applies": "next iteration" })),
        )
            .into_response(),
        Err(e) => error_body(StatusCode::CONFLICT, &e.to_string()),
    }
}

async fn status(State(m): State<Arc<Monitor>>) -> impl IntoResponse {
    Json(m.snapshot())
}

async fn trials(State(m): State<Arc<Monitor>>, Query(q): Query<TrialsQuery>) -> impl IntoResponse {
    Json(m.trials_from(q.from))
}

async fn space(State(m): State<Arc<Monitor>>) -> impl IntoResponse {
    Json(json!({
        "score": m.space().score_name(),
        "hyperparameters": m.space().hyperparameters(),
    }))
}

async fn post_knowledge(State(m): State<Arc<Monitor>>, body: Bytes) -> Response {
    if m.mailbox().is_closed() {
        return error_body(StatusCode::CONFLICT, "the run has completed");
    }
    let record: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({ "errors": [{ "field": "$", "message": format!("invalid JSON: {e}") }] })),
            )
                .into_response()
        }
    };
    match parse_live_interaction(&record, m.space()) {
        Ok(interaction) => submit(&m, interaction),
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "errors": e.0 }))).into_response(),
    }
}

async fn delete_knowledge(State(m): State<Arc<Monitor>>) -> Response {
    submit(&m, Interaction::Clear { at: 0, polarity: None })
}

pub fn router(monitor: Arc<Monitor>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/trials", get(trials))
        .route("/space", get(space))
        .route(
            "/knowledge",
            axum::routing::post(post_knowledge).delete(delete_knowledge),
        )
        .with_state(monitor)
}
