//! Line-delimited JSON trial log.
//!
//! Each line is one event tagged by `"event"`: a `trial`, a `knowledge`
//! change or a surrogate `refit`. No wall-clock fields are written, so two
//! runs with the same seed produce identical logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::LogError;
use crate::knowledge::{Interaction, KnowledgeKind};
use crate::optimizer::{RefitInfo, Trial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeAction {
    Set,
    Clear,
}

/// Where an interaction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEvent {
    /// Iteration from which the change is in effect.
    pub iteration: usize,
    pub action: KnowledgeAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KnowledgeKind>,
    #[serde(default)]
    pub hyperparameters: Vec<String>,
    #[serde(default)]
    pub intervention: Json,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<String>,
    pub origin: Origin,
}

impl KnowledgeEvent {
    pub fn from_interaction(interaction: &Interaction, iteration: usize, origin: Origin) -> Self {
        match interaction {
            Interaction::Set(k) => Self {
                iteration,
                action: KnowledgeAction::Set,
                kind: Some(k.kind),
                hyperparameters: k.names().map(str::to_string).collect(),
                intervention: k.source.clone(),
                polarity: k.polarity.clone(),
                origin,
            },
            Interaction::Clear { polarity, .. } => Self {
                iteration,
                action: KnowledgeAction::Clear,
                kind: None,
                hyperparameters: Vec::new(),
                intervention: Json::Null,
                polarity: polarity.clone(),
                origin,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Trial(Trial),
    Knowledge(KnowledgeEvent),
    Refit(RefitInfo),
}

/// Appends events to a log file, flushing after every line.
pub struct TrialLog {
    out: BufWriter<File>,
}

impl TrialLog {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, event: &LogEvent) -> Result<(), LogError> {
        serde_json::to_writer(&mut self.out, event).map_err(|source| LogError::Json { line: 0, source })?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogEvent>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|source| LogError::Json { line: i + 1, source })?);
    }
    Ok(events)
}

/// Only the trial records of a log, in order.
pub fn trials(events: &[LogEvent]) -> Vec<&Trial> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Trial(t) => Some(t),
            _ => None,
        })
        .collect()
}
