//! Interactive hyperparameter optimization with a probabilistic-circuit
//! surrogate.
//!
//! The surrogate models the joint distribution of hyperparameters and the
//! score. New candidates are drawn from the surrogate conditioned on the best
//! score seen so far, and optionally on user-provided point values or priors
//! over a subset of the hyperparameters.

pub mod circuit;
pub mod encode;
pub mod error;
pub mod knowledge;
pub mod learn;
pub mod objectives;
pub mod optimizer;
pub mod session;
pub mod space;
pub mod tracking;

pub use circuit::{Circuit, Evidence, LeafDistribution, Node, VarKind, Variable};
pub use error::{
    CircuitError, FieldError, KnowledgeError, LearnError, LogError, ObjectiveError, OptimizerError, SpaceError,
};
pub use knowledge::{
    parse_interactions, sample_prior, DistributionSpec, Interaction, KnowledgeKind, PriorEntry, UserKnowledge,
};
pub use objectives::{Evaluation, Objective};
pub use optimizer::{Optimizer, OptimizerParams, Trial};
pub use session::{Monitor, Session, StatusSnapshot};
pub use space::{parse_space, Configuration, Domain, HyperparameterDef, SearchSpace, Value};
