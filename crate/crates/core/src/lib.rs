//! Scheduling and simulation for distributed learning over heterogeneous
//! wireless edge learners.
//!
//! The crate jointly picks the number of local updates between aggregations,
//! the total update count and the per-learner batch sizes so that a
//! convergence bound on the final loss is minimized under a wall-clock
//! budget, and it simulates the resulting orchestrated training loop.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod orchestrator;
pub mod schedule;
pub mod wireless;

pub use bounds::ConvergenceParams;
pub use cost::{CostCoefficients, Fleet, LearnerProfile, ModelSpec, OffloadMode};
pub use error::{MelError, Result};
pub use schedule::{FleetCosts, Policy, Schedule};
pub use wireless::ChannelSpec;
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use learner::{SimulatedFleet, SyntheticTask, TaskKind, TaskSpec};
pub use orchestrator::{LearnerBackend, RoundLog, TrainingConfig, TrainingOutcome};
