//! Adaptive debiasing of threshold classifiers under censored feedback.
//!
//! Estimates of label-conditional feature distributions are corrected online by
//! admitting a bounded slice of agents below the decision threshold and
//! re-anchoring each estimate to the median of a truncation window.

pub mod config;
pub mod dataio;
pub mod dist;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod metrics;
pub mod policy;
pub mod population;
pub mod rng;
pub mod special;
pub mod trajectory;
pub mod twoparam;

pub use dist::{DistEstimate, FamilyKind};
pub use engine::{AlgorithmVariant, EngineConfig, EngineState, UpdateStrategy};
pub use error::{Error, Result};
pub use policy::{Bound, EpsilonSchedule, FairnessRule, ThresholdPolicy};
pub use population::{GroupModel, Label, Population};
pub use trajectory::{AgentArrival, Decision, DecisionRecord, ExploreAction, ObservedLabel, Trajectory};
