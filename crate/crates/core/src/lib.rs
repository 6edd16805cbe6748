//! Adaptive radio-signal sampling simulator.
//!
//! This crate simulates robots that build a map of a radio signal field over
//! a discrete grid. A Gaussian-process regressor fuses the samples collected
//! so far, an acquisition rule scores candidate cells by blending predicted
//! mean and predictive variance, and a planner moves the robots under a time
//! budget. Multi-robot setups divide the grid with Voronoi partitions, either
//! frozen at the start positions or recomputed as the robots move.
//!
//! The top-level entry point is [`sim::run_trial`], which executes one fully
//! deterministic simulation from a configuration and seed and returns a
//! step-by-step log with mapping-quality metrics.

pub mod acquisition;
pub mod field;
pub mod gp;
pub mod grid;
pub mod metrics;
pub mod partition;
pub mod planner;
pub mod sim;

pub use acquisition::InfoVariant;
pub use field::{FieldParams, GroundTruthField, LogBase};
pub use gp::{GpModel, Hyperparams, MeanPolicy, Prediction, TrainingSet};
pub use grid::{Cell, GridSpec, Point};
pub use metrics::ExperimentSummary;
pub use partition::{Partition, PartitionMode};
pub use planner::RobotState;
pub use sim::{run_trial, Scenario, ScenarioConfig, StepRecord, TrialConfig, TrialLog};
