//! Experiment harness for the adaptive signal-sampling simulator.
//!
//! The library side of the `infosample` binary: manifest parsing
//! ([`manifest`]), batch execution with CSV/JSON/summary emission
//! ([`runner`]), and SVG chart rendering ([`plot`]).

pub mod manifest;
pub mod plot;
pub mod runner;

pub use manifest::{parse_manifest, parse_manifest_str, ExperimentManifest, ManifestError};
pub use runner::{run_experiment, RunOptions, RunOutcome};
