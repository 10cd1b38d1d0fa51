//! DEAM: an Adam-family optimizer whose first-moment weight and backtrack
//! step both follow from the angle between the previous update volume and
//! the current gradient.
//!
//! The crate bundles the optimizer with reference baselines (SGD, heavy-ball
//! momentum, AdaGrad, RMSProp, Adam, AMSGrad), analytic objectives, dataset
//! loaders, and a harness that records traces, computes regret, and builds
//! comparison tables. The `deam` binary exposes the harness on the command
//! line; see `examples/` for library usage.

pub mod cli;
pub mod data;
pub mod harness;
pub mod numerics;
pub mod objectives;
pub mod optimizers;

pub use data::{Batch, Dataset};
pub use harness::{Experiment, ExperimentConfig, Trace};
pub use numerics::{ParamVector, Rng};
pub use objectives::Objective;
pub use optimizers::{
    BacktrackVariant, BaselineConfig, DeamHyperparams, DeamState, OptimizerSpec, Schedule,
    StepDiagnostics,
};
