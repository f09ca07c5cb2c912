//! Compile first-order ODE systems into dynamic Bayesian networks that embed
//! a forward-Euler solver, then estimate parameters and state trajectories
//! from sparse, noisy evidence with fixed-step or adaptive-step particle
//! filtering.
//!
//! The pipeline, module by module:
//!
//! - [`expr`]: parse and evaluate right-hand-side expressions
//! - [`model`]: states, parameters with priors, inputs, observations; the
//!   model file format
//! - [`compiler`]: build the two-slice network (state, delta, parameter,
//!   input and observed nodes) and export it as DOT
//! - [`dist`]: distributions and reproducible random streams
//! - [`evidence`]: continuous and instantaneous evidence streams
//! - [`engine`]: the fixed-step particle filter
//! - [`adaptive`]: the adaptive-step particle filter
//! - [`oracle`]: reference integrators, benchmark cases and error metrics
//! - [`cli`]: run configuration and the commands behind the `odedbn` binary
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod adaptive;
pub mod cli;
pub mod compiler;
pub mod dist;
pub mod engine;
pub mod evidence;
pub mod expr;
pub mod model;
pub mod oracle;

pub use adaptive::{run_adaptive, AdaptiveReport, StepController};
pub use compiler::{compile, export_dot, DbnGraph, NodeKind};
pub use dist::{Distribution, RngStream};
pub use engine::{run_fixed, InferenceConfig, InferenceMode, ParticleEnsemble, StepSummary};
pub use evidence::{EvidenceMode, EvidenceSet, EvidenceStream};
pub use expr::{eval_expr, parse_expr, Bindings, ExprNode};
pub use model::{validate_model, ModelFile, OdeModel};
