//! Piecewise physics-informed networks for initial value problems on large
//! intervals.
//!
//! The interval `[0, T]` is split into segments, and each segment gets a
//! small fully connected network trained on the equation residual plus an
//! initial condition taken from the previous segment. The trained networks
//! assemble into one piecewise solution. An RK4 integrator serves as the
//! reference.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod network;
pub mod ode;
pub mod pwnn;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{Activation, LayerSpec, NetworkParameters, SegmentNetwork};
pub use ode::{registry, rk4_solve, sample_collocation, Expr, OdeProblem, ReferenceTrajectory, SamplingMode};
pub use pwnn::{jump_report, run_pinn, run_pwnn, Partition, PiecewiseSolution, PwnnRun, RunReport};
pub use trainer::{adam_step, segment_loss, train_segment, AdamState, LossBreakdown, TrainingConfig};
