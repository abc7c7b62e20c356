//! Numerical weak KAM laboratory on the discretized torus.
//!
//! Forward and backward weak KAM solutions by min-plus value iteration,
//! projected Mather measures as minimum-mean cycles, Perron eigenpairs of the
//! twisted Schrödinger generator and their semiclassical limits, the action
//! kernel `W` by min-plus squaring and Feynman-Kac sampling, and Kantorovich
//! duality certificates for the weak KAM pair.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action_kernel;
pub mod error;
pub mod mather;
pub mod schroedinger;
pub mod semiclassical;
pub mod torus;
pub mod transport;
pub mod weak_kam;

pub use action_kernel::{compute_w_kernel, feynman_kac_mc, KernelMatrix, McEstimate, McParams};
pub use error::{Error, Result};
pub use mather::{build_action_graph, min_mean_cycle, ActionGraph, MatherResult};
pub use schroedinger::{EigenOptions, EigenPair, TwistedGenerator};
pub use semiclassical::{BetaRun, SweepConfig, SweepRecord, TestSet};
pub use torus::{ClosedForm, GridField, GridMeasure, NodeId, Potential, TorusGrid, Vector};
pub use transport::{CostVariant, DualPair, TransportPlan, TransportProblem};
pub use weak_kam::{OneStepCost, Sign, SolverOptions, WeakKamSolution};
