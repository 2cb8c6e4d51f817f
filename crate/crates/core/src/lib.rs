//! Sequential photogeometric metric localization for map-centric loop closure.
//!
//! An alignment between two revisited places is estimated jointly from
//! surfel point-to-plane ICP and epipolar feature constraints, transported to
//! the first matched place, fused on SE(3) across several place pairs and
//! guarded by a chi-square test over the accumulated visual evidence.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod lie;
pub mod pipeline;
pub mod residual;
pub mod scenesim;
pub mod solver;
pub mod trajectory;
pub mod vision;

pub use error::{Error, Result};
pub use fusion::{FusedAlignment, FusionSession, FusionStatus, SessionConfig};
pub use lie::{Covariance6, Pose, Twist};
pub use pipeline::{run_trial, Method, PipelineConfig, TrialOutcome};
pub use scenesim::{build_scene, simulate_loop, NoiseSpec, Regime, SceneKind, Simulation};
pub use solver::{solve_alignment, AlignmentEstimate, SolverConfig};
pub use trajectory::{PlacePair, Trajectory};
pub use vision::{Camera, FeatureMatch};
