//! Eigendecomposition-free training losses for zero-eigenvalue problems
//! (robust plane fitting, essential matrices, PnP), an analytic
//! eigendecomposition-gradient baseline, a small weight-predicting network
//! and the experiment harness that compares them.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod optim;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Correspondence2D2D, Correspondence3D2D, DataMatrix, Pose, RowForm};
pub use harness::{Method, SweepResult, Trace};
pub use linalg::{EigenSystem, SymMatrix};
pub use loss::{LossBreakdown, LossConfig, TargetVector, WeightState};
pub use net::{TrainConfig, WeightNet};
pub use optim::{AdamState, OptimizerKind};
pub use rng::SplitMix64;
