//! Experiment orchestration: plane fitting, the PnP robustness sweep and
//! end-to-end two-view training, each emitting [`Trace`]s or
//! [`SweepResult`]s.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod epipolar;
pub mod plane;
pub mod pnp;
pub mod report;

pub use epipolar::{run_epipolar_experiment, EpipolarConfig, EpipolarReport};
pub use plane::{run_plane_experiment, run_plane_grid, PlaneConfig, PlaneOutcome};
pub use pnp::{run_pnp_sweep, PnpSweepConfig};
pub use report::{SweepResult, SweepRow, Trace, TraceHeader, TraceRecord};

/// Which loss drives the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eigfree,
    EigSvdBaseline,
}

impl Method {
    /// Whether the loss is a function of the smallest eigenvector, and so
    /// sees eigenvector switching directly.
    pub fn uses_smallest_eigenvector(self) -> bool {
        matches!(self, Method::EigSvdBaseline)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Eigfree => "eigfree",
            Method::EigSvdBaseline => "eig_svd_baseline",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigfree" => Ok(Method::Eigfree),
            "eig_svd_baseline" | "eig" => Ok(Method::EigSvdBaseline),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Probability that a random inlier outranks a random outlier by weight,
/// ties counting one half. `None` when either class is empty.
pub fn weight_auc(weights: &[f64], inlier_mask: &[bool]) -> Option<f64> {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (w, &m) in weights.iter().zip(inlier_mask) {
        if m {
            pos.push(*w);
        } else {
            neg.push(*w);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    neg.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for p in &pos {
        let below = neg.partition_point(|n| n < p);
        let tied = neg[below..].partition_point(|n| n <= p);
        score += below as f64 + 0.5 * tied as f64;
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

/// Independent, reproducible seed for a sub-run.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut rng = crate::rng::SplitMix64::new(base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.fork(b).next_u64()
}
