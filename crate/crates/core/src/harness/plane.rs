//! Per-point weight optimization on the plane-fitting toy scene.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{Trace, TraceHeader, TraceRecord};
use super::Method;
use crate::error::{Error, Result};
use crate::loss::{
    centered_points, eigfree_grad_logits, eigfree_loss, eig_baseline_loss_grad, spectrum,
    LossConfig, TargetVector, WeightState, INIT_LOGIT,
};
use crate::optim::{Optimizer, OptimizerKind, LR_GRID};
use crate::synth::{gen_plane, PlaneScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub loss: LossConfig,
    pub init_logit: f64,
    /// Keep every k-th record (the first and last are always kept).
    pub record_every: usize,
    pub timing: bool,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            method: Method::Eigfree,
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            iters: 5000,
            seed: 0,
            n_inliers: 100,
            n_outliers: 1,
            loss: LossConfig::PLANE,
            init_logit: INIT_LOGIT,
            record_every: 1,
            timing: false,
        }
    }
}

/// Final state of a plane run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneOutcome {
    pub trace: Trace,
    /// Angle between the smallest eigenvector of the weighted scatter and
    /// the true normal, degrees.
    pub normal_error_deg: f64,
    /// Points on the wrong side of the 0.5 weight threshold.
    pub misclassified: usize,
    pub inlier_mask: Vec<bool>,
}

impl PlaneOutcome {
    pub fn min_inlier_weight(&self) -> f64 {
        self.weights_where(true).fold(f64::INFINITY, f64::min)
    }

    pub fn max_outlier_weight(&self) -> f64 {
        self.weights_where(false).fold(f64::NEG_INFINITY, f64::max)
    }

    fn weights_where(&self, inlier: bool) -> impl Iterator<Item = f64> + '_ {
        self.trace
            .final_weights
            .iter()
            .zip(&self.inlier_mask)
            .filter(move |(_, &m)| m == inlier)
            .map(|(w, _)| *w)
    }
}

pub fn plane_target() -> TargetVector {
    TargetVector::new(vec![0.0, 0.0, 1.0]).expect("unit vector")
}

/// Optimizes per-point logits on a generated scene.
pub fn run_plane_experiment(cfg: &PlaneConfig) -> Result<PlaneOutcome> {
    let scene = gen_plane(cfg.n_inliers, cfg.n_outliers, cfg.seed)?;
    run_plane_on(&scene, cfg)
}

pub fn run_plane_on(scene: &PlaneScene, cfg: &PlaneConfig) -> Result<PlaneOutcome> {
    let e = plane_target();
    let n = scene.points.len();
    let mut w = WeightState::uniform(n, cfg.init_logit)?;
    let mut opt = Optimizer::new(cfg.optimizer, n, cfg.lr)?;
    let mut logits = w.logits().to_vec();
    let every = cfg.record_every.max(1);
    let mut trace = Trace::new(TraceHeader {
        method: cfg.method.to_string(),
        optimizer: cfg.optimizer.to_string(),
        lr: cfg.lr,
        seed: cfg.seed,
        problem: "plane".into(),
        config: serde_json::to_value(cfg).unwrap_or_default(),
    });
    let start = Instant::now();
    let mut prev_rank = None;
    for it in 0..=cfg.iters {
        let x = centered_points(&scene.points, w.weights())?;
        let lb = eigfree_loss(&x, &w, &e, &cfg.loss)?;
        let spec = spectrum(&x, w.weights(), &e)?;
        let (loss, grad) = match cfg.method {
            Method::Eigfree => (lb.total, Some(eigfree_grad_logits(&x, &w, &e, &cfg.loss)?)),
            Method::EigSvdBaseline => match eig_baseline_loss_grad(&x, &w, &e) {
                Ok(b) => (b.loss, Some(b.grad_weights)),
                Err(Error::DegenerateSpectrum { .. }) => {
                    trace.degenerate_skips += 1;
                    (e.sign_agnostic_distance(&spec.system.smallest()), None)
                }
                Err(err) => return Err(err),
            },
        };
        let rank = spec.smallest_index_of_gt;
        if prev_rank.is_some_and(|p| p != rank) {
            trace.rank_changes.push(it);
            if cfg.method.uses_smallest_eigenvector() {
                trace.switching_events.push(it);
            }
        }
        prev_rank = Some(rank);
        let grad_norm = grad
            .as_ref()
            .map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>().sqrt());
        if it % every == 0 || it == cfg.iters {
            trace.records.push(TraceRecord {
                iteration: it,
                loss_total: loss,
                first_term: lb.first_term,
                trace_term: lb.trace,
                grad_norm,
                smallest_index_of_gt: rank,
                eigen_gap: spec.eigen_gap,
                wall_ms: if cfg.timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                },
            });
        }
        if it == cfg.iters {
            break;
        }
        match grad {
            Some(g) if g.iter().all(|v| v.is_finite()) => {
                opt.step(&mut logits, &g)?;
                w.set_logits(&logits)?;
            }
            Some(_) => trace.nonfinite_skips += 1,
            None => {}
        }
    }
    let x = centered_points(&scene.points, w.weights())?;
    let spec = spectrum(&x, w.weights(), &e)?;
    let normal_error_deg = e.angle_to(&spec.system.smallest()).to_degrees();
    let misclassified = w
        .weights()
        .iter()
        .zip(&scene.inlier_mask)
        .filter(|(wi, &m)| (**wi > 0.5) != m)
        .count();
    trace.final_weights = w.weights().to_vec();
    Ok(PlaneOutcome {
        trace,
        normal_error_deg,
        misclassified,
        inlier_mask: scene.inlier_mask.clone(),
    })
}

/// Runs every learning rate of `grid` and returns all outcomes together
/// with the index of the lowest final loss.
pub fn run_plane_grid(cfg: &PlaneConfig, grid: &[f64]) -> Result<(Vec<PlaneOutcome>, usize)> {
    use rayon::prelude::*;
    if grid.is_empty() {
        return Err(Error::Empty("learning-rate grid"));
    }
    let outcomes = grid
        .par_iter()
        .map(|&lr| run_plane_experiment(&PlaneConfig { lr, ..*cfg }))
        .collect::<Result<Vec<_>>>()?;
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let la = a.1.trace.final_loss().unwrap_or(f64::INFINITY);
            let lb = b.1.trace.final_loss().unwrap_or(f64::INFINITY);
            la.total_cmp(&lb)
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok((outcomes, best))
}

/// The declared learning-rate grid.
pub fn default_grid() -> &'static [f64] {
    &LR_GRID
}
