//! PnP robustness sweep: per-instance weight optimization followed by
//! weighted DLT and Procrustes, against plain DLT and RANSAC+DLT on the
//! same instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{SweepResult, SweepRow};
use super::{derive_seed, Method};
use crate::error::{Error, Result};
use crate::geometry::{
    build_pnp_rows, ransac_dlt, rotation_error, solve_pnp_dlt, translation_error, DataMatrix,
    PnpNormalization, Pose,
};
use crate::loss::{
    eig_baseline_loss_grad, eigfree_grad_logits, LossConfig, TargetVector, WeightState, INIT_LOGIT,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::SplitMix64;
use crate::synth::{gen_pnp, PnpScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpSweepConfig {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub iters: usize,
    pub outliers: Vec<usize>,
    pub trials: usize,
    pub n_points: usize,
    pub noise_px: f64,
    pub loss: LossConfig,
    pub init_logit: f64,
    pub seed: u64,
    pub ransac_iterations: usize,
    pub ransac_threshold_px: f64,
}

impl Default for PnpSweepConfig {
    fn default() -> Self {
        Self {
            method: Method::Eigfree,
            optimizer: OptimizerKind::Adam,
            lr: 0.1,
            iters: 1000,
            outliers: vec![10, 40, 70, 100, 130],
            trials: 20,
            n_points: 200,
            noise_px: 5.0,
            loss: LossConfig::PNP,
            init_logit: INIT_LOGIT,
            seed: 0,
            ransac_iterations: 500,
            ransac_threshold_px: 15.0,
        }
    }
}

/// A normalized PnP problem ready for weight optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpProblem {
    pub scene: PnpScene,
    pub normalization: PnpNormalization,
    pub rows: DataMatrix,
    pub target: TargetVector,
}

impl PnpProblem {
    pub fn new(scene: PnpScene) -> Result<Self> {
        let corrs = scene.correspondences();
        let normalization = PnpNormalization::from_correspondences(&corrs)?;
        let rows = build_pnp_rows(&normalization.apply(&corrs))?;
        let target = normalization.target(&scene.pose_gt)?;
        Ok(Self {
            scene,
            normalization,
            rows,
            target,
        })
    }

    /// Normalized `(x, y, z, u, v)` per correspondence, for the network.
    pub fn features(&self) -> Vec<f64> {
        self.normalization
            .apply(&self.scene.correspondences())
            .iter()
            .flat_map(|c| c.features())
            .collect()
    }

    pub fn pose_from_weights(&self, weights: &[f64]) -> Result<Pose> {
        let v = crate::geometry::weighted_null_vector(&self.rows, weights)?;
        self.normalization
            .pose_from_vector(&v, &self.scene.correspondences())
    }
}

/// Optimizes per-correspondence logits against the ground-truth target
/// and returns the final weights.
pub fn optimize_weights(
    problem: &PnpProblem,
    method: Method,
    optimizer: OptimizerKind,
    lr: f64,
    iters: usize,
    loss: &LossConfig,
    init_logit: f64,
) -> Result<Vec<f64>> {
    let n = problem.rows.correspondences();
    let mut w = WeightState::uniform(n, init_logit)?;
    let mut logits = w.logits().to_vec();
    let mut opt = Optimizer::new(optimizer, n, lr)?;
    for _ in 0..iters {
        let grad = match method {
            Method::Eigfree => eigfree_grad_logits(&problem.rows, &w, &problem.target, loss)?,
            Method::EigSvdBaseline => {
                match eig_baseline_loss_grad(&problem.rows, &w, &problem.target) {
                    Ok(b) => b.grad_weights,
                    Err(Error::DegenerateSpectrum { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        };
        if !grad.iter().all(|g| g.is_finite()) {
            continue;
        }
        opt.step(&mut logits, &grad)?;
        w.set_logits(&logits)?;
    }
    Ok(w.weights().to_vec())
}

#[derive(Debug, Clone, Copy)]
struct TrialErrors {
    method: Option<(f64, f64)>,
    dlt: Option<(f64, f64)>,
    ransac: Option<(f64, f64)>,
}

fn score(est: Result<Pose>, gt: &Pose) -> Option<(f64, f64)> {
    let pose = est.ok()?;
    let r = rotation_error(&pose.rotation, &gt.rotation).to_degrees();
    let t = translation_error(&pose.translation, &gt.translation).ok()?;
    (r.is_finite() && t.is_finite()).then_some((r, t))
}

fn run_trial(cfg: &PnpSweepConfig, outliers: usize, trial: usize) -> Result<TrialErrors> {
    let seed = derive_seed(cfg.seed, outliers as u64, trial as u64);
    let scene = gen_pnp(cfg.n_points, outliers, cfg.noise_px, seed)?;
    let problem = PnpProblem::new(scene)?;
    let gt = problem.scene.pose_gt;
    let corrs = problem.scene.correspondences();

    let method = optimize_weights(
        &problem,
        cfg.method,
        cfg.optimizer,
        cfg.lr,
        cfg.iters,
        &cfg.loss,
        cfg.init_logit,
    )
    .and_then(|w| problem.pose_from_weights(&w));
    let dlt = solve_pnp_dlt(&corrs, &vec![1.0; corrs.len()]);
    let mut rng = SplitMix64::new(seed).fork(0x5a5a);
    let threshold = cfg.ransac_threshold_px / problem.scene.camera.focal;
    let ransac = ransac_dlt(&corrs, threshold, cfg.ransac_iterations, &mut rng).map(|o| o.pose);
    Ok(TrialErrors {
        method: score(method, &gt),
        dlt: score(dlt, &gt),
        ransac: score(ransac, &gt),
    })
}

fn summarize(outliers: usize, errs: &[Option<(f64, f64)>]) -> SweepRow {
    let ok: Vec<(f64, f64)> = errs.iter().flatten().copied().collect();
    let n = ok.len().max(1) as f64;
    let (r, t) = if ok.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            ok.iter().map(|e| e.0).sum::<f64>() / n,
            ok.iter().map(|e| e.1).sum::<f64>() / n,
        )
    };
    SweepRow {
        outlier_count: outliers,
        rotation_error_deg: r,
        translation_error_norm: t,
        trials: errs.len(),
        failures: errs.len() - ok.len(),
    }
}

/// Returns one [`SweepResult`] per method: the configured method, then
/// `dlt` and `ransac_dlt`.
pub fn run_pnp_sweep(cfg: &PnpSweepConfig) -> Result<Vec<SweepResult>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    if cfg.outliers.is_empty() {
        return Err(Error::Empty("outlier grid"));
    }
    if let Some(&bad) = cfg.outliers.iter().find(|&&o| o + 6 > cfg.n_points) {
        return Err(Error::InvalidArgument(format!(
            "{bad} outliers leave fewer than 6 inliers of {}",
            cfg.n_points
        )));
    }
    let mut method_rows = Vec::new();
    let mut dlt_rows = Vec::new();
    let mut ransac_rows = Vec::new();
    for &o in &cfg.outliers {
        let trials = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, o, t))
            .collect::<Result<Vec<_>>>()?;
        let pick = |f: fn(&TrialErrors) -> Option<(f64, f64)>| -> Vec<Option<(f64, f64)>> {
            trials.iter().map(f).collect()
        };
        method_rows.push(summarize(o, &pick(|t| t.method)));
        dlt_rows.push(summarize(o, &pick(|t| t.dlt)));
        ransac_rows.push(summarize(o, &pick(|t| t.ransac)));
    }
    Ok(vec![
        SweepResult {
            method: cfg.method.to_string(),
            rows: method_rows,
        },
        SweepResult {
            method: "dlt".into(),
            rows: dlt_rows,
        },
        SweepResult {
            method: "ransac_dlt".into(),
            rows: ransac_rows,
        },
    ])
}
