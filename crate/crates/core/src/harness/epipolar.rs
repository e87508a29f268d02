//! End-to-end two-view training: a [`WeightNet`] learns correspondence
//! weights from the eigendecomposition-free loss (and, for comparison, from
//! the eigendecomposition-based one); poses are scored by mAP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, weight_auc};
use crate::error::{Error, Result};
use crate::geometry::{
    build_essential_matrix_rows, decompose_essential, denormalize_essential, map_table,
    normalize_pairs, relative_pose_error, transform_gt_essential, weighted_null_vector,
    Correspondence2D2D, RowForm, SimilarityTransform2D,
};
use crate::linalg::sym_eig;
use crate::loss::{eigfree_loss_weights, LossConfig};
use crate::net::{train, Instance, TrainConfig, TrainLoss, TrainTrace, WeightNet};
use crate::rng::SplitMix64;
use crate::synth::{gen_epipolar_with, EpipolarParams, EpipolarScene};

pub const MAP_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub n_points: usize,
    /// Inclusive range of outliers per training instance.
    pub train_outliers: (usize, usize),
    /// Outliers per instance of the contaminated test set.
    pub test_outliers: usize,
    pub noise_px: f64,
    pub scene: EpipolarParams,
    pub row_form: RowForm,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Also train the eigendecomposition-based loss.
    pub baseline: bool,
    pub seed: u64,
}

impl Default for EpipolarConfig {
    fn default() -> Self {
        Self {
            train_size: 500,
            test_size: 50,
            n_points: 100,
            train_outliers: (10, 50),
            test_outliers: 30,
            noise_px: 0.5,
            scene: EpipolarParams::default(),
            row_form: RowForm::Classical,
            loss: LossConfig::ESSENTIAL,
            train: TrainConfig {
                batch_size: 32,
                lr: 1e-3,
                epochs: 100,
                seed: 0,
            },
            baseline: true,
            seed: 0,
        }
    }
}

/// A two-view instance with what is needed to score a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialProblem {
    pub scene: EpipolarScene,
    pub instance: Instance,
    pub t1: SimilarityTransform2D,
    pub t2: SimilarityTransform2D,
}

impl EssentialProblem {
    /// Hartley-normalizes each image; the normalized coordinates are both
    /// the network features and the data-matrix input.
    pub fn new(scene: EpipolarScene, form: RowForm) -> Result<Self> {
        let (norm, t1, t2) = normalize_pairs(&scene.correspondences)?;
        let x = build_essential_matrix_rows(&norm, form)?;
        let target = transform_gt_essential(&scene.essential, &t1, &t2)?;
        let features = norm.iter().flat_map(|c| c.features()).collect();
        Ok(Self {
            instance: Instance {
                features,
                x,
                target,
                inlier_mask: scene.inlier_mask.clone(),
            },
            scene,
            t1,
            t2,
        })
    }

    /// Weighted eight-point estimate, decomposed using the correspondences
    /// whose weight is at least half the maximum. Returns the pose error in
    /// radians.
    pub fn pose_error(&self, weights: &[f64]) -> Result<f64> {
        let v = weighted_null_vector(&self.instance.x, weights)?;
        let e = denormalize_essential(&v, &self.t1, &self.t2)?;
        let max = weights.iter().copied().fold(0.0, f64::max);
        let selected: Vec<Correspondence2D2D> = self
            .scene
            .correspondences
            .iter()
            .zip(weights)
            .filter(|(_, &w)| max > 0.0 && w >= 0.5 * max)
            .map(|(c, _)| *c)
            .collect();
        let pose = decompose_essential(&e, &selected)?;
        relative_pose_error(&pose, &self.scene.pose)
    }
}

pub fn make_problems(
    count: usize,
    outliers: (usize, usize),
    cfg: &EpipolarConfig,
    stream: u64,
) -> Result<Vec<EssentialProblem>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, stream, i as u64);
            let mut rng = SplitMix64::new(seed);
            let n_out = rng.range_inclusive(outliers.0, outliers.1);
            let scene = gen_epipolar_with(cfg.n_points, n_out, cfg.noise_px, &cfg.scene, seed)?;
            EssentialProblem::new(scene, cfg.row_form)
        })
        .collect()
}

/// Held-out scores of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean per-instance inlier-vs-outlier AUC; `None` without outliers.
    pub auc: Option<f64>,
    /// `(threshold°, mAP)` pairs.
    pub map: Vec<(f64, f64)>,
    /// Instances whose pose could not be recovered (scored as 180°).
    pub failures: usize,
}

impl Evaluation {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.map.iter().find(|(t, _)| *t == threshold).map(|(_, m)| *m)
    }
}

pub fn evaluate(net: &WeightNet, problems: &[EssentialProblem]) -> Result<Evaluation> {
    let per = problems
        .par_iter()
        .map(|p| {
            let (w, _) = net.forward(&p.instance.features)?;
            let auc = weight_auc(&w, &p.instance.inlier_mask);
            Ok((auc, p.pose_error(&w).ok()))
        })
        .collect::<Result<Vec<_>>>()?;
    let aucs: Vec<f64> = per.iter().filter_map(|(a, _)| *a).collect();
    let errors: Vec<f64> = per
        .iter()
        .map(|(_, e)| e.unwrap_or(std::f64::consts::PI))
        .collect();
    Ok(Evaluation {
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        map: map_table(&errors, &MAP_THRESHOLDS)?,
        failures: per.iter().filter(|(_, e)| e.is_none()).count(),
    })
}

/// Mean `min ‖e_min(w) ∓ ẽ‖` of the network's weights over `problems`: a
/// yardstick on which nets trained with different losses can be compared.
pub fn mean_eigvec_error(net: &WeightNet, problems: &[EssentialProblem]) -> Result<f64> {
    let errs = problems
        .par_iter()
        .map(|p| {
            let (w, _) = net.forward(&p.instance.features)?;
            let es = sym_eig(&p.instance.x.weighted_gram(&w)?)?;
            Ok(p.instance.target.sign_agnostic_distance(&es.smallest()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean eigendecomposition-free loss of the network's weights over
/// `problems`, evaluated after training so that nets trained with either
/// loss are scored on the same objective.
pub fn mean_eigfree_loss(
    net: &WeightNet,
    problems: &[EssentialProblem],
    loss: &LossConfig,
) -> Result<f64> {
    let vals = problems
        .par_iter()
        .map(|p| {
            let (w, _) = net.forward(&p.instance.features)?;
            Ok(eigfree_loss_weights(&p.instance.x, &w, &p.instance.target, loss)?.total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSummary {
    pub loss: String,
    pub trace: TrainTrace,
    /// Mean eigendecomposition-free loss on the training set after training.
    pub eigfree_loss: f64,
    /// Mean eigenvector error on the training set after training.
    pub eigvec_error: f64,
    pub contaminated: Evaluation,
    pub clean: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarReport {
    pub config: EpipolarConfig,
    pub untrained: Evaluation,
    pub eigfree: NetSummary,
    pub baseline: Option<NetSummary>,
    #[serde(skip)]
    pub eigfree_net: Option<WeightNet>,
}

/// Generates the training set, a contaminated and a clean test set (both
/// with the training noise level), trains the network and scores it.
pub fn run_epipolar_experiment(cfg: &EpipolarConfig) -> Result<EpipolarReport> {
    if cfg.train_size == 0 || cfg.test_size == 0 {
        return Err(Error::InvalidArgument("set sizes must be positive".into()));
    }
    let train_set = make_problems(cfg.train_size, cfg.train_outliers, cfg, 1)?;
    let test_dirty = make_problems(cfg.test_size, (cfg.test_outliers, cfg.test_outliers), cfg, 2)?;
    let test_clean = make_problems(cfg.test_size, (0, 0), cfg, 3)?;
    let instances: Vec<Instance> = train_set.iter().map(|p| p.instance.clone()).collect();
    let init = WeightNet::new(4, derive_seed(cfg.seed, 4, 0))?;
    let untrained = evaluate(&init, &test_dirty)?;

    let fit = |loss: TrainLoss, name: &str| -> Result<(WeightNet, NetSummary)> {
        let (net, trace) = train(init.clone(), &instances, &cfg.train, &loss)?;
        let summary = NetSummary {
            loss: name.to_string(),
            eigfree_loss: mean_eigfree_loss(&net, &train_set, &cfg.loss)?,
            eigvec_error: mean_eigvec_error(&net, &train_set)?,
            contaminated: evaluate(&net, &test_dirty)?,
            clean: evaluate(&net, &test_clean)?,
            trace,
        };
        Ok((net, summary))
    };
    let (net, eigfree) = fit(TrainLoss::Eigfree(cfg.loss), "eigfree")?;
    let baseline = if cfg.baseline {
        Some(fit(TrainLoss::EigBaseline, "eig_svd_baseline")?.1)
    } else {
        None
    };
    Ok(EpipolarReport {
        config: cfg.clone(),
        untrained,
        eigfree,
        baseline,
        eigfree_net: Some(net),
    })
}
