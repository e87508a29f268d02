//! Zero-eigenvalue losses over weighted Gram matrices `XᵀWX`.
//!
//! The eigendecomposition-free loss
//! `ẽᵀXᵀWXẽ + α·exp(−β·tr(X̄ᵀWX̄))` with `X̄ = X(I − ẽẽᵀ)` needs no
//! spectral decomposition for either its value or its gradient. The
//! baseline loss `min ‖e_min ∓ ẽ‖` goes through [`sym_eig`] and
//! [`eig_backward`] and inherits their degeneracies.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::DataMatrix;
use crate::linalg::{eig_backward, sym_eig, EigenSystem, SymMatrix};

/// Trace-term weight and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// Setting used for two-view (essential) training.
    pub const ESSENTIAL: Self = Self {
        alpha: 10.0,
        beta: 1e-3,
    };

    /// Setting used for PnP.
    pub const PNP: Self = Self {
        alpha: 1.0,
        beta: 5e-3,
    };

    /// Setting used for the plane-fitting toy problem. The trace of the
    /// toy scene is in the tens of thousands, so the bandwidth is small and
    /// the weight large enough to hold inliers against the first term.
    pub const PLANE: Self = Self {
        alpha: 1e5,
        beta: 1e-5,
    };
}

/// Per-correspondence weights parameterized by unconstrained logits,
/// `w = sigmoid(logit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    logits: Vec<f64>,
    weights: Vec<f64>,
}

/// Starting logit for per-instance optimization (`w ≈ 0.953`).
pub const INIT_LOGIT: f64 = 3.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl WeightState {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        ensure_finite(&logits, "logits")?;
        let weights = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok(Self { logits, weights })
    }

    pub fn uniform(count: usize, logit: f64) -> Result<Self> {
        Self::new(vec![logit; count])
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_logits(&mut self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.logits.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} logits for {} weights",
                logits.len(),
                self.logits.len()
            )));
        }
        ensure_finite(logits, "logits")?;
        self.logits.copy_from_slice(logits);
        for (w, &l) in self.weights.iter_mut().zip(logits) {
            *w = sigmoid(l);
        }
        Ok(())
    }

    /// Chains a gradient with respect to weights onto the logits.
    pub fn chain(&self, grad_weights: &[f64]) -> Vec<f64> {
        grad_weights
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| g * w * (1.0 - w))
            .collect()
    }
}

/// Ground-truth unit eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    /// Accepts a vector whose norm is already 1 ± 1e-10.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        ensure_finite(&v, "target vector")?;
        let n = norm(&v);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "target vector has norm {n}, expected 1"
            )));
        }
        Ok(Self(v))
    }

    /// Scales `v` to unit norm.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        ensure_finite(&v, "target vector")?;
        let n = norm(&v);
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("target vector is zero".into()));
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }

    /// `min ‖v ∓ ẽ‖` over the sign.
    pub fn sign_agnostic_distance(&self, v: &[f64]) -> f64 {
        let minus: f64 = v.iter().zip(&self.0).map(|(a, b)| (a - b).powi(2)).sum();
        let plus: f64 = v.iter().zip(&self.0).map(|(a, b)| (a + b).powi(2)).sum();
        minus.min(plus).sqrt()
    }

    /// Angle between `v` and `±ẽ`, in radians.
    pub fn angle_to(&self, v: &[f64]) -> f64 {
        let d: f64 = v.iter().zip(&self.0).map(|(a, b)| a * b).sum();
        let c = (d.abs() / norm(v)).min(1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        s.atan2(c)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Value of the eigendecomposition-free loss, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub first_term: f64,
    pub trace: f64,
    pub second_term: f64,
    pub total: f64,
}

/// Per-correspondence pieces of the loss: `a = Σ (X⁽ʳ⁾·ẽ)²` and
/// `b = Σ ‖X̄⁽ʳ⁾‖²` over the rows owned by a correspondence.
fn row_terms(x: &DataMatrix, e: &TargetVector) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.cols() != e.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data matrix has {} columns, target has {}",
            x.cols(),
            e.dim()
        )));
    }
    let rpc = x.rows_per_correspondence();
    let c = x.correspondences();
    let mut a = vec![0.0; c];
    let mut b = vec![0.0; c];
    let ev = e.as_slice();
    for r in 0..x.rows() {
        let row = x.row(r);
        let proj: f64 = row.iter().zip(ev).map(|(p, q)| p * q).sum();
        // ‖x − (x·e)e‖² computed directly rather than as ‖x‖² − (x·e)².
        let resid: f64 = row
            .iter()
            .zip(ev)
            .map(|(p, q)| (p - proj * q).powi(2))
            .sum();
        a[r / rpc] += proj * proj;
        b[r / rpc] += resid;
    }
    Ok((a, b))
}

fn breakdown(a: &[f64], b: &[f64], weights: &[f64], cfg: &LossConfig) -> LossBreakdown {
    let first_term: f64 = weights.iter().zip(a).map(|(w, a)| w * a).sum();
    let trace: f64 = weights.iter().zip(b).map(|(w, b)| w * b).sum();
    let second_term = cfg.alpha * (-cfg.beta * trace).exp();
    LossBreakdown {
        first_term,
        trace,
        second_term,
        total: first_term + second_term,
    }
}

/// Loss as a function of raw weights.
pub fn eigfree_loss_weights(
    x: &DataMatrix,
    weights: &[f64],
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    x.check_weights(weights)?;
    let (a, b) = row_terms(x, e)?;
    Ok(breakdown(&a, &b, weights, cfg))
}

/// Loss together with its gradient with respect to raw weights.
pub fn eigfree_grad_weights(
    x: &DataMatrix,
    weights: &[f64],
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    x.check_weights(weights)?;
    let (a, b) = row_terms(x, e)?;
    let lb = breakdown(&a, &b, weights, cfg);
    let k = cfg.beta * lb.second_term;
    let grad = a.iter().zip(&b).map(|(a, b)| a - k * b).collect();
    Ok((lb, grad))
}

pub fn eigfree_loss(
    x: &DataMatrix,
    w: &WeightState,
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    eigfree_loss_weights(x, w.weights(), e, cfg)
}

/// `∂total/∂logitᵢ = [Σ_r (a_r − αβ·e^{−β·trace}·b_r)]·wᵢ(1−wᵢ)`.
pub fn eigfree_grad_logits(
    x: &DataMatrix,
    w: &WeightState,
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let (_, g) = eigfree_grad_weights(x, w.weights(), e, cfg)?;
    Ok(w.chain(&g))
}

/// Points centered on their weighted mean `μ = Σwᵢxᵢ / Σwᵢ`, as a
/// three-column data matrix.
pub fn centered_points(points: &[[f64; 3]], weights: &[f64]) -> Result<DataMatrix> {
    if points.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            need: 3,
            got: points.len(),
        });
    }
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 1e-9) {
        return Err(Error::DegenerateMean(total));
    }
    let mut mu = [0.0; 3];
    for (p, w) in points.iter().zip(weights) {
        for k in 0..3 {
            mu[k] += w * p[k];
        }
    }
    mu.iter_mut().for_each(|m| *m /= total);
    let data = points
        .iter()
        .flat_map(|p| [p[0] - mu[0], p[1] - mu[1], p[2] - mu[2]])
        .collect();
    DataMatrix::new(3, 1, data)
}

/// Plane-fitting loss. The trace term is `tr(P·C·P)` with the projector
/// `P = I − ẽẽᵀ` and the weighted scatter `C = XᵀWX` of the centered points.
pub fn plane_loss(
    points: &[[f64; 3]],
    w: &WeightState,
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let x = centered_points(points, w.weights())?;
    eigfree_loss(&x, w, e, cfg)
}

/// Gradient of [`plane_loss`] with respect to logits, including the
/// dependence of the mean on the weights.
///
/// Because `Σⱼ wⱼ(xⱼ − μ) = 0`, the scatter satisfies `∂C/∂wᵢ = dᵢdᵢᵀ`
/// with `dᵢ = xᵢ − μ`, so the mean terms cancel and the per-row form of
/// [`eigfree_grad_logits`] applies to the centered points unchanged.
pub fn plane_grad_logits(
    points: &[[f64; 3]],
    w: &WeightState,
    e: &TargetVector,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let x = centered_points(points, w.weights())?;
    eigfree_grad_logits(&x, w, e, cfg)
}

/// Output of the eigendecomposition-based baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEval {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    /// Rank (0 = largest eigenvalue) of the eigenvector most aligned with
    /// the target.
    pub smallest_index_of_gt: usize,
    /// `σ_{n−1} − σ_n` of `XᵀWX`.
    pub eigen_gap: f64,
    pub smallest: Vec<f64>,
}

/// `min ‖e_min ∓ ẽ‖` and its gradient with respect to raw weights, chained
/// through the analytic eigenvector derivative.
pub fn eig_baseline_grad_weights(
    x: &DataMatrix,
    weights: &[f64],
    e: &TargetVector,
) -> Result<BaselineEval> {
    if x.cols() != e.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data matrix has {} columns, target has {}",
            x.cols(),
            e.dim()
        )));
    }
    let gram = x.weighted_gram(weights)?;
    let es = sym_eig(&gram)?;
    let n = es.dim();
    let smallest = es.smallest();
    let ev = e.as_slice();
    let dot: f64 = smallest.iter().zip(ev).map(|(a, b)| a * b).sum();
    let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
    let diff: Vec<f64> = smallest.iter().zip(ev).map(|(a, b)| a - sign * b).collect();
    let loss = norm(&diff);

    let mut grad_u = vec![0.0; n * n];
    if loss > 0.0 {
        for r in 0..n {
            grad_u[r * n + n - 1] = diff[r] / loss;
        }
    }
    let dm = eig_backward(&es, &grad_u)?;
    let grad_weights = gram_pullback(x, &dm);
    Ok(BaselineEval {
        loss,
        grad_weights,
        smallest_index_of_gt: es.most_aligned(ev),
        eigen_gap: es.values[n - 2] - es.values[n - 1],
        smallest,
    })
}

/// `∂L/∂wᵢ = Σ_{r∈rows(i)} X⁽ʳ⁾ᵀ G X⁽ʳ⁾` for `G = ∂L/∂(XᵀWX)`.
fn gram_pullback(x: &DataMatrix, g: &SymMatrix) -> Vec<f64> {
    let mut out = vec![0.0; x.correspondences()];
    let rpc = x.rows_per_correspondence();
    for r in 0..x.rows() {
        out[r / rpc] += g.quad_form(x.row(r));
    }
    out
}

/// Baseline loss with its gradient chained onto the logits.
pub fn eig_baseline_loss_grad(
    x: &DataMatrix,
    w: &WeightState,
    e: &TargetVector,
) -> Result<BaselineEval> {
    let mut out = eig_baseline_grad_weights(x, w.weights(), e)?;
    out.grad_weights = w.chain(&out.grad_weights);
    Ok(out)
}

/// Plane variant of [`eig_baseline_loss_grad`]; `grad_weights` holds the
/// logit gradient.
pub fn plane_baseline_loss_grad(
    points: &[[f64; 3]],
    w: &WeightState,
    e: &TargetVector,
) -> Result<BaselineEval> {
    let x = centered_points(points, w.weights())?;
    eig_baseline_loss_grad(&x, w, e)
}

/// Spectral diagnostics of `XᵀWX` for monitoring; never used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub system: EigenSystem,
    pub smallest_index_of_gt: usize,
    pub eigen_gap: f64,
}

pub fn spectrum(x: &DataMatrix, weights: &[f64], e: &TargetVector) -> Result<Spectrum> {
    let system = sym_eig(&x.weighted_gram(weights)?)?;
    let n = system.dim();
    Ok(Spectrum {
        smallest_index_of_gt: system.most_aligned(e.as_slice()),
        eigen_gap: system.values[n - 2] - system.values[n - 1],
        system,
    })
}
