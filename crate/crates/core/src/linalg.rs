//! Small dense linear algebra.
//!
//! [`sym_eig`] is a cyclic Jacobi eigensolver for the 3x3, 9x9 and 12x12
//! Gram matrices that appear in this crate. [`eig_backward`] propagates a
//! gradient on the eigenvectors back to the matrix; it is only used by the
//! eigendecomposition baseline and refuses to run on a degenerate spectrum.

use nalgebra::{Matrix3, Vector3};

use crate::error::{ensure_finite, Error, Result};

/// Relative tolerance for the symmetry check on construction.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Eigenvalue gap below which [`eig_backward`] reports a degenerate spectrum.
pub const DEGENERATE_GAP: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Checks shape, finiteness and symmetry.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {n}x{n} matrix",
                data.len()
            )));
        }
        ensure_finite(&data, "symmetric matrix")?;
        let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((data[i * n + j] - data[j * n + i]).abs());
            }
        }
        if worst > SYMMETRY_RTOL * scale {
            return Err(Error::NotSymmetric(worst));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, data)
    }

    /// Builds from the upper triangle of `data`, mirroring it below the
    /// diagonal. Used where the caller accumulates only `i <= j`.
    pub(crate) fn from_upper(n: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        for i in 0..n {
            for j in 0..i {
                data[i * n + j] = data[j * n + i];
            }
        }
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            acc += v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Adds `scale · v vᵀ` in place.
    pub fn add_outer(&mut self, v: &[f64], scale: f64) {
        let n = self.n;
        for i in 0..n {
            let vi = scale * v[i];
            for j in 0..n {
                self.data[i * n + j] += vi * v[j];
            }
        }
    }
}

/// Eigenvalues sorted descending with their unit eigenvectors.
///
/// `vectors` is row-major n x n; column `i` pairs with `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|r| self.vectors[r * n + i]).collect()
    }

    /// Eigenvector of the smallest eigenvalue.
    pub fn smallest(&self) -> Vec<f64> {
        self.vector(self.dim() - 1)
    }

    /// Index (0 = largest eigenvalue) of the eigenvector with the largest
    /// absolute cosine to `target`.
    pub fn most_aligned(&self, target: &[f64]) -> usize {
        let n = self.dim();
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..n {
            let c: f64 = (0..n)
                .map(|r| self.vectors[r * n + i] * target[r])
                .sum::<f64>()
                .abs();
            if c > best.1 {
                best = (i, c);
            }
        }
        best.0
    }

    /// `Σᵢ σᵢ uᵢ uᵢᵀ`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                let a = self.values[k] * self.vectors[i * n + k];
                for j in 0..n {
                    out[i * n + j] += a * self.vectors[j * n + k];
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Eigenvalues come back sorted descending. Each eigenvector's entry of
/// largest magnitude is made nonnegative (ties go to the lowest index).
pub fn sym_eig(m: &SymMatrix) -> Result<EigenSystem> {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    let tol = (f64::EPSILON * f64::EPSILON) * total;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[r * n + src].abs() > v[pivot * n + src].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + col] = sign * v[r * n + src];
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// `Kᵢⱼ = 1/(σᵢ − σⱼ)` off the diagonal, zero on it.
#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KMatrix {
    /// Fails with [`Error::DegenerateSpectrum`] when any two eigenvalues are
    /// within [`DEGENERATE_GAP`].
    pub fn new(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = values[i] - values[j];
                if gap.abs() <= DEGENERATE_GAP {
                    return Err(Error::DegenerateSpectrum {
                        i,
                        j,
                        gap: gap.abs(),
                    });
                }
                let k = 1.0 / gap;
                data[i * n + j] = k;
                data[j * n + i] = -k;
            }
        }
        Ok(Self { n, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Pulls a gradient on the eigenvector matrix back to the input matrix.
///
/// `grad_u` is `∂L/∂U` in the same row-major layout as
/// [`EigenSystem::vectors`]. First-order perturbation gives
/// `dU = U (Kᵀ ∘ (Uᵀ dM U))` for symmetric `dM`, whose adjoint restricted to
/// symmetric matrices is `∂L/∂M = sym(U (Kᵀ ∘ (Uᵀ ∂L/∂U)) Uᵀ)`.
pub fn eig_backward(es: &EigenSystem, grad_u: &[f64]) -> Result<SymMatrix> {
    let n = es.dim();
    if grad_u.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "eigenvector gradient has {} entries, expected {}",
            grad_u.len(),
            n * n
        )));
    }
    ensure_finite(grad_u, "eigenvector gradient")?;
    let k = KMatrix::new(&es.values)?;
    let u = &es.vectors;

    // inner = Kᵀ ∘ (Uᵀ G)
    let mut inner = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let utg: f64 = (0..n).map(|r| u[r * n + i] * grad_u[r * n + j]).sum();
            inner[i * n + j] = k.get(j, i) * utg;
        }
    }
    // full = U inner Uᵀ
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for j in 0..n {
            tmp[r * n + j] = (0..n).map(|i| u[r * n + i] * inner[i * n + j]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in r..n {
            let a: f64 = (0..n).map(|j| tmp[r * n + j] * u[c * n + j]).sum();
            let b: f64 = (0..n).map(|j| tmp[c * n + j] * u[r * n + j]).sum();
            out[r * n + c] = 0.5 * (a + b);
        }
    }
    Ok(SymMatrix::from_upper(n, out))
}

/// Singular value decomposition of a 3x3 matrix, `m = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    /// Nonnegative, descending.
    pub s: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.s) * self.v.transpose()
    }
}

pub fn svd3(m: &Matrix3<f64>) -> Result<Svd3> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("svd3 input"));
    }
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::RankDeficient("svd3 did not produce singular vectors")),
    };
    let v = vt.transpose();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = Svd3 {
        u: Matrix3::zeros(),
        s: Vector3::zeros(),
        v: Matrix3::zeros(),
    };
    for (dst, &src) in order.iter().enumerate() {
        out.s[dst] = svd.singular_values[src];
        out.u.set_column(dst, &u.column(src));
        out.v.set_column(dst, &v.column(src));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_sym(n: usize, rng: &mut SplitMix64) -> SymMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                data[i * n + j] = rng.uniform(-1.0, 1.0);
            }
        }
        SymMatrix::from_upper(n, data)
    }

    #[test]
    fn diagonal_matrix() {
        let es = sym_eig(&SymMatrix::from_diagonal(&[1.0, 3.0, 0.0])).unwrap();
        assert_eq!(es.values, vec![3.0, 1.0, 0.0]);
        assert_eq!(es.vector(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(es.vector(1), vec![1.0, 0.0, 0.0]);
        assert_eq!(es.vector(2), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_matrix() {
        let es = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(es.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two() {
        let m = SymMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let es = sym_eig(&m).unwrap();
        assert!((es.values[0] - 3.0).abs() < 1e-14);
        assert!((es.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u0 = es.vector(0);
        let u1 = es.vector(1);
        assert!((u0[0] - h).abs() < 1e-14 && (u0[1] - h).abs() < 1e-14);
        // (1,-1)/√2 up to the sign convention: both entries tie in magnitude,
        // the first one wins and is made nonnegative.
        assert!((u1[0] - h).abs() < 1e-14 && (u1[1] + h).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 2.1, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn rejects_non_finite() {
        let err = SymMatrix::new(2, vec![1.0, f64::NAN, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn eigensystem_invariants_random() {
        let mut rng = SplitMix64::new(42);
        for n in [3, 9, 12] {
            for _ in 0..20 {
                let m = random_sym(n, &mut rng);
                let es = sym_eig(&m).unwrap();
                assert!(es.values.windows(2).all(|w| w[0] >= w[1]));
                for i in 0..n {
                    let ui = es.vector(i);
                    let mu = m.mul_vec(&ui);
                    for r in 0..n {
                        assert!((mu[r] - es.values[i] * ui[r]).abs() < 1e-8);
                    }
                    let norm: f64 = ui.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!((norm - 1.0).abs() < 1e-10);
                    for j in (i + 1)..n {
                        let d: f64 = ui.iter().zip(es.vector(j)).map(|(a, b)| a * b).sum();
                        assert!(d.abs() < 1e-8);
                    }
                    let pivot = ui
                        .iter()
                        .copied()
                        .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
                    assert!(pivot >= 0.0);
                }
                let rec = es.reconstruct();
                for (a, b) in rec.iter().zip(m.as_slice()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn agrees_with_nalgebra_spectrum() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..20 {
            let m = random_sym(9, &mut rng);
            let es = sym_eig(&m).unwrap();
            let dm = nalgebra::DMatrix::from_row_slice(9, 9, m.as_slice());
            let mut reference: Vec<f64> = dm.symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in es.values.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = SplitMix64::new(1);
        for _ in 0..50 {
            let rows = 20;
            let d = 9;
            let x: Vec<f64> = (0..rows * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let w: Vec<f64> = (0..rows).map(|_| rng.next_f64()).collect();
            let mut g = SymMatrix::zeros(d);
            for r in 0..rows {
                g.add_outer(&x[r * d..(r + 1) * d], w[r]);
            }
            let es = sym_eig(&g).unwrap();
            assert!(es.values.iter().all(|&s| s >= -1e-10));
        }
    }

    #[test]
    fn k_matrix_antisymmetric() {
        let k = KMatrix::new(&[5.0, 2.5, -1.0, -7.25]).unwrap();
        for i in 0..4 {
            assert_eq!(k.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(k.get(i, j) + k.get(j, i), 0.0);
            }
        }
        assert_eq!(k.get(0, 1), 1.0 / 2.5);
    }

    #[test]
    fn k_matrix_degenerate() {
        let err = KMatrix::new(&[2.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum { i: 1, j: 2, .. }));
    }

    #[test]
    fn backward_zero_gradient() {
        let m = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        let es = sym_eig(&m).unwrap();
        let g = eig_backward(&es, &[0.0; 9]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_two_by_two_by_hand() {
        // M = diag(3,1), G puts (g1, g2) on the second eigenvector. Perturbing
        // both off-diagonal entries by h rotates u2 by -h/2 towards u1, so
        // dL/dh = -g1/2 and the symmetric gradient entry is K12·(-g1)/2.
        let es = sym_eig(&SymMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        let (g1, g2) = (0.7, -0.3);
        let grad_u = vec![0.0, g1, 0.0, g2];
        let d = eig_backward(&es, &grad_u).unwrap();
        let k12 = 0.5;
        assert!((d.get(0, 1) - k12 * (-g1) / 2.0).abs() < 1e-15);
        assert!((d.get(1, 0) - d.get(0, 1)).abs() == 0.0);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn backward_rejects_degenerate() {
        let es = sym_eig(&SymMatrix::from_diagonal(&[2.0, 1.0, 1.0])).unwrap();
        let err = eig_backward(&es, &[1.0; 9]).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum { .. }));
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd3(&Matrix3::identity()).unwrap();
        assert_eq!(s.s, Vector3::new(1.0, 1.0, 1.0));
        assert!((s.reconstruct() - Matrix3::identity()).norm() < 1e-12);
        let s = svd3(&Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 0.0))).unwrap();
        assert!((s.s - Vector3::new(2.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..200 {
            let m = Matrix3::from_fn(|_, _| rng.uniform(-3.0, 3.0));
            let s = svd3(&m).unwrap();
            assert!((s.reconstruct() - m).norm() < 1e-8);
            assert!((s.u.transpose() * s.u - Matrix3::identity()).norm() < 1e-8);
            assert!((s.v.transpose() * s.v - Matrix3::identity()).norm() < 1e-8);
            assert!(s.s[0] >= s.s[1] && s.s[1] >= s.s[2] && s.s[2] >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut m = Matrix3::identity();
        m[(1, 2)] = f64::NAN;
        assert!(matches!(svd3(&m), Err(Error::NonFinite(_))));
    }
}
