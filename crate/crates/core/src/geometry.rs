//! Data matrices and pose utilities for the essential-matrix and PnP
//! problems: row construction, Hartley normalization, DLT pose extraction,
//! Procrustes projection, essential decomposition and error metrics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{svd3, sym_eig, SymMatrix};
use crate::loss::TargetVector;
use crate::rng::SplitMix64;

/// A 2D-2D match in intrinsics-normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence2D2D {
    pub u: f64,
    pub v: f64,
    pub u2: f64,
    pub v2: f64,
}

impl Correspondence2D2D {
    pub fn new(u: f64, v: f64, u2: f64, v2: f64) -> Self {
        Self { u, v, u2, v2 }
    }

    pub fn features(&self) -> [f64; 4] {
        [self.u, self.v, self.u2, self.v2]
    }
}

/// A world point and its intrinsics-normalized image observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D2D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
    pub v: f64,
}

impl Correspondence3D2D {
    pub fn new(x: f64, y: f64, z: f64, u: f64, v: f64) -> Self {
        Self { x, y, z, u, v }
    }

    pub fn world(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn features(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.u, self.v]
    }
}

/// Which row layout to use for the essential-matrix data matrix.
///
/// `Paper` reproduces the published row verbatim, whose second entry is
/// `u·v`. `Classical` uses `u·v'` there, the epipolar constraint
/// `x₁ᵀ Eᵀ x₂ = 0` that is actually annihilated by the true essential matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowForm {
    Paper,
    Classical,
}

impl fmt::Display for RowForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowForm::Paper => "paper",
            RowForm::Classical => "classical",
        })
    }
}

impl FromStr for RowForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(RowForm::Paper),
            "classical" => Ok(RowForm::Classical),
            other => Err(Error::InvalidArgument(format!("unknown row form {other:?}"))),
        }
    }
}

/// Row-major data matrix `X` whose weighted Gram matrix `XᵀWX` carries the
/// zero-eigenvalue structure. Each correspondence owns
/// `rows_per_correspondence` consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    rows_per_correspondence: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(cols: usize, rows_per_correspondence: usize, data: Vec<f64>) -> Result<Self> {
        if !matches!(cols, 3 | 9 | 12) || !matches!(rows_per_correspondence, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "unsupported data matrix shape: {cols} columns, {rows_per_correspondence} rows per correspondence"
            )));
        }
        if data.len() % (cols * rows_per_correspondence) != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} entries do not tile {cols} columns x {rows_per_correspondence} rows per correspondence",
                data.len()
            )));
        }
        ensure_finite(&data, "data matrix")?;
        Ok(Self {
            rows: data.len() / cols,
            cols,
            rows_per_correspondence,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows_per_correspondence(&self) -> usize {
        self.rows_per_correspondence
    }

    pub fn correspondences(&self) -> usize {
        self.rows / self.rows_per_correspondence
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `X v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `XᵀWX` with one weight per correspondence.
    pub fn weighted_gram(&self, weights: &[f64]) -> Result<SymMatrix> {
        self.check_weights(weights)?;
        let d = self.cols;
        let mut upper = vec![0.0; d * d];
        for r in 0..self.rows {
            let w = weights[r / self.rows_per_correspondence];
            if w == 0.0 {
                continue;
            }
            let row = self.row(r);
            for i in 0..d {
                let wi = w * row[i];
                for j in i..d {
                    upper[i * d + j] += wi * row[j];
                }
            }
        }
        Ok(SymMatrix::from_upper(d, upper))
    }

    pub(crate) fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.correspondences() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} correspondences",
                weights.len(),
                self.correspondences()
            )));
        }
        ensure_finite(weights, "weights")
    }
}

/// Eigenvector of the smallest eigenvalue of `XᵀWX`.
pub fn weighted_null_vector(x: &DataMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    let gram = x.weighted_gram(weights)?;
    Ok(sym_eig(&gram)?.smallest())
}

/// Isotropic image-plane similarity `p ↦ scale·p + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform2D {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl SimilarityTransform2D {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.scale * p[0] + self.offset[0],
            self.scale * p[1] + self.offset[1],
        ]
    }

    /// Homogeneous 3x3 form `T`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.scale, 0.0, self.offset[0],
            0.0, self.scale, self.offset[1],
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Result<Matrix3<f64>> {
        if !(self.scale.abs() > 0.0) || !self.scale.is_finite() {
            return Err(Error::DegenerateScale("singular image similarity"));
        }
        let s = 1.0 / self.scale;
        Ok(Matrix3::new(
            s, 0.0, -s * self.offset[0],
            0.0, s, -s * self.offset[1],
            0.0, 0.0, 1.0,
        ))
    }
}

/// Isotropic world-space similarity `X ↦ scale·(X − centroid)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform3D {
    pub scale: f64,
    pub centroid: [f64; 3],
}

impl SimilarityTransform3D {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            centroid: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.scale * (p[0] - self.centroid[0]),
            self.scale * (p[1] - self.centroid[1]),
            self.scale * (p[2] - self.centroid[2]),
        ]
    }
}

/// Moves the centroid to the origin and scales to RMS radius √2.
pub fn hartley_normalize(points: &[[f64; 2]]) -> Result<(Vec<[f64; 2]>, SimilarityTransform2D)> {
    if points.len() < 2 {
        return Err(Error::TooFewCorrespondences {
            need: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let ms = points
        .iter()
        .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
        .sum::<f64>()
        / n;
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(Error::DegenerateScale("all image points coincide"));
    }
    let scale = std::f64::consts::SQRT_2 / ms.sqrt();
    let t = SimilarityTransform2D {
        scale,
        offset: [-scale * cx, -scale * cy],
    };
    // Subtract first so the output centroid is zero to rounding.
    let out = points
        .iter()
        .map(|p| [scale * (p[0] - cx), scale * (p[1] - cy)])
        .collect();
    Ok((out, t))
}

/// Moves the centroid to the origin and scales to RMS radius √3.
pub fn normalize_world(points: &[[f64; 3]]) -> Result<(Vec<[f64; 3]>, SimilarityTransform3D)> {
    if points.len() < 2 {
        return Err(Error::TooFewCorrespondences {
            need: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let ms = points
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(Error::DegenerateScale("all world points coincide"));
    }
    let t = SimilarityTransform3D {
        scale: 3f64.sqrt() / ms.sqrt(),
        centroid: c,
    };
    Ok((points.iter().map(|p| t.apply(*p)).collect(), t))
}

/// One row per correspondence, nine columns.
pub fn build_essential_matrix_rows(
    corrs: &[Correspondence2D2D],
    form: RowForm,
) -> Result<DataMatrix> {
    if corrs.len() < 8 {
        return Err(Error::TooFewCorrespondences {
            need: 8,
            got: corrs.len(),
        });
    }
    let mut data = Vec::with_capacity(corrs.len() * 9);
    for c in corrs {
        let second = match form {
            RowForm::Paper => c.u * c.v,
            RowForm::Classical => c.u * c.v2,
        };
        data.extend_from_slice(&[
            c.u * c.u2,
            second,
            c.u,
            c.v * c.u2,
            c.v * c.v2,
            c.v,
            c.u2,
            c.v2,
            1.0,
        ]);
    }
    DataMatrix::new(9, 1, data)
}

/// Vectorizes an essential matrix (`x₂ᵀ E x₁ = 0`) in the layout that pairs
/// with the classical row: column-major, i.e. the row-major entries of `Eᵀ`.
pub fn essential_to_vector(e: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    out.copy_from_slice(e.as_slice());
    out
}

pub fn vector_to_essential(v: &[f64]) -> Result<Matrix3<f64>> {
    if v.len() != 9 {
        return Err(Error::DimensionMismatch(format!(
            "essential vector has {} entries",
            v.len()
        )));
    }
    Ok(Matrix3::from_column_slice(v))
}

/// Ground-truth essential vector in Hartley-normalized coordinates:
/// `E_norm ∝ T₂⁻ᵀ E T₁⁻¹`, vectorized and unit-normalized.
pub fn transform_gt_essential(
    e_gt: &Matrix3<f64>,
    t1: &SimilarityTransform2D,
    t2: &SimilarityTransform2D,
) -> Result<TargetVector> {
    let e_norm = t2.inverse_matrix()?.transpose() * e_gt * t1.inverse_matrix()?;
    TargetVector::normalized(essential_to_vector(&e_norm).to_vec())
}

/// Maps a vector estimated on Hartley-normalized rows back to an essential
/// matrix on the input coordinates: `E = T₂ᵀ E_norm T₁`.
pub fn denormalize_essential(
    v: &[f64],
    t1: &SimilarityTransform2D,
    t2: &SimilarityTransform2D,
) -> Result<Matrix3<f64>> {
    Ok(t2.matrix().transpose() * vector_to_essential(v)? * t1.matrix())
}

/// Two rows per correspondence, twelve columns.
pub fn build_pnp_rows(corrs: &[Correspondence3D2D]) -> Result<DataMatrix> {
    if corrs.len() < 6 {
        return Err(Error::TooFewCorrespondences {
            need: 6,
            got: corrs.len(),
        });
    }
    let mut data = Vec::with_capacity(corrs.len() * 24);
    for c in corrs {
        let (x, y, z, u, v) = (c.x, c.y, c.z, c.u, c.v);
        data.extend_from_slice(&[
            x, y, z, 1.0, 0.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u * z, -u,
        ]);
        data.extend_from_slice(&[
            0.0, 0.0, 0.0, 0.0, x, y, z, 1.0, -v * x, -v * y, -v * z, -v,
        ]);
    }
    DataMatrix::new(12, 2, data)
}

/// Rigid camera pose `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-8 || (det - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "not a rotation (orthogonality error {ortho:e}, det {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn projection(&self) -> Matrix3x4<f64> {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        p.set_column(3, &self.translation);
        p
    }
}

/// Pose target for PnP rows built on normalized coordinates.
///
/// With world points mapped by `world` and image points by `image`, the
/// normalized projection is `T₂ · [R/s₃ | R c₃ + t]`, flattened row-major
/// (p₁…p₁₂) and unit-normalized.
pub fn pnp_target_vector(
    pose: &Pose,
    image: &SimilarityTransform2D,
    world: &SimilarityTransform3D,
) -> Result<TargetVector> {
    if !(world.scale > 0.0) {
        return Err(Error::DegenerateScale("world similarity scale"));
    }
    let c = Vector3::from(world.centroid);
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(pose.rotation / world.scale));
    p.set_column(3, &(pose.rotation * c + pose.translation));
    let pn = image.matrix() * p;
    TargetVector::normalized(row_major_3x4(&pn).to_vec())
}

fn row_major_3x4(p: &Matrix3x4<f64>) -> [f64; 12] {
    let mut out = [0.0; 12];
    for r in 0..3 {
        for c in 0..4 {
            out[r * 4 + c] = p[(r, c)];
        }
    }
    out
}

fn from_row_major_3x4(v: &[f64]) -> Matrix3x4<f64> {
    Matrix3x4::from_row_slice(v)
}

/// Undoes [`pnp_target_vector`]'s normalizations: returns `P ∝ [R | t]`
/// acting on raw world points and intrinsics-normalized image points.
pub fn denormalize_projection(
    v: &[f64],
    image: &SimilarityTransform2D,
    world: &SimilarityTransform3D,
) -> Result<Matrix3x4<f64>> {
    if v.len() != 12 {
        return Err(Error::DimensionMismatch(format!(
            "projection vector has {} entries",
            v.len()
        )));
    }
    let p = image.inverse_matrix()? * from_row_major_3x4(v);
    let a = p.fixed_view::<3, 3>(0, 0) * world.scale;
    let c = Vector3::from(world.centroid);
    let b = p.column(3) - a * c;
    let mut out = Matrix3x4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    out.set_column(3, &b);
    Ok(out)
}

/// DLT pose before orthonormalization; `rotation` is generally not a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DltEstimate {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl DltEstimate {
    /// Procrustes-projects the rotation block.
    pub fn to_pose(&self) -> Result<Pose> {
        Pose::new(procrustes_project(&self.rotation)?, self.translation)
    }
}

/// Reshapes a 12-vector (row-major `[R̃ | t̃]`, any nonzero scale) into a
/// pose estimate. The scale is fixed so that the singular values of `R̃`
/// average one and the sign so that `sample` lies in front of the camera.
pub fn dlt_pose_from_vector(v: &[f64], sample: &Correspondence3D2D) -> Result<DltEstimate> {
    if v.len() != 12 {
        return Err(Error::DimensionMismatch(format!(
            "projection vector has {} entries",
            v.len()
        )));
    }
    ensure_finite(v, "projection vector")?;
    let p = from_row_major_3x4(v);
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    if m.norm() < 1e-9 {
        return Err(Error::RankDeficient("rotation block is zero"));
    }
    let s = svd3(&m)?;
    let mean_sv = s.s.sum() / 3.0;
    let mut scale = 1.0 / mean_sv;
    let t: Vector3<f64> = p.column(3).into();
    let depth = (m * sample.world() + t)[2];
    if depth < 0.0 {
        scale = -scale;
    }
    Ok(DltEstimate {
        rotation: m * scale,
        translation: t * scale,
    })
}

/// Index of the correspondence whose depth under `p` is the median.
pub fn median_depth_index(p: &Matrix3x4<f64>, corrs: &[Correspondence3D2D]) -> Result<usize> {
    if corrs.is_empty() {
        return Err(Error::Empty("correspondences"));
    }
    let row = p.row(2);
    let mut depths: Vec<(f64, usize)> = corrs
        .iter()
        .enumerate()
        .map(|(i, c)| (row[0] * c.x + row[1] * c.y + row[2] * c.z + row[3], i))
        .collect();
    depths.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(depths[depths.len() / 2].1)
}

/// Nearest rotation in Frobenius norm: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn procrustes_project(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let s = svd3(m)?;
    if s.s[0] <= 0.0 || s.s[1] <= 1e-12 * s.s[0] {
        return Err(Error::RankDeficient("procrustes input has rank < 2"));
    }
    let d = (s.u * s.v.transpose()).determinant().signum();
    Ok(s.u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * s.v.transpose())
}

/// Weighted DLT on a PnP instance: Hartley/world normalization, smallest
/// eigenvector of `XᵀWX`, denormalization, median-depth sign fix and
/// Procrustes.
pub fn solve_pnp_dlt(corrs: &[Correspondence3D2D], weights: &[f64]) -> Result<Pose> {
    let norm = PnpNormalization::from_correspondences(corrs)?;
    let x = build_pnp_rows(&norm.apply(corrs))?;
    let v = weighted_null_vector(&x, weights)?;
    norm.pose_from_vector(&v, corrs)
}

/// The pair of similarities applied to a PnP instance before building rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpNormalization {
    pub image: SimilarityTransform2D,
    pub world: SimilarityTransform3D,
}

impl PnpNormalization {
    pub fn from_correspondences(corrs: &[Correspondence3D2D]) -> Result<Self> {
        let img: Vec<[f64; 2]> = corrs.iter().map(|c| [c.u, c.v]).collect();
        let wld: Vec<[f64; 3]> = corrs.iter().map(|c| [c.x, c.y, c.z]).collect();
        Ok(Self {
            image: hartley_normalize(&img)?.1,
            world: normalize_world(&wld)?.1,
        })
    }

    pub fn apply(&self, corrs: &[Correspondence3D2D]) -> Vec<Correspondence3D2D> {
        corrs
            .iter()
            .map(|c| {
                let w = self.world.apply([c.x, c.y, c.z]);
                let i = self.image.apply([c.u, c.v]);
                Correspondence3D2D::new(w[0], w[1], w[2], i[0], i[1])
            })
            .collect()
    }

    pub fn target(&self, pose: &Pose) -> Result<TargetVector> {
        pnp_target_vector(pose, &self.image, &self.world)
    }

    /// Recovers a pose from a vector estimated on normalized rows.
    pub fn pose_from_vector(&self, v: &[f64], corrs: &[Correspondence3D2D]) -> Result<Pose> {
        let p = denormalize_projection(v, &self.image, &self.world)?;
        let sample = corrs[median_depth_index(&p, corrs)?];
        dlt_pose_from_vector(&row_major_3x4(&p), &sample)?.to_pose()
    }
}

/// Relative pose from an essential matrix (`x₂ᵀ E x₁ = 0`): the candidate
/// with the most correspondences in front of both cameras; `‖t‖ = 1`.
pub fn decompose_essential(e: &Matrix3<f64>, corrs: &[Correspondence2D2D]) -> Result<Pose> {
    if corrs.is_empty() {
        return Err(Error::Empty("correspondences"));
    }
    let s = svd3(e)?;
    if !(s.s[0] > 0.0) || s.s[1] <= 1e-9 * s.s[0] {
        return Err(Error::DegenerateConfiguration(
            "essential matrix has rank < 2".into(),
        ));
    }
    let mut u = s.u;
    let mut v = s.v;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vector3<f64> = u.column(2).into();
    let candidates = [
        (u * w * v.transpose(), t),
        (u * w * v.transpose(), -t),
        (u * w.transpose() * v.transpose(), t),
        (u * w.transpose() * v.transpose(), -t),
    ];
    let mut best: Option<(usize, usize)> = None;
    for (k, (r, t)) in candidates.iter().enumerate() {
        let count = corrs
            .iter()
            .filter(|c| {
                let (d1, d2) = triangulate_depths(r, t, c);
                d1 > 0.0 && d2 > 0.0
            })
            .count();
        if best.is_none_or(|(_, b)| count > b) {
            best = Some((k, count));
        }
    }
    let (k, count) = best.expect("four candidates");
    if 2 * count <= corrs.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "best decomposition has only {count} of {} points in front",
            corrs.len()
        )));
    }
    let (r, t) = candidates[k];
    Pose::new(r, t.normalize())
}

/// Depths `(λ₁, λ₂)` with `λ₂ x₂ ≈ λ₁ R x₁ + t` in the least-squares sense.
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, c: &Correspondence2D2D) -> (f64, f64) {
    let a = r * Vector3::new(c.u, c.v, 1.0);
    let b = -Vector3::new(c.u2, c.v2, 1.0);
    // Normal equations of [a b] λ = -t.
    let (aa, ab, bb) = (a.dot(&a), a.dot(&b), b.dot(&b));
    let (at, bt) = (-a.dot(t), -b.dot(t));
    let det = aa * bb - ab * ab;
    if det.abs() < 1e-300 {
        return (f64::NAN, f64::NAN);
    }
    ((bb * at - ab * bt) / det, (aa * bt - ab * at) / det)
}

/// Weighted eight-point estimate of `E` on Hartley-normalized coordinates,
/// mapped back to the input coordinates.
pub fn solve_essential(
    corrs: &[Correspondence2D2D],
    weights: &[f64],
    form: RowForm,
) -> Result<Matrix3<f64>> {
    let (norm, t1, t2) = normalize_pairs(corrs)?;
    let x = build_essential_matrix_rows(&norm, form)?;
    let v = weighted_null_vector(&x, weights)?;
    denormalize_essential(&v, &t1, &t2)
}

/// Hartley-normalizes each image of a set of 2D-2D matches independently.
pub fn normalize_pairs(
    corrs: &[Correspondence2D2D],
) -> Result<(Vec<Correspondence2D2D>, SimilarityTransform2D, SimilarityTransform2D)> {
    let a: Vec<[f64; 2]> = corrs.iter().map(|c| [c.u, c.v]).collect();
    let b: Vec<[f64; 2]> = corrs.iter().map(|c| [c.u2, c.v2]).collect();
    let (an, t1) = hartley_normalize(&a)?;
    let (bn, t2) = hartley_normalize(&b)?;
    let out = an
        .iter()
        .zip(&bn)
        .map(|(p, q)| Correspondence2D2D::new(p[0], p[1], q[0], q[1]))
        .collect();
    Ok((out, t1, t2))
}

/// Geodesic distance between two rotations, `2·arccos(|⟨qa, qb⟩|)`, in
/// radians. Evaluated through `atan2` on the relative quaternion so that
/// tiny angles keep full precision.
pub fn rotation_error(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let qa = quaternion_of(ra);
    let qb = quaternion_of(rb);
    let rel = qa.inverse() * qb;
    let q = rel.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}

fn quaternion_of(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r))
}

/// `‖ta − tb‖ / ‖tb‖`.
pub fn translation_error(ta: &Vector3<f64>, tb_gt: &Vector3<f64>) -> Result<f64> {
    let n = tb_gt.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(
            "ground-truth translation is zero".into(),
        ));
    }
    Ok((ta - tb_gt).norm() / n)
}

/// Angle between two translation directions, ignoring sign, in radians.
pub fn direction_error(ta: &Vector3<f64>, tb: &Vector3<f64>) -> Result<f64> {
    let (na, nb) = (ta.norm(), tb.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::InvalidArgument("zero translation direction".into()));
    }
    let c = (ta.dot(tb) / (na * nb)).abs();
    let s = ta.cross(tb).norm() / (na * nb);
    Ok(s.atan2(c))
}

/// Relative-pose error used for the essential problem: the larger of the
/// rotation error and the (sign-agnostic) translation direction error.
pub fn relative_pose_error(est: &Pose, gt: &Pose) -> Result<f64> {
    Ok(rotation_error(&est.rotation, &gt.rotation)
        .max(direction_error(&est.translation, &gt.translation)?))
}

/// Area under the recall-vs-threshold curve on `[0, max threshold]`,
/// trapezoidal over 1° bins, normalized to `[0, 1]`. `errors` are radians,
/// `thresholds_deg` degrees (only the largest one bounds the integral).
pub fn map_score(errors: &[f64], thresholds_deg: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("pose errors"));
    }
    if thresholds_deg.is_empty() {
        return Err(Error::Empty("thresholds"));
    }
    if thresholds_deg.windows(2).any(|w| w[0] > w[1]) || thresholds_deg[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "thresholds must be positive and ascending".into(),
        ));
    }
    let max = *thresholds_deg.last().expect("non-empty");
    let mut degs: Vec<f64> = errors
        .iter()
        .map(|e| if e.is_nan() { f64::INFINITY } else { e.to_degrees() })
        .collect();
    degs.sort_by(f64::total_cmp);
    let recall = |th: f64| degs.partition_point(|&d| d <= th) as f64 / degs.len() as f64;
    let bins = max.ceil().max(1.0) as usize;
    let step = max / bins as f64;
    let mut area = 0.0;
    let mut prev = recall(0.0);
    for k in 1..=bins {
        let cur = recall(step * k as f64);
        area += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    Ok(area / max)
}

/// [`map_score`] evaluated separately at each threshold.
pub fn map_table(errors: &[f64], thresholds_deg: &[f64]) -> Result<Vec<(f64, f64)>> {
    thresholds_deg
        .iter()
        .map(|&t| Ok((t, map_score(errors, &[t])?)))
        .collect()
}

/// Reprojection residual of a world point under `pose`, in normalized image
/// units. Points behind the camera get an infinite residual.
pub fn reprojection_error(pose: &Pose, c: &Correspondence3D2D) -> f64 {
    let p = pose.transform(&c.world());
    if p[2] <= 0.0 {
        return f64::INFINITY;
    }
    ((p[0] / p[2] - c.u).powi(2) + (p[1] / p[2] - c.v).powi(2)).sqrt()
}

/// Result of [`ransac_dlt`].
#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub inliers: Vec<bool>,
}

/// RANSAC over six-point DLT hypotheses, followed by a DLT refit on the
/// consensus set and one re-scoring pass against that refit. `threshold` is a reprojection radius in normalized image
/// units.
pub fn ransac_dlt(
    corrs: &[Correspondence3D2D],
    threshold: f64,
    iterations: usize,
    rng: &mut SplitMix64,
) -> Result<RansacOutcome> {
    const SAMPLE: usize = 6;
    if corrs.len() < SAMPLE {
        return Err(Error::TooFewCorrespondences {
            need: SAMPLE,
            got: corrs.len(),
        });
    }
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..iterations {
        let idx = rng.sample_indices(corrs.len(), SAMPLE);
        let sample: Vec<_> = idx.iter().map(|&i| corrs[i]).collect();
        let Ok(pose) = solve_pnp_dlt(&sample, &[1.0; SAMPLE]) else {
            continue;
        };
        let mask: Vec<bool> = corrs
            .iter()
            .map(|c| reprojection_error(&pose, c) < threshold)
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|(b, _)| count > *b) {
            best = Some((count, mask));
        }
    }
    let (count, mask) = best.ok_or_else(|| {
        Error::DegenerateConfiguration("no RANSAC hypothesis could be fitted".into())
    })?;
    if count < SAMPLE {
        return Err(Error::DegenerateConfiguration(format!(
            "RANSAC consensus of {count} is below the minimal sample"
        )));
    }
    let refit = |mask: &[bool]| {
        let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        solve_pnp_dlt(corrs, &weights)
    };
    let pose = refit(&mask)?;
    // One re-scoring pass against the refit: a minimal-sample hypothesis is
    // noisy and misses inliers near the threshold.
    let rescored: Vec<bool> = corrs
        .iter()
        .map(|c| reprojection_error(&pose, c) < threshold)
        .collect();
    if rescored.iter().filter(|&&m| m).count() >= count {
        if let Ok(better) = refit(&rescored) {
            return Ok(RansacOutcome {
                pose: better,
                inliers: rescored,
            });
        }
    }
    Ok(RansacOutcome {
        pose,
        inliers: mask,
    })
}
