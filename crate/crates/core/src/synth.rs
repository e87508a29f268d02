//! Seeded synthetic scenes for plane fitting, PnP and two-view geometry,
//! with a line-oriented text serialization.
//!
//! Text format: header lines start with `#`. The first is
//! `# eigfree-scene v1 <kind>`; the following `# key values...` lines carry
//! scene metadata (camera, ground-truth pose); `# columns ...` names the
//! per-correspondence columns. Every remaining line is one correspondence,
//! whitespace separated, with a trailing `0`/`1` inlier flag. Floats are
//! written in shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Correspondence2D2D, Correspondence3D2D, Pose};
use crate::rng::SplitMix64;

const MAGIC: &str = "eigfree-scene v1";
const MAX_TRIES_PER_POINT: usize = 10_000;

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            focal: 800.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

impl Camera {
    /// Pixel position of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [
            self.focal * p[0] / p[2] + self.cx,
            self.focal * p[1] / p[2] + self.cy,
        ]
    }

    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] < self.width && px[1] >= 0.0 && px[1] < self.height
    }

    /// Pixel to intrinsics-normalized coordinates.
    pub fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.cx) / self.focal, (px[1] - self.cy) / self.focal]
    }

    fn random_pixel(&self, rng: &mut SplitMix64) -> [f64; 2] {
        [rng.uniform(0.0, self.width), rng.uniform(0.0, self.height)]
    }
}

/// Camera-frame box in which scene points are drawn.
const BOX_LO: [f64; 3] = [-2.0, -2.0, 4.0];
const BOX_HI: [f64; 3] = [2.0, 2.0, 8.0];

fn box_point(rng: &mut SplitMix64) -> Vector3<f64> {
    Vector3::new(
        rng.uniform(BOX_LO[0], BOX_HI[0]),
        rng.uniform(BOX_LO[1], BOX_HI[1]),
        rng.uniform(BOX_LO[2], BOX_HI[2]),
    )
}

fn outlier_mask(n: usize, n_out: usize, rng: &mut SplitMix64) -> Vec<bool> {
    let mut mask = vec![true; n];
    for i in rng.sample_indices(n, n_out) {
        mask[i] = false;
    }
    mask
}

pub const PLANE_NOISE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneScene {
    pub points: Vec<[f64; 3]>,
    pub inlier_mask: Vec<bool>,
}

impl PlaneScene {
    pub fn normal(&self) -> [f64; 3] {
        [0.0, 0.0, 1.0]
    }
}

/// `n_in` points on `z = 1` with `x ∈ [0,40]`, `y ∈ [0,2]` and σ = 0.001
/// noise in z, followed by `n_out` points over the same x, y range with
/// `z ~ N(50, 5)`.
pub fn gen_plane(n_in: usize, n_out: usize, seed: u64) -> Result<PlaneScene> {
    if n_in < 3 {
        return Err(Error::TooFewCorrespondences { need: 3, got: n_in });
    }
    let mut rng = SplitMix64::new(seed);
    let mut points = Vec::with_capacity(n_in + n_out);
    for _ in 0..n_in {
        let x = rng.uniform(0.0, 40.0);
        let y = rng.uniform(0.0, 2.0);
        points.push([x, y, rng.normal(1.0, PLANE_NOISE)]);
    }
    for _ in 0..n_out {
        let x = rng.uniform(0.0, 40.0);
        let y = rng.uniform(0.0, 2.0);
        points.push([x, y, rng.normal(50.0, 5.0)]);
    }
    let mut inlier_mask = vec![true; n_in];
    inlier_mask.resize(n_in + n_out, false);
    Ok(PlaneScene {
        points,
        inlier_mask,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpScene {
    pub points3d: Vec<[f64; 3]>,
    /// Observed pixel positions.
    pub pixels: Vec<[f64; 2]>,
    pub pose_gt: Pose,
    pub inlier_mask: Vec<bool>,
    pub camera: Camera,
}

impl PnpScene {
    pub fn correspondences(&self) -> Vec<Correspondence3D2D> {
        self.points3d
            .iter()
            .zip(&self.pixels)
            .map(|(p, px)| {
                let n = self.camera.normalize(*px);
                Correspondence3D2D::new(p[0], p[1], p[2], n[0], n[1])
            })
            .collect()
    }

    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }
}

/// Camera-frame points uniform in `[−2,2]²×[4,8]` (kept only if they
/// project inside the image), a uniformly random rotation, and the
/// translation set to the camera-frame centroid so that the world points
/// are centered. Inliers get Gaussian pixel noise; outliers are moved to a
/// uniformly random pixel.
pub fn gen_pnp(n_points: usize, n_outliers: usize, noise_px: f64, seed: u64) -> Result<PnpScene> {
    if n_outliers >= n_points {
        return Err(Error::InvalidArgument(format!(
            "{n_outliers} outliers for {n_points} points"
        )));
    }
    if n_points < 6 + n_outliers {
        return Err(Error::TooFewCorrespondences {
            need: 6 + n_outliers,
            got: n_points,
        });
    }
    if !(noise_px >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise_px}")));
    }
    let camera = Camera::default();
    let mut rng = SplitMix64::new(seed);
    let mut cam_pts = Vec::with_capacity(n_points);
    let mut tries = 0;
    while cam_pts.len() < n_points {
        tries += 1;
        if tries > MAX_TRIES_PER_POINT * n_points {
            return Err(Error::DegenerateConfiguration(
                "could not place points inside the image".into(),
            ));
        }
        let p = box_point(&mut rng);
        if camera.contains(camera.project(&p)) {
            cam_pts.push(p);
        }
    }
    let t = cam_pts.iter().sum::<Vector3<f64>>() / n_points as f64;
    let r = rng.rotation();
    let pose_gt = Pose::new(r, t)?;
    let points3d = cam_pts
        .iter()
        .map(|p| {
            let w = r.transpose() * (p - t);
            [w[0], w[1], w[2]]
        })
        .collect();
    let inlier_mask = outlier_mask(n_points, n_outliers, &mut rng);
    let pixels = cam_pts
        .iter()
        .zip(&inlier_mask)
        .map(|(p, &inlier)| {
            if inlier {
                let px = camera.project(p);
                [
                    px[0] + rng.normal(0.0, 1.0) * noise_px,
                    px[1] + rng.normal(0.0, 1.0) * noise_px,
                ]
            } else {
                camera.random_pixel(&mut rng)
            }
        })
        .collect();
    Ok(PnpScene {
        points3d,
        pixels,
        pose_gt,
        inlier_mask,
        camera,
    })
}

/// Relative-motion distribution for two-view scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpipolarParams {
    /// Length of the translation between the two cameras.
    pub baseline: f64,
    /// Maximum relative rotation angle, degrees.
    pub max_rotation_deg: f64,
    /// Minimum depth of a point in the second camera.
    pub min_depth: f64,
}

impl Default for EpipolarParams {
    fn default() -> Self {
        Self {
            baseline: 2.0,
            max_rotation_deg: 10.0,
            min_depth: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarScene {
    /// Points in the first camera's frame.
    pub points3d: Vec<[f64; 3]>,
    /// Second camera relative to the first (the first is the identity).
    pub pose: Pose,
    pub correspondences: Vec<Correspondence2D2D>,
    pub essential: Matrix3<f64>,
    pub inlier_mask: Vec<bool>,
    pub camera: Camera,
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0)
}

pub fn gen_epipolar(
    n_points: usize,
    n_outliers: usize,
    noise_px: f64,
    seed: u64,
) -> Result<EpipolarScene> {
    gen_epipolar_with(n_points, n_outliers, noise_px, &EpipolarParams::default(), seed)
}

/// Two views of points drawn in the first camera's `[−2,2]²×[4,8]` box.
/// The second camera is rotated by a uniform angle up to
/// `max_rotation_deg` about a random axis and translated by `baseline` in a
/// random direction. Points must be visible in both images. Outliers keep
/// their first-image position and get a uniformly random second-image pixel.
pub fn gen_epipolar_with(
    n_points: usize,
    n_outliers: usize,
    noise_px: f64,
    params: &EpipolarParams,
    seed: u64,
) -> Result<EpipolarScene> {
    if n_points < 8 + n_outliers {
        return Err(Error::TooFewCorrespondences {
            need: 8 + n_outliers,
            got: n_points,
        });
    }
    if !(params.baseline >= 1e-6) {
        return Err(Error::DegenerateConfiguration(format!(
            "baseline {} is below 1e-6",
            params.baseline
        )));
    }
    if !(noise_px >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise_px}")));
    }
    let camera = Camera::default();
    let mut rng = SplitMix64::new(seed);
    let axis = Vector3::from(rng.unit_vector());
    let angle = rng.uniform(0.0, params.max_rotation_deg).to_radians();
    let r = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        .matrix();
    let t = Vector3::from(rng.unit_vector()) * params.baseline;
    let pose = Pose::new(r, t)?;

    let mut pts = Vec::with_capacity(n_points);
    let mut tries = 0;
    while pts.len() < n_points {
        tries += 1;
        if tries > MAX_TRIES_PER_POINT * n_points {
            return Err(Error::DegenerateConfiguration(
                "could not place points visible in both views".into(),
            ));
        }
        let p = box_point(&mut rng);
        let q = pose.transform(&p);
        if q[2] > params.min_depth
            && camera.contains(camera.project(&p))
            && camera.contains(camera.project(&q))
        {
            pts.push(p);
        }
    }
    let inlier_mask = outlier_mask(n_points, n_outliers, &mut rng);
    let correspondences = pts
        .iter()
        .zip(&inlier_mask)
        .map(|(p, &inlier)| {
            let mut a = camera.project(p);
            a[0] += rng.normal(0.0, 1.0) * noise_px;
            a[1] += rng.normal(0.0, 1.0) * noise_px;
            let b = if inlier {
                let mut b = camera.project(&pose.transform(p));
                b[0] += rng.normal(0.0, 1.0) * noise_px;
                b[1] += rng.normal(0.0, 1.0) * noise_px;
                b
            } else {
                camera.random_pixel(&mut rng)
            };
            let (a, b) = (camera.normalize(a), camera.normalize(b));
            Correspondence2D2D::new(a[0], a[1], b[0], b[1])
        })
        .collect();
    Ok(EpipolarScene {
        points3d: pts.iter().map(|p| [p[0], p[1], p[2]]).collect(),
        pose,
        correspondences,
        essential: skew(&t) * r,
        inlier_mask,
        camera,
    })
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn camera_line(c: &Camera) -> String {
    format!("# camera {}\n", join([c.focal, c.cx, c.cy, c.width, c.height]))
}

fn pose_line(p: &Pose) -> String {
    // Rotation row-major, then translation.
    let r = p.rotation.transpose();
    format!(
        "# pose {}\n",
        join(r.iter().copied().chain(p.translation.iter().copied()))
    )
}

impl PlaneScene {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {MAGIC} plane\n# columns x y z inlier\n");
        for (p, m) in self.points.iter().zip(&self.inlier_mask) {
            let _ = writeln!(s, "{} {}", join(*p), u8::from(*m));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parsed = ParsedScene::parse(text, "plane", 3)?;
        Ok(Self {
            points: parsed.rows.iter().map(|r| [r[0], r[1], r[2]]).collect(),
            inlier_mask: parsed.mask,
        })
    }
}

impl PnpScene {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {MAGIC} pnp\n");
        s.push_str(&camera_line(&self.camera));
        s.push_str(&pose_line(&self.pose_gt));
        s.push_str("# columns x y z px py inlier\n");
        for ((p, px), m) in self.points3d.iter().zip(&self.pixels).zip(&self.inlier_mask) {
            let _ = writeln!(
                s,
                "{} {}",
                join(p.iter().chain(px.iter()).copied()),
                u8::from(*m)
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parsed = ParsedScene::parse(text, "pnp", 5)?;
        Ok(Self {
            points3d: parsed.rows.iter().map(|r| [r[0], r[1], r[2]]).collect(),
            pixels: parsed.rows.iter().map(|r| [r[3], r[4]]).collect(),
            pose_gt: parsed.pose()?,
            inlier_mask: parsed.mask.clone(),
            camera: parsed.camera()?,
        })
    }
}

impl EpipolarScene {
    /// The 3D points are not serialized; they are not needed to score an
    /// estimate.
    pub fn to_text(&self) -> String {
        let mut s = format!("# {MAGIC} epipolar\n");
        s.push_str(&camera_line(&self.camera));
        s.push_str(&pose_line(&self.pose));
        s.push_str("# columns u v u2 v2 inlier\n");
        for (c, m) in self.correspondences.iter().zip(&self.inlier_mask) {
            let _ = writeln!(s, "{} {}", join(c.features()), u8::from(*m));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parsed = ParsedScene::parse(text, "epipolar", 4)?;
        let pose = parsed.pose()?;
        Ok(Self {
            points3d: Vec::new(),
            correspondences: parsed
                .rows
                .iter()
                .map(|r| Correspondence2D2D::new(r[0], r[1], r[2], r[3]))
                .collect(),
            essential: skew(&pose.translation) * pose.rotation,
            pose,
            inlier_mask: parsed.mask.clone(),
            camera: parsed.camera()?,
        })
    }
}

struct ParsedScene {
    meta: Vec<(String, Vec<f64>)>,
    rows: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("scene line {line}: {msg}"))
}

impl ParsedScene {
    fn parse(text: &str, kind: &str, width: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Empty("scene text"))?;
        let expected = format!("# {MAGIC} {kind}");
        if first.trim() != expected {
            return Err(parse_err(1, format!("expected header {expected:?}")));
        }
        let mut meta = Vec::new();
        let mut rows = Vec::new();
        let mut mask = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                let Some(key) = it.next() else { continue };
                if key == "columns" {
                    continue;
                }
                let vals = it
                    .map(|v| v.parse::<f64>().map_err(|e| parse_err(i + 1, e)))
                    .collect::<Result<Vec<_>>>()?;
                meta.push((key.to_string(), vals));
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != width + 1 {
                return Err(parse_err(
                    i + 1,
                    format!("expected {} fields, got {}", width + 1, fields.len()),
                ));
            }
            let vals = fields[..width]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| parse_err(i + 1, e)))
                .collect::<Result<Vec<_>>>()?;
            mask.push(match fields[width] {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(i + 1, format!("bad inlier flag {other:?}"))),
            });
            rows.push(vals);
        }
        Ok(Self { meta, rows, mask })
    }

    fn get(&self, key: &str, len: usize) -> Result<&[f64]> {
        let (_, v) = self
            .meta
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::InvalidArgument(format!("scene is missing `# {key}`")))?;
        if v.len() != len {
            return Err(Error::InvalidArgument(format!(
                "`# {key}` has {} values, expected {len}",
                v.len()
            )));
        }
        Ok(v)
    }

    fn camera(&self) -> Result<Camera> {
        let c = self.get("camera", 5)?;
        Ok(Camera {
            focal: c[0],
            cx: c[1],
            cy: c[2],
            width: c[3],
            height: c[4],
        })
    }

    fn pose(&self) -> Result<Pose> {
        let p = self.get("pose", 12)?;
        Pose::new(
            Matrix3::from_row_slice(&p[..9]),
            Vector3::new(p[9], p[10], p[11]),
        )
    }
}
