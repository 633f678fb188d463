//! Splat, scene and camera types plus the stored-to-render activation.
//!
//! Splats are kept exactly as stored in the PLY file (log-scales, opacity
//! logit, unnormalized quaternion). [`activate`] converts one to render-time
//! parameters in `f64`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Degree-1..3 spherical-harmonics coefficients per color channel.
pub const SH_REST_PER_CHANNEL: usize = 15;
pub const SH_REST_LEN: usize = 3 * SH_REST_PER_CHANNEL;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite parameter `{0}`")]
    NonFiniteParameter(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// One splat in stored (file) form.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    pub position: [f32; 3],
    /// Carried through for PLY round-trips only; never used for rendering.
    pub normal: [f32; 3],
    pub log_scale: [f32; 3],
    /// Quaternion (w, x, y, z), not necessarily normalized.
    pub rotation: [f32; 4],
    pub opacity_logit: f32,
    pub sh_dc: [f32; 3],
    /// Channel-major: 15 coefficients for R, then G, then B.
    pub sh_rest: [f32; SH_REST_LEN],
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            normal: [0.0; 3],
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh_dc: [0.0; 3],
            sh_rest: [0.0; SH_REST_LEN],
        }
    }
}

impl Gaussian {
    /// All stored floats in a fixed order (normal excluded).
    pub fn params(&self) -> impl Iterator<Item = f32> + '_ {
        self.position
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity_logit))
            .chain(&self.sh_dc)
            .chain(&self.sh_rest)
            .copied()
    }

    /// Bitwise equality over every stored float, NaN payloads included.
    pub fn bits_eq(&self, other: &Gaussian) -> bool {
        self.normal.iter().zip(&other.normal).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.params().zip(other.params()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn activated_opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// An ordered splat list. The index of a splat in `splats` is its identity for
/// every ordering, tally and mask.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub splats: Vec<Gaussian>,
    /// Highest SH degree stored in the source file (0..=3).
    pub sh_degree: u8,
    pub has_normals: bool,
    /// Header comments of the source file. Not written back.
    pub comments: Vec<String>,
}

impl Scene {
    pub fn new(splats: Vec<Gaussian>) -> Self {
        Self { splats, sh_degree: 3, has_normals: false, comments: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// New scene holding `indices` in the given order, same layout metadata.
    /// Panics on an out-of-range index.
    pub fn select(&self, indices: &[u32]) -> Scene {
        Scene {
            splats: indices.iter().map(|&i| self.splats[i as usize]).collect(),
            sh_degree: self.sh_degree,
            has_normals: self.has_normals,
            comments: Vec::new(),
        }
    }

    pub fn bits_eq(&self, other: &Scene) -> bool {
        self.count() == other.count()
            && self.splats.iter().zip(&other.splats).all(|(a, b)| a.bits_eq(b))
    }
}

/// Render-time parameters of one splat.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedGaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    /// World-space covariance `R diag(s^2) R^T`.
    pub covariance: Matrix3<f64>,
    /// `sh[k][c]`: coefficient k (0 = DC) of channel c.
    pub sh: [[f64; 3]; 16],
}

pub fn activate(g: &Gaussian) -> Result<ActivatedGaussian, ModelError> {
    check_finite("position", &g.position)?;
    check_finite("log_scale", &g.log_scale)?;
    check_finite("rotation", &g.rotation)?;
    check_finite("opacity_logit", &[g.opacity_logit])?;
    check_finite("sh_dc", &g.sh_dc)?;
    check_finite("sh_rest", &g.sh_rest)?;

    let scale = Vector3::from_iterator(g.log_scale.iter().map(|&s| (s as f64).exp()));
    if !scale.iter().all(|s| s.is_finite()) {
        return Err(ModelError::NonFiniteParameter("log_scale"));
    }
    let rotation = normalize_rotation(g.rotation);
    let r = rotation.to_rotation_matrix().into_inner();
    let covariance = r * Matrix3::from_diagonal(&scale.component_mul(&scale)) * r.transpose();

    let mut sh = [[0.0; 3]; 16];
    for c in 0..3 {
        sh[0][c] = g.sh_dc[c] as f64;
        for k in 0..SH_REST_PER_CHANNEL {
            sh[k + 1][c] = g.sh_rest[c * SH_REST_PER_CHANNEL + k] as f64;
        }
    }

    Ok(ActivatedGaussian {
        position: Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64),
        scale,
        rotation,
        opacity: g.activated_opacity(),
        covariance,
        sh,
    })
}

fn check_finite(field: &'static str, values: &[f32]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteParameter(field))
    }
}

/// Normalizes a stored (w, x, y, z) quaternion; a zero quaternion becomes identity.
pub fn normalize_rotation(q: [f32; 4]) -> UnitQuaternion<f64> {
    let q = Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    let norm = q.norm();
    if norm < 1e-12 || !norm.is_finite() {
        log::warn!("degenerate splat rotation {q:?}, using identity");
        return UnitQuaternion::identity();
    }
    UnitQuaternion::new_unchecked(q / norm)
}

/// View-dependent color: real SH up to degree 3, +0.5 offset, clamped to [0, 1].
pub fn sh_to_rgb(g: &ActivatedGaussian, view_dir: &Vector3<f64>) -> [f64; 3] {
    let (x, y, z) = (view_dir.x, view_dir.y, view_dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let basis = [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += b * g.sh[k][c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}

/// Pinhole camera with a world-to-camera pose. Camera looks down +z, image
/// origin top-left, pixel centers at +0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

impl Camera {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::InvalidCamera("zero image size".into()));
        }
        let intrinsics = [self.fx, self.fy, self.cx, self.cy];
        if !intrinsics.iter().all(|v| v.is_finite()) || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(ModelError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(ModelError::InvalidCamera(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidCamera("non-finite translation".into()));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(err <= 1e-5) {
            return Err(ModelError::InvalidCamera(format!("rotation not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    /// Camera centered at `eye` looking at `target`, `up` roughly pointing
    /// image-up. Principal point at the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: u32,
        height: u32,
        focal: f64,
    ) -> Camera {
        let forward = (target - eye).normalize();
        // image y grows downwards
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: -(rotation * eye),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates of a view-space point with positive depth.
    pub fn view_to_pixel(&self, v: &Vector3<f64>) -> (f64, f64) {
        (self.fx * v.x / v.z + self.cx, self.fy * v.y / v.z + self.cy)
    }

    /// True iff the point lies in front of the near plane and projects into
    /// the image expanded by `margin * width` and `margin * height` on each side.
    pub fn in_frustum(&self, p: &Vector3<f64>, margin: f64) -> bool {
        let v = self.to_view(p);
        if !(v.z > self.near) {
            return false;
        }
        let (u, w) = self.view_to_pixel(&v);
        let (width, height) = (self.width as f64, self.height as f64);
        u >= -margin * width
            && u <= (1.0 + margin) * width
            && w >= -margin * height
            && w <= (1.0 + margin) * height
    }
}
