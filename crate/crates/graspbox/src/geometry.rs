//! Pinhole cameras, sphere-to-bbox rendering, and two-view sphere triangulation.
//!
//! The object of interest is a sphere, so its image under a pinhole camera is
//! modeled as a circle of half-side `s = r·f̄/Z` pixels around the projected
//! center, where `f̄ = (fx+fy)/2` and `Z` is the distance from the camera
//! center to the sphere center. Because the forward model uses this circle
//! approximation (rather than the true elliptical silhouette), the two-view
//! inverse is *exact*: back-project the bbox centers into rays, solve a
//! 2-unknown least-squares problem for the depths along each ray, average the
//! two center estimates, and recover the radius from `r = s·Z/f̄`.
//!
//! Conventions, used consistently everywhere:
//!
//! - Extrinsics store the rotation `R` and the camera center `t` in world
//!   coordinates. A world point `P` has camera coordinates `R·(P − t)`, and a
//!   camera point `p` maps back to the world as `Rᵀ·p + t`.
//! - Camera `z` looks forward, `x` right, `y` down (pixel `v` grows downward).
//! - Bounding boxes are normalized to `[0,1]` by image width/height, and the
//!   all-zero bbox is the *mask sentinel* meaning "no detection".

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

/// Minimum allowed `‖a₁ × a₂‖ / (‖a₁‖‖a₂‖)` (the sine of the angle between
/// the two viewing rays) before triangulation is declared degenerate.
/// Well above f64 rounding noise, well below any meaningful stereo baseline.
pub const DEGENERACY_SIN_MIN: f64 = 1e-8;

/// Elementwise tolerance for the `RᵀR = I` and `det R = +1` checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// Errors from camera construction and triangulation.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("invalid bbox: corners must be in [0,1] with min < max, or all zero")]
    InvalidBBox,
    #[error("bbox is the mask sentinel (no detection)")]
    MaskedBBox,
    #[error("viewing rays are colinear; cannot triangulate")]
    DegenerateConfiguration,
    #[error("least-squares depth is non-positive (sphere behind a camera)")]
    BehindCamera,
    #[error("camera file: {0}")]
    CameraFile(String),
}

fn ensure_finite(values: impl IntoIterator<Item = f64>) -> Result<(), GeometryError> {
    for v in values {
        if !v.is_finite() {
            return Err(GeometryError::NonFinite);
        }
    }
    Ok(())
}

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]` plus the
/// image size used for bbox normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        ensure_finite([fx, fy, cx, cy, width, height])?;
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be positive"));
        }
        if !(0.0..=width).contains(&cx) || !(0.0..=height).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside image"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Effective focal length `f̄ = (fx + fy)/2` used by the circle model.
    pub fn f_bar(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// `K⁻¹·[u, v, 1]ᵀ` for a pixel `(u, v)`: the camera-frame viewing ray
    /// with unit z-component (deliberately not normalized).
    pub fn unproject(&self, u_px: f64, v_px: f64) -> Vector3<f64> {
        Vector3::new((u_px - self.cx) / self.fx, (v_px - self.cy) / self.fy, 1.0)
    }
}

/// Camera pose: rotation `R` and camera center `t` (world frame, meters).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
}

impl CameraExtrinsics {
    /// Validates `RᵀR = I` (elementwise within [`ROTATION_TOL`]) and
    /// `det R = +1` before accepting the pose.
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Result<Self, GeometryError> {
        ensure_finite(rotation.iter().copied().chain(position.iter().copied()))?;
        let gram = rotation.transpose() * rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation, position })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), position: Vector3::zeros() }
    }

    /// Pose at `eye` with the optical axis through `target`. The image x-axis
    /// is horizontal with respect to `up` (world up; if the optical axis is
    /// parallel to `up`, the world x-axis is used as the reference instead).
    pub fn looking_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        Self { rotation, position: eye }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }
}

/// Intrinsics + extrinsics bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

/// World point → camera coordinates: `R·(P − t)`.
pub fn world_to_camera(extrinsics: &CameraExtrinsics, point: &Vector3<f64>) -> Vector3<f64> {
    extrinsics.rotation * (point - extrinsics.position)
}

/// Camera point → world coordinates: `Rᵀ·p + t` (inverse of [`world_to_camera`]).
pub fn camera_to_world(extrinsics: &CameraExtrinsics, point: &Vector3<f64>) -> Vector3<f64> {
    extrinsics.rotation.transpose() * point + extrinsics.position
}

/// Axis-aligned bounding box in normalized image coordinates.
///
/// The all-zero value is the *mask sentinel* ("no detection"); every other
/// value has corners in `[0,1]` with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBBox {
    u_min: f64,
    v_min: f64,
    u_max: f64,
    v_max: f64,
}

impl NormalizedBBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        ensure_finite([u_min, v_min, u_max, v_max])?;
        let bbox = Self { u_min, v_min, u_max, v_max };
        if bbox.is_sentinel() {
            return Ok(bbox);
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if in_unit(u_min) && in_unit(v_min) && in_unit(u_max) && in_unit(v_max)
            && u_min < u_max
            && v_min < v_max
        {
            Ok(bbox)
        } else {
            Err(GeometryError::InvalidBBox)
        }
    }

    /// The all-zero "no detection" value.
    pub fn sentinel() -> Self {
        Self { u_min: 0.0, v_min: 0.0, u_max: 0.0, v_max: 0.0 }
    }

    pub fn is_sentinel(&self) -> bool {
        self.u_min == 0.0 && self.v_min == 0.0 && self.u_max == 0.0 && self.v_max == 0.0
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// `[u_min, v_min, u_max, v_max]`, the order used inside observation vectors.
    pub fn to_array(&self) -> [f64; 4] {
        [self.u_min, self.v_min, self.u_max, self.v_max]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Bbox center in pixels `(u_c, v_c)`.
    pub fn center_px(&self, intr: &CameraIntrinsics) -> (f64, f64) {
        (
            intr.width * 0.5 * (self.u_min + self.u_max),
            intr.height * 0.5 * (self.v_min + self.v_max),
        )
    }

    /// Projected sphere radius in pixels, `s = (w + h)/4` with `w`, `h` the
    /// bbox side lengths in pixels.
    pub fn mean_half_side_px(&self, intr: &CameraIntrinsics) -> f64 {
        let w = (self.u_max - self.u_min) * intr.width;
        let h = (self.v_max - self.v_min) * intr.height;
        0.25 * (w + h)
    }
}

/// Renders the bbox of a sphere under the circle approximation.
///
/// The center projects to pixel `(fx·x/z + cx, fy·y/z + cy)` and the bbox is
/// the square of half-side `s = r·f̄/Z` pixels around it, where `Z` is the
/// distance from the camera center to the sphere center (the depth along the
/// unnormalized viewing ray, matching the triangulation inverse exactly).
/// Returns the mask sentinel if the sphere center is at or behind the image
/// plane margin (`z ≤ radius`) or if the bbox leaves the image bounds —
/// partially visible spheres are treated as undetected.
pub fn sphere_to_bbox(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    center: &Vector3<f64>,
    radius: f64,
) -> Result<NormalizedBBox, GeometryError> {
    ensure_finite(center.iter().copied().chain([radius]))?;
    assert!(radius > 0.0, "sphere radius must be positive");
    let p = world_to_camera(extrinsics, center);
    if p.z <= radius {
        return Ok(NormalizedBBox::sentinel());
    }
    let u_c = intrinsics.fx * p.x / p.z + intrinsics.cx;
    let v_c = intrinsics.fy * p.y / p.z + intrinsics.cy;
    let s = radius * intrinsics.f_bar() / p.norm();
    let (u_lo, u_hi) = (u_c - s, u_c + s);
    let (v_lo, v_hi) = (v_c - s, v_c + s);
    if u_lo < 0.0 || v_lo < 0.0 || u_hi > intrinsics.width || v_hi > intrinsics.height {
        return Ok(NormalizedBBox::sentinel());
    }
    NormalizedBBox::new(
        u_lo / intrinsics.width,
        v_lo / intrinsics.height,
        u_hi / intrinsics.width,
        v_hi / intrinsics.height,
    )
}

/// Back-projects the bbox center into a world-frame ray.
///
/// Returns `(origin, direction)` with `origin = t` and
/// `direction = Rᵀ·K⁻¹·[u_c_px, v_c_px, 1]ᵀ`. The direction is deliberately
/// *not* normalized: the triangulation depth λ multiplies this raw vector, so
/// the Euclidean depth is `Z = λ·‖direction‖`.
pub fn bbox_center_ray(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    bbox: &NormalizedBBox,
) -> Result<(Vector3<f64>, Vector3<f64>), GeometryError> {
    if bbox.is_sentinel() {
        return Err(GeometryError::MaskedBBox);
    }
    let (u_px, v_px) = bbox.center_px(intrinsics);
    let d = intrinsics.unproject(u_px, v_px);
    Ok((*extrinsics.position(), extrinsics.rotation().transpose() * d))
}

/// Result of two-view sphere triangulation.
///
/// `lambdas` are the least-squares depths along each camera's (unnormalized)
/// viewing ray; `depths` are the Euclidean distances `Z_i = λ_i·‖d_i‖`. The
/// per-camera center and radius estimates are exposed alongside their average
/// because the averaging step is a robustness choice, not a mathematical
/// necessity.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereEstimate {
    /// Averaged sphere center (world frame, meters).
    pub center: Vector3<f64>,
    /// Averaged sphere radius (meters).
    pub radius: f64,
    /// Depths (λ1, λ2) along the two unnormalized rays.
    pub lambdas: (f64, f64),
    /// Euclidean camera-to-center distances `Z_i = λ_i·‖d_i‖`.
    pub depths: (f64, f64),
    /// Center estimate from each camera's ray alone.
    pub camera_centers: [Vector3<f64>; 2],
    /// Radius estimate from each camera alone, `r_i = s_i·Z_i/f̄_i`.
    pub camera_radii: [f64; 2],
    /// `‖Aλ − b‖`, the gap between the two per-camera center estimates.
    pub residual: f64,
}

/// Triangulates sphere center and radius from two bboxes.
///
/// Builds the world-frame rays `a_i = R_iᵀ·d_i`, the 3×2 system
/// `A = [a₁, −a₂]`, `b = t₂ − t₁`, and solves the normal equations
/// `AᵀA·λ = Aᵀb` for the depths. Each camera then yields a center estimate
/// `C_i = t_i + λ_i·a_i` and a radius estimate `r_i = s_i·Z_i/f̄_i`; the
/// returned center and radius are the averages of the two.
pub fn triangulate_sphere(
    cam1: (&CameraIntrinsics, &CameraExtrinsics),
    bbox1: &NormalizedBBox,
    cam2: (&CameraIntrinsics, &CameraExtrinsics),
    bbox2: &NormalizedBBox,
) -> Result<SphereEstimate, GeometryError> {
    let (t1, a1) = bbox_center_ray(cam1.0, cam1.1, bbox1)?;
    let (t2, a2) = bbox_center_ray(cam2.0, cam2.1, bbox2)?;

    let sin_angle = a1.cross(&a2).norm() / (a1.norm() * a2.norm());
    if sin_angle < DEGENERACY_SIN_MIN {
        return Err(GeometryError::DegenerateConfiguration);
    }

    // Normal equations for A = [a1, -a2], b = t2 - t1. AᵀA is 2×2 and
    // invertible whenever the rays are non-colinear (det = ‖a1×a2‖²).
    let b = t2 - t1;
    let ata = Matrix2::new(
        a1.dot(&a1),
        -a1.dot(&a2),
        -a1.dot(&a2),
        a2.dot(&a2),
    );
    let atb = Vector2::new(a1.dot(&b), -a2.dot(&b));
    let det = ata[(0, 0)] * ata[(1, 1)] - ata[(0, 1)] * ata[(1, 0)];
    let lambda1 = (ata[(1, 1)] * atb[0] - ata[(0, 1)] * atb[1]) / det;
    let lambda2 = (ata[(0, 0)] * atb[1] - ata[(1, 0)] * atb[0]) / det;
    if lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(GeometryError::BehindCamera);
    }

    let c1 = t1 + lambda1 * a1;
    let c2 = t2 + lambda2 * a2;
    let residual = (lambda1 * a1 - lambda2 * a2 - b).norm();

    let z1 = lambda1 * a1.norm();
    let z2 = lambda2 * a2.norm();
    let r1 = bbox1.mean_half_side_px(cam1.0) * z1 / cam1.0.f_bar();
    let r2 = bbox2.mean_half_side_px(cam2.0) * z2 / cam2.0.f_bar();

    Ok(SphereEstimate {
        center: 0.5 * (c1 + c2),
        radius: 0.5 * (r1 + r2),
        lambdas: (lambda1, lambda2),
        depths: (z1, z2),
        camera_centers: [c1, c2],
        camera_radii: [r1, r2],
        residual,
    })
}

#[derive(Debug, Deserialize)]
struct CameraRecord {
    #[serde(default)]
    name: Option<String>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
    rotation: [f64; 9],
    position: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct CameraFileDoc {
    #[serde(rename = "camera")]
    cameras: Vec<CameraRecord>,
}

/// Loads cameras from a TOML file with one `[[camera]]` table per camera:
///
/// ```toml
/// [[camera]]
/// name = "cam_high"          # optional label
/// fx = 600.0
/// fy = 600.0
/// cx = 320.0
/// cy = 240.0
/// width = 640.0
/// height = 480.0
/// rotation = [1.0, 0.0, 0.0,  0.0, 1.0, 0.0,  0.0, 0.0, 1.0]  # row-major R
/// position = [0.0, 0.0, 0.0]                                  # camera center t
/// ```
///
/// Returns `(label, camera)` pairs in file order; unnamed cameras are labeled
/// by their index.
pub fn load_cameras(path: &Path) -> Result<Vec<(String, Camera)>, GeometryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::CameraFile(format!("{}: {e}", path.display())))?;
    let doc: CameraFileDoc =
        toml::from_str(&text).map_err(|e| GeometryError::CameraFile(e.to_string()))?;
    let mut cameras = Vec::with_capacity(doc.cameras.len());
    for (idx, rec) in doc.cameras.into_iter().enumerate() {
        let intrinsics =
            CameraIntrinsics::new(rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height)?;
        let rotation = Matrix3::from_row_slice(&rec.rotation);
        let extrinsics =
            CameraExtrinsics::new(rotation, Vector3::from_column_slice(&rec.position))?;
        let name = rec.name.unwrap_or_else(|| format!("camera{idx}"));
        cameras.push((name, Camera { intrinsics, extrinsics }));
    }
    Ok(cameras)
}
