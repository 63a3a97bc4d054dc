//! Synthetic bbox observations: a three-camera rig, detection-failure
//! models, and observation-vector assembly.
//!
//! No pixels are rendered anywhere in this crate.  A "camera" here is a
//! pinhole model that maps the scene's one sphere directly to the
//! normalized bbox an object detector *would* have produced, via
//! [`crate::geometry::sphere_to_bbox`].  Spheres outside a frustum (or
//! behind a lens) yield the all-zero sentinel, exactly like a detector
//! that missed its target.
//!
//! The rig mimics a bimanual desk setup: one fixed overview camera and
//! two wrist cameras rigidly offset from the end-effector, re-posed at
//! every step.  Detection failures come in two flavors, applied in a
//! fixed order (mask first, then noise):
//!
//! - **Masking** drops a camera's whole bbox with probability
//!   `mask_ratio`, independently per camera per step — a detector that
//!   returns nothing.
//! - **Noise** perturbs each coordinate of surviving bboxes uniformly in
//!   `±noise_ratio` (normalized units) and clamps to `[0, 1]` — a
//!   detector that returns a sloppy box.  Sentinels pass through
//!   untouched: noise never resurrects a masked detection.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    sphere_to_bbox, Camera, CameraExtrinsics, CameraIntrinsics, GeometryError, NormalizedBBox,
};
use crate::sim::EnvState;

/// Cameras on the rig, in the fixed observation order.
pub const N_CAMERAS: usize = 3;

/// Coordinates per bbox.
pub const BBOX_DIM: usize = 4;

/// Visual feature length: `4 · n_cameras · n_objects` with one object.
pub const VIS_DIM: usize = N_CAMERAS * BBOX_DIM;

/// Proprioceptive feature length: end-effector xyz + aperture.
pub const PROPRIO_DIM: usize = 4;

/// Full policy input length.
pub const OBS_DIM: usize = VIS_DIM + PROPRIO_DIM;

/// Errors from rig construction and failure-model validation.
#[derive(Debug, Error)]
pub enum ObserveError {
    #[error("invalid failure model: {0}")]
    InvalidFailureModel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rig constants in config-file form.
///
/// Everything here is an invented, frozen constant: the overview pose is
/// chosen so its frustum covers every spawn preset *and* the whole carry
/// path to the goal (a unit test locks this), and the wrist cameras are
/// short-focal (wide-angle) lenses 5 cm behind the end-effector along the
/// approach axis, split ±5 cm laterally so the pair gives stereo parallax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Overview camera center (m, world frame).
    pub cam_high_eye: [f64; 3],
    /// Point the overview optical axis passes through (m).
    pub cam_high_target: [f64; 3],
    /// Overview focal length (px).
    pub cam_high_focal: f64,
    /// Wrist camera focal length (px); short = wide field of view.
    pub wrist_focal: f64,
    /// Left wrist camera offset from the end-effector (m).
    pub left_wrist_offset: [f64; 3],
    /// Right wrist camera offset from the end-effector (m).
    pub right_wrist_offset: [f64; 3],
    /// Image width (px), shared by all cameras.
    pub width: f64,
    /// Image height (px), shared by all cameras.
    pub height: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cam_high_eye: [0.0, -0.30, 1.30],
            cam_high_target: [0.0, 0.45, 0.80],
            cam_high_focal: 500.0,
            wrist_focal: 220.0,
            left_wrist_offset: [-0.05, 0.0, 0.05],
            right_wrist_offset: [0.05, 0.0, 0.05],
            width: 640.0,
            height: 480.0,
        }
    }
}

/// The resolved three-camera rig.
///
/// `cam_high` is fixed; the wrist cameras are stored as (intrinsics,
/// offset) and get their world pose re-derived from the current
/// end-effector position at every render.  Wrist orientation is
/// straight down with image x along world x.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cam_high: Camera,
    wrist_intrinsics: CameraIntrinsics,
    left_offset: Vector3<f64>,
    right_offset: Vector3<f64>,
}

/// Rotation of a straight-down camera: image x = world x, image y
/// (down) = world −y, optical axis = world −z.  Rows are the camera
/// axes in world coordinates.
fn straight_down_rotation() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
}

impl CameraRig {
    pub fn from_config(cfg: &RigConfig) -> Result<Self, ObserveError> {
        let center_x = cfg.width / 2.0;
        let center_y = cfg.height / 2.0;
        let high_intr = CameraIntrinsics::new(
            cfg.cam_high_focal,
            cfg.cam_high_focal,
            center_x,
            center_y,
            cfg.width,
            cfg.height,
        )?;
        let high_extr = CameraExtrinsics::looking_at(
            Vector3::from(cfg.cam_high_eye),
            Vector3::from(cfg.cam_high_target),
            Vector3::z(),
        );
        let wrist_intrinsics = CameraIntrinsics::new(
            cfg.wrist_focal,
            cfg.wrist_focal,
            center_x,
            center_y,
            cfg.width,
            cfg.height,
        )?;
        Ok(Self {
            cam_high: Camera {
                intrinsics: high_intr,
                extrinsics: high_extr,
            },
            wrist_intrinsics,
            left_offset: Vector3::from(cfg.left_wrist_offset),
            right_offset: Vector3::from(cfg.right_wrist_offset),
        })
    }

    /// The fixed overview camera.
    pub fn cam_high(&self) -> &Camera {
        &self.cam_high
    }

    /// All three cameras posed for the given end-effector position, in
    /// observation order `[high, left_wrist, right_wrist]`.
    pub fn cameras_at(&self, p_ee: &Vector3<f64>) -> [Camera; N_CAMERAS] {
        let down = straight_down_rotation();
        let wrist = |offset: &Vector3<f64>| Camera {
            intrinsics: self.wrist_intrinsics,
            extrinsics: CameraExtrinsics::new(down, p_ee + offset)
                .expect("straight-down pose is a valid rotation"),
        };
        [
            self.cam_high.clone(),
            wrist(&self.left_offset),
            wrist(&self.right_offset),
        ]
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::from_config(&RigConfig::default()).expect("default rig constants are valid")
    }
}

/// Detection-failure model: per-camera mask probability plus bbox
/// coordinate noise amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureModel {
    /// Probability that a camera's bbox is dropped this step, in `[0, 1]`.
    pub mask_ratio: f64,
    /// Half-width of the uniform per-coordinate perturbation, `≥ 0`
    /// (normalized units).
    pub noise_ratio: f64,
}

impl Default for FailureModel {
    fn default() -> Self {
        Self {
            mask_ratio: 0.0,
            noise_ratio: 0.0,
        }
    }
}

impl FailureModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(mask_ratio: f64, noise_ratio: f64) -> Result<Self, ObserveError> {
        let model = Self {
            mask_ratio,
            noise_ratio,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ObserveError> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(ObserveError::InvalidFailureModel(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if !self.noise_ratio.is_finite() || self.noise_ratio < 0.0 {
            return Err(ObserveError::InvalidFailureModel(format!(
                "noise_ratio {} must be finite and ≥ 0",
                self.noise_ratio
            )));
        }
        Ok(())
    }

    /// Apply both failures to a visual feature vector, mask first.
    pub fn apply(&self, vis: &mut [f64; VIS_DIM], rng: &mut ChaCha8Rng) {
        apply_mask(vis, self.mask_ratio, rng);
        apply_noise(vis, self.noise_ratio, rng);
    }
}

/// One step's policy input: concatenated bboxes plus proprioception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationVec {
    /// `[high, left_wrist, right_wrist]` bboxes, four coordinates each;
    /// masked cameras contribute four zeros.  All entries in `[0, 1]`.
    pub vis: [f64; VIS_DIM],
    /// End-effector xyz plus aperture.
    pub proprio: [f64; PROPRIO_DIM],
}

impl ObservationVec {
    /// The four coordinates of camera `cam`'s bbox.
    pub fn bbox(&self, cam: usize) -> [f64; BBOX_DIM] {
        let at = cam * BBOX_DIM;
        [
            self.vis[at],
            self.vis[at + 1],
            self.vis[at + 2],
            self.vis[at + 3],
        ]
    }

    /// Flatten to the policy input layout: vis then proprio.
    pub fn to_input(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..VIS_DIM].copy_from_slice(&self.vis);
        out[VIS_DIM..].copy_from_slice(&self.proprio);
        out
    }
}

/// Project the scene's sphere through all three cameras.
///
/// Wrist poses are derived from the state's current end-effector
/// position.  Invisible spheres (behind a lens, or bbox partly outside
/// the image) come back as sentinels, not errors.
pub fn render_bboxes(
    rig: &CameraRig,
    state: &EnvState,
) -> Result<[NormalizedBBox; N_CAMERAS], GeometryError> {
    let cameras = rig.cameras_at(&state.p_ee);
    let mut out = [NormalizedBBox::sentinel(); N_CAMERAS];
    for (slot, cam) in out.iter_mut().zip(cameras.iter()) {
        *slot = sphere_to_bbox(
            &cam.intrinsics,
            &cam.extrinsics,
            &state.p_obj,
            state.obj_radius,
        )?;
    }
    Ok(out)
}

/// Zero each camera's bbox independently with probability `ratio`.
///
/// One uniform draw per camera, always consumed, so the random stream
/// advances identically for every ratio.
pub fn apply_mask(vis: &mut [f64; VIS_DIM], ratio: f64, rng: &mut ChaCha8Rng) {
    debug_assert!((0.0..=1.0).contains(&ratio));
    for cam in 0..N_CAMERAS {
        let drop = rng.gen::<f64>() < ratio;
        if drop {
            vis[cam * BBOX_DIM..(cam + 1) * BBOX_DIM].fill(0.0);
        }
    }
}

/// Perturb each coordinate of every non-sentinel bbox uniformly in
/// `[−ratio, +ratio]`, clamping to `[0, 1]`.
///
/// Sentinel (all-zero) bboxes are skipped entirely — a masked detection
/// stays masked.
pub fn apply_noise(vis: &mut [f64; VIS_DIM], ratio: f64, rng: &mut ChaCha8Rng) {
    debug_assert!(ratio >= 0.0);
    if ratio == 0.0 {
        return;
    }
    for cam in 0..N_CAMERAS {
        let block = &mut vis[cam * BBOX_DIM..(cam + 1) * BBOX_DIM];
        if block.iter().all(|&v| v == 0.0) {
            continue;
        }
        for coord in block {
            let delta = rng.gen_range(-ratio..ratio);
            *coord = (*coord + delta).clamp(0.0, 1.0);
        }
    }
}

/// Concatenate bboxes (rig order) and proprioception into the policy
/// input.
pub fn assemble_observation(
    state: &EnvState,
    bboxes: &[NormalizedBBox; N_CAMERAS],
) -> ObservationVec {
    let mut vis = [0.0; VIS_DIM];
    for (cam, bbox) in bboxes.iter().enumerate() {
        vis[cam * BBOX_DIM..(cam + 1) * BBOX_DIM].copy_from_slice(&bbox.to_array());
    }
    ObservationVec {
        vis,
        proprio: [state.p_ee.x, state.p_ee.y, state.p_ee.z, state.aperture],
    }
}
