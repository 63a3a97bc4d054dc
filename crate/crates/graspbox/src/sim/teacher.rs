//! Scripted expert controller.
//!
//! A deterministic pick-and-place phase machine standing in for a learned
//! teacher: its rollouts are the demonstration corpus every student is
//! cloned from, so it must succeed essentially always on every
//! randomization preset (the competence tests in [`super::rollout`] hold
//! it to ≥ 95%).
//!
//! The controller is a pure function of the current state — no internal
//! phase latch — so replaying a state always reproduces the action.  The
//! phase is *derived*: (1) translate to a clearance waypoint above the
//! object, (2) descend onto it, (3) close the gripper, (4) lift straight
//! up to a carry altitude, (5) translate to the goal at altitude, and
//! (6) settle onto the goal and hold.  Each phase emits one waypoint and
//! the action is a proportional step toward it, pre-clamped to the
//! actuator limit.

use nalgebra::Vector3;

use super::{EnvAction, EnvState, SimParams};
use crate::sim::rollout::Agent;
use crate::observe::ObservationVec;

/// Clearance above the object center for the approach waypoint (m).
pub const APPROACH_CLEARANCE: f64 = 0.08;

/// Carry altitude above the initial object height (m).  High enough that
/// every lift clears the success threshold with margin; low enough to
/// leave step budget for the traverse.
pub const LIFT_HEIGHT: f64 = 0.15;

/// Horizontal alignment tolerance (m) for switching from translate to
/// descend, and from traverse to settle.  Proportional steps converge
/// exactly, so this only needs to absorb rounding.
const ALIGN_TOL: f64 = 0.002;

/// Vertical tolerance (m) for "descent finished, start closing".
const DESCEND_TOL: f64 = 0.002;

/// Horizontal distance between two points, ignoring z.
fn horiz_dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// One proportional, clamped step toward `target`.
fn step_toward(params: &SimParams, from: &Vector3<f64>, target: &Vector3<f64>) -> Vector3<f64> {
    let c = params.step_clamp;
    Vector3::new(
        (target.x - from.x).clamp(-c, c),
        (target.y - from.y).clamp(-c, c),
        (target.z - from.z).clamp(-c, c),
    )
}

/// Expert action for the given state.
///
/// Requires `‖grasp_offset‖ < grasp_radius`; otherwise the descend phase
/// parks the end-effector where the grasp predicate can never fire.
pub fn scripted_teacher(params: &SimParams, state: &EnvState) -> EnvAction {
    let open = params.aperture_max;
    let offset = params.offset();

    let (target, aperture_cmd) = if !state.grasped {
        // Where the end-effector must sit for the grasp to attach with
        // the configured offset.
        let grip_point = state.p_obj - offset;
        if horiz_dist(&state.p_ee, &grip_point) > ALIGN_TOL {
            // (1) travel to the clearance waypoint, gripper open.
            (grip_point + Vector3::new(0.0, 0.0, APPROACH_CLEARANCE), open)
        } else if state.p_ee.z - grip_point.z > DESCEND_TOL {
            // (2) straight down onto the object, still open.
            (grip_point, open)
        } else {
            // (3) hold position, close until the predicate fires.
            (grip_point, 0.0)
        }
    } else {
        let lift_z = state.z_init + LIFT_HEIGHT;
        let to_goal = horiz_dist(&state.p_ee, &state.p_goal);
        if to_goal > ALIGN_TOL && state.p_ee.z < lift_z - 1e-9 {
            // (4) vertical lift to carry altitude, gripper closed.
            (
                Vector3::new(state.p_ee.x, state.p_ee.y, lift_z),
                0.0,
            )
        } else if to_goal > ALIGN_TOL {
            // (5) traverse at altitude; never below the carry height or
            // the goal height, whichever is higher.
            (
                Vector3::new(state.p_goal.x, state.p_goal.y, lift_z.max(state.p_goal.z)),
                0.0,
            )
        } else {
            // (6) settle onto the goal and hold.
            (state.p_goal, 0.0)
        }
    };

    EnvAction {
        delta_ee: step_toward(params, &state.p_ee, &target),
        aperture_cmd,
    }
}

/// [`Agent`] wrapper around [`scripted_teacher`]: acts from privileged
/// state and ignores the camera observation entirely.
#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    params: SimParams,
}

impl ScriptedTeacher {
    pub fn new(params: SimParams) -> Self {
        Self { params }
    }
}

impl Agent for ScriptedTeacher {
    fn begin_episode(&mut self) {}

    fn act(&mut self, state: &EnvState, _obs: &ObservationVec) -> EnvAction {
        scripted_teacher(&self.params, state)
    }
}
