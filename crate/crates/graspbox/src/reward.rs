//! The ten-term dense grasp reward suite and its weighted total.
//!
//! Terms are computed verbatim from their defining formulas on a
//! [`RewardContext`] snapshot of the environment: shaped reaching and
//! goal-tracking terms built from `1 − tanh(d/σ)` envelopes, quadratic action
//! and velocity penalties, a gated contact-geometry product, and clamp-based
//! lift bonuses. The weighted total is a plain dot product with
//! [`RewardWeights`] (defaults are the published table values; both the
//! weights and the σ/gate constants are overridable through the experiment
//! config).
//!
//! The simulator has no articulated fingers, so finger world positions are
//! derived from the end-effector pose: left/right at ±aperture/2 along the
//! gripper axis (world x), top/bottom at ±finger_length/2 along the vertical
//! approach axis, with finger_length = 0.11 m (the same constant that
//! normalizes `object_dist` in the contact term). `grasp_force` is a binary
//! proxy — 1 exactly when the simulator's grasp predicate holds.

use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

/// Finger length (m) used to place the top/bottom finger points and to
/// normalize the point-line distance inside the contact term.
pub const FINGER_LENGTH: f64 = 0.11;

/// Number of reward terms.
pub const N_TERMS: usize = 10;

/// Term names in canonical (weight-table) order.
pub const TERM_NAMES: [&str; N_TERMS] = [
    "fingers_open",
    "reaching_object",
    "goal_tracking",
    "goal_tracking_fine",
    "action_rate",
    "joint_vel",
    "contact_forces",
    "close_fingers",
    "lift_ee",
    "lift_object",
];

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("non-finite value in reward context")]
    NonFinite,
}

/// Per-term weights for the weighted total. Defaults are the published table.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub fingers_open: f64,
    pub reaching_object: f64,
    pub goal_tracking: f64,
    pub goal_tracking_fine: f64,
    pub action_rate: f64,
    pub joint_vel: f64,
    pub contact_forces: f64,
    pub close_fingers: f64,
    pub lift_ee: f64,
    pub lift_object: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            fingers_open: 5.0,
            reaching_object: 15.0,
            goal_tracking: 80.0,
            goal_tracking_fine: 70.0,
            action_rate: -1e-4,
            joint_vel: -1e-4,
            contact_forces: 10.0,
            close_fingers: 100.0,
            lift_ee: 20.0,
            lift_object: 100.0,
        }
    }
}

impl RewardWeights {
    pub fn to_array(&self) -> [f64; N_TERMS] {
        [
            self.fingers_open,
            self.reaching_object,
            self.goal_tracking,
            self.goal_tracking_fine,
            self.action_rate,
            self.joint_vel,
            self.contact_forces,
            self.close_fingers,
            self.lift_ee,
            self.lift_object,
        ]
    }
}

/// Scale and gate constants shared by the reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConstants {
    /// σ for the fingers-open distance envelope.
    pub sigma_fingers: f64,
    /// σ for reaching (the fine envelope uses σ/4).
    pub sigma_reach: f64,
    /// σ for coarse goal tracking.
    pub sigma_goal: f64,
    /// σ for fine-grained goal tracking.
    pub sigma_fine: f64,
    /// Minimum height above `z_init` before the lift/goal gates open.
    pub h_min: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self { sigma_fingers: 0.1, sigma_reach: 0.2, sigma_goal: 0.3, sigma_fine: 0.05, h_min: 0.02 }
    }
}

/// World positions of the four finger reference points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerPositions {
    pub top: Vector3<f64>,
    pub bottom: Vector3<f64>,
    pub left: Vector3<f64>,
    pub right: Vector3<f64>,
}

/// Everything the reward terms read, captured at one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardContext {
    pub p_obj: Vector3<f64>,
    /// Object height at episode start; immutable for the whole episode.
    pub z_init: f64,
    pub p_ee: Vector3<f64>,
    pub p_goal: Vector3<f64>,
    /// The two finger joint openings (m); `aperture/2` each in this gripper.
    pub finger_pos: [f64; 2],
    pub fingers: FingerPositions,
    /// 1.0 while the grasp predicate holds, else 0.0.
    pub grasp_force: f64,
    pub action_t: Vec<f64>,
    pub action_prev: Vec<f64>,
    /// Joint velocities (m/s): applied deltas times the control rate.
    pub joint_vel: Vec<f64>,
    /// Left-minus-right finger vector in the object local frame (identity for
    /// spheres, so simply `left − right` in world coordinates).
    pub org_vec: Vector3<f64>,
    pub constants: RewardConstants,
}

impl RewardContext {
    /// Builds a context from the parallel-jaw gripper state: fingers open by
    /// `aperture` along the world-x gripper axis, top/bottom finger points at
    /// ±[`FINGER_LENGTH`]/2 along the vertical approach axis.
    #[allow(clippy::too_many_arguments)]
    pub fn from_gripper(
        p_obj: Vector3<f64>,
        z_init: f64,
        p_ee: Vector3<f64>,
        p_goal: Vector3<f64>,
        aperture: f64,
        grasped: bool,
        action_t: Vec<f64>,
        action_prev: Vec<f64>,
        joint_vel: Vec<f64>,
        constants: RewardConstants,
    ) -> Self {
        let gripper_axis = Vector3::x();
        let up = Vector3::z();
        let left = p_ee - gripper_axis * (aperture / 2.0);
        let right = p_ee + gripper_axis * (aperture / 2.0);
        let fingers = FingerPositions {
            top: p_ee + up * (FINGER_LENGTH / 2.0),
            bottom: p_ee - up * (FINGER_LENGTH / 2.0),
            left,
            right,
        };
        Self {
            p_obj,
            z_init,
            p_ee,
            p_goal,
            finger_pos: [aperture / 2.0, aperture / 2.0],
            fingers,
            grasp_force: if grasped { 1.0 } else { 0.0 },
            action_t,
            action_prev,
            joint_vel,
            org_vec: left - right,
            constants,
        }
    }

    fn is_finite(&self) -> bool {
        let vecs = [self.p_obj, self.p_ee, self.p_goal, self.fingers.top, self.fingers.bottom,
            self.fingers.left, self.fingers.right, self.org_vec];
        vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.z_init.is_finite()
            && self.grasp_force.is_finite()
            && self.finger_pos.iter().all(|x| x.is_finite())
            && self.action_t.iter().all(|x| x.is_finite())
            && self.action_prev.iter().all(|x| x.is_finite())
            && self.joint_vel.iter().all(|x| x.is_finite())
    }
}

/// The ten term values, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardVector {
    pub fingers_open: f64,
    pub reaching_object: f64,
    pub goal_tracking: f64,
    pub goal_tracking_fine: f64,
    pub action_rate: f64,
    pub joint_vel: f64,
    pub contact_forces: f64,
    pub close_fingers: f64,
    pub lift_ee: f64,
    pub lift_object: f64,
}

impl RewardVector {
    pub fn to_array(&self) -> [f64; N_TERMS] {
        [
            self.fingers_open,
            self.reaching_object,
            self.goal_tracking,
            self.goal_tracking_fine,
            self.action_rate,
            self.joint_vel,
            self.contact_forces,
            self.close_fingers,
            self.lift_ee,
            self.lift_object,
        ]
    }

    pub fn from_array(a: [f64; N_TERMS]) -> Self {
        Self {
            fingers_open: a[0],
            reaching_object: a[1],
            goal_tracking: a[2],
            goal_tracking_fine: a[3],
            action_rate: a[4],
            joint_vel: a[5],
            contact_forces: a[6],
            close_fingers: a[7],
            lift_ee: a[8],
            lift_object: a[9],
        }
    }
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi)
}

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// Evaluates all ten reward terms on a context snapshot.
pub fn reward_terms(ctx: &RewardContext) -> Result<RewardVector, RewardError> {
    if !ctx.is_finite() {
        return Err(RewardError::NonFinite);
    }
    let c = &ctx.constants;
    let d_reach = (ctx.p_obj - ctx.p_ee).norm();
    let finger_sum: f64 = ctx.finger_pos.iter().sum();

    let fingers_open = (d_reach / c.sigma_fingers).tanh() * finger_sum;

    let reaching_object = (1.0 - (d_reach / c.sigma_reach).tanh())
        + (1.0 - (d_reach / (c.sigma_reach / 4.0)).tanh());

    let lifted = indicator(ctx.p_obj.z > ctx.z_init + c.h_min);
    let d_goal = (ctx.p_goal - ctx.p_obj).norm();
    let goal_tracking = lifted * (1.0 - (d_goal / c.sigma_goal).tanh());
    let goal_tracking_fine = lifted * (1.0 - (d_goal / c.sigma_fine).tanh());

    assert_eq!(ctx.action_t.len(), ctx.action_prev.len(), "action dims must match");
    let action_rate = -ctx
        .action_t
        .iter()
        .zip(&ctx.action_prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();

    let joint_vel = -ctx.joint_vel.iter().map(|v| v * v).sum::<f64>();

    // Contact geometry: gate on the object sitting between the jaws (interval
    // test on the projection), close to the top finger, with the jaw axis
    // aligned to the object-frame y axis; scale by the point-line distance to
    // the top-bottom finger axis.
    let f = &ctx.fingers;
    let finger_dist = (f.left - f.right).norm();
    let proj_len = (ctx.p_obj - f.left).dot(&(f.right - f.left)) / finger_dist;
    let object_dist =
        (ctx.p_obj - f.bottom).cross(&(f.top - f.bottom)).norm() / FINGER_LENGTH;
    let y_axis = Vector3::y();
    let contact_forces = indicator(
        finger_dist / 4.0 < proj_len && proj_len < finger_dist / 1.25 + 0.2,
    ) * (1.2 - (object_dist / 0.2).tanh())
        * indicator((ctx.p_obj - f.top).norm() < 0.1)
        * (1.0 - ((ctx.org_vec - y_axis).norm() / 0.3).tanh());

    let gripping = indicator(ctx.grasp_force > 0.5);
    let close_fingers = gripping * (1.0 - (finger_sum / 0.1).tanh());

    let lift_ee = clamp(ctx.p_ee.z - 0.6, 0.0, 0.3) / 0.3 * gripping;

    let lift_object =
        lifted * clamp(ctx.p_obj.z - ctx.z_init - c.h_min, 0.0, 0.2) / 0.2;

    Ok(RewardVector {
        fingers_open,
        reaching_object,
        goal_tracking,
        goal_tracking_fine,
        action_rate,
        joint_vel,
        contact_forces,
        close_fingers,
        lift_ee,
        lift_object,
    })
}

/// Weighted total: the dot product of term values and weights.
pub fn total_reward(terms: &RewardVector, weights: &RewardWeights) -> f64 {
    terms
        .to_array()
        .iter()
        .zip(weights.to_array().iter())
        .map(|(t, w)| t * w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx_at(p_obj: Vector3<f64>, p_ee: Vector3<f64>, z_init: f64, grasped: bool) -> RewardContext {
        RewardContext::from_gripper(
            p_obj,
            z_init,
            p_ee,
            Vector3::new(0.0, 0.25, 1.0),
            0.06,
            grasped,
            vec![0.0; 4],
            vec![0.0; 4],
            vec![0.0; 4],
            RewardConstants::default(),
        )
    }

    fn random_ctx(rng: &mut ChaCha8Rng) -> RewardContext {
        let v3 = |rng: &mut ChaCha8Rng| {
            Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..1.2),
            )
        };
        RewardContext::from_gripper(
            v3(rng),
            rng.gen_range(0.6..0.95),
            v3(rng),
            Vector3::new(0.0, 0.25, 1.0),
            rng.gen_range(0.0..0.08),
            rng.gen_bool(0.5),
            (0..4).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            (0..4).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            (0..4).map(|_| rng.gen_range(-0.6..0.6)).collect(),
            RewardConstants::default(),
        )
    }

    #[test]
    fn default_weights_match_the_table() {
        let w = RewardWeights::default();
        assert_eq!(
            w.to_array(),
            [5.0, 15.0, 80.0, 70.0, -1e-4, -1e-4, 10.0, 100.0, 20.0, 100.0]
        );
    }

    #[test]
    fn zero_reach_distance_maxes_reaching() {
        let p = Vector3::new(0.1, 0.4, 0.8);
        let terms = reward_terms(&ctx_at(p, p, 0.8, false)).unwrap();
        assert_eq!(terms.reaching_object, 2.0);
    }

    #[test]
    fn unlifted_object_gates_out_goal_and_lift_terms() {
        let terms = reward_terms(&ctx_at(
            Vector3::new(0.0, 0.45, 0.78),
            Vector3::new(0.0, 0.2, 1.0),
            0.78,
            false,
        ))
        .unwrap();
        assert_eq!(terms.goal_tracking, 0.0);
        assert_eq!(terms.goal_tracking_fine, 0.0);
        assert_eq!(terms.lift_object, 0.0);
    }

    #[test]
    fn goal_tracking_at_sigma_distance_is_one_minus_tanh_one() {
        // Object 0.03 above start (gate open), exactly σ = 0.3 from the goal.
        let goal = Vector3::new(0.0, 0.25, 1.0);
        let p_obj = goal + Vector3::new(0.3, 0.0, 0.0);
        let mut ctx = ctx_at(p_obj, p_obj, p_obj.z - 0.03, true);
        ctx.p_goal = goal;
        let terms = reward_terms(&ctx).unwrap();
        assert_abs_diff_eq!(terms.goal_tracking, 1.0 - 1.0_f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn equal_actions_zero_the_rate_penalty() {
        let mut ctx = ctx_at(Vector3::zeros(), Vector3::new(0.3, 0.0, 0.0), 0.0, false);
        ctx.action_t = vec![0.01, -0.02, 0.005, 0.08];
        ctx.action_prev = ctx.action_t.clone();
        assert_eq!(reward_terms(&ctx).unwrap().action_rate, 0.0);
    }

    #[test]
    fn non_finite_context_is_rejected() {
        let mut ctx = ctx_at(Vector3::zeros(), Vector3::zeros(), 0.0, false);
        ctx.p_obj.x = f64::NAN;
        assert_eq!(reward_terms(&ctx).unwrap_err(), RewardError::NonFinite);
    }

    #[test]
    fn grasp_gate_soundness() {
        // grasp_force = 0 ⇒ close_fingers and lift_ee are exactly 0.
        let terms = reward_terms(&ctx_at(
            Vector3::new(0.0, 0.4, 0.9),
            Vector3::new(0.0, 0.4, 0.9),
            0.7,
            false,
        ))
        .unwrap();
        assert_eq!(terms.close_fingers, 0.0);
        assert_eq!(terms.lift_ee, 0.0);
    }

    #[test]
    fn bounds_hold_over_random_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let ctx = random_ctx(&mut rng);
            let t = reward_terms(&ctx).unwrap();
            assert!(t.reaching_object >= 0.0 && t.reaching_object < 2.0 + 1e-15);
            assert!(t.fingers_open <= ctx.finger_pos.iter().sum::<f64>() + 1e-15);
            assert!(t.goal_tracking >= 0.0 && t.goal_tracking < 1.0);
            assert!(t.goal_tracking_fine >= 0.0 && t.goal_tracking_fine < 1.0);
            assert!(t.action_rate <= 0.0);
            assert!(t.joint_vel <= 0.0);
            assert!((0.0..=1.0).contains(&t.lift_ee));
            assert!((0.0..=1.0).contains(&t.lift_object));
            assert!((0.0..1.2).contains(&t.contact_forces) || t.contact_forces == 0.0);
        }
    }

    #[test]
    fn reaching_strictly_decreases_with_distance() {
        let base = Vector3::new(0.0, 0.4, 0.8);
        let mut last = f64::INFINITY;
        for i in 1..200 {
            let d = i as f64 * 0.005;
            let terms =
                reward_terms(&ctx_at(base, base + Vector3::new(d, 0.0, 0.0), 0.8, false)).unwrap();
            assert!(terms.reaching_object < last);
            last = terms.reaching_object;
        }
    }

    #[test]
    fn lift_object_non_decreasing_above_gate() {
        let mut last = -1.0;
        for i in 0..100 {
            let z = 0.8 + 0.021 + i as f64 * 0.003;
            let terms = reward_terms(&ctx_at(
                Vector3::new(0.0, 0.4, z),
                Vector3::new(0.0, 0.4, z),
                0.8,
                true,
            ))
            .unwrap();
            assert!(terms.lift_object >= last);
            last = terms.lift_object;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn unit_reaching_term_weighs_fifteen() {
        let mut terms = RewardVector::default();
        terms.reaching_object = 1.0;
        assert_eq!(total_reward(&terms, &RewardWeights::default()), 15.0);
        assert_eq!(total_reward(&RewardVector::default(), &RewardWeights::default()), 0.0);
    }

    #[test]
    fn total_matches_brute_force_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut terms = [0.0; N_TERMS];
            let mut weights = RewardWeights::default().to_array();
            for i in 0..N_TERMS {
                terms[i] = rng.gen_range(-2.0..2.0);
                weights[i] = rng.gen_range(-10.0..10.0);
            }
            let tv = RewardVector::from_array(terms);
            let wv = RewardWeights {
                fingers_open: weights[0],
                reaching_object: weights[1],
                goal_tracking: weights[2],
                goal_tracking_fine: weights[3],
                action_rate: weights[4],
                joint_vel: weights[5],
                contact_forces: weights[6],
                close_fingers: weights[7],
                lift_ee: weights[8],
                lift_object: weights[9],
            };
            let expected: f64 = (0..N_TERMS).map(|i| terms[i] * weights[i]).sum();
            assert_abs_diff_eq!(total_reward(&tv, &wv), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn total_is_linear_in_each_term() {
        let w = RewardWeights::default();
        for i in 0..N_TERMS {
            let mut a = [0.0; N_TERMS];
            a[i] = 1.0;
            let unit = total_reward(&RewardVector::from_array(a), &w);
            a[i] = 2.5;
            let scaled = total_reward(&RewardVector::from_array(a), &w);
            assert_abs_diff_eq!(scaled, 2.5 * unit, epsilon = 1e-12);
        }
    }
}
