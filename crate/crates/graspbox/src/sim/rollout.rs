//! Closed-loop episode generation.
//!
//! [`rollout`] wires the pieces together: reset the world, render the
//! three-camera bbox observation, corrupt it through the failure model,
//! ask the agent for an action, integrate, and score the transition with
//! the full reward vector.  The stored episode is exactly what behavior
//! cloning consumes — corrupted observations, proprioception, actions —
//! plus the in-memory reward and state traces for diagnostics.
//!
//! Determinism: the environment draw and the failure draws come from two
//! independent streams derived from the one rollout seed, so an
//! identical `(world, seed, agent)` triple reproduces an episode
//! bit-for-bit regardless of what other rollouts ran before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::episode::{Episode, EpisodeMeta, EpisodeStep, ACTION_DIM};
use super::{derive_seed, reset, step, EnvAction, EnvState, RangeConfig, SimError, SimParams};
use crate::observe::{
    assemble_observation, render_bboxes, CameraRig, FailureModel, ObservationVec, PROPRIO_DIM,
    VIS_DIM,
};
use crate::reward::{reward_terms, RewardConstants, RewardContext};

/// Stream index for the failure-model RNG (the reset RNG uses the seed
/// directly).
const FAILURE_STREAM: u64 = 1;

/// Minimum lift above the initial object height for the success
/// predicate's "picked it up" clause (m).
pub const SUCCESS_LIFT_MIN: f64 = 0.02;

/// Final object-to-goal distance bound for success (m).
pub const SUCCESS_GOAL_RADIUS: f64 = 0.05;

/// Default episode length, matching the trajectory layout downstream
/// analyses index into.
pub const DEFAULT_HORIZON: usize = 70;

/// Anything that can drive an episode.
///
/// Teachers act from privileged state; students must act from the
/// observation alone.  Both receive both arguments — the contract is
/// honor-system at this trait, enforced by what each implementation
/// reads.
pub trait Agent {
    /// Reset internal state (recurrent hidden state, caches) before a
    /// fresh episode.
    fn begin_episode(&mut self);

    /// Choose an action for the current step.
    fn act(&mut self, state: &EnvState, obs: &ObservationVec) -> EnvAction;
}

/// Adapter turning any pure `state → action` function into an [`Agent`].
pub struct StatePolicy<F: FnMut(&EnvState) -> EnvAction>(pub F);

impl<F: FnMut(&EnvState) -> EnvAction> Agent for StatePolicy<F> {
    fn begin_episode(&mut self) {}

    fn act(&mut self, state: &EnvState, _obs: &ObservationVec) -> EnvAction {
        (self.0)(state)
    }
}

/// Everything fixed across one batch of rollouts: the randomization
/// preset plus the world, camera, and reward constants.
#[derive(Debug, Clone)]
pub struct World {
    pub range: RangeConfig,
    pub params: SimParams,
    pub rig: CameraRig,
    pub reward: RewardConstants,
}

impl World {
    /// A world with default constants over the given preset.
    pub fn new(range: RangeConfig) -> Self {
        Self {
            range,
            params: SimParams::default(),
            rig: CameraRig::default(),
            reward: RewardConstants::default(),
        }
    }
}

/// Reward context for the transition `prev --action--> next`.
///
/// Positions and gripper state are evaluated *after* the transition;
/// the action-rate term differences against the previous step's action,
/// and joint velocities are the realized per-step displacements times
/// the control rate.
fn transition_context(
    world: &World,
    prev: &EnvState,
    next: &EnvState,
    action: &EnvAction,
) -> RewardContext {
    let hz = world.params.control_hz;
    let d_ee = next.p_ee - prev.p_ee;
    let joint_vel = vec![
        d_ee.x * hz,
        d_ee.y * hz,
        d_ee.z * hz,
        (next.aperture - prev.aperture) * hz,
    ];
    RewardContext::from_gripper(
        next.p_obj,
        next.z_init,
        next.p_ee,
        next.p_goal,
        next.aperture,
        next.grasped,
        action.to_array().to_vec(),
        prev.last_action.to_array().to_vec(),
        joint_vel,
        world.reward,
    )
}

/// Task success for a completed rollout.
///
/// True iff the object was ever held above `z_init + SUCCESS_LIFT_MIN`
/// while grasped, *and* it ends within `SUCCESS_GOAL_RADIUS` of the
/// goal.  Requires the in-memory state trace; episodes loaded from disk
/// carry their recorded `meta.success` instead.
pub fn is_success(episode: &Episode) -> bool {
    assert!(
        !episode.states.is_empty(),
        "success predicate needs the state trace of a fresh rollout"
    );
    let z_init = episode.states[0].z_init;
    let lifted = episode
        .states
        .iter()
        .any(|s| s.grasped && s.p_obj.z > z_init + SUCCESS_LIFT_MIN);
    let last = episode.states.last().expect("non-empty");
    let at_goal = (last.p_obj - last.p_goal).norm() < SUCCESS_GOAL_RADIUS;
    lifted && at_goal
}

/// Run one full episode.
///
/// Per step: render bboxes for the current state, apply the failure
/// model, let the agent act on (state, observation), integrate, and
/// score the transition.  The returned episode holds `horizon` steps,
/// `horizon` reward vectors, and `horizon + 1` states.
pub fn rollout<A: Agent>(
    world: &World,
    agent: &mut A,
    horizon: usize,
    seed: u64,
    failure: &FailureModel,
) -> Result<Episode, SimError> {
    assert!(horizon >= 1, "rollout needs at least one step");
    let mut state = reset(&world.range, &world.params, seed);
    let mut failure_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, FAILURE_STREAM));
    agent.begin_episode();

    let mut steps = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(state.clone());

    for _ in 0..horizon {
        let bboxes = render_bboxes(&world.rig, &state)?;
        let mut obs = assemble_observation(&state, &bboxes);
        failure.apply(&mut obs.vis, &mut failure_rng);

        let action = agent.act(&state, &obs);
        let next = step(&world.params, &state, &action);
        let terms = reward_terms(&transition_context(world, &state, &next, &action))?;

        steps.push(EpisodeStep {
            obs: obs.vis.to_vec(),
            proprio: obs.proprio.to_vec(),
            action: action.to_array().to_vec(),
        });
        rewards.push(terms.to_array());
        states.push(next.clone());
        state = next;
    }

    let mut episode = Episode {
        meta: EpisodeMeta {
            range: world.range.name.clone(),
            seed,
            success: false,
            horizon,
            obs_dim: VIS_DIM,
            proprio_dim: PROPRIO_DIM,
            action_dim: ACTION_DIM,
        },
        steps,
        rewards,
        states,
    };
    episode.meta.success = is_success(&episode);
    Ok(episode)
}
