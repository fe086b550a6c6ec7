//! Fixed-base arm simulation: one 4-DoF arm (rotation-vector shoulder plus elbow hinge) on
//! the standard torso, PD-actuated with decoupled per-joint dynamics.
//!
//! Each episode has a target and optionally a reference motion indexed by the phase clock.
//! Reference clips recorded with the other hand are mirrored onto the simulated arm.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{standard_skeleton, ArmAngles, ArmModel, ARM_DOF};
use crate::geom::{GeomError, Hand, Skeleton, Vec3};
use crate::mocap::{BodyFrame, Clip, Octant};
use crate::reward::{self, ArmFrame, ImitationTerms, MotionState, RewardConfig, RewardError};
use crate::synth::{self, OctantWeights};

/// q(4), q̇(4), φ, target(3), hand(3), elbow(3).
pub const OBS_DIM: usize = 2 * ARM_DOF + 1 + 9;
/// Position of the phase variable in the observation.
pub const PHASE_INDEX: usize = 2 * ARM_DOF;
pub const ACTION_DIM: usize = ARM_DOF;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("target {0} is outside the pointing shell")]
    TargetOutOfRange(Vec3),
    #[error("step called on a finished episode")]
    SteppedAfterDone,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("reference clip {0} does not exist")]
    NoReference(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("trajectory log: {0}")]
    Log(String),
}

/// Where episode targets come from when `reset` is not given one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSampler {
    Octants {
        weights: OctantWeights,
        /// Allow targets behind the chest plane.
        #[serde(default)]
        allow_back: bool,
    },
    List {
        targets: Vec<Vec3>,
    },
}

impl Default for TargetSampler {
    fn default() -> Self {
        TargetSampler::Octants { weights: OctantWeights::default(), allow_back: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Simulated arm.
    pub hand: Hand,
    /// Control rate (Hz).
    pub control_rate: f64,
    pub substeps: usize,
    /// Limb masses (kg) for the cylinder inertia approximation.
    pub upper_arm_mass: f64,
    pub forearm_mass: f64,
    /// Proportional gain as a multiple of the joint inertia (1/s²), used when `kp` is unset.
    pub kp_scale: f64,
    pub kp: Option<[f64; ARM_DOF]>,
    /// Defaults to critical damping `2√(kp·I)`.
    pub kd: Option<[f64; ARM_DOF]>,
    pub joint_lower: [f64; ARM_DOF],
    pub joint_upper: [f64; ARM_DOF],
    /// N·m.
    pub torque_limits: [f64; ARM_DOF],
    pub targets: TargetSampler,
    pub reward: RewardConfig,
    /// Maximum steps per episode.
    pub horizon: usize,
    /// Episode length (s) when no reference motion is attached.
    pub episode_duration: f64,
    /// Start episodes at a random phase of the reference, in the reference state.
    pub reference_state_init: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        EnvConfig {
            hand: Hand::Right,
            control_rate: 30.0,
            substeps: 4,
            upper_arm_mass: 2.0,
            forearm_mass: 1.5,
            kp_scale: 60.0,
            kp: None,
            kd: None,
            joint_lower: [-pi, -pi, -pi, 0.0],
            joint_upper: [pi, pi, pi, 2.6],
            torque_limits: [40.0, 40.0, 40.0, 10.0],
            targets: TargetSampler::default(),
            reward: RewardConfig::default(),
            horizon: 600,
            episode_duration: 2.0,
            reference_state_init: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.into()));
        if !(self.control_rate.is_finite() && self.control_rate > 0.0) {
            return bad("control_rate must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.episode_duration.is_finite() && self.episode_duration > 0.0) {
            return bad("episode_duration must be positive");
        }
        if !(self.upper_arm_mass > 0.0 && self.forearm_mass > 0.0) {
            return bad("limb masses must be positive");
        }
        let (kp, kd) = self.gains(&self.inertia(0.3, 0.27));
        if kp.iter().chain(&kd).any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("kp and kd must be positive");
        }
        for j in 0..ARM_DOF {
            if !(self.joint_lower[j] <= self.joint_upper[j]) {
                return bad("joint_lower must not exceed joint_upper");
            }
            if !(self.torque_limits[j] >= 0.0) {
                return bad("torque limits must be non-negative");
            }
        }
        match &self.targets {
            TargetSampler::List { targets } if targets.is_empty() => return bad("target list is empty"),
            TargetSampler::Octants { weights, allow_back } => {
                self.effective_weights(weights, *allow_back).validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))?
            }
            _ => {}
        }
        self.reward.validate()?;
        Ok(())
    }

    fn effective_weights(&self, weights: &OctantWeights, allow_back: bool) -> OctantWeights {
        let mut w = weights.0;
        if !allow_back {
            for (i, o) in Octant::ALL.iter().enumerate() {
                if !o.front {
                    w[i] = 0.0;
                }
            }
        }
        OctantWeights(w)
    }

    /// Per-joint inertia: the three shoulder axes carry both segments as rods, the elbow
    /// carries the forearm.
    fn inertia(&self, upper: f64, fore: f64) -> [f64; ARM_DOF] {
        let mu = self.upper_arm_mass;
        let mf = self.forearm_mass;
        let shoulder = mu * upper * upper / 3.0 + mf * (upper * upper + upper * fore + fore * fore / 3.0);
        let elbow = mf * fore * fore / 3.0;
        [shoulder, shoulder, shoulder, elbow]
    }

    fn gains(&self, inertia: &[f64; ARM_DOF]) -> ([f64; ARM_DOF], [f64; ARM_DOF]) {
        let kp = self.kp.unwrap_or(inertia.map(|i| self.kp_scale * i));
        let kd = self.kd.unwrap_or(std::array::from_fn(|j| 2.0 * (kp[j] * inertia[j]).sqrt()));
        (kp, kd)
    }
}

/// Reference arm motion resampled for the simulated arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMotion {
    pub id: String,
    pub fps: f64,
    pub angles: Vec<[f64; ARM_DOF]>,
    /// Forward-difference joint velocities (last frame repeats the previous one).
    pub velocities: Vec<[f64; ARM_DOF]>,
    /// Pointing target, mirrored with the motion when needed.
    pub target: Vec3,
}

impl ReferenceMotion {
    /// Extracts the annotated hand's arm motion from `clip` (frames `[0, end)` when `end`
    /// is given) and maps it onto the `onto` arm.
    pub fn from_clip(clip: &Clip, onto: Hand, end: Option<usize>) -> Result<ReferenceMotion, EnvError> {
        let ann = clip.annotations.first();
        let hand = ann.map(|a| a.hand).unwrap_or(onto);
        let rest = synth::rest_pose(&clip.skeleton);
        let arm = ArmModel::new(&clip.skeleton, &rest, hand)?;
        let end = end.unwrap_or(clip.frames.len()).clamp(2, clip.frames.len());
        let mirror = hand != onto;
        let angles: Vec<[f64; ARM_DOF]> = clip.frames[..end]
            .iter()
            .map(|p| {
                let q = arm.extract(p);
                if mirror { q.mirrored() } else { q }.to_array()
            })
            .collect();
        let mut velocities: Vec<[f64; ARM_DOF]> = angles
            .windows(2)
            .map(|w| std::array::from_fn(|j| (w[1][j] - w[0][j]) * clip.fps))
            .collect();
        velocities.push(*velocities.last().expect("at least two frames"));
        let target_idx = ann.map(|a| a.target).unwrap_or(0);
        let mut target = clip
            .targets
            .get(target_idx)
            .ok_or_else(|| EnvError::InvalidConfig(format!("clip {} has no target {target_idx}", clip.id)))?
            .position;
        if mirror {
            let body = BodyFrame::from_clip(clip);
            target = Vec3::new(2.0 * body.origin.x - target.x, target.y, target.z);
        }
        Ok(ReferenceMotion { id: clip.id.clone(), fps: clip.fps, angles, velocities, target })
    }

    pub fn duration(&self) -> f64 {
        (self.angles.len() - 1) as f64 / self.fps
    }

    /// Linearly interpolated angles and velocities at phase `phase ∈ [0, 1]`.
    pub fn sample(&self, phase: f64) -> ([f64; ARM_DOF], [f64; ARM_DOF]) {
        let x = phase.clamp(0.0, 1.0) * (self.angles.len() - 1) as f64;
        let k = (x.floor() as usize).min(self.angles.len() - 2);
        let t = x - k as f64;
        let lerp = |a: &[f64; ARM_DOF], b: &[f64; ARM_DOF]| std::array::from_fn(|j| a[j] * (1.0 - t) + b[j] * t);
        (lerp(&self.angles[k], &self.angles[k + 1]), lerp(&self.velocities[k], &self.velocities[k + 1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: [f64; ARM_DOF],
    pub qd: [f64; ARM_DOF],
    pub phase: f64,
    pub target: Vec3,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub r_imitation: f64,
    pub r_goal: f64,
    /// Pointing precision θ̂ of the new state.
    pub precision: f64,
    pub terms: Option<ImitationTerms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub observation: Vec<f64>,
    pub reward: RewardBreakdown,
    pub done: bool,
}

pub struct PointingEnv {
    config: EnvConfig,
    arm: ArmModel,
    body: BodyFrame,
    inertia: [f64; ARM_DOF],
    kp: [f64; ARM_DOF],
    kd: [f64; ARM_DOF],
    references: Vec<ReferenceMotion>,
    state: EnvState,
    reference: Option<usize>,
    episode_steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl PointingEnv {
    pub fn new(config: EnvConfig, references: Vec<ReferenceMotion>) -> Result<PointingEnv, EnvError> {
        config.validate()?;
        let skel = standard_skeleton();
        let arm = ArmModel::new(&skel, &synth::rest_pose(&skel), config.hand)?;
        let body = synth::body_frame(&skel);
        let inertia = config.inertia(arm.upper_len, arm.fore_len);
        let (kp, kd) = config.gains(&inertia);
        let state = EnvState { q: [0.0; ARM_DOF], qd: [0.0; ARM_DOF], phase: 0.0, target: Vec3::ZERO, steps: 0 };
        Ok(PointingEnv {
            config,
            arm,
            body,
            inertia,
            kp,
            kd,
            references,
            state,
            reference: None,
            episode_steps: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn arm(&self) -> &ArmModel {
        &self.arm
    }

    pub fn skeleton() -> Skeleton {
        standard_skeleton()
    }

    pub fn body(&self) -> &BodyFrame {
        &self.body
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn references(&self) -> &[ReferenceMotion] {
        &self.references
    }

    pub fn active_reference(&self) -> Option<usize> {
        self.reference
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn inertia(&self) -> [f64; ARM_DOF] {
        self.inertia
    }

    pub fn gains(&self) -> ([f64; ARM_DOF], [f64; ARM_DOF]) {
        (self.kp, self.kd)
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.config.control_rate
    }

    /// Episode length in control steps for the given reference (or the task clock).
    pub fn episode_length(&self, reference: Option<usize>) -> usize {
        let duration = reference
            .and_then(|r| self.references.get(r))
            .map_or(self.config.episode_duration, |r| r.duration());
        let n = (duration * self.config.control_rate - 1e-9).ceil().max(1.0) as usize;
        n.min(self.config.horizon)
    }

    pub fn target_in_range(&self, target: Vec3) -> bool {
        let (near, far) = synth::pointing_shell(&self.arm);
        let d = target.distance(self.arm.shoulder);
        target.is_finite() && (near..=far).contains(&d)
    }

    /// Samples a target from the configured sampler.
    pub fn sample_target<R: Rng>(&self, rng: &mut R) -> Result<Vec3, EnvError> {
        match &self.config.targets {
            TargetSampler::List { targets } => Ok(targets[rng.random_range(0..targets.len())]),
            TargetSampler::Octants { weights, allow_back } => {
                let w = self.config.effective_weights(weights, *allow_back).0;
                let total: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut cell = Octant::ALL[0];
                for (o, wi) in Octant::ALL.iter().zip(w) {
                    cell = *o;
                    if wi > 0.0 && u < wi {
                        break;
                    }
                    u -= wi;
                }
                Ok(synth::sample_shell_target(rng, &self.arm, &self.body, cell, 0.0)?)
            }
        }
    }

    /// Starts an episode. Without an explicit target the reference's target is used, or
    /// one is sampled. Without an explicit reference one is drawn uniformly when any exist.
    pub fn reset(&mut self, target: Option<Vec3>, reference: Option<usize>, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = match reference {
            Some(r) if r >= self.references.len() => return Err(EnvError::NoReference(r)),
            Some(r) => Some(r),
            None if self.references.is_empty() => None,
            None => Some(self.rng.random_range(0..self.references.len())),
        };
        let target = match (target, reference) {
            (Some(t), _) => t,
            (None, Some(r)) => self.references[r].target,
            (None, None) => {
                let mut rng = self.rng.clone();
                let t = self.sample_target(&mut rng)?;
                self.rng = rng;
                t
            }
        };
        if !self.target_in_range(target) {
            return Err(EnvError::TargetOutOfRange(target));
        }
        let n = self.episode_length(reference);
        let mut state = EnvState { q: [0.0; ARM_DOF], qd: [0.0; ARM_DOF], phase: 0.0, target, steps: 0 };
        if let (true, Some(r)) = (self.config.reference_state_init, reference) {
            if n > 1 {
                let k = self.rng.random_range(0..n - 1);
                state.steps = k;
                state.phase = k as f64 / n as f64;
                let (q, qd) = self.references[r].sample(state.phase);
                state.q = self.clamp_angles(q);
                state.qd = qd;
            }
        }
        self.state = state;
        self.reference = reference;
        self.episode_steps = n;
        self.done = false;
        Ok(self.observation())
    }

    fn clamp_angles(&self, q: [f64; ARM_DOF]) -> [f64; ARM_DOF] {
        std::array::from_fn(|j| q[j].clamp(self.config.joint_lower[j], self.config.joint_upper[j]))
    }

    /// Advances one control step with PD target angles `action`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutput, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        if action.len() != ACTION_DIM {
            return Err(EnvError::DimensionMismatch { expected: ACTION_DIM, got: action.len() });
        }
        let a: [f64; ARM_DOF] =
            self.clamp_angles(std::array::from_fn(|j| if action[j].is_finite() { action[j] } else { self.state.q[j] }));
        let dt = self.control_period() / self.config.substeps as f64;
        let EnvState { mut q, mut qd, .. } = self.state;
        for _ in 0..self.config.substeps {
            for j in 0..ARM_DOF {
                let lim = self.config.torque_limits[j];
                let tau = (self.kp[j] * (a[j] - q[j]) - self.kd[j] * qd[j]).clamp(-lim, lim);
                qd[j] += tau / self.inertia[j] * dt;
                q[j] += qd[j] * dt;
                let (lo, hi) = (self.config.joint_lower[j], self.config.joint_upper[j]);
                if q[j] < lo || q[j] > hi {
                    q[j] = q[j].clamp(lo, hi);
                    qd[j] = 0.0;
                }
            }
        }
        self.state.q = q;
        self.state.qd = qd;
        self.state.steps += 1;
        let n = self.episode_steps;
        self.done = self.state.steps >= n;
        self.state.phase = if self.done { 1.0 } else { self.state.steps as f64 / n as f64 };
        let reward = self.evaluate(&self.state, self.reference)?;
        Ok(StepOutput { observation: self.observation(), reward, done: self.done })
    }

    /// Reward of an arbitrary state; `step` uses exactly this.
    pub fn evaluate(&self, state: &EnvState, reference: Option<usize>) -> Result<RewardBreakdown, EnvError> {
        let cfg = &self.config.reward;
        let (elbow, hand) = self.arm.positions(ArmAngles::from_slice(&state.q));
        let precision =
            reward::pointing_precision(&ArmFrame { elbow, hand, target: state.target }).unwrap_or(0.0);
        let r_goal = reward::pointing_reward_from_precision(precision);
        let (terms, r_imitation) = match reference {
            Some(r) => {
                let reference = self.references.get(r).ok_or(EnvError::NoReference(r))?;
                let (rq, rqd) = reference.sample(state.phase);
                let (t, total) =
                    reward::imitation_reward(&self.motion_state(&state.q, &state.qd), &self.motion_state(&rq, &rqd), &[2], cfg)?;
                (Some(t), total)
            }
            None => (None, 0.0),
        };
        Ok(RewardBreakdown {
            reward: reward::combined_reward(r_imitation, r_goal, cfg),
            r_imitation,
            r_goal,
            precision,
            terms,
        })
    }

    fn motion_state(&self, q: &[f64; ARM_DOF], qd: &[f64; ARM_DOF]) -> MotionState {
        let angles = ArmAngles::from_slice(q);
        let (rs, re) = angles.local_rotations();
        let (elbow, hand) = self.arm.positions(angles);
        MotionState { rotations: vec![rs, re], velocities: qd.to_vec(), positions: vec![self.arm.shoulder, elbow, hand] }
    }

    /// Elbow and hand relative to the shoulder: the arm-pose feature used for transitions.
    pub fn pose_features(&self, q: &[f64]) -> [f64; 6] {
        let (e, h) = self.arm.positions(ArmAngles::from_slice(q));
        let (e, h) = (e - self.arm.shoulder, h - self.arm.shoulder);
        [e.x, e.y, e.z, h.x, h.y, h.z]
    }

    /// Observation layout: `q`, `q̇`, `φ` (at [`PHASE_INDEX`]), then target, hand and elbow
    /// relative to the shoulder.
    pub fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        let (elbow, hand) = self.arm.positions(ArmAngles::from_slice(&s.q));
        let rel = |v: Vec3| (v - self.arm.shoulder).to_array();
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend_from_slice(&s.q);
        obs.extend_from_slice(&s.qd);
        obs.push(s.phase);
        obs.extend_from_slice(&rel(s.target));
        obs.extend_from_slice(&rel(hand));
        obs.extend_from_slice(&rel(elbow));
        obs
    }

    /// Analytic pointing pose for the current target (alignment error 0).
    pub fn expert_action(&self) -> Result<Vec<f64>, EnvError> {
        let q = synth::pointing_angles(&self.arm, self.state.target, 0.0)?;
        Ok(self.clamp_angles(q.to_array()).to_vec())
    }
}

/// Maps observations to actions.
pub trait Policy {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn act(&mut self, obs: &[f64], env: &PointingEnv, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Uniform random PD targets within the joint limits.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
    }
    fn act(&mut self, _obs: &[f64], env: &PointingEnv, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c = env.config();
        (0..ACTION_DIM).map(|j| rng.random_range(c.joint_lower[j]..=c.joint_upper[j])).collect()
    }
}

/// Holds the analytic pointing pose for the episode's target.
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
    }
    fn act(&mut self, _obs: &[f64], env: &PointingEnv, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        env.expert_action().unwrap_or_else(|_| vec![0.0; ACTION_DIM])
    }
}

/// Replays the active reference's angles one control step ahead.
pub struct ReplayPolicy;

impl Policy for ReplayPolicy {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
    }
    fn act(&mut self, _obs: &[f64], env: &PointingEnv, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        let Some(r) = env.active_reference() else { return vec![0.0; ACTION_DIM] };
        let n = env.episode_length(Some(r));
        let next = ((env.state().steps + 1) as f64 / n as f64).min(1.0);
        env.references()[r].sample(next).0.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: f64,
    pub q: [f64; ARM_DOF],
    pub qd: [f64; ARM_DOF],
    pub action: Vec<f64>,
    pub target: Vec3,
    pub reference: Option<usize>,
    pub reward: RewardBreakdown,
    pub done: bool,
    /// Observation before the action.
    #[serde(skip)]
    pub observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward.reward).collect()
    }

    pub fn goal_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward.r_goal).collect()
    }

    pub fn imitation_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward.r_imitation).collect()
    }

    pub fn final_precision(&self) -> Option<f64> {
        self.steps.last().map(|s| s.reward.precision)
    }
}

/// Runs one episode from an explicit reset.
pub fn run_episode(
    env: &mut PointingEnv,
    policy: &mut dyn Policy,
    target: Option<Vec3>,
    reference: Option<usize>,
    seed: u64,
) -> Result<Trajectory, EnvError> {
    if policy.obs_dim() != OBS_DIM {
        return Err(EnvError::DimensionMismatch { expected: OBS_DIM, got: policy.obs_dim() });
    }
    if policy.action_dim() != ACTION_DIM {
        return Err(EnvError::DimensionMismatch { expected: ACTION_DIM, got: policy.action_dim() });
    }
    let mut obs = env.reset(target, reference, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(synth::derive_seed(seed, u64::MAX));
    let mut traj = Trajectory::default();
    loop {
        let action = policy.act(&obs, env, &mut rng);
        let out = env.step(&action)?;
        let s = env.state();
        traj.steps.push(StepRecord {
            step: s.steps,
            phase: s.phase,
            q: s.q,
            qd: s.qd,
            action,
            target: s.target,
            reference: env.active_reference(),
            reward: out.reward,
            done: out.done,
            observation: obs,
        });
        obs = out.observation;
        if out.done {
            return Ok(traj);
        }
    }
}

/// `n_episodes` episodes with sampled targets and references; episode `i` is seeded from
/// `(seed, i)`.
pub fn rollout(
    env: &mut PointingEnv,
    policy: &mut dyn Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, EnvError> {
    (0..n_episodes)
        .map(|i| run_episode(env, policy, None, None, synth::derive_seed(seed, i as u64)))
        .collect()
}

/// Writes one JSON object per step.
pub fn write_trajectory_jsonl<W: Write>(traj: &Trajectory, mut out: W) -> Result<(), EnvError> {
    for s in &traj.steps {
        let line = serde_json::to_string(s).map_err(|e| EnvError::Log(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| EnvError::Log(e.to_string()))?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(input: R) -> Result<Trajectory, EnvError> {
    let mut steps = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EnvError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| EnvError::Log(format!("line {}: {e}", i + 1)))?);
    }
    Ok(Trajectory { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pointing_clip, SynthParams};

    fn front_target() -> Vec3 {
        Vec3::new(-0.45, 1.7, 0.7)
    }

    fn clip_env(cfg: EnvConfig) -> PointingEnv {
        let clip = generate_pointing_clip(&standard_skeleton(), &SynthParams::default()).unwrap();
        let r = ReferenceMotion::from_clip(&clip, cfg.hand, None).unwrap();
        PointingEnv::new(cfg, vec![r]).unwrap()
    }

    #[test]
    fn reset_contract() {
        let mut env = PointingEnv::new(EnvConfig::default(), vec![]).unwrap();
        let a = env.reset(Some(front_target()), None, 3).unwrap();
        assert_eq!(a.len(), OBS_DIM);
        assert_eq!(a[8], 0.0);
        let b = env.reset(Some(front_target()), None, 3).unwrap();
        assert_eq!(a, b);
        let far = env.arm().shoulder + Vec3::new(0.0, 0.0, 2.0 * env.arm().reach());
        assert!(matches!(env.reset(Some(far), None, 3), Err(EnvError::TargetOutOfRange(_))));
        let s1 = env.reset(None, None, 5).unwrap();
        let s2 = env.reset(None, None, 5).unwrap();
        assert_eq!(s1, s2);
        assert!(env.state().target.z > 0.0);
    }

    #[test]
    fn pd_equilibrium_is_exact() {
        let mut env = PointingEnv::new(EnvConfig::default(), vec![]).unwrap();
        env.reset(Some(front_target()), None, 0).unwrap();
        let before = *env.state();
        env.step(&before.q).unwrap();
        assert_eq!(env.state().q, before.q);
        assert_eq!(env.state().qd, before.qd);
    }

    #[test]
    fn constant_action_converges_monotonically() {
        let cfg = EnvConfig { torque_limits: [1e6; 4], ..EnvConfig::default() };
        let mut env = PointingEnv::new(cfg, vec![]).unwrap();
        env.reset(Some(front_target()), None, 0).unwrap();
        let goal = [0.4, -0.3, 0.2, 1.0];
        let mut prev = [0.0; 4];
        for _ in 0..env.episode_length(None) {
            env.step(&goal).unwrap();
            let q = env.state().q;
            for j in 0..4 {
                assert!((goal[j] - q[j]).abs() <= (goal[j] - prev[j]).abs() + 1e-12);
                assert!((q[j] - prev[j]) * goal[j].signum() >= -1e-12, "joint {j} reversed");
            }
            prev = q;
        }
        for j in 0..4 {
            assert!((prev[j] - goal[j]).abs() < 0.01 * goal[j].abs());
        }
    }

    #[test]
    fn zero_torque_keeps_rest() {
        let cfg = EnvConfig { torque_limits: [0.0; 4], ..EnvConfig::default() };
        let mut env = PointingEnv::new(cfg, vec![]).unwrap();
        env.reset(Some(front_target()), None, 0).unwrap();
        while !env.is_done() {
            env.step(&[1.0, 1.0, 1.0, 1.0]).unwrap();
            assert_eq!(env.state().q, [0.0; 4]);
            assert_eq!(env.state().qd, [0.0; 4]);
        }
    }

    #[test]
    fn phase_reaches_one_in_expected_steps() {
        let mut env = clip_env(EnvConfig::default());
        env.reset(None, Some(0), 0).unwrap();
        let duration = env.references()[0].duration();
        let expected = (duration * 30.0).ceil() as usize;
        let mut n = 0;
        let mut last = 0.0;
        while !env.is_done() {
            let out = env.step(&[0.0; 4]).unwrap();
            n += 1;
            assert!(env.state().phase >= last);
            last = env.state().phase;
            if !out.done {
                assert!(last < 1.0);
            }
        }
        assert_eq!(n, expected);
        assert_eq!(last, 1.0);
        assert!(matches!(env.step(&[0.0; 4]), Err(EnvError::SteppedAfterDone)));
    }

    #[test]
    fn self_imitation_with_high_gains() {
        let cfg = EnvConfig { kp_scale: 3000.0, torque_limits: [1e6; 4], ..EnvConfig::default() };
        let mut env = clip_env(cfg);
        let traj = run_episode(&mut env, &mut ReplayPolicy, None, Some(0), 1).unwrap();
        let mean = crate::stats::mean(&traj.imitation_rewards());
        assert!(mean >= 0.9, "mean r^I {mean}");
    }

    #[test]
    fn expert_beats_random() {
        let mut env = PointingEnv::new(EnvConfig::default(), vec![]).unwrap();
        let expert = rollout(&mut env, &mut ExpertPolicy, 6, 2).unwrap();
        let random = rollout(&mut env, &mut RandomPolicy, 6, 2).unwrap();
        let mean = |t: &[Trajectory]| crate::stats::mean(&t.iter().flat_map(|t| t.goal_rewards()).collect::<Vec<_>>());
        assert!(mean(&expert) > mean(&random));
        for t in &expert {
            assert!(t.final_precision().unwrap() > 0.99);
        }
    }

    #[test]
    fn rollouts_are_deterministic_and_finite() {
        let mut env = clip_env(EnvConfig::default());
        let a = rollout(&mut env, &mut RandomPolicy, 3, 9).unwrap();
        let b = rollout(&mut env, &mut RandomPolicy, 3, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|t| &t.steps).all(|s| s.observation.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn log_matches_offline_reward() {
        let mut env = clip_env(EnvConfig::default());
        let traj = run_episode(&mut env, &mut RandomPolicy, None, Some(0), 4).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, &mut buf).unwrap();
        let back = read_trajectory_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.steps.len(), traj.steps.len());
        for s in &back.steps {
            let state = EnvState { q: s.q, qd: s.qd, phase: s.phase, target: s.target, steps: s.step };
            let r = env.evaluate(&state, s.reference).unwrap();
            assert!((r.reward - s.reward.reward).abs() < 1e-12);
            assert!((r.r_imitation - s.reward.r_imitation).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_and_config_errors() {
        assert!(matches!(
            PointingEnv::new(EnvConfig { horizon: 0, ..EnvConfig::default() }, vec![]),
            Err(EnvError::InvalidConfig(_))
        ));
        struct Wrong;
        impl Policy for Wrong {
            fn obs_dim(&self) -> usize {
                3
            }
            fn action_dim(&self) -> usize {
                ACTION_DIM
            }
            fn act(&mut self, _: &[f64], _: &PointingEnv, _: &mut ChaCha8Rng) -> Vec<f64> {
                vec![0.0; ACTION_DIM]
            }
        }
        let mut env = PointingEnv::new(EnvConfig::default(), vec![]).unwrap();
        assert!(matches!(rollout(&mut env, &mut Wrong, 1, 0), Err(EnvError::DimensionMismatch { .. })));
        env.reset(Some(front_target()), None, 0).unwrap();
        assert!(matches!(env.step(&[0.0; 3]), Err(EnvError::DimensionMismatch { .. })));
    }

    #[test]
    fn mirrored_reference_keeps_target_side() {
        let params = SynthParams { target: Vec3::new(0.5, 1.7, 0.7), hand: Hand::Left, ..SynthParams::default() };
        let clip = generate_pointing_clip(&standard_skeleton(), &params).unwrap();
        let r = ReferenceMotion::from_clip(&clip, Hand::Right, None).unwrap();
        assert!((r.target - Vec3::new(-0.5, 1.7, 0.7)).norm() < 1e-12);
        let env = PointingEnv::new(EnvConfig::default(), vec![r.clone()]).unwrap();
        let hold = clip.annotations[0].hold_start;
        let (e, h) = env.arm().positions(ArmAngles::from_slice(&r.angles[hold]));
        let th = reward::pointing_precision(&ArmFrame { elbow: e, hand: h, target: r.target }).unwrap();
        assert!((th - (1.0 - 20.0 / 180.0)).abs() < 1e-6);
    }
}
