//! Reward functions: the geometric pointing reward, the pose/velocity/end-effector/COM
//! imitation reward, their weighted combination, and the discriminator-based style reward.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, GeomError, Rotation, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("state and reference disagree in shape: {0}")]
    SkeletonMismatch(String),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// Elbow, hand and target positions (world frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmFrame {
    pub elbow: Vec3,
    pub hand: Vec3,
    pub target: Vec3,
}

/// Upper bound of the pointing reward, `(e − 1)/e`.
pub const MAX_POINTING_REWARD: f64 = (E - 1.0) / E;

/// `1 − angle(V_HT, V_EH)/π` with `V_EH = H − E`, `V_HT = T − H`.
pub fn pointing_precision(frame: &ArmFrame) -> Result<f64, GeomError> {
    let forearm = frame.hand - frame.elbow;
    let to_target = frame.target - frame.hand;
    Ok(1.0 - geom::angle_between(to_target, forearm)? / PI)
}

/// `(exp(θ̂) − 1)/e` for a precision value θ̂ in `[0, 1]`.
pub fn pointing_reward_from_precision(precision: f64) -> f64 {
    (precision.exp() - 1.0) / E
}

pub fn pointing_reward(frame: &ArmFrame) -> Result<f64, GeomError> {
    pointing_precision(frame).map(pointing_reward_from_precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Imitation channel weight ω^I.
    pub w_imitation: f64,
    /// Task channel weight ω^G.
    pub w_goal: f64,
    pub w_pose: f64,
    pub w_velocity: f64,
    pub w_end_effector: f64,
    pub w_com: f64,
    pub k_pose: f64,
    pub k_velocity: f64,
    pub k_end_effector: f64,
    pub k_com: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_imitation: 0.7,
            w_goal: 0.3,
            w_pose: 0.65,
            w_velocity: 0.1,
            w_end_effector: 0.15,
            w_com: 0.1,
            k_pose: 2.0,
            k_velocity: 0.1,
            k_end_effector: 40.0,
            k_com: 10.0,
        }
    }
}

impl RewardConfig {
    /// Same imitation terms, channel weights replaced.
    pub fn with_channels(mut self, w_imitation: f64, w_goal: f64) -> Self {
        self.w_imitation = w_imitation;
        self.w_goal = w_goal;
        self
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let weights = [self.w_imitation, self.w_goal, self.w_pose, self.w_velocity, self.w_end_effector, self.w_com];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RewardError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if (self.w_imitation + self.w_goal - 1.0).abs() > 1e-9 {
            return Err(RewardError::InvalidConfig("w_imitation + w_goal must equal 1".into()));
        }
        if (self.w_pose + self.w_velocity + self.w_end_effector + self.w_com - 1.0).abs() > 1e-9 {
            return Err(RewardError::InvalidConfig("imitation term weights must sum to 1".into()));
        }
        let scales = [self.k_pose, self.k_velocity, self.k_end_effector, self.k_com];
        if scales.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(RewardError::InvalidConfig("exponential scales must be positive".into()));
        }
        Ok(())
    }
}

/// Kinematic state compared by the imitation reward.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    /// Local joint rotations.
    pub rotations: Vec<Rotation>,
    /// Generalized joint velocities (rad/s).
    pub velocities: Vec<f64>,
    /// World joint positions.
    pub positions: Vec<Vec3>,
}

impl MotionState {
    /// Unit-mass centre of mass of the joint positions.
    pub fn center_of_mass(&self) -> Vec3 {
        let sum = self.positions.iter().fold(Vec3::ZERO, |a, p| a + *p);
        sum / self.positions.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImitationTerms {
    pub pose: f64,
    pub velocity: f64,
    pub end_effector: f64,
    pub com: f64,
}

/// Imitation reward of `state` against `reference`; returns the four terms and their
/// weighted sum. `end_effectors` indexes into the position lists.
pub fn imitation_reward(
    state: &MotionState,
    reference: &MotionState,
    end_effectors: &[usize],
    cfg: &RewardConfig,
) -> Result<(ImitationTerms, f64), RewardError> {
    if state.rotations.len() != reference.rotations.len() {
        return Err(RewardError::SkeletonMismatch("rotation count".into()));
    }
    if state.velocities.len() != reference.velocities.len() {
        return Err(RewardError::SkeletonMismatch("velocity count".into()));
    }
    if state.positions.len() != reference.positions.len() || state.positions.is_empty() {
        return Err(RewardError::SkeletonMismatch("position count".into()));
    }
    if end_effectors.iter().any(|&e| e >= state.positions.len()) {
        return Err(RewardError::SkeletonMismatch("end-effector index".into()));
    }
    let pose_err: f64 = state
        .rotations
        .iter()
        .zip(&reference.rotations)
        .map(|(a, b)| a.geodesic(*b).powi(2))
        .sum();
    let vel_err: f64 = state.velocities.iter().zip(&reference.velocities).map(|(a, b)| (a - b).powi(2)).sum();
    let end_err: f64 = end_effectors
        .iter()
        .map(|&e| (state.positions[e] - reference.positions[e]).norm_squared())
        .sum();
    let com_err = (state.center_of_mass() - reference.center_of_mass()).norm_squared();
    let terms = ImitationTerms {
        pose: (-cfg.k_pose * pose_err).exp(),
        velocity: (-cfg.k_velocity * vel_err).exp(),
        end_effector: (-cfg.k_end_effector * end_err).exp(),
        com: (-cfg.k_com * com_err).exp(),
    };
    let total = cfg.w_pose * terms.pose
        + cfg.w_velocity * terms.velocity
        + cfg.w_end_effector * terms.end_effector
        + cfg.w_com * terms.com;
    Ok((terms, total))
}

/// `ω^I·r^I + ω^G·r^G`.
pub fn combined_reward(r_imitation: f64, r_goal: f64, cfg: &RewardConfig) -> f64 {
    cfg.w_imitation * r_imitation + cfg.w_goal * r_goal
}

/// Least-squares discriminator score to reward: `max(0, 1 − (d − 1)²/4)`.
pub fn amp_reward(score: f64) -> f64 {
    (1.0 - 0.25 * (score - 1.0).powi(2)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(e: [f64; 3], h: [f64; 3], t: [f64; 3]) -> ArmFrame {
        ArmFrame { elbow: e.into(), hand: h.into(), target: t.into() }
    }

    #[test]
    fn precision_examples() {
        let p = |t| pointing_precision(&frame([0.0; 3], [0.0, 0.0, 1.0], t)).unwrap();
        assert!((p([0.0, 0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((p([0.0, 1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert!(p([0.0, 0.0, 0.5]).abs() < 1e-15);
        assert_eq!(
            pointing_precision(&frame([0.0; 3], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0])),
            Err(GeomError::DegenerateVector)
        );
    }

    #[test]
    fn pointing_reward_examples() {
        assert!((pointing_reward_from_precision(1.0) - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert_eq!(pointing_reward_from_precision(0.0), 0.0);
        assert!((pointing_reward_from_precision(0.5) - 0.238_651_218_541_638_5).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let cfg = RewardConfig::default();
        assert!((combined_reward(1.0, 0.0, &cfg) - 0.7).abs() < 1e-15);
        assert!((combined_reward(0.8, 0.632121, &cfg) - 0.749_636_3).abs() < 1e-12);
        let task = cfg.with_channels(0.0, 1.0);
        assert_eq!(combined_reward(0.3, 0.42, &task), 0.42);
    }

    #[test]
    fn amp_examples() {
        assert_eq!(amp_reward(1.0), 1.0);
        assert_eq!(amp_reward(-1.0), 0.0);
        assert_eq!(amp_reward(0.0), 0.75);
        assert_eq!(amp_reward(-5.0), 0.0);
    }

    fn state(rot: &[Rotation]) -> MotionState {
        MotionState {
            rotations: rot.to_vec(),
            velocities: vec![0.1, -0.2],
            positions: vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.3, 1.2, 0.1)],
        }
    }

    #[test]
    fn identical_state_scores_one() {
        let s = state(&[Rotation::from_rotation_vector(Vec3::new(0.2, 0.1, -0.3)), Rotation::IDENTITY]);
        let (terms, r) = imitation_reward(&s, &s, &[1], &RewardConfig::default()).unwrap();
        assert_eq!(terms, ImitationTerms { pose: 1.0, velocity: 1.0, end_effector: 1.0, com: 1.0 });
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_joint_pose_error() {
        let a = state(&[Rotation::IDENTITY, Rotation::IDENTITY]);
        let b = state(&[Rotation::from_axis_angle(Vec3::Y, 0.3), Rotation::IDENTITY]);
        let (terms, _) = imitation_reward(&a, &b, &[1], &RewardConfig::default()).unwrap();
        assert!((terms.pose - (-0.18f64).exp()).abs() < 1e-12);
        assert!((terms.pose - 0.8353).abs() < 1e-4);
    }

    #[test]
    fn huge_pose_error_bounds_reward() {
        let a = state(&[Rotation::IDENTITY; 2]);
        let flip = Rotation::from_axis_angle(Vec3::X, 3.1);
        let b = state(&[flip, flip]);
        let cfg = RewardConfig { k_pose: 1e6, ..RewardConfig::default() };
        let (terms, r) = imitation_reward(&a, &b, &[1], &cfg).unwrap();
        assert!(terms.pose < 1e-300);
        assert!(r <= 1.0 - cfg.w_pose + 1e-12);
    }

    #[test]
    fn mismatched_states_are_rejected() {
        let a = state(&[Rotation::IDENTITY; 2]);
        let b = state(&[Rotation::IDENTITY; 3]);
        assert!(matches!(
            imitation_reward(&a, &b, &[1], &RewardConfig::default()),
            Err(RewardError::SkeletonMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        assert!(RewardConfig::default().with_channels(0.5, 0.6).validate().is_err());
        assert!(RewardConfig { k_com: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { w_pose: 0.7, ..Default::default() }.validate().is_err());
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
            .prop_filter("nonzero", |v| v.norm() > 0.1)
    }

    proptest! {
        #[test]
        fn precision_rigid_and_scale_invariant(
            e in unit_vec(), h in unit_vec(), t in unit_vec(),
            axis in unit_vec(), angle in -3.0..3.0f64, shift in unit_vec(),
            s1 in 0.1..10.0f64, s2 in 0.1..10.0f64,
        ) {
            let f = ArmFrame { elbow: e, hand: h, target: t };
            prop_assume!((h - e).norm() > 1e-3 && (t - h).norm() > 1e-3);
            let base = pointing_precision(&f).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let r = Rotation::from_axis_angle(axis, angle);
            let moved = ArmFrame { elbow: r.rotate(e) + shift, hand: r.rotate(h) + shift, target: r.rotate(t) + shift };
            prop_assert!((pointing_precision(&moved).unwrap() - base).abs() < 1e-7);
            let scaled_hand = h;
            let scaled = ArmFrame {
                elbow: scaled_hand - (h - e) * s1,
                hand: scaled_hand,
                target: scaled_hand + (t - h) * s2,
            };
            prop_assert!((pointing_precision(&scaled).unwrap() - base).abs() < 1e-7);
        }

        #[test]
        fn reward_monotone_in_precision(a in 0.0..1.0f64, b in 0.0..1.0f64) {
            prop_assume!(a < b);
            let (ra, rb) = (pointing_reward_from_precision(a), pointing_reward_from_precision(b));
            prop_assert!(ra < rb);
            prop_assert!(ra >= 0.0 && rb <= MAX_POINTING_REWARD + 1e-15);
        }

        #[test]
        fn combined_linear_and_bounded(wi in 0.0..1.0f64, ri in 0.0..1.0f64, rg in 0.0..1.0f64) {
            let cfg = RewardConfig::default().with_channels(wi, 1.0 - wi);
            let r = combined_reward(ri, rg, &cfg);
            prop_assert!(r <= ri.max(rg) + 1e-12);
            prop_assert!((r - (wi * ri + (1.0 - wi) * rg)).abs() < 1e-12);
        }

        #[test]
        fn amp_reward_range(d in -10.0..10.0f64) {
            let r = amp_reward(d);
            prop_assert!((0.0..=1.0).contains(&r));
            if (d - 1.0).abs() > 1e-6 { prop_assert!(r < 1.0); }
        }
    }
}
