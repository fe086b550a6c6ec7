//! Synthetic pointing clips with exact ground truth.
//!
//! The hand travels a straight minimum-jerk path from the hanging rest pose to a hold pose
//! whose forearm deviates from the hand→target ray by a prescribed angle, holds, and returns
//! along the same path. Arm angles come from a two-link solution with the elbow swivel
//! interpolated alongside the hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmAngles, ArmModel, STANDARD_ROOT};
use crate::geom::{self, GeomError, Hand, Pose, Rotation, Skeleton, Vec3};
use crate::mocap::{classify_octant, Annotation, BodyFrame, Clip, Octant, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("target {0} is outside the pointing shell of the arm")]
    Unreachable(Vec3),
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// `10s³ − 15s⁴ + 6s⁵`, the normalized minimum-jerk position profile.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// Derivative of [`min_jerk`], `30s²(1 − s)²`; peaks at 1.875 for s = 0.5.
pub fn min_jerk_rate(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// Ratio of peak to average speed of a minimum-jerk movement.
pub const MIN_JERK_PEAK_RATIO: f64 = 1.875;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub target: Vec3,
    pub hand: Hand,
    /// Seconds.
    pub rise_time: f64,
    pub hold_time: f64,
    pub retract_time: f64,
    /// Idle time before the movement and after the return (s).
    pub idle_time: f64,
    /// Forearm deviation from the hand→target ray at the hold (degrees).
    pub alignment_error: f64,
    /// Amplitude of the filtered uniform noise added to the hand path (m).
    pub noise_amplitude: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            target: Vec3::new(-0.5, 1.7, 0.7),
            hand: Hand::Right,
            rise_time: 0.71,
            hold_time: 1.0,
            retract_time: 0.7,
            idle_time: 0.5,
            alignment_error: 20.0,
            noise_amplitude: 0.0,
            fps: 120.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let times = [self.rise_time, self.hold_time, self.retract_time];
        if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(SynthError::InvalidParams("phase times must be positive".into()));
        }
        if !(self.idle_time.is_finite() && self.idle_time >= 0.0) {
            return Err(SynthError::InvalidParams("idle_time must be non-negative".into()));
        }
        if !(0.0..180.0).contains(&self.alignment_error) {
            return Err(SynthError::InvalidParams("alignment_error must lie in [0, 180)".into()));
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return Err(SynthError::InvalidParams("noise_amplitude must be non-negative".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SynthError::InvalidParams("fps must be positive".into()));
        }
        if !self.target.is_finite() {
            return Err(SynthError::InvalidParams("target must be finite".into()));
        }
        Ok(())
    }
}

/// Radial band of target distances from the shoulder that the arm can point at:
/// beyond the fingertips and below twice the arm length.
pub fn pointing_shell(arm: &ArmModel) -> (f64, f64) {
    (1.1 * arm.reach(), 1.9 * arm.reach())
}

/// Hold-pose elbow lift: the upper arm points at the target, lowered by this much along −Y.
const ELBOW_DROP: f64 = 0.25;

/// Elbow and hand positions of a hold pose whose forearm makes exactly `alignment_error`
/// degrees with the hand→target ray.
pub fn hold_configuration(arm: &ArmModel, target: Vec3, alignment_error: f64) -> Result<(Vec3, Vec3), SynthError> {
    let (near, far) = pointing_shell(arm);
    let dist = target.distance(arm.shoulder);
    if !(near..=far).contains(&dist) {
        return Err(SynthError::Unreachable(target));
    }
    let u = (target - arm.shoulder).normalized()?;
    let e_dir = (u - Vec3::Y * ELBOW_DROP).normalized()?;
    let elbow = arm.shoulder + e_dir * arm.upper_len;
    let v = target - elbow;
    let d_len = v.norm();
    if d_len <= arm.fore_len * 1.05 {
        return Err(SynthError::Unreachable(target));
    }
    let v_hat = v / d_len;
    // triangle elbow-hand-target: exterior angle at the hand is the alignment error
    let alpha = geom::deg_to_rad(alignment_error);
    let beta = alpha - (arm.fore_len * alpha.sin() / d_len).asin();
    let axis = v_hat.cross(Vec3::Y).normalized().unwrap_or_else(|_| v_hat.any_orthogonal());
    let forearm = Rotation::from_axis_angle(axis, beta).rotate(v_hat);
    Ok((elbow, elbow + forearm * arm.fore_len))
}

/// Joint angles of the hold pose (see [`hold_configuration`]).
pub fn pointing_angles(arm: &ArmModel, target: Vec3, alignment_error: f64) -> Result<ArmAngles, SynthError> {
    let (e, h) = hold_configuration(arm, target, alignment_error)?;
    Ok(arm.angles_from_points(e, h))
}

/// Torso pose the generator and the simulated arm use: identity rotations, root at `STANDARD_ROOT`.
pub fn rest_pose(skel: &Skeleton) -> Pose {
    Pose::identity(skel, STANDARD_ROOT)
}

/// Movement phase boundaries in seconds: (start, hold, retract, end).
fn phase_times(p: &SynthParams) -> (f64, f64, f64, f64) {
    let t0 = p.idle_time;
    let t1 = t0 + p.rise_time;
    let t2 = t1 + p.hold_time;
    (t0, t1, t2, t2 + p.retract_time)
}

/// Path parameter in `[0, 1]` (0 rest, 1 hold) at time `t`.
fn path_parameter(p: &SynthParams, t: f64) -> f64 {
    let (t0, t1, t2, t3) = phase_times(p);
    if t <= t0 || t >= t3 {
        0.0
    } else if t < t1 {
        min_jerk((t - t0) / p.rise_time)
    } else if t <= t2 {
        1.0
    } else {
        1.0 - min_jerk((t - t2) / p.retract_time)
    }
}

/// Generates a single-target pointing clip on `skel` (torso at its rest pose).
pub fn generate_pointing_clip(skel: &Skeleton, params: &SynthParams) -> Result<Clip, SynthError> {
    params.validate()?;
    let rest = rest_pose(skel);
    let arm = ArmModel::new(skel, &rest, params.hand)?;
    let (hold_elbow, hold_hand) = hold_configuration(&arm, params.target, params.alignment_error)?;
    let hold_angles = arm.angles_from_points(hold_elbow, hold_hand);
    let hold_swivel = arm.swivel_of(hold_elbow, hold_hand);
    let (_, idle_hand) = arm.positions(ArmAngles::default());

    let fps = params.fps;
    let (t0, t1, _t2, t3) = phase_times(params);
    let total = t3 + params.idle_time;
    let n_frames = (total * fps).round() as usize + 1;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let a = params.noise_amplitude;
    let noise: Vec<Vec3> = if a > 0.0 {
        let white: Vec<Vec3> = (0..=n_frames)
            .map(|_| Vec3::new(rng.random_range(-a..=a), rng.random_range(-a..=a), rng.random_range(-a..=a)))
            .collect();
        white.windows(2).map(|w| (w[0] + w[1]) * 0.5).collect()
    } else {
        vec![Vec3::ZERO; n_frames]
    };

    let frames: Vec<Pose> = (0..n_frames)
        .map(|k| {
            let t = k as f64 / fps;
            let s = path_parameter(params, t);
            let q = if a == 0.0 && s == 0.0 {
                ArmAngles::default()
            } else if a == 0.0 && s == 1.0 {
                hold_angles
            } else {
                let hand = idle_hand.lerp(hold_hand, s) + noise[k];
                let (e, h) = arm.solve(hand, hold_swivel * s);
                arm.angles_from_points(e, h)
            };
            let mut pose = rest.clone();
            arm.apply(&mut pose, q);
            pose
        })
        .collect();

    let onset = (t0 * fps + 1e-9).floor() as usize;
    let hold_start = (t1 * fps - 1e-9).ceil() as usize;
    let offset = ((t3 * fps - 1e-9).ceil() as usize).min(n_frames);
    let peak_velocity = (onset..hold_start)
        .max_by(|&x, &y| {
            let sx = path_parameter(params, (x + 1) as f64 / fps) - path_parameter(params, x as f64 / fps);
            let sy = path_parameter(params, (y + 1) as f64 / fps) - path_parameter(params, y as f64 / fps);
            sx.total_cmp(&sy).then(y.cmp(&x))
        })
        .unwrap_or(onset);

    let clip = Clip {
        id: format!("synth-{}-{:016x}", params.hand, params.seed),
        skeleton: skel.clone(),
        fps,
        frames,
        targets: vec![Target { label: "target".into(), position: params.target }],
        annotations: vec![Annotation {
            hand: params.hand,
            onset,
            peak_velocity: peak_velocity.max(onset + 1).min(hold_start),
            hold_start,
            offset,
            target: 0,
        }],
    };
    clip.validate().map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    Ok(clip)
}

/// Straight-line hand travel between rest and hold (m) for the given parameters.
pub fn reach_distance(skel: &Skeleton, params: &SynthParams) -> Result<f64, SynthError> {
    let arm = ArmModel::new(skel, &rest_pose(skel), params.hand)?;
    let (_, hold_hand) = hold_configuration(&arm, params.target, params.alignment_error)?;
    let (_, idle_hand) = arm.positions(ArmAngles::default());
    Ok(hold_hand.distance(idle_hand))
}

/// Single-target position counts per octant (table order of [`Octant::ALL`]).
pub const REFERENCE_OCTANT_COUNTS: [usize; 8] = [11, 15, 8, 8, 14, 12, 7, 8];

/// Relative octant frequencies (table order of [`Octant::ALL`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OctantWeights(pub [f64; 8]);

impl Default for OctantWeights {
    fn default() -> Self {
        OctantWeights(REFERENCE_OCTANT_COUNTS.map(|c| c as f64))
    }
}

impl OctantWeights {
    /// Reference proportions restricted to front-facing cells.
    pub fn front_only() -> Self {
        let mut w = Self::default().0;
        for (i, o) in Octant::ALL.iter().enumerate() {
            if !o.front {
                w[i] = 0.0;
            }
        }
        OctantWeights(w)
    }

    pub fn only(octant: Octant) -> Self {
        let mut w = [0.0; 8];
        w[octant.index()] = 1.0;
        OctantWeights(w)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.0.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.0.iter().sum::<f64>() <= 0.0 {
            return Err(SynthError::InvalidParams("octant weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items over the cells.
    pub fn apportion(&self, n: usize) -> [usize; 8] {
        let total: f64 = self.0.iter().sum();
        let quotas: Vec<f64> = self.0.iter().map(|w| w / total * n as f64).collect();
        let mut counts = [0usize; 8];
        for (c, q) in counts.iter_mut().zip(&quotas) {
            *c = q.floor() as usize;
        }
        let mut rest: Vec<usize> = (0..8).collect();
        rest.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        let missing = n - counts.iter().sum::<usize>();
        for &i in rest.iter().take(missing) {
            counts[i] += 1;
        }
        counts
    }
}

/// Minimum distance of sampled targets from the octant boundary planes (m).
const OCTANT_MARGIN: f64 = 0.05;
/// Maximum elevation of sampled targets seen from the shoulder.
const MAX_ELEVATION_DEG: f64 = 55.0;

/// Minimum sagittal (Y–Z) travel of the hand between rest and hold for sampled targets (m).
pub const MIN_SAGITTAL_TRAVEL: f64 = 0.3;

/// Samples a target inside `octant` and inside the pointing shell of the arm on the
/// target's side, such that the hold pose for `alignment_error` moves the hand at least
/// [`MIN_SAGITTAL_TRAVEL`] in the sagittal plane. Returns the target and the pointing hand.
pub fn sample_target<R: Rng>(
    rng: &mut R,
    skel: &Skeleton,
    octant: Octant,
    alignment_error: f64,
) -> Result<(Vec3, Hand), SynthError> {
    let hand = if octant.left { Hand::Left } else { Hand::Right };
    let arm = ArmModel::new(skel, &rest_pose(skel), hand)?;
    let t = sample_shell_target(rng, &arm, &body_frame(skel), octant, alignment_error)?;
    Ok((t, hand))
}

/// Like [`sample_target`] for a given arm, which may point across the body.
pub fn sample_shell_target<R: Rng>(
    rng: &mut R,
    arm: &ArmModel,
    body: &BodyFrame,
    octant: Octant,
    alignment_error: f64,
) -> Result<Vec3, SynthError> {
    let (near, far) = pointing_shell(arm);
    let max_sin = geom::deg_to_rad(MAX_ELEVATION_DEG).sin();
    let (_, idle_hand) = arm.positions(ArmAngles::default());
    let sagittal_travel = |h: Vec3| {
        let d = h - idle_hand;
        (d.y * d.y + d.z * d.z).sqrt()
    };
    for _ in 0..100_000 {
        let g = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let Ok(dir) = g.normalized() else { continue };
        if dir.y.abs() > max_sin {
            continue;
        }
        // uniform in volume between the two shells
        let u: f64 = rng.random();
        let r = (near.powi(3) + u * (far.powi(3) - near.powi(3))).cbrt();
        let t = arm.shoulder + dir * r;
        let b = body.to_body(t);
        let clear = b.x.abs() >= OCTANT_MARGIN
            && (b.y - body.shoulder_height).abs() >= OCTANT_MARGIN
            && b.z.abs() >= OCTANT_MARGIN;
        if !clear || classify_octant(t, body) != octant {
            continue;
        }
        if let Ok((_, h)) = hold_configuration(arm, t, alignment_error) {
            if sagittal_travel(h) >= MIN_SAGITTAL_TRAVEL {
                return Ok(t);
            }
        }
    }
    Err(SynthError::InvalidParams(format!("could not sample a target in {octant}")))
}

pub fn body_frame(skel: &Skeleton) -> BodyFrame {
    let rest = rest_pose(skel);
    let p = geom::forward_kinematics(skel, &rest).expect("rest pose");
    let shoulders: Vec<f64> = skel.hands().map(|h| p[skel.arm(h).expect("designated").shoulder].y).collect();
    BodyFrame {
        origin: Vec3::new(rest.root.x, 0.0, rest.root.z),
        heading: rest.rotations[0],
        shoulder_height: crate::stats::mean(&shoulders),
    }
}

/// Derives an independent per-item seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` single-target clips whose octant counts follow `weights` (largest-remainder
/// apportionment, shuffled under `seed`). Per-clip timing and noise come from `base`.
pub fn generate_corpus(
    skel: &Skeleton,
    n: usize,
    weights: &OctantWeights,
    base: &SynthParams,
    seed: u64,
) -> Result<Vec<Clip>, SynthError> {
    if n == 0 {
        return Err(SynthError::InvalidParams("corpus size must be at least 1".into()));
    }
    weights.validate()?;
    let counts = weights.apportion(n);
    let mut cells: Vec<Octant> =
        Octant::ALL.iter().zip(counts).flat_map(|(o, c)| std::iter::repeat(*o).take(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut rng);
    cells
        .iter()
        .enumerate()
        .map(|(i, octant)| {
            let clip_seed = derive_seed(seed, i as u64);
            let mut crng = ChaCha8Rng::seed_from_u64(clip_seed);
            let (target, hand) = sample_target(&mut crng, skel, *octant, base.alignment_error)?;
            let params = SynthParams { target, hand, seed: clip_seed, ..*base };
            let mut clip = generate_pointing_clip(skel, &params)?;
            clip.id = format!("clip-{i:03}");
            Ok(clip)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::standard_skeleton;
    use crate::reward::{pointing_precision, ArmFrame};

    #[test]
    fn min_jerk_values() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-15);
        assert!((min_jerk_rate(0.5) - 1.875).abs() < 1e-15);
        assert_eq!(min_jerk_rate(0.0), 0.0);
        assert_eq!(min_jerk_rate(1.0), 0.0);
    }

    #[test]
    fn min_jerk_rate_matches_central_difference() {
        let h = 1e-6;
        let mut best = (0.0, 0.0);
        for i in 1..1000 {
            let s = i as f64 / 1000.0;
            let fd = (min_jerk(s + h) - min_jerk(s - h)) / (2.0 * h);
            assert!((fd - min_jerk_rate(s)).abs() < 1e-6);
            assert!(fd >= 0.0);
            if fd > best.1 {
                best = (s, fd);
            }
        }
        assert!((best.0 - 0.5).abs() < 1e-12 && (best.1 - 1.875).abs() < 1e-6);
    }

    fn arm(hand: Hand) -> ArmModel {
        let skel = standard_skeleton();
        ArmModel::new(&skel, &rest_pose(&skel), hand).unwrap()
    }

    #[test]
    fn hold_pose_has_requested_alignment() {
        let arm = arm(Hand::Right);
        for (target, err) in [
            (Vec3::new(-0.6, 1.7, 0.6), 0.0),
            (Vec3::new(-0.3, 1.2, 0.8), 20.0),
            (Vec3::new(-0.8, 1.3, -0.4), 45.0),
            (Vec3::new(0.1, 1.9, 0.6), 7.5),
        ] {
            let (e, h) = hold_configuration(&arm, target, err).unwrap();
            assert!(((e - arm.shoulder).norm() - arm.upper_len).abs() < 1e-12);
            assert!(((h - e).norm() - arm.fore_len).abs() < 1e-12);
            let th = pointing_precision(&ArmFrame { elbow: e, hand: h, target }).unwrap();
            assert!((th - (1.0 - err / 180.0)).abs() < 1e-9, "{target} {err}: {th}");
        }
    }

    #[test]
    fn unreachable_targets() {
        let arm = arm(Hand::Right);
        let far = arm.shoulder + Vec3::new(0.0, 0.0, 2.0 * arm.reach());
        assert!(matches!(hold_configuration(&arm, far, 0.0), Err(SynthError::Unreachable(_))));
        let near = arm.shoulder + Vec3::new(0.0, 0.0, 0.2);
        assert!(matches!(hold_configuration(&arm, near, 0.0), Err(SynthError::Unreachable(_))));
    }

    #[test]
    fn clip_hold_precision_and_annotations() {
        let skel = standard_skeleton();
        let params = SynthParams { alignment_error: 0.0, ..SynthParams::default() };
        let clip = generate_pointing_clip(&skel, &params).unwrap();
        let a = clip.annotations[0];
        assert_eq!(a.onset, 60);
        assert_eq!(a.hold_start, 146);
        assert_eq!(a.offset, 350);
        assert_eq!(clip.frames.len(), (3.41f64 * 120.0).round() as usize + 1);
        let arm = clip.skeleton.arm(Hand::Right).unwrap();
        for k in a.hold_start..a.hold_start + 100 {
            let p = geom::forward_kinematics(&clip.skeleton, &clip.frames[k]).unwrap();
            let th = pointing_precision(&ArmFrame { elbow: p[arm.elbow], hand: p[arm.hand], target: params.target })
                .unwrap();
            assert!((th - 1.0).abs() < 1e-6, "frame {k}: {th}");
        }
    }

    #[test]
    fn determinism_contract() {
        let skel = standard_skeleton();
        let noisy = SynthParams { noise_amplitude: 0.01, seed: 7, ..SynthParams::default() };
        let a = generate_pointing_clip(&skel, &noisy).unwrap();
        let b = generate_pointing_clip(&skel, &noisy).unwrap();
        assert_eq!(crate::mocap::write_clip_json(&a), crate::mocap::write_clip_json(&b));
        let c = generate_pointing_clip(&skel, &SynthParams { seed: 8, ..noisy }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn invalid_params_rejected() {
        let skel = standard_skeleton();
        for p in [
            SynthParams { rise_time: 0.0, ..Default::default() },
            SynthParams { alignment_error: 180.0, ..Default::default() },
            SynthParams { noise_amplitude: -1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_pointing_clip(&skel, &p), Err(SynthError::InvalidParams(_))));
        }
    }

    #[test]
    fn apportionment_reproduces_reference_counts() {
        assert_eq!(OctantWeights::default().apportion(83), REFERENCE_OCTANT_COUNTS);
        assert_eq!(OctantWeights::default().apportion(1).iter().sum::<usize>(), 1);
        let w = OctantWeights::front_only().apportion(12);
        assert_eq!(w.iter().sum::<usize>(), 12);
        assert_eq!(w[2] + w[3] + w[6] + w[7], 0);
    }

    #[test]
    fn sampled_targets_land_in_their_octant() {
        let skel = standard_skeleton();
        let body = body_frame(&skel);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for o in Octant::ALL {
            for _ in 0..5 {
                let (t, hand) = sample_target(&mut rng, &skel, o, 20.0).unwrap();
                assert_eq!(classify_octant(t, &body), o);
                assert_eq!(hand == Hand::Left, o.left);
            }
        }
    }
}
