//! Vector and rotation math, joint-chain forward kinematics and finite differences.
//!
//! World frame: Y up, the actor faces +Z, +X is the actor's left. Lengths are meters.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which a vector has no usable direction (meters).
pub const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate vector (norm <= {EPS})")]
    DegenerateVector,
    #[error("series of length {len} is too short for a difference of order {order}")]
    SeriesTooShort { len: usize, order: usize },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("pose has {got} rotations, skeleton has {expected} joints")]
    PoseMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `DegenerateVector` when the norm is at most [`EPS`].
    pub fn normalized(self) -> Result<Vec3, GeomError> {
        let n = self.norm();
        if n <= EPS || !n.is_finite() {
            return Err(GeomError::DegenerateVector);
        }
        Ok(self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn to_array(self) -> [f64; 3] {
        self.into()
    }

    /// Some unit vector orthogonal to `self` (which must be nonzero).
    pub fn any_orthogonal(self) -> Vec3 {
        let a = if self.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        let c = self.cross(a);
        c / c.norm()
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Angle between two vectors in `[0, π]`.
pub fn angle_between(u: Vec3, v: Vec3) -> Result<f64, GeomError> {
    let nu = u.norm();
    let nv = v.norm();
    if nu <= EPS || nv <= EPS {
        return Err(GeomError::DegenerateVector);
    }
    let c = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(c.acos())
}

/// Unit quaternion `(w, x, y, z)`, kept canonical with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::IDENTITY
    }
}

impl From<[f64; 4]> for Rotation {
    fn from(a: [f64; 4]) -> Self {
        Rotation::from_wxyz(a[0], a[1], a[2], a[3])
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        [r.w, r.x, r.y, r.z]
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes and canonicalizes; a zero quaternion becomes the identity.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Rotation::IDENTITY;
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Rotation { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    pub fn wxyz(self) -> [f64; 4] {
        self.into()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n <= EPS {
            return Rotation::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Rotation::from_wxyz(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            return Rotation::from_wxyz(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
        }
        Rotation::from_axis_angle(v, angle)
    }

    /// Logarithm map; the returned vector has norm in `[0, π]`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let s = Vec3::new(self.x, self.y, self.z);
        let sn = s.norm();
        if sn < 1e-12 {
            return s * 2.0;
        }
        let angle = 2.0 * sn.atan2(self.w);
        s * (angle / sn)
    }

    pub fn conjugate(self) -> Self {
        // not canonicalized: w is unchanged so w >= 0 still holds
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let q = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * q.cross(v);
        v + self.w * t + q.cross(t)
    }

    /// Rotation angle of `self` in `[0, π]`.
    pub fn angle(self) -> f64 {
        2.0 * Vec3::new(self.x, self.y, self.z).norm().atan2(self.w.abs())
    }

    /// Geodesic distance between two orientations, in `[0, π]`.
    pub fn geodesic(self, other: Rotation) -> f64 {
        (self.conjugate() * other).angle()
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotation whose matrix has the given orthonormal columns.
    pub fn from_basis(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        let (m00, m01, m02) = (c0.x, c1.x, c2.x);
        let (m10, m11, m12) = (c0.y, c1.y, c2.y);
        let (m20, m21, m22) = (c0.z, c1.z, c2.z);
        let tr = m00 + m11 + m22;
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Rotation::from_wxyz(0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            Rotation::from_wxyz((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            Rotation::from_wxyz((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            Rotation::from_wxyz((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
        }
    }

    /// Normalized linear interpolation along the shorter arc.
    pub fn nlerp(self, other: Rotation, t: f64) -> Rotation {
        let sign = if self.wxyz_dot(other) < 0.0 { -1.0 } else { 1.0 };
        Rotation::from_wxyz(
            self.w + (sign * other.w - self.w) * t,
            self.x + (sign * other.x - self.x) * t,
            self.y + (sign * other.y - self.y) * t,
            self.z + (sign * other.z - self.z) * t,
        )
    }

    fn wxyz_dot(self, o: Rotation) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, o: Rotation) -> Rotation {
        Rotation::from_wxyz(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }

    /// Sign of the actor's side along world X (+X is the actor's left).
    pub fn side_sign(self) -> f64 {
        match self {
            Hand::Left => 1.0,
            Hand::Right => -1.0,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

/// Joint indices of one arm chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmJoints {
    pub shoulder: usize,
    pub elbow: usize,
    pub hand: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Designated {
    pub root: usize,
    #[serde(default)]
    pub left: Option<ArmJoints>,
    #[serde(default)]
    pub right: Option<ArmJoints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    designated: Designated,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, designated: Designated) -> Result<Self, GeomError> {
        let s = Skeleton { joints, designated };
        s.validate()?;
        Ok(s)
    }

    /// Builds a skeleton, locating the arm joints by conventional joint names.
    pub fn with_named_arms(joints: Vec<Joint>) -> Result<Self, GeomError> {
        let designated = designate_by_name(&joints)?;
        Skeleton::new(joints, designated)
    }

    fn validate(&self) -> Result<(), GeomError> {
        let n = self.joints.len();
        if n == 0 {
            return Err(GeomError::InvalidSkeleton("no joints".into()));
        }
        let mut roots = 0;
        for (i, j) in self.joints.iter().enumerate() {
            match j.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(GeomError::InvalidSkeleton(format!(
                        "joint {i} ({}) has parent {p} not preceding it",
                        j.name
                    )))
                }
                Some(_) => {}
            }
            if !j.offset.is_finite() {
                return Err(GeomError::InvalidSkeleton(format!("joint {i} has non-finite offset")));
            }
        }
        if roots != 1 || self.joints[0].parent.is_some() {
            return Err(GeomError::InvalidSkeleton(format!(
                "expected exactly one root at index 0, found {roots}"
            )));
        }
        let d = &self.designated;
        if d.left.is_none() && d.right.is_none() {
            return Err(GeomError::InvalidSkeleton("no arm designated".into()));
        }
        let arm_indices = d.left.iter().chain(d.right.iter()).flat_map(|a| [a.shoulder, a.elbow, a.hand]);
        for idx in std::iter::once(d.root).chain(arm_indices) {
            if idx >= n {
                return Err(GeomError::InvalidSkeleton(format!("designated index {idx} out of range")));
            }
        }
        if d.root != 0 {
            return Err(GeomError::InvalidSkeleton("designated root must be joint 0".into()));
        }
        Ok(())
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn designated(&self) -> &Designated {
        &self.designated
    }

    pub fn arm(&self, hand: Hand) -> Option<ArmJoints> {
        match hand {
            Hand::Left => self.designated.left,
            Hand::Right => self.designated.right,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Hands whose arm joints are designated.
    pub fn hands(&self) -> impl Iterator<Item = Hand> + '_ {
        Hand::BOTH.into_iter().filter(|h| self.arm(*h).is_some())
    }

    /// Offsets are multiplied by `factor` (unit conversion).
    pub fn scaled(&self, factor: f64) -> Skeleton {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.offset = j.offset * factor;
        }
        s
    }
}

fn normalize_name(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).flat_map(|c| c.to_lowercase()).collect()
}

fn find_joint(joints: &[Joint], candidates: &[&str]) -> Option<usize> {
    let names: Vec<String> = joints.iter().map(|j| normalize_name(&j.name)).collect();
    candidates.iter().find_map(|c| names.iter().position(|n| n == c))
}

fn designate_by_name(joints: &[Joint]) -> Result<Designated, GeomError> {
    let arm = |side: &str, s: &str| -> Option<ArmJoints> {
        let shoulder = find_joint(
            joints,
            &[
                &format!("{side}arm"),
                &format!("{side}upperarm"),
                &format!("{s}upperarm"),
                &format!("{side}shoulder"),
                &format!("{s}shoulder"),
            ],
        );
        let elbow = find_joint(
            joints,
            &[&format!("{side}forearm"), &format!("{side}elbow"), &format!("{s}elbow"), &format!("{s}forearm")],
        );
        let hand = find_joint(joints, &[&format!("{side}hand"), &format!("{s}hand"), &format!("{side}wrist"), &format!("{s}wrist")]);
        match (shoulder, elbow, hand) {
            (Some(shoulder), Some(elbow), Some(hand)) => Some(ArmJoints { shoulder, elbow, hand }),
            _ => None,
        }
    };
    let d = Designated { root: 0, left: arm("left", "l"), right: arm("right", "r") };
    if d.left.is_none() && d.right.is_none() {
        return Err(GeomError::InvalidSkeleton("cannot locate arm joints by name".into()));
    }
    Ok(d)
}

/// Per-joint local rotations plus the root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root: Vec3,
    pub rotations: Vec<Rotation>,
}

impl Pose {
    pub fn identity(skel: &Skeleton, root: Vec3) -> Pose {
        Pose { root, rotations: vec![Rotation::IDENTITY; skel.len()] }
    }
}

/// World-space joint positions and orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPose {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Rotation>,
}

pub fn forward_kinematics_full(skel: &Skeleton, pose: &Pose) -> Result<WorldPose, GeomError> {
    if pose.rotations.len() != skel.len() {
        return Err(GeomError::PoseMismatch { expected: skel.len(), got: pose.rotations.len() });
    }
    let n = skel.len();
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Rotation> = Vec::with_capacity(n);
    for (i, joint) in skel.joints.iter().enumerate() {
        match joint.parent {
            None => {
                positions.push(pose.root);
                rotations.push(pose.rotations[i]);
            }
            Some(p) => {
                let pr = rotations[p];
                positions.push(positions[p] + pr.rotate(joint.offset));
                rotations.push(pr * pose.rotations[i]);
            }
        }
    }
    Ok(WorldPose { positions, rotations })
}

/// World positions of every joint. A child sits at its parent's position plus the
/// parent's world rotation applied to the child's offset.
pub fn forward_kinematics(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vec3>, GeomError> {
    forward_kinematics_full(skel, pose).map(|w| w.positions)
}

/// Repeated forward difference `(s[t+1] - s[t]) / dt`; the result is `order` samples shorter.
pub fn finite_difference(series: &[f64], dt: f64, order: usize) -> Result<Vec<f64>, GeomError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(GeomError::InvalidStep(dt));
    }
    if order == 0 || series.len() <= order {
        return Err(GeomError::SeriesTooShort { len: series.len(), order });
    }
    let mut out = series.to_vec();
    for _ in 0..order {
        out = out.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    }
    Ok(out)
}

/// Per-frame speed (norm of the forward difference) of a position track; length n-1.
pub fn speeds(track: &[Vec3], dt: f64) -> Vec<f64> {
    track.windows(2).map(|w| (w[1] - w[0]).norm() / dt).collect()
}

pub fn deg_to_rad(d: f64) -> f64 {
    d * PI / 180.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn angle_examples() {
        assert_eq!(angle_between(Vec3::X, Vec3::new(2.0, 0.0, 0.0)).unwrap(), 0.0);
        assert!((angle_between(Vec3::X, Vec3::Y).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((angle_between(Vec3::X, -Vec3::X).unwrap() - PI).abs() < 1e-15);
        assert_eq!(angle_between(Vec3::ZERO, Vec3::X), Err(GeomError::DegenerateVector));
        assert_eq!(angle_between(Vec3::X, Vec3::new(1e-10, 0.0, 0.0)), Err(GeomError::DegenerateVector));
    }

    fn two_joint() -> Skeleton {
        let joints = vec![
            Joint { name: "root".into(), parent: None, offset: Vec3::ZERO },
            Joint { name: "child".into(), parent: Some(0), offset: Vec3::new(0.0, 1.0, 0.0) },
        ];
        let arm = ArmJoints { shoulder: 0, elbow: 1, hand: 1 };
        Skeleton::new(joints, Designated { root: 0, left: Some(arm), right: None }).unwrap()
    }

    #[test]
    fn fk_rotated_parent() {
        let s = two_joint();
        let pose = Pose {
            root: Vec3::new(1.0, 2.0, 3.0),
            rotations: vec![Rotation::from_axis_angle(Vec3::Z, FRAC_PI_2), Rotation::IDENTITY],
        };
        let p = forward_kinematics(&s, &pose).unwrap();
        let expect = Vec3::new(0.0, 2.0, 3.0);
        assert!((p[1] - expect).norm() < 1e-12, "{}", p[1]);
    }

    #[test]
    fn fk_identity_sums_offsets() {
        let joints = vec![
            Joint { name: "a".into(), parent: None, offset: Vec3::ZERO },
            Joint { name: "b".into(), parent: Some(0), offset: Vec3::new(0.1, 0.2, 0.0) },
            Joint { name: "c".into(), parent: Some(1), offset: Vec3::new(0.0, -0.5, 0.3) },
        ];
        let arm = ArmJoints { shoulder: 0, elbow: 1, hand: 2 };
        let s = Skeleton::new(joints, Designated { root: 0, left: Some(arm), right: None }).unwrap();
        let t = Vec3::new(0.5, 1.0, -2.0);
        let p = forward_kinematics(&s, &Pose::identity(&s, t)).unwrap();
        assert_eq!(p[0], t);
        assert!((p[2] - (t + Vec3::new(0.1, -0.3, 0.3))).norm() < 1e-15);
    }

    #[test]
    fn fk_pose_mismatch() {
        let s = two_joint();
        let pose = Pose { root: Vec3::ZERO, rotations: vec![Rotation::IDENTITY] };
        assert!(matches!(forward_kinematics(&s, &pose), Err(GeomError::PoseMismatch { .. })));
    }

    #[test]
    fn skeleton_rejects_bad_topology() {
        let joints = vec![
            Joint { name: "a".into(), parent: Some(1), offset: Vec3::ZERO },
            Joint { name: "b".into(), parent: None, offset: Vec3::ZERO },
        ];
        let arm = ArmJoints { shoulder: 0, elbow: 1, hand: 1 };
        assert!(Skeleton::new(joints, Designated { root: 0, left: Some(arm), right: None }).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        assert_eq!(finite_difference(&[0.0, 1.0, 2.0, 3.0], 1.0, 1).unwrap(), vec![1.0, 1.0, 1.0]);
        for order in 1..=3 {
            let d = finite_difference(&[2.5; 8], 0.1, order).unwrap();
            assert_eq!(d.len(), 8 - order);
            assert!(d.iter().all(|&v| v == 0.0));
        }
        assert!(matches!(finite_difference(&[1.0, 2.0], 1.0, 2), Err(GeomError::SeriesTooShort { .. })));
        assert!(finite_difference(&[1.0, 2.0], 0.0, 1).is_err());
    }

    #[test]
    fn finite_difference_of_sine_tracks_cosine() {
        let dt = 0.001;
        let s: Vec<f64> = (0..6284).map(|i| (i as f64 * dt).sin()).collect();
        let d = finite_difference(&s, dt, 1).unwrap();
        let sup = d
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (i as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-3, "sup error {sup}");
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vec3::new(0.3, -1.2, 0.7);
        let r = Rotation::from_rotation_vector(v);
        assert!((r.to_rotation_vector() - v).norm() < 1e-12);
        assert!((r.norm() - 1.0).abs() < 1e-12);
        assert!((r.angle() - v.norm()).abs() < 1e-12);
    }

    #[test]
    fn from_basis_recovers_rotation() {
        let r = Rotation::from_rotation_vector(Vec3::new(-2.0, 0.4, 1.1));
        let back = Rotation::from_basis(r.rotate(Vec3::X), r.rotate(Vec3::Y), r.rotate(Vec3::Z));
        assert!(r.geodesic(back) < 1e-9);
    }

    #[test]
    fn geodesic_of_single_axis_rotation() {
        let a = Rotation::from_axis_angle(Vec3::Y, 0.2);
        let b = Rotation::from_axis_angle(Vec3::Y, 0.5);
        assert!((a.geodesic(b) - 0.3).abs() < 1e-12);
        assert!(a.geodesic(a) < 1e-7);
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn angle_symmetric_and_scale_invariant(u in vec3(), v in vec3(), a in 0.01..100.0f64, b in 0.01..100.0f64) {
            prop_assume!(u.norm() > 1e-3 && v.norm() > 1e-3);
            let uv = angle_between(u, v).unwrap();
            prop_assert_eq!(uv, angle_between(v, u).unwrap());
            prop_assert!((uv - angle_between(u * a, v * b).unwrap()).abs() < 1e-7);
            prop_assert!((0.0..=PI).contains(&uv));
        }

        #[test]
        fn fk_preserves_bone_lengths(rvs in proptest::collection::vec(vec3(), 3), root in vec3()) {
            let joints = vec![
                Joint { name: "a".into(), parent: None, offset: Vec3::ZERO },
                Joint { name: "b".into(), parent: Some(0), offset: Vec3::new(0.1, 0.2, 0.0) },
                Joint { name: "c".into(), parent: Some(1), offset: Vec3::new(0.0, -0.5, 0.3) },
            ];
            let arm = ArmJoints { shoulder: 0, elbow: 1, hand: 2 };
            let s = Skeleton::new(joints, Designated { root: 0, left: Some(arm), right: None }).unwrap();
            let pose = Pose { root, rotations: rvs.iter().map(|v| Rotation::from_rotation_vector(*v)).collect() };
            let p = forward_kinematics(&s, &pose).unwrap();
            for (i, j) in s.joints().iter().enumerate().skip(1) {
                let parent = j.parent.unwrap();
                prop_assert!(((p[i] - p[parent]).norm() - j.offset.norm()).abs() < 1e-9);
            }
        }

        #[test]
        fn difference_shortens_by_order(s in proptest::collection::vec(-10.0..10.0f64, 5..40), order in 1usize..4) {
            prop_assert_eq!(finite_difference(&s, 0.5, order).unwrap().len(), s.len() - order);
        }
    }
}
