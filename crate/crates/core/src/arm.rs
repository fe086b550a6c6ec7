//! Arm-chain model: 3-DoF shoulder (rotation vector) plus 1-DoF elbow hinge.
//!
//! The shoulder's local rotation is the exponential of a rotation vector, the elbow flexes
//! about its local X axis with positive angles swinging the forearm toward the front of a
//! hanging arm. Both rest bone directions must be parallel (a straight hanging arm).

use serde::{Deserialize, Serialize};

use crate::geom::{self, ArmJoints, Designated, GeomError, Hand, Joint, Pose, Rotation, Skeleton, Vec3};

/// Number of actuated degrees of freedom of one arm.
pub const ARM_DOF: usize = 4;

/// Elbow swivel reference: elbows prefer to hang down and slightly back.
const POLE: Vec3 = Vec3::new(0.0, -0.980_580_675_690_920_2, -0.196_116_135_138_184_03);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmAngles {
    /// Shoulder rotation vector (radians).
    pub shoulder: Vec3,
    /// Elbow flexion (radians); 0 is a straight arm.
    pub elbow: f64,
}

impl ArmAngles {
    pub fn to_array(self) -> [f64; ARM_DOF] {
        [self.shoulder.x, self.shoulder.y, self.shoulder.z, self.elbow]
    }

    pub fn from_slice(q: &[f64]) -> ArmAngles {
        ArmAngles { shoulder: Vec3::new(q[0], q[1], q[2]), elbow: q[3] }
    }

    /// Angles of the mirror-image motion across the body midline (x → −x), as used by the
    /// opposite arm.
    pub fn mirrored(self) -> ArmAngles {
        ArmAngles { shoulder: Vec3::new(self.shoulder.x, -self.shoulder.y, -self.shoulder.z), elbow: self.elbow }
    }

    pub fn local_rotations(self) -> (Rotation, Rotation) {
        (Rotation::from_rotation_vector(self.shoulder), Rotation::from_axis_angle(Vec3::X, -self.elbow))
    }
}

/// Nine-joint upper-body skeleton used by the generator and the simulated arm.
///
/// Hips → Chest → {Head, LeftArm → LeftForeArm → LeftHand, RightArm → RightForeArm → RightHand}.
/// Shoulders sit 1.45 m above the floor when the root is placed at `STANDARD_ROOT`.
pub fn standard_skeleton() -> Skeleton {
    let j = |name: &str, parent: Option<usize>, o: [f64; 3]| Joint { name: name.into(), parent, offset: o.into() };
    let joints = vec![
        j("Hips", None, [0.0, 0.0, 0.0]),
        j("Chest", Some(0), [0.0, 0.40, 0.0]),
        j("Head", Some(1), [0.0, 0.25, 0.0]),
        j("LeftArm", Some(1), [0.18, 0.05, 0.0]),
        j("LeftForeArm", Some(3), [0.0, -0.30, 0.0]),
        j("LeftHand", Some(4), [0.0, -0.27, 0.0]),
        j("RightArm", Some(1), [-0.18, 0.05, 0.0]),
        j("RightForeArm", Some(6), [0.0, -0.30, 0.0]),
        j("RightHand", Some(7), [0.0, -0.27, 0.0]),
    ];
    let designated = Designated {
        root: 0,
        left: Some(ArmJoints { shoulder: 3, elbow: 4, hand: 5 }),
        right: Some(ArmJoints { shoulder: 6, elbow: 7, hand: 8 }),
    };
    Skeleton::new(joints, designated).expect("standard skeleton is valid")
}

pub const STANDARD_ROOT: Vec3 = Vec3::new(0.0, 1.0, 0.0);

/// Kinematic model of one arm of a skeleton whose torso is held at a fixed pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub hand: Hand,
    pub joints: ArmJoints,
    /// World position of the shoulder joint.
    pub shoulder: Vec3,
    /// World rotation of the shoulder's parent.
    parent_rotation: Rotation,
    pub upper_len: f64,
    pub fore_len: f64,
    rest_dir: Vec3,
}

impl ArmModel {
    /// Builds the arm model with the torso taken from `rest` (arm rotations are ignored).
    pub fn new(skel: &Skeleton, rest: &Pose, hand: Hand) -> Result<ArmModel, GeomError> {
        let joints = skel
            .arm(hand)
            .ok_or_else(|| GeomError::InvalidSkeleton(format!("no {hand} arm designated")))?;
        let world = geom::forward_kinematics_full(skel, rest)?;
        let parent = skel.joints()[joints.shoulder].parent.ok_or_else(|| {
            GeomError::InvalidSkeleton("shoulder joint cannot be the root".into())
        })?;
        let upper = skel.joints()[joints.elbow].offset;
        let fore = skel.joints()[joints.hand].offset;
        if skel.joints()[joints.elbow].parent != Some(joints.shoulder)
            || skel.joints()[joints.hand].parent != Some(joints.elbow)
        {
            return Err(GeomError::InvalidSkeleton("arm joints do not form a chain".into()));
        }
        let rest_dir = upper.normalized()?;
        let fore_dir = fore.normalized()?;
        if rest_dir.dot(fore_dir) < 1.0 - 1e-9 {
            return Err(GeomError::InvalidSkeleton("arm rest offsets must be collinear".into()));
        }
        if (rest_dir - Vec3::new(0.0, -1.0, 0.0)).norm() > 1e-9 {
            return Err(GeomError::InvalidSkeleton("arm must hang along -Y at rest".into()));
        }
        Ok(ArmModel {
            hand,
            joints,
            shoulder: world.positions[joints.shoulder],
            parent_rotation: world.rotations[parent],
            upper_len: upper.norm(),
            fore_len: fore.norm(),
            rest_dir,
        })
    }

    pub fn reach(&self) -> f64 {
        self.upper_len + self.fore_len
    }

    /// World elbow and hand positions for the given joint angles.
    pub fn positions(&self, q: ArmAngles) -> (Vec3, Vec3) {
        let (rs, re) = q.local_rotations();
        let upper_world = self.parent_rotation * rs;
        let elbow = self.shoulder + upper_world.rotate(self.rest_dir * self.upper_len);
        let hand = elbow + (upper_world * re).rotate(self.rest_dir * self.fore_len);
        (elbow, hand)
    }

    /// Joint angles placing the elbow at `elbow` and the hand along `hand - elbow`.
    ///
    /// Only the bone directions are used; lengths are implied by the model.
    pub fn angles_from_points(&self, elbow: Vec3, hand: Vec3) -> ArmAngles {
        let e = (elbow - self.shoulder).normalized().unwrap_or(self.rest_dir);
        let d = (hand - elbow).normalized().unwrap_or(e);
        let flex = geom::angle_between(e, d).unwrap_or(0.0);
        let bend = d - e * d.dot(e);
        let w2 = if bend.norm() > 1e-9 {
            bend / bend.norm()
        } else {
            // straight arm: pick the twist that keeps the rest bend plane (local +Z)
            let base = self.parent_rotation.rotate(Vec3::Z);
            let p = base - e * base.dot(e);
            p.normalized().unwrap_or_else(|_| e.any_orthogonal())
        };
        let w3 = e.cross(w2);
        // local frame: u1 = rest_dir (-Y), u2 = +Z (bend direction of positive flexion)
        let u1 = self.rest_dir;
        let u2 = Vec3::Z;
        let u3 = u1.cross(u2);
        // world = R * local, R = W U^T, columns of R are images of X, Y, Z
        let col = |k: Vec3| -> Vec3 { e * u1.dot(k) + w2 * u2.dot(k) + w3 * u3.dot(k) };
        let world = Rotation::from_basis(col(Vec3::X), col(Vec3::Y), col(Vec3::Z));
        let local = self.parent_rotation.conjugate() * world;
        ArmAngles { shoulder: local.to_rotation_vector(), elbow: flex }
    }

    fn swivel_basis(&self, dir: Vec3) -> (Vec3, Vec3) {
        let p = POLE - dir * POLE.dot(dir);
        let b1 = p.normalized().unwrap_or_else(|_| {
            let q = Vec3::X - dir * dir.x;
            q / q.norm()
        });
        (b1, dir.cross(b1))
    }

    /// Two-link inverse kinematics: elbow position for a hand at `hand` with swivel angle
    /// `swivel` about the shoulder→hand axis (0 = elbow toward the down/back pole).
    ///
    /// Hand distances outside the chain's workspace are clamped onto it; the returned hand
    /// is the (possibly clamped) hand position.
    pub fn solve(&self, hand: Vec3, swivel: f64) -> (Vec3, Vec3) {
        let lu = self.upper_len;
        let lf = self.fore_len;
        let v = hand - self.shoulder;
        let dir = v.normalized().unwrap_or(self.rest_dir);
        let r = v.norm().clamp((lu - lf).abs() + 1e-9, lu + lf);
        let cos_phi = ((lu * lu + r * r - lf * lf) / (2.0 * lu * r)).clamp(-1.0, 1.0);
        let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
        let (b1, b2) = self.swivel_basis(dir);
        let center = self.shoulder + dir * (lu * cos_phi);
        let elbow = center + (b1 * swivel.cos() + b2 * swivel.sin()) * (lu * sin_phi);
        (elbow, self.shoulder + dir * r)
    }

    /// Swivel angle of an elbow position relative to the shoulder→hand axis.
    pub fn swivel_of(&self, elbow: Vec3, hand: Vec3) -> f64 {
        let dir = (hand - self.shoulder).normalized().unwrap_or(self.rest_dir);
        let (b1, b2) = self.swivel_basis(dir);
        let v = elbow - self.shoulder;
        let perp = v - dir * v.dot(dir);
        if perp.norm() < 1e-12 {
            return 0.0;
        }
        perp.dot(b2).atan2(perp.dot(b1))
    }

    /// Writes this arm's joint angles into a pose.
    pub fn apply(&self, pose: &mut Pose, q: ArmAngles) {
        let (rs, re) = q.local_rotations();
        pose.rotations[self.joints.shoulder] = rs;
        pose.rotations[self.joints.elbow] = re;
        pose.rotations[self.joints.hand] = Rotation::IDENTITY;
    }

    /// Reads this arm's joint angles back from a pose.
    pub fn extract(&self, pose: &Pose) -> ArmAngles {
        let rs = pose.rotations[self.joints.shoulder];
        let re = pose.rotations[self.joints.elbow];
        // twist of the elbow rotation about local X
        let [w, x, _, _] = re.wxyz();
        ArmAngles { shoulder: rs.to_rotation_vector(), elbow: -2.0 * x.atan2(w) }
    }
}
