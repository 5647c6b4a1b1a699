//! Serial-chain forward kinematics and differential kinematics.
//!
//! Robots are described by standard (distal) Denavit–Hartenberg parameters
//! plus a base pose and a tool translation along the last frame's z-axis,
//! so the instrument shaft direction is `r k̂ r*` of the tip rotation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::{PureQuaternion, Quaternion, UnitQuaternion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint: DH row `(θ-offset, d, a, α)` with position limits.
///
/// For a revolute joint the variable adds to `θ`; for a prismatic joint it
/// adds to `d`. Angles in radians, lengths in millimeters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    pub theta_offset: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Rigid pose: rotation plus translation, in world millimeters.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub r: UnitQuaternion,
    pub t: PureQuaternion,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            r: UnitQuaternion::identity(),
            t: PureQuaternion::zero(),
        }
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            r: self.r.compose(rhs.r),
            t: self.t + self.r.rotate_vector(rhs.t),
        }
    }
}

/// A fixed-base serial manipulator.
#[derive(Clone, Debug)]
pub struct SerialManipulator {
    joints: Vec<Joint>,
    base: Pose,
    tool_length: f64,
}

impl SerialManipulator {
    pub fn new(joints: Vec<Joint>, base: Pose, tool_length: f64) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Config("a robot needs at least one joint".into()));
        }
        for (k, j) in joints.iter().enumerate() {
            if !(j.lower < j.upper) {
                return Err(Error::Config(format!(
                    "joint {k}: lower limit {} must be below upper limit {}",
                    j.lower, j.upper
                )));
            }
            if !(j.theta_offset.is_finite() && j.alpha.is_finite() && j.d.is_finite() && j.a.is_finite()) {
                return Err(Error::Config(format!("joint {k}: non-finite DH parameter")));
            }
        }
        Ok(Self {
            joints,
            base,
            tool_length,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn tool_length(&self) -> f64 {
        self.tool_length
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                context: "joint vector",
                expected: self.joints.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Pose of the DH step for joint `k` at joint value `q`.
    fn joint_step(&self, k: usize, q: f64) -> Pose {
        let j = &self.joints[k];
        let (theta, d) = match j.kind {
            JointKind::Revolute => (j.theta_offset + q, j.d),
            JointKind::Prismatic => (j.theta_offset, j.d + q),
        };
        let (st, ct) = (theta / 2.0).sin_cos();
        let (sa, ca) = (j.alpha / 2.0).sin_cos();
        // Rz(θ)·Rx(α) expanded; translation is (a cosθ, a sinθ, d).
        let rot = Quaternion::new(ct * ca, ct * sa, st * sa, st * ca);
        Pose {
            r: UnitQuaternion::new(rot).expect("DH step rotation is unit by construction"),
            t: PureQuaternion::new(j.a * theta.cos(), j.a * theta.sin(), d),
        }
    }

    /// Poses of every joint frame (after the joint transform), preceded by
    /// the base pose: `frames[0] = base`, `frames[k+1] = base ∘ A₁ … A_{k+1}`.
    fn frames(&self, q: &[f64]) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.joints.len() + 1);
        out.push(self.base);
        let mut acc = self.base;
        for (k, qk) in q.iter().enumerate() {
            acc = acc.compose(&self.joint_step(k, *qk));
            out.push(acc);
        }
        out
    }

    /// Tip pose: all joints, then the tool translation along the last z-axis.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose> {
        self.check_dim(q)?;
        let last = *self.frames(q).last().expect("nonempty chain");
        let tool = Pose {
            r: UnitQuaternion::identity(),
            t: PureQuaternion::new(0.0, 0.0, self.tool_length),
        };
        Ok(last.compose(&tool))
    }

    /// 4×n translation Jacobian of the tip: `vec4(ṫ) = J_t q̇`.
    ///
    /// The first row is identically zero (pure-quaternion convention).
    pub fn translation_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(q)?;
        let frames = self.frames(q);
        let tip = self.forward_kinematics(q)?;
        let n = self.joints.len();
        let mut j = DMatrix::zeros(4, n);
        for k in 0..n {
            let axis = frames[k].r.rotate_vector(PureQuaternion::k());
            let col = match self.joints[k].kind {
                JointKind::Revolute => axis.cross(tip.t - frames[k].t),
                JointKind::Prismatic => axis,
            };
            j[(1, k)] = col.x;
            j[(2, k)] = col.y;
            j[(3, k)] = col.z;
        }
        Ok(j)
    }

    /// 4×n rotation Jacobian of the tip: `vec4(ṙ) = J_r q̇`.
    ///
    /// Columns of prismatic joints are zero; a revolute column is
    /// `½ vec4(ẑₖ · r)` for the joint's world axis `ẑₖ`.
    pub fn rotation_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(q)?;
        let frames = self.frames(q);
        let r_tip = frames.last().expect("nonempty chain").r.quaternion();
        let n = self.joints.len();
        let mut j = DMatrix::zeros(4, n);
        for k in 0..n {
            if self.joints[k].kind == JointKind::Prismatic {
                continue;
            }
            let axis = frames[k].r.rotate_vector(PureQuaternion::k());
            let col = (axis.as_quaternion() * r_tip).vec4() * 0.5;
            j.set_column(k, &col);
        }
        Ok(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use std::f64::consts::FRAC_PI_2;

    fn revolute_z(a: f64) -> SerialManipulator {
        // Single revolute joint about world z with link length a, no tool.
        let j = Joint {
            kind: JointKind::Revolute,
            theta_offset: 0.0,
            d: 0.0,
            a,
            alpha: 0.0,
            lower: -3.0,
            upper: 3.0,
        };
        SerialManipulator::new(vec![j], Pose::identity(), 0.0).unwrap()
    }

    fn prismatic_z() -> SerialManipulator {
        let j = Joint {
            kind: JointKind::Prismatic,
            theta_offset: 0.0,
            d: 0.0,
            a: 0.0,
            alpha: 0.0,
            lower: -100.0,
            upper: 100.0,
        };
        SerialManipulator::new(vec![j], Pose::identity(), 0.0).unwrap()
    }

    #[test]
    fn single_revolute_fk() {
        let r = revolute_z(10.0);
        let p0 = r.forward_kinematics(&[0.0]).unwrap();
        assert_relative_eq!(p0.t.x, 10.0, epsilon = 1e-12);
        assert_relative_eq!(p0.t.y, 0.0, epsilon = 1e-12);

        let p90 = r.forward_kinematics(&[FRAC_PI_2]).unwrap();
        assert_relative_eq!(p90.t.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p90.t.y, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn single_revolute_translation_jacobian() {
        let r = revolute_z(10.0);
        let j = r.translation_jacobian(&[0.0]).unwrap();
        // ẑ × (10, 0, 0) = (0, 10, 0)
        assert_relative_eq!(j[(0, 0)], 0.0);
        assert_relative_eq!(j[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(j[(2, 0)], 10.0, epsilon = 1e-12);
        assert_relative_eq!(j[(3, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn prismatic_jacobians() {
        let r = prismatic_z();
        let jt = r.translation_jacobian(&[5.0]).unwrap();
        assert_relative_eq!(jt[(3, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(jt[(1, 0)], 0.0, epsilon = 1e-12);
        let jr = r.rotation_jacobian(&[5.0]).unwrap();
        assert_relative_eq!(jr.norm(), 0.0);
    }

    #[test]
    fn single_revolute_rotation_jacobian_at_zero() {
        let r = revolute_z(10.0);
        let j = r.rotation_jacobian(&[0.0]).unwrap();
        // ½ vec4(k̂ · 1) = (0, 0, 0, ½)
        assert_relative_eq!(j[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(j[(3, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = revolute_z(10.0);
        assert!(r.forward_kinematics(&[0.0, 0.0]).is_err());
        assert!(r.translation_jacobian(&[]).is_err());
        assert!(r.rotation_jacobian(&[]).is_err());
    }

    #[test]
    fn bad_limits_rejected() {
        let j = Joint {
            kind: JointKind::Revolute,
            theta_offset: 0.0,
            d: 0.0,
            a: 1.0,
            alpha: 0.0,
            lower: 1.0,
            upper: 1.0,
        };
        assert!(SerialManipulator::new(vec![j], Pose::identity(), 0.0).is_err());
    }

    /// Independent oracle: the same chain evaluated with homogeneous 4×4
    /// transform multiplication.
    fn homogeneous_fk(robot: &SerialManipulator, q: &[f64]) -> Matrix4<f64> {
        fn dh(theta: f64, d: f64, a: f64, alpha: f64) -> Matrix4<f64> {
            let (st, ct) = theta.sin_cos();
            let (sa, ca) = alpha.sin_cos();
            Matrix4::new(
                ct, -st * ca, st * sa, a * ct, //
                st, ct * ca, -ct * sa, a * st, //
                0.0, sa, ca, d, //
                0.0, 0.0, 0.0, 1.0,
            )
        }
        let b = robot.base();
        let bq = b.r.quaternion();
        let (w, x, y, z) = (bq.w, bq.x, bq.y, bq.z);
        let mut m = Matrix4::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            b.t.x,
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            b.t.y,
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
            b.t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        for (k, joint) in robot.joints().iter().enumerate() {
            let (theta, d) = match joint.kind {
                JointKind::Revolute => (joint.theta_offset + q[k], joint.d),
                JointKind::Prismatic => (joint.theta_offset, joint.d + q[k]),
            };
            m *= dh(theta, d, joint.a, joint.alpha);
        }
        m *= Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, robot.tool_length(), //
            0.0, 0.0, 0.0, 1.0,
        );
        m
    }

    #[test]
    fn fk_matches_homogeneous_oracle() {
        // A bent 6R chain with a tool, sampled at an arbitrary configuration.
        let joints: Vec<Joint> = [
            (0.0, 200.0, 0.0, -FRAC_PI_2),
            (-FRAC_PI_2, 0.0, 180.0, 0.0),
            (0.0, 0.0, 0.0, -FRAC_PI_2),
            (0.0, 180.0, 0.0, FRAC_PI_2),
            (0.0, 0.0, 0.0, -FRAC_PI_2),
            (0.0, 40.0, 0.0, 0.0),
        ]
        .iter()
        .map(|&(theta_offset, d, a, alpha)| Joint {
            kind: JointKind::Revolute,
            theta_offset,
            d,
            a,
            alpha,
            lower: -6.0,
            upper: 6.0,
        })
        .collect();
        let base = Pose {
            r: UnitQuaternion::from_axis_angle(PureQuaternion::j(), 0.3).unwrap(),
            t: PureQuaternion::new(250.0, -40.0, -110.0),
        };
        let robot = SerialManipulator::new(joints, base, 50.0).unwrap();
        let q = [0.31, -0.52, 0.77, -0.21, 0.43, 1.11];

        let pose = robot.forward_kinematics(&q).unwrap();
        let m = homogeneous_fk(&robot, &q);
        assert_relative_eq!(pose.t.x, m[(0, 3)], epsilon = 1e-9);
        assert_relative_eq!(pose.t.y, m[(1, 3)], epsilon = 1e-9);
        assert_relative_eq!(pose.t.z, m[(2, 3)], epsilon = 1e-9);

        // Rotation agreement via the action on basis vectors.
        for (axis, col) in [
            (PureQuaternion::i(), 0),
            (PureQuaternion::j(), 1),
            (PureQuaternion::k(), 2),
        ] {
            let v = pose.r.rotate_vector(axis);
            assert_relative_eq!(v.x, m[(0, col)], epsilon = 1e-9);
            assert_relative_eq!(v.y, m[(1, col)], epsilon = 1e-9);
            assert_relative_eq!(v.z, m[(2, col)], epsilon = 1e-9);
        }
    }
}
