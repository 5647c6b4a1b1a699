//! Orbital-manipulation geometry: shaft lines through a rotatable spherical
//! body, the sliding remote-center-of-motion (RCM) points where the shafts
//! pierce the sphere, the squared distance between the two RCM points, the
//! full Jacobian chain for all of it, and the inequality rows that keep the
//! RCM distance in a band and the sphere rotation within limits.
//!
//! The world frame sits at the sphere center; all lengths in millimeters.

use nalgebra::{DMatrix, Matrix3, Matrix4, RowDVector, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::quat::{c4, PureQuaternion, Quaternion, UnitQuaternion};
use crate::vfi::{point_plane_signed, ConstraintRow, Plane};

/// Geometry degenerates when the tip gets this close to the sphere surface.
pub const H1_EPS_MM: f64 = 1e-6;

/// Slack applied when checking band/plane feasibility inside row builders.
const ROW_FEASIBILITY_SLACK: f64 = 1e-6;

/// The spherical body, centered at the world origin.
#[derive(Clone, Copy, Debug)]
pub struct EyeModel {
    radius: f64,
}

impl EyeModel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("eye radius must be > 0, got {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Instrument shaft direction `l = r k̂ r*`: the tool z-axis, pointing from
/// the insertion point toward the tip.
pub fn shaft_direction(r: UnitQuaternion) -> PureQuaternion {
    r.rotate_vector(PureQuaternion::k())
}

/// Distance from the tip back along the shaft to the sphere surface.
///
/// Returns `(d, h1)` with `h1 = √(⟨t,l⟩² − ‖t‖² + r²)` and `d = ⟨t,l⟩ + h1`;
/// of the two sphere intersections only the positive root matters because
/// `l` points down the shaft into the body. Requires the tip strictly
/// inside the sphere.
pub fn insertion_depth(t: PureQuaternion, l: PureQuaternion, r_eye: f64) -> Result<(f64, f64)> {
    let interior = r_eye * r_eye - t.norm_squared();
    if interior <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "instrument tip is on or outside the sphere (‖t‖ = {:.6} mm, r = {r_eye} mm)",
            t.norm()
        )));
    }
    let s = t.dot(l);
    let h1 = (s * s + interior).sqrt();
    if h1 <= H1_EPS_MM {
        return Err(Error::DegenerateGeometry(format!(
            "tip at the sphere surface (h1 = {h1:.3e} mm)"
        )));
    }
    Ok((s + h1, h1))
}

/// RCM point of a shaft: `t_OM = t − d·l`, which lies on the sphere.
pub fn rcm_translation(t: PureQuaternion, d: f64, l: PureQuaternion) -> PureQuaternion {
    t - l.scale(d)
}

/// Squared distance between the two RCM points.
pub fn orbital_squared_distance(t_om_1: PureQuaternion, t_om_2: PureQuaternion) -> f64 {
    (t_om_1 - t_om_2).norm_squared()
}

/// 4×n Jacobian of the shaft direction:
/// `J_l = (H⁻(k̂ r*) + H⁺(r k̂) C4) · J_r`.
pub fn line_jacobian(r: UnitQuaternion, j_r: &DMatrix<f64>) -> DMatrix<f64> {
    let rq = r.quaternion();
    let k = PureQuaternion::k().as_quaternion();
    let left: Matrix4<f64> =
        (k * rq.conjugate()).hamilton_minus() + (rq * k).hamilton_plus() * c4();
    DMatrix::from_column_slice(4, 4, left.as_slice()) * j_r
}

/// Row Jacobians of the depth chain.
///
/// `J_h2 = vec4(l)ᵀ J_t + vec4(t)ᵀ J_l` (the `⟨ṫ,l⟩ + ⟨t,l̇⟩` term),
/// `J_h1 = (⟨t,l⟩ J_h2 − vec4(t)ᵀ J_t) / h1` (chain rule through the square
/// root), and `J_d = J_h2 + J_h1`.
pub fn depth_jacobian(
    t: PureQuaternion,
    l: PureQuaternion,
    h1: f64,
    j_t: &DMatrix<f64>,
    j_l: &DMatrix<f64>,
) -> Result<(RowDVector<f64>, RowDVector<f64>, RowDVector<f64>)> {
    if h1 <= H1_EPS_MM {
        return Err(Error::DegenerateGeometry(format!(
            "depth Jacobian undefined at the sphere surface (h1 = {h1:.3e} mm)"
        )));
    }
    let j_h2 = l.vec4().transpose() * j_t + t.vec4().transpose() * j_l;
    let j_h1 = (&j_h2 * t.dot(l) - t.vec4().transpose() * j_t) / h1;
    let j_d = &j_h2 + &j_h1;
    Ok((
        RowDVector::from_row_slice(j_h2.as_slice()),
        RowDVector::from_row_slice(j_h1.as_slice()),
        RowDVector::from_row_slice(j_d.as_slice()),
    ))
}

/// 4×n Jacobian of the RCM point: `J_tOM = J_t − vec4(l)·J_d − d·J_l`.
pub fn rcm_translation_jacobian(
    j_t: &DMatrix<f64>,
    l: PureQuaternion,
    j_d: &RowDVector<f64>,
    d: f64,
    j_l: &DMatrix<f64>,
) -> DMatrix<f64> {
    let l4 = nalgebra::DVector::from_column_slice(l.vec4().as_slice());
    j_t - l4 * j_d - j_l * d
}

/// 1×(n₁+n₂) Jacobian of the squared RCM distance:
/// `J_OM = 2 vec4(t_OM,1 − t_OM,2)ᵀ [J_tOM,1 | −J_tOM,2]`.
pub fn orbital_distance_jacobian(
    t_om_1: PureQuaternion,
    t_om_2: PureQuaternion,
    j_tom_1: &DMatrix<f64>,
    j_tom_2: &DMatrix<f64>,
) -> RowDVector<f64> {
    let diff = (t_om_1 - t_om_2).vec4().transpose() * 2.0;
    let left = &diff * j_tom_1;
    let right = &diff * j_tom_2;
    let (n1, n2) = (j_tom_1.ncols(), j_tom_2.ncols());
    let mut row = RowDVector::zeros(n1 + n2);
    row.view_mut((0, 0), (1, n1)).copy_from(&left);
    row.view_mut((0, n1), (1, n2)).copy_from(&(-right));
    row
}

/// The two band rows that keep `D_OM` within `D_init ± D_safe`:
/// `[−J_OM; +J_OM] q̇ ≤ η_OM [D̃⁺; D̃⁻]` with `D̃⁺ = D_OM − (D_init − D_safe)`
/// and `D̃⁻ = (D_init + D_safe) − D_OM`. A negative margin yields a negative
/// bound, which forces recovery back into the band.
pub fn orbital_vfi_rows_unchecked(
    d_om: f64,
    d_init: f64,
    d_safe: f64,
    eta_om: f64,
    j_om: &RowDVector<f64>,
) -> [ConstraintRow; 2] {
    let lower_margin = d_om - (d_init - d_safe);
    let upper_margin = (d_init + d_safe) - d_om;
    [
        ConstraintRow::new(-j_om.clone(), eta_om * lower_margin),
        ConstraintRow::new(j_om.clone(), eta_om * upper_margin),
    ]
}

/// [`orbital_vfi_rows_unchecked`] plus the start-of-run feasibility check:
/// the state must already lie inside the band.
pub fn orbital_vfi_rows(
    d_om: f64,
    d_init: f64,
    d_safe: f64,
    eta_om: f64,
    j_om: &RowDVector<f64>,
) -> Result<[ConstraintRow; 2]> {
    if (d_om - d_init).abs() > d_safe + ROW_FEASIBILITY_SLACK {
        return Err(Error::Config(format!(
            "RCM distance {d_om:.9} mm² outside the allowed band {:.9} ± {d_safe} mm²",
            d_init
        )));
    }
    Ok(orbital_vfi_rows_unchecked(d_om, d_init, d_safe, eta_om, j_om))
}

/// The planes limiting sphere rotation and their gain.
///
/// `plane_x_r1`/`plane_x_r2` pass through the center perpendicular to the
/// x-axis, oriented so each robot's RCM stays in its own hemisphere.
/// `plane_z` is perpendicular to the z-axis at height `d_rot` (half the
/// sphere radius by default); both RCM points must stay above it.
#[derive(Clone, Copy, Debug)]
pub struct RotationLimits {
    pub plane_x_r1: Plane,
    pub plane_x_r2: Plane,
    pub plane_z: Plane,
    pub eta_rot: f64,
}

impl RotationLimits {
    /// Limits for robot 1 entering on +x and robot 2 on −x.
    pub fn standard(d_rot: f64, eta_rot: f64) -> Result<Self> {
        Ok(Self {
            plane_x_r1: Plane::new(PureQuaternion::i(), 0.0)?,
            plane_x_r2: Plane::new(-PureQuaternion::i(), 0.0)?,
            plane_z: Plane::new(PureQuaternion::k(), d_rot)?,
            eta_rot,
        })
    }

    /// Signed distances `[x-plane R1, x-plane R2, z-plane R1, z-plane R2]`
    /// of the RCM points; all must stay nonnegative.
    pub fn signed_distances(&self, t_om_1: PureQuaternion, t_om_2: PureQuaternion) -> [f64; 4] {
        let d = |p: &Plane, t: PureQuaternion| t.dot(p.normal()) - p.offset();
        [
            d(&self.plane_x_r1, t_om_1),
            d(&self.plane_x_r2, t_om_2),
            d(&self.plane_z, t_om_1),
            d(&self.plane_z, t_om_2),
        ]
    }
}

/// Four restricted-zone rows `−J_rot q̇ ≤ η_rot d_rot` keeping both RCM
/// points on the allowed side of both planes. Row order matches
/// [`RotationLimits::signed_distances`].
pub fn rotation_limit_rows(
    t_om_1: PureQuaternion,
    t_om_2: PureQuaternion,
    j_tom_1: &DMatrix<f64>,
    j_tom_2: &DMatrix<f64>,
    limits: &RotationLimits,
) -> Result<[ConstraintRow; 4]> {
    let (n1, n2) = (j_tom_1.ncols(), j_tom_2.ncols());
    let n = n1 + n2;
    let build = |plane: &Plane,
                 t: PureQuaternion,
                 j: &DMatrix<f64>,
                 offset: usize|
     -> Result<ConstraintRow> {
        let (dist, j_d) = point_plane_signed(t, plane, j);
        if dist < -ROW_FEASIBILITY_SLACK {
            return Err(Error::InitialViolation {
                constraint: "rotation limit plane".into(),
                margin: dist,
            });
        }
        Ok(ConstraintRow::from_block(n, offset, &(-j_d), limits.eta_rot * dist))
    };
    Ok([
        build(&limits.plane_x_r1, t_om_1, j_tom_1, 0)?,
        build(&limits.plane_x_r2, t_om_2, j_tom_2, n1)?,
        build(&limits.plane_z, t_om_1, j_tom_1, 0)?,
        build(&limits.plane_z, t_om_2, j_tom_2, n1)?,
    ])
}

/// Everything the constraints need about one robot's shaft at one instant.
#[derive(Clone, Debug)]
pub struct ShaftState {
    pub l: PureQuaternion,
    pub d: f64,
    pub h1: f64,
    pub t_om: PureQuaternion,
    pub j_l: DMatrix<f64>,
    pub j_d: RowDVector<f64>,
    pub j_tom: DMatrix<f64>,
}

impl ShaftState {
    /// Computes the whole per-robot chain from tip pose and Jacobians.
    pub fn compute(
        tip_t: PureQuaternion,
        tip_r: UnitQuaternion,
        j_t: &DMatrix<f64>,
        j_r: &DMatrix<f64>,
        r_eye: f64,
    ) -> Result<Self> {
        let l = shaft_direction(tip_r);
        let (d, h1) = insertion_depth(tip_t, l, r_eye)?;
        let t_om = rcm_translation(tip_t, d, l);
        let j_l = line_jacobian(tip_r, j_r);
        let (_, _, j_d) = depth_jacobian(tip_t, l, h1, j_t, &j_l)?;
        let j_tom = rcm_translation_jacobian(j_t, l, &j_d, d, &j_l);
        Ok(Self {
            l,
            d,
            h1,
            t_om,
            j_l,
            j_d,
            j_tom,
        })
    }
}

/// Best rotation aligning both initial RCM directions to the current ones
/// (two-vector Wahba problem, solved by the Davenport eigenvalue method).
/// Exact when the motion is a rigid rotation about the sphere center.
pub fn eye_rotation_estimate(
    initial: (PureQuaternion, PureQuaternion),
    current: (PureQuaternion, PureQuaternion),
) -> Result<UnitQuaternion> {
    let a1 = initial.0.normalized()?;
    let a2 = initial.1.normalized()?;
    let b1 = current.0.normalized()?;
    let b2 = current.1.normalized()?;
    if a1.cross(a2).norm() < 1e-6 {
        return Err(Error::IllPosed(
            "initial RCM directions are collinear; rotation is not observable".into(),
        ));
    }

    let v = |p: PureQuaternion| Vector3::new(p.x, p.y, p.z);
    let b_mat: Matrix3<f64> = v(b1) * v(a1).transpose() + v(b2) * v(a2).transpose();
    let sigma = b_mat.trace();
    let z = a1.cross(b1) + a2.cross(b2);
    let s = b_mat + b_mat.transpose();

    let mut k = Matrix4::zeros();
    k[(0, 0)] = sigma;
    for (i, zi) in [z.x, z.y, z.z].iter().enumerate() {
        k[(0, i + 1)] = *zi;
        k[(i + 1, 0)] = *zi;
    }
    for i in 0..3 {
        for j in 0..3 {
            k[(i + 1, j + 1)] = s[(i, j)] - if i == j { sigma } else { 0.0 };
        }
    }

    let eig = SymmetricEigen::new(k);
    let mut best = 0;
    for i in 1..4 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let q = eig.eigenvectors.column(best);
    let mut quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    if quat.w < 0.0 {
        quat = quat.scale(-1.0);
    }
    UnitQuaternion::new(quat.scale(1.0 / quat.norm()))
}
