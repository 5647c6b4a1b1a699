//! Vector-field-inequality building blocks: distance primitives, their
//! Jacobians, and assembly of inequality rows over the stacked joint vector.
//!
//! A row constrains joint velocities as `coeffs · q̇ ≤ bound`. Safe zones
//! keep a distance below its limit (`d̃ = d_safe − d`), restricted zones
//! keep it above (`d̃ = d − d_safe`); in both cases the admissible dynamics
//! is `d̃̇ ≥ −η_d d̃`, which brakes motion only toward the boundary.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::PureQuaternion;

/// One inequality row `coeffs · q̇ ≤ bound` over the stacked joint vector.
#[derive(Clone, Debug)]
pub struct ConstraintRow {
    pub coeffs: RowDVector<f64>,
    pub bound: f64,
}

impl ConstraintRow {
    pub fn new(coeffs: RowDVector<f64>, bound: f64) -> Self {
        Self { coeffs, bound }
    }

    /// Builds a row over `n_total` joints from a block that touches only the
    /// joints starting at `offset`; everything else is zero-padded.
    pub fn from_block(n_total: usize, offset: usize, block: &RowDVector<f64>, bound: f64) -> Self {
        let mut coeffs = RowDVector::zeros(n_total);
        coeffs.view_mut((0, offset), (1, block.ncols())).copy_from(block);
        Self { coeffs, bound }
    }

    pub fn len(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.ncols() == 0
    }
}

/// A plane given by a unit normal and its signed offset from the origin.
#[derive(Clone, Copy, Debug)]
pub struct Plane {
    normal: PureQuaternion,
    offset: f64,
}

impl Plane {
    pub fn new(normal: PureQuaternion, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::NotUnit {
                what: "plane normal",
                norm: n,
            });
        }
        Ok(Self { normal, offset })
    }

    pub fn normal(&self) -> PureQuaternion {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// Per-family VFI gains, all in 1/s.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VfiGains {
    pub safety: f64,
    pub rcm: f64,
    pub orbital: f64,
    pub rotation: f64,
    pub joint: f64,
}

impl VfiGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("safety", self.safety),
            ("rcm", self.rcm),
            ("orbital", self.orbital),
            ("rotation", self.rotation),
            ("joint", self.joint),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("VFI gain `{name}` must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Safe-zone row: `J_d q̇ ≤ η_d d̃ − ζ_safe` with `d̃ = d_safe − d`.
pub fn safe_zone_row(j_d: &RowDVector<f64>, d_tilde: f64, eta: f64, zeta_safe: f64) -> ConstraintRow {
    ConstraintRow::new(j_d.clone(), eta * d_tilde - zeta_safe)
}

/// Restricted-zone row: `−J_d q̇ ≤ η_d d̃ + ζ_safe` with `d̃ = d − d_safe`.
pub fn restricted_zone_row(
    j_d: &RowDVector<f64>,
    d_tilde: f64,
    eta: f64,
    zeta_safe: f64,
) -> ConstraintRow {
    ConstraintRow::new(-j_d.clone(), eta * d_tilde + zeta_safe)
}

/// Squared distance between a robot point and a static world point, with its
/// row Jacobian: `D = ‖t − p‖²`, `J_D = 2 vec4(t − p)ᵀ J_t`.
pub fn point_point_squared(
    t: PureQuaternion,
    p: PureQuaternion,
    j_t: &DMatrix<f64>,
) -> (f64, RowDVector<f64>) {
    let diff = t - p;
    let d = diff.norm_squared();
    let j = (diff.vec4().transpose() * j_t) * 2.0;
    (d, RowDVector::from_row_slice(j.as_slice()))
}

/// Signed distance from a robot point to a plane: `d = ⟨t, n⟩ − offset`,
/// `J_d = vec4(n)ᵀ J_t`.
pub fn point_plane_signed(
    t: PureQuaternion,
    plane: &Plane,
    j_t: &DMatrix<f64>,
) -> (f64, RowDVector<f64>) {
    let n = plane.normal();
    let d = t.dot(n) - plane.offset();
    let j = n.vec4().transpose() * j_t;
    (d, RowDVector::from_row_slice(j.as_slice()))
}

/// Squared distance between the line `{t + s·l}` and a static point `p`,
/// with its row Jacobian by the product rule over `J_t` and `J_l`.
///
/// With `s = ⟨t − p, l⟩` and `w = (t − p) − s·l`: `D = ‖w‖²` and
/// `J_D = 2 vec4(w)ᵀ J_t − 2 s vec4(t − p)ᵀ J_l`.
pub fn line_point_squared(
    t: PureQuaternion,
    l: PureQuaternion,
    p: PureQuaternion,
    j_t: &DMatrix<f64>,
    j_l: &DMatrix<f64>,
) -> Result<(f64, RowDVector<f64>)> {
    let ln = l.norm();
    if (ln - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnit {
            what: "line direction",
            norm: ln,
        });
    }
    let rel = t - p;
    let s = rel.dot(l);
    let w = rel - l.scale(s);
    let d = w.norm_squared();
    let j = (w.vec4().transpose() * j_t) * 2.0 - (rel.vec4().transpose() * j_l) * (2.0 * s);
    Ok((d, RowDVector::from_row_slice(j.as_slice())))
}

/// Joint-limit rows for one robot block inside the stacked joint vector:
/// per joint, `+q̇ₖ ≤ η_j (q_max − qₖ)` and `−q̇ₖ ≤ η_j (qₖ − q_min)`.
pub fn joint_limit_rows(
    q: &[f64],
    lower: &[f64],
    upper: &[f64],
    eta: f64,
    n_total: usize,
    offset: usize,
) -> Vec<ConstraintRow> {
    debug_assert_eq!(q.len(), lower.len());
    debug_assert_eq!(q.len(), upper.len());
    let mut rows = Vec::with_capacity(2 * q.len());
    for (k, &qk) in q.iter().enumerate() {
        let mut up = RowDVector::zeros(n_total);
        up[offset + k] = 1.0;
        rows.push(ConstraintRow::new(up, eta * (upper[k] - qk)));
        let mut lo = RowDVector::zeros(n_total);
        lo[offset + k] = -1.0;
        rows.push(ConstraintRow::new(lo, eta * (qk - lower[k])));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn safe_zone_row_example() {
        let j = RowDVector::from_row_slice(&[1.0]);
        let row = safe_zone_row(&j, 2.0, 0.5, 0.0);
        assert_eq!(row.coeffs[0], 1.0);
        assert_relative_eq!(row.bound, 1.0);
    }

    #[test]
    fn restricted_zone_row_example() {
        let j = RowDVector::from_row_slice(&[1.0]);
        let row = restricted_zone_row(&j, 2.0, 0.5, 0.0);
        assert_eq!(row.coeffs[0], -1.0);
        assert_relative_eq!(row.bound, 1.0);

        // η = 0 turns the boundary into a hard stop.
        let hard = restricted_zone_row(&j, 2.0, 0.0, 0.0);
        assert_relative_eq!(hard.bound, 0.0);
    }

    /// 1-D Euler rollout of `ḋ = u` where `u` greedily pushes toward the
    /// boundary but is clipped by the zone row each step.
    fn rollout_1d(safe: bool, d0: f64, d_limit: f64, eta: f64, dt: f64, steps: usize) -> f64 {
        let j = RowDVector::from_row_slice(&[1.0]);
        let mut d = d0;
        let mut extreme = d0;
        for _ in 0..steps {
            let desired = if safe { 10.0 } else { -10.0 };
            let row = if safe {
                safe_zone_row(&j, d_limit - d, eta, 0.0)
            } else {
                restricted_zone_row(&j, d - d_limit, eta, 0.0)
            };
            // coeffs[0]·u ≤ bound clips the desired velocity.
            let u = if row.coeffs[0] * desired > row.bound {
                row.bound / row.coeffs[0]
            } else {
                desired
            };
            d += u * dt;
            extreme = if safe { extreme.max(d) } else { extreme.min(d) };
        }
        extreme
    }

    #[test]
    fn safe_zone_rollout_never_exceeds_limit() {
        let max_d = rollout_1d(true, 1.0, 5.0, 0.8, 0.01, 5_000);
        assert!(max_d <= 5.0 + 1e-6, "max d = {max_d}");
    }

    #[test]
    fn restricted_zone_rollout_never_falls_below_limit() {
        let min_d = rollout_1d(false, 9.0, 5.0, 0.8, 0.01, 5_000);
        assert!(min_d >= 5.0 - 1e-6, "min d = {min_d}");
    }

    #[test]
    fn point_point_squared_examples() {
        let j_t = DMatrix::identity(4, 4);
        let (d, row) = point_point_squared(
            PureQuaternion::new(3.0, 0.0, 0.0),
            PureQuaternion::zero(),
            &j_t,
        );
        assert_relative_eq!(d, 9.0);
        assert_relative_eq!(row[1], 6.0);

        let p = PureQuaternion::new(1.0, -2.0, 0.5);
        let (d0, row0) = point_point_squared(p, p, &j_t);
        assert_relative_eq!(d0, 0.0);
        assert_relative_eq!(row0.norm(), 0.0);
    }

    #[test]
    fn point_plane_signed_examples() {
        let plane = Plane::new(PureQuaternion::k(), 6.0).unwrap();
        let j_t = DMatrix::identity(4, 4);
        let (d, _) = point_plane_signed(PureQuaternion::new(0.0, 0.0, 9.0), &plane, &j_t);
        assert_relative_eq!(d, 3.0);

        let (d_on, _) = point_plane_signed(PureQuaternion::new(4.0, -1.0, 6.0), &plane, &j_t);
        assert_relative_eq!(d_on, 0.0);

        // Affine in t: doubling the offset from the projection doubles d.
        let (d2, _) = point_plane_signed(PureQuaternion::new(0.0, 0.0, 12.0), &plane, &j_t);
        assert_relative_eq!(d2, 2.0 * d, epsilon = 1e-12);
    }

    #[test]
    fn plane_rejects_non_unit_normal() {
        assert!(Plane::new(PureQuaternion::new(0.0, 0.0, 2.0), 1.0).is_err());
    }

    #[test]
    fn line_point_squared_examples() {
        let j_t = DMatrix::zeros(4, 3);
        let j_l = DMatrix::zeros(4, 3);
        // p on the line through the origin along k̂.
        let (d, _) = line_point_squared(
            PureQuaternion::zero(),
            PureQuaternion::k(),
            PureQuaternion::new(0.0, 0.0, 5.0),
            &j_t,
            &j_l,
        )
        .unwrap();
        assert_relative_eq!(d, 0.0);

        let (d1, _) = line_point_squared(
            PureQuaternion::zero(),
            PureQuaternion::k(),
            PureQuaternion::new(1.0, 0.0, 5.0),
            &j_t,
            &j_l,
        )
        .unwrap();
        assert_relative_eq!(d1, 1.0);

        assert!(line_point_squared(
            PureQuaternion::zero(),
            PureQuaternion::new(0.0, 0.0, 0.5),
            PureQuaternion::zero(),
            &j_t,
            &j_l,
        )
        .is_err());
    }

    #[test]
    fn joint_limit_rows_examples() {
        let rows = joint_limit_rows(&[0.0], &[-1.0], &[1.0], 1.0, 1, 0);
        assert_eq!(rows.len(), 2);
        assert_relative_eq!(rows[0].bound, 1.0);
        assert_relative_eq!(rows[1].bound, 1.0);

        // At the upper limit the + row blocks any further increase.
        let rows = joint_limit_rows(&[1.0], &[-1.0], &[1.0], 1.0, 1, 0);
        assert_relative_eq!(rows[0].bound, 0.0);
    }

    #[test]
    fn joint_limit_rollout_stays_in_range() {
        let (lo, hi) = (-0.5, 0.8);
        let mut q = 0.1;
        let dt = 0.004;
        let mut max_q = q;
        for _ in 0..10_000 {
            let rows = joint_limit_rows(&[q], &[lo], &[hi], 1.0, 1, 0);
            let mut u: f64 = 3.0; // constant push at the upper limit
            for r in &rows {
                if r.coeffs[0] * u > r.bound {
                    u = r.bound / r.coeffs[0];
                }
            }
            q += u * dt;
            max_q = max_q.max(q);
        }
        assert!(max_q <= hi + 1e-9, "max q = {max_q}");
    }

    #[test]
    fn from_block_pads_with_zeros() {
        let block = RowDVector::from_row_slice(&[1.0, 2.0]);
        let row = ConstraintRow::from_block(5, 2, &block, 7.0);
        assert_eq!(row.coeffs.as_slice(), &[0.0, 0.0, 1.0, 2.0, 0.0]);
        assert_relative_eq!(row.bound, 7.0);
    }
}
