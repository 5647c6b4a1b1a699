//! Manipulability analysis: the velocity-ellipsoid volume measure, the
//! augmented Jacobians of the two constraint modes, and the grid study that
//! compares positioning with and without orbital manipulation.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};

use crate::error::{Error, Result};
use crate::quat::PureQuaternion;
use crate::sim::{
    make_fundus_targets, run_positioning, snapshot, Mode, RobotSnapshot, Scene, Snapshot,
};
use crate::vfi::line_point_squared;

/// Coincident RCM points make the unit-distance row undefined below this.
const H3_EPS_MM: f64 = 1e-6;

/// Velocity-ellipsoid volume `ω = √det(J Jᵀ)`, computed as the product of
/// singular values so a near-zero value is not lost to cancellation.
pub fn manipulability(j: &DMatrix<f64>) -> Result<f64> {
    if j.nrows() > j.ncols() {
        return Err(Error::DimensionMismatch {
            context: "manipulability needs a wide matrix (m ≤ n)",
            expected: j.ncols(),
            got: j.nrows(),
        });
    }
    let svd = j.clone().svd(false, false);
    Ok(svd.singular_values.iter().product::<f64>().max(0.0))
}

/// Drops the zero first row of a 4×n translation Jacobian.
pub fn pure_translation_block(j_t: &DMatrix<f64>) -> DMatrix<f64> {
    j_t.rows(1, 3).into_owned()
}

/// Augmented Jacobian of fixed-RCM operation:
/// `[J_t1 0; 0 J_t2; J_CR1 0; 0 J_CR2]` with 3-row translation blocks and
/// one fixed-RCM distance row per robot.
pub fn augmented_without(
    j_t1: &DMatrix<f64>,
    j_t2: &DMatrix<f64>,
    j_cr1: &RowDVector<f64>,
    j_cr2: &RowDVector<f64>,
) -> Result<DMatrix<f64>> {
    if j_t1.nrows() != 3 || j_t2.nrows() != 3 {
        return Err(Error::DimensionMismatch {
            context: "augmented translation block rows",
            expected: 3,
            got: j_t1.nrows().max(j_t2.nrows()),
        });
    }
    let (n1, n2) = (j_t1.ncols(), j_t2.ncols());
    if j_cr1.ncols() != n1 || j_cr2.ncols() != n2 {
        return Err(Error::DimensionMismatch {
            context: "fixed-RCM row width",
            expected: n1,
            got: j_cr1.ncols(),
        });
    }
    let mut m = DMatrix::zeros(8, n1 + n2);
    m.view_mut((0, 0), (3, n1)).copy_from(j_t1);
    m.view_mut((3, n1), (3, n2)).copy_from(j_t2);
    m.view_mut((6, 0), (1, n1)).copy_from(j_cr1);
    m.view_mut((7, n1), (1, n2)).copy_from(j_cr2);
    Ok(m)
}

/// Augmented Jacobian of orbital operation:
/// `[J_t1 0; 0 J_t2; J'_OM]` where `J'_OM` is the unit-distance row.
pub fn augmented_with(
    j_t1: &DMatrix<f64>,
    j_t2: &DMatrix<f64>,
    j_om_unit: &RowDVector<f64>,
) -> Result<DMatrix<f64>> {
    if j_t1.nrows() != 3 || j_t2.nrows() != 3 {
        return Err(Error::DimensionMismatch {
            context: "augmented translation block rows",
            expected: 3,
            got: j_t1.nrows().max(j_t2.nrows()),
        });
    }
    let (n1, n2) = (j_t1.ncols(), j_t2.ncols());
    if j_om_unit.ncols() != n1 + n2 {
        return Err(Error::DimensionMismatch {
            context: "orbital row width",
            expected: n1 + n2,
            got: j_om_unit.ncols(),
        });
    }
    let mut m = DMatrix::zeros(7, n1 + n2);
    m.view_mut((0, 0), (3, n1)).copy_from(j_t1);
    m.view_mut((3, n1), (3, n2)).copy_from(j_t2);
    m.view_mut((6, 0), (1, n1 + n2)).copy_from(j_om_unit);
    Ok(m)
}

/// Unit-distance RCM row `J'_OM = vec4(Δ)ᵀ [J_tOM,1 | −J_tOM,2] / h₃` with
/// `h₃ = ‖t_OM,1 − t_OM,2‖`, so its units match the translation rows.
/// Equals `J_OM / (2 h₃)`.
pub fn rcm_distance_unit_jacobian(
    t_om_1: PureQuaternion,
    t_om_2: PureQuaternion,
    j_tom_1: &DMatrix<f64>,
    j_tom_2: &DMatrix<f64>,
) -> Result<RowDVector<f64>> {
    let h3 = (t_om_1 - t_om_2).norm();
    if h3 <= H3_EPS_MM {
        return Err(Error::DegenerateGeometry(format!(
            "coincident RCM points (h₃ = {h3:.3e} mm)"
        )));
    }
    let diff = (t_om_1 - t_om_2).vec4().transpose() / h3;
    let left = &diff * j_tom_1;
    let right = &diff * j_tom_2;
    let (n1, n2) = (j_tom_1.ncols(), j_tom_2.ncols());
    let mut row = RowDVector::zeros(n1 + n2);
    row.view_mut((0, 0), (1, n1)).copy_from(&left);
    row.view_mut((0, n1), (1, n2)).copy_from(&(-right));
    Ok(row)
}

/// Fixed-RCM constraint row of one robot evaluated at a configuration where
/// the constraint is satisfied: the line–point squared-distance Jacobian
/// anchored at the shaft's own current insertion point. Zero in exact
/// arithmetic, which is what makes the fixed-RCM augmented Jacobian rank
/// deficient.
pub fn fixed_rcm_row_at(snap: &RobotSnapshot) -> RowDVector<f64> {
    let (_, row) = line_point_squared(
        snap.tip.t,
        snap.shaft.l,
        snap.shaft.t_om,
        &snap.j_t,
        &snap.shaft.j_l,
    )
    .expect("shaft direction is unit");
    row
}

/// Manipulability of the orbital augmented Jacobian at a configuration.
pub fn omega_with(snap: &Snapshot) -> Result<f64> {
    let row = rcm_distance_unit_jacobian(
        snap.r1.shaft.t_om,
        snap.r2.shaft.t_om,
        &snap.r1.shaft.j_tom,
        &snap.r2.shaft.j_tom,
    )?;
    let j = augmented_with(
        &pure_translation_block(&snap.r1.j_t),
        &pure_translation_block(&snap.r2.j_t),
        &row,
    )?;
    manipulability(&j)
}

/// Manipulability of the fixed-RCM augmented Jacobian at a configuration.
pub fn omega_without(snap: &Snapshot) -> Result<f64> {
    let j = augmented_without(
        &pure_translation_block(&snap.r1.j_t),
        &pure_translation_block(&snap.r2.j_t),
        &fixed_rcm_row_at(&snap.r1),
        &fixed_rcm_row_at(&snap.r2),
    )?;
    manipulability(&j)
}

/// One grid point of the comparison study.
#[derive(Clone, Debug)]
pub struct GridPointResult {
    pub index: usize,
    pub target: [f64; 3],
    /// Distance from the target to the midpoint of the initial RCM points.
    pub dist_from_rcm_mid_mm: f64,
    pub err_with_mm: f64,
    pub converged_with: bool,
    pub err_without_mm: f64,
    pub converged_without: bool,
    pub omega_with: f64,
    pub omega_without: f64,
    pub eye_angle_with_rad: f64,
    /// Rollout failure (diagnostics recorded, point excluded from claims).
    pub failed: bool,
}

#[derive(Clone, Debug)]
pub struct ManipulabilityReport {
    pub points: Vec<GridPointResult>,
}

#[derive(Clone, Copy, Debug)]
pub struct StudyOptions {
    /// Commanded-target approach speed (mm/s).
    pub approach_speed_mm_s: f64,
    /// Settling budget per positioning run (simulated seconds).
    pub max_settle_s: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            approach_speed_mm_s: 3.0,
            max_settle_s: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReportSummary {
    pub points: usize,
    pub converged_with: usize,
    pub converged_without: usize,
    pub min_omega_with: f64,
    pub max_omega_with: f64,
    pub mean_omega_with: f64,
    pub min_omega_without: f64,
    pub max_omega_without: f64,
    pub mean_omega_without: f64,
    pub with_exceeds_without: usize,
    /// Pearson correlation between distance-from-RCM-midpoint and ω_with
    /// over points settled in orbital mode.
    pub distance_omega_correlation: f64,
}

impl ManipulabilityReport {
    pub fn summary(&self) -> ReportSummary {
        let ok: Vec<&GridPointResult> = self.points.iter().filter(|p| !p.failed).collect();
        let mut s = ReportSummary {
            points: self.points.len(),
            min_omega_with: f64::INFINITY,
            min_omega_without: f64::INFINITY,
            ..Default::default()
        };
        if ok.is_empty() {
            s.min_omega_with = 0.0;
            s.min_omega_without = 0.0;
            return s;
        }
        for p in &ok {
            s.converged_with += p.converged_with as usize;
            s.converged_without += p.converged_without as usize;
            s.min_omega_with = s.min_omega_with.min(p.omega_with);
            s.max_omega_with = s.max_omega_with.max(p.omega_with);
            s.mean_omega_with += p.omega_with;
            s.min_omega_without = s.min_omega_without.min(p.omega_without);
            s.max_omega_without = s.max_omega_without.max(p.omega_without);
            s.mean_omega_without += p.omega_without;
            s.with_exceeds_without += (p.omega_with > p.omega_without) as usize;
        }
        s.mean_omega_with /= ok.len() as f64;
        s.mean_omega_without /= ok.len() as f64;
        let pairs: Vec<(f64, f64)> = ok
            .iter()
            .filter(|p| p.converged_with)
            .map(|p| (p.dist_from_rcm_mid_mm, p.omega_with))
            .collect();
        s.distance_omega_correlation = pearson(&pairs);
        s
    }
}

/// Pearson correlation coefficient; 0 for fewer than two points.
pub fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Runs the positioning comparison over a target grid: every target is
/// approached from the same initial pose in orbital and in fixed-RCM mode
/// (light guide commanded to hold), and the manipulability measures are
/// evaluated at the settled configurations.
pub fn grid_study(
    scene: &Scene,
    targets: &[PureQuaternion],
    opts: &StudyOptions,
) -> Result<ManipulabilityReport> {
    let mid = (scene.rcm_anchors[0] + scene.rcm_anchors[1]).scale(0.5);
    let mut points = Vec::with_capacity(targets.len());
    for (index, &target) in targets.iter().enumerate() {
        let mut point = GridPointResult {
            index,
            target: [target.x, target.y, target.z],
            dist_from_rcm_mid_mm: (target - mid).norm(),
            err_with_mm: f64::NAN,
            converged_with: false,
            err_without_mm: f64::NAN,
            converged_without: false,
            omega_with: 0.0,
            omega_without: 0.0,
            eye_angle_with_rad: 0.0,
            failed: false,
        };
        let orbital = run_positioning(
            scene,
            target,
            Mode::Orbital,
            opts.approach_speed_mm_s,
            opts.max_settle_s,
        );
        let fixed = run_positioning(
            scene,
            target,
            Mode::FixedRcm,
            opts.approach_speed_mm_s,
            opts.max_settle_s,
        );
        match (orbital, fixed) {
            (Ok(orb), Ok(fix)) => {
                point.err_with_mm = orb.tip_error_mm;
                point.converged_with = orb.converged;
                point.eye_angle_with_rad = orb.eye_angle_final_rad;
                point.err_without_mm = fix.tip_error_mm;
                point.converged_without = fix.converged;
                point.omega_with = omega_with(&snapshot(scene, &orb.q)?)?;
                point.omega_without = omega_without(&snapshot(scene, &fix.q)?)?;
            }
            _ => point.failed = true,
        }
        points.push(point);
    }
    Ok(ManipulabilityReport { points })
}

/// Convenience wrapper: sunflower grid of `count` points over `diameter_mm`.
pub fn grid_study_disc(
    scene: &Scene,
    count: usize,
    diameter_mm: f64,
    opts: &StudyOptions,
) -> Result<ManipulabilityReport> {
    let targets = make_fundus_targets(count, diameter_mm, scene)?;
    grid_study(scene, &targets, opts)
}

fn fmt_g(v: f64) -> String {
    format!("{v:.11e}")
}

/// Writes the report as a CSV table at `path` (header plus one row per grid
/// point) and a text summary block at `<path>.summary.txt`.
pub fn emit_report(report: &ManipulabilityReport, path: &Path) -> Result<()> {
    let mut csv = Vec::new();
    writeln!(
        csv,
        "index,target_x,target_y,target_z,dist_rcm_mid_mm,err_with_mm,converged_with,\
         err_without_mm,converged_without,omega_with,omega_without,eye_angle_with_rad,failed"
    )?;
    for p in &report.points {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.index,
            fmt_g(p.target[0]),
            fmt_g(p.target[1]),
            fmt_g(p.target[2]),
            fmt_g(p.dist_from_rcm_mid_mm),
            fmt_g(p.err_with_mm),
            p.converged_with as u8,
            fmt_g(p.err_without_mm),
            p.converged_without as u8,
            fmt_g(p.omega_with),
            fmt_g(p.omega_without),
            fmt_g(p.eye_angle_with_rad),
            p.failed as u8,
        )?;
    }
    std::fs::write(path, csv)?;

    let s = report.summary();
    let summary_path = path.with_extension(format!(
        "{}summary.txt",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(summary_path, format!("{}", SummaryDisplay(&s)))?;
    Ok(())
}

struct SummaryDisplay<'a>(&'a ReportSummary);

impl std::fmt::Display for SummaryDisplay<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.0;
        writeln!(f, "grid points:            {}", s.points)?;
        writeln!(f, "converged (orbital):    {}", s.converged_with)?;
        writeln!(f, "converged (fixed RCM):  {}", s.converged_without)?;
        writeln!(
            f,
            "omega with orbital:     min {:.6e}  max {:.6e}  mean {:.6e}",
            s.min_omega_with, s.max_omega_with, s.mean_omega_with
        )?;
        writeln!(
            f,
            "omega without orbital:  min {:.6e}  max {:.6e}  mean {:.6e}",
            s.min_omega_without, s.max_omega_without, s.mean_omega_without
        )?;
        writeln!(
            f,
            "points with omega_with > omega_without: {}",
            s.with_exceeds_without
        )?;
        writeln!(
            f,
            "corr(distance from RCM midpoint, omega_with): {:.4}",
            s.distance_omega_correlation
        )
    }
}

impl ReportSummary {
    pub fn render(&self) -> String {
        format!("{}", SummaryDisplay(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn manipulability_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!(manipulability(&j).unwrap(), 6.0, epsilon = 1e-12);

        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(manipulability(&j).unwrap() <= 1e-12);

        let tall = DMatrix::zeros(3, 2);
        assert!(manipulability(&tall).is_err());
    }

    #[test]
    fn manipulability_matches_sqrt_det() {
        let j = DMatrix::from_row_slice(3, 5, &[
            0.3, -1.2, 0.7, 2.0, -0.4, //
            1.1, 0.2, -0.9, 0.5, 0.8, //
            -0.6, 0.4, 1.3, -0.2, 0.9,
        ]);
        let gram = &j * j.transpose();
        let direct = f64::max(gram.determinant(), 0.0).sqrt();
        assert_relative_eq!(manipulability(&j).unwrap(), direct, epsilon = 1e-9 * direct);
    }

    #[test]
    fn manipulability_invariant_under_row_mixing() {
        let j = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -0.3, 2.0, 0.0, 1.5, 0.7, -1.0]);
        let theta: f64 = 0.83;
        let q = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let mixed = &q * &j;
        assert_relative_eq!(
            manipulability(&j).unwrap(),
            manipulability(&mixed).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn augmented_block_placement() {
        let j_t1 = DMatrix::from_element(3, 2, 1.0);
        let j_t2 = DMatrix::from_element(3, 3, 2.0);
        let j_cr1 = RowDVector::from_element(2, 3.0);
        let j_cr2 = RowDVector::from_element(3, 4.0);
        let m = augmented_without(&j_t1, &j_t2, &j_cr1, &j_cr2).unwrap();
        assert_eq!(m.shape(), (8, 5));
        // Hand-stacked expectation.
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(m[(r, c)], 1.0);
            }
            for c in 2..5 {
                assert_eq!(m[(r, c)], 0.0);
                assert_eq!(m[(r + 3, c)], 2.0);
            }
            for c in 0..2 {
                assert_eq!(m[(r + 3, c)], 0.0);
            }
        }
        for c in 0..2 {
            assert_eq!(m[(6, c)], 3.0);
            assert_eq!(m[(7, c)], 0.0);
        }
        for c in 2..5 {
            assert_eq!(m[(6, c)], 0.0);
            assert_eq!(m[(7, c)], 4.0);
        }

        // All-zero blocks give ω = 0.
        let z = augmented_without(
            &DMatrix::zeros(3, 4),
            &DMatrix::zeros(3, 4),
            &RowDVector::zeros(4),
            &RowDVector::zeros(4),
        )
        .unwrap();
        assert_eq!(manipulability(&z).unwrap(), 0.0);

        let w = augmented_with(&j_t1, &j_t2, &RowDVector::from_element(5, 5.0)).unwrap();
        assert_eq!(w.shape(), (7, 5));
        for c in 0..5 {
            assert_eq!(w[(6, c)], 5.0);
        }
    }

    #[test]
    fn unit_distance_row_is_j_om_over_2h3() {
        let j1 = DMatrix::from_fn(4, 3, |r, c| ((r + 1) * (c + 1)) as f64 * 0.1);
        let j2 = DMatrix::from_fn(4, 2, |r, c| ((r + 2) * (c + 1)) as f64 * 0.05);
        let a = PureQuaternion::new(6.0, 0.0, 10.0);
        let b = PureQuaternion::new(-6.0, 0.5, 10.2);
        let unit = rcm_distance_unit_jacobian(a, b, &j1, &j2).unwrap();
        let j_om = crate::orbital::orbital_distance_jacobian(a, b, &j1, &j2);
        let h3 = (a - b).norm();
        for c in 0..5 {
            assert_relative_eq!(unit[c], j_om[c] / (2.0 * h3), epsilon = 1e-12);
        }

        assert!(rcm_distance_unit_jacobian(a, a, &j1, &j2).is_err());
    }

    #[test]
    fn pearson_basics() {
        let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert_relative_eq!(pearson(&up), 1.0, epsilon = 1e-12);
        let down: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -(i as f64))).collect();
        assert_relative_eq!(pearson(&down), -1.0, epsilon = 1e-12);
        assert_eq!(pearson(&[]), 0.0);
    }
}
