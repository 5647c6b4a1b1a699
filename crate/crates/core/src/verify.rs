//! Finite-difference verification of every analytic Jacobian against the
//! value functions they differentiate. Central differences with step 1e-6;
//! errors are reported relative to the Jacobian's own scale with a floor of
//! one, so near-zero Jacobians are judged absolutely.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::SerialManipulator;
use crate::orbital::{insertion_depth, rcm_translation, shaft_direction};
use crate::quat::PureQuaternion;
use crate::sim::{snapshot, Scene};
use crate::vfi::{line_point_squared, point_point_squared};

pub const FD_STEP: f64 = 1e-6;

/// Worst relative finite-difference error of one Jacobian over all samples.
#[derive(Clone, Debug)]
pub struct JacobianCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub samples: usize,
}

fn rel_err_rows(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    (analytic - fd)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        / scale
}

fn rel_err_row(analytic: &RowDVector<f64>, fd: &RowDVector<f64>) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    (analytic - fd)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        / scale
}

/// Scalar state functions of one robot used as FD references.
struct RobotValues {
    tip_t: PureQuaternion,
    tip_r4: [f64; 4],
    l: PureQuaternion,
    s: f64,
    h1: f64,
    d: f64,
    t_om: PureQuaternion,
}

fn robot_values(robot: &SerialManipulator, q: &[f64], r_eye: f64) -> Result<RobotValues> {
    let pose = robot.forward_kinematics(q)?;
    let l = shaft_direction(pose.r);
    let (d, h1) = insertion_depth(pose.t, l, r_eye)?;
    let rq = pose.r.quaternion();
    Ok(RobotValues {
        tip_t: pose.t,
        tip_r4: [rq.w, rq.x, rq.y, rq.z],
        l,
        s: pose.t.dot(l),
        h1,
        d,
        t_om: rcm_translation(pose.t, d, l),
    })
}

fn fd_matrix<F>(n: usize, rows: usize, q: &DVector<f64>, mut eval: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<Vec<f64>>,
{
    let mut out = DMatrix::zeros(rows, n);
    for k in 0..n {
        let mut qp = q.clone();
        qp[k] += FD_STEP;
        let mut qm = q.clone();
        qm[k] -= FD_STEP;
        let fp = eval(&qp)?;
        let fm = eval(&qm)?;
        for r in 0..rows {
            out[(r, k)] = (fp[r] - fm[r]) / (2.0 * FD_STEP);
        }
    }
    Ok(out)
}

/// Per-joint sampling half-widths: bounded by the joint range and by the
/// tip displacement the joint's lever arm would cause, so random draws keep
/// the instruments inside the eye.
fn sample_scales(scene: &Scene) -> Result<Vec<f64>> {
    let snap = snapshot(scene, &scene.q0)?;
    let mut scales = Vec::with_capacity(scene.n1 + scene.n2);
    for (rsnap, robot) in [(&snap.r1, &scene.robots[0]), (&snap.r2, &scene.robots[1])] {
        for (k, j) in robot.joints().iter().enumerate() {
            let lever = rsnap.j_t.column(k).norm().max(1.0);
            let half = 0.5 * (j.upper - j.lower);
            scales.push((3.0 / lever).min(0.4 * half));
        }
    }
    Ok(scales)
}

/// Draws a joint vector near the initial posture and keeps it only if the
/// geometry is comfortably non-degenerate.
fn sample_config(scene: &Scene, scales: &[f64], rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
    let mut q = scene.q0.clone();
    let mut idx = 0;
    for robot in &scene.robots {
        for j in robot.joints() {
            q[idx] += rng.gen_range(-scales[idx]..scales[idx]);
            q[idx] = q[idx].clamp(j.lower, j.upper);
            idx += 1;
        }
    }
    let snap = snapshot(scene, &q).ok()?;
    let r_eye = scene.eye.radius();
    for r in [&snap.r1, &snap.r2] {
        if r.tip.t.norm() > r_eye - 0.3 || r.shaft.h1 < 0.5 {
            return None;
        }
    }
    if (snap.r1.shaft.t_om - snap.r2.shaft.t_om).norm() < 1.0 {
        return None;
    }
    Some(q)
}

/// Checks every analytic Jacobian of the scene against central finite
/// differences at `samples` random non-degenerate configurations.
pub fn check_jacobians(scene: &Scene, samples: usize, seed: u64) -> Result<Vec<JacobianCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "translation",
        "rotation",
        "shaft_line",
        "h2_chain",
        "h1_sqrt",
        "insertion_depth",
        "rcm_translation",
        "orbital_distance",
        "line_point",
        "point_point",
        "rotation_planes",
        "unit_rcm_distance",
    ];
    let mut worst = vec![0.0f64; names.len()];
    let mut accepted = 0;
    let mut attempts = 0;
    let r_eye = scene.eye.radius();
    let (n1, n2) = (scene.n1, scene.n2);
    let n = n1 + n2;
    let scales = sample_scales(scene)?;

    while accepted < samples {
        attempts += 1;
        if attempts > 200 * samples {
            return Err(Error::Config(format!(
                "could not draw {samples} valid configurations (got {accepted})"
            )));
        }
        let Some(q) = sample_config(scene, &scales, &mut rng) else {
            continue;
        };
        accepted += 1;
        let snap = snapshot(scene, &q)?;

        // Per-robot chains.
        for (ri, (rsnap, robot, offset, nk)) in [
            (&snap.r1, &scene.robots[0], 0usize, n1),
            (&snap.r2, &scene.robots[1], n1, n2),
        ]
        .into_iter()
        .enumerate()
        {
            let _ = ri;
            let qr = DVector::from_iterator(nk, q.rows(offset, nk).iter().copied());

            let fd_t = fd_matrix(nk, 4, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![0.0, v.tip_t.x, v.tip_t.y, v.tip_t.z])
            })?;
            worst[0] = worst[0].max(rel_err_rows(&rsnap.j_t, &fd_t));

            let fd_r = fd_matrix(nk, 4, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(v.tip_r4.to_vec())
            })?;
            worst[1] = worst[1].max(rel_err_rows(&rsnap.j_r, &fd_r));

            let fd_l = fd_matrix(nk, 4, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![0.0, v.l.x, v.l.y, v.l.z])
            })?;
            worst[2] = worst[2].max(rel_err_rows(&rsnap.shaft.j_l, &fd_l));

            let (j_h2, j_h1, j_d) = crate::orbital::depth_jacobian(
                rsnap.tip.t,
                rsnap.shaft.l,
                rsnap.shaft.h1,
                &rsnap.j_t,
                &rsnap.shaft.j_l,
            )?;
            let fd_s = fd_matrix(nk, 1, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![v.s])
            })?;
            worst[3] = worst[3].max(rel_err_row(
                &j_h2,
                &RowDVector::from_row_slice(fd_s.row(0).transpose().as_slice()),
            ));
            let fd_h1 = fd_matrix(nk, 1, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![v.h1])
            })?;
            worst[4] = worst[4].max(rel_err_row(
                &j_h1,
                &RowDVector::from_row_slice(fd_h1.row(0).transpose().as_slice()),
            ));
            let fd_d = fd_matrix(nk, 1, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![v.d])
            })?;
            worst[5] = worst[5].max(rel_err_row(
                &j_d,
                &RowDVector::from_row_slice(fd_d.row(0).transpose().as_slice()),
            ));

            let fd_tom = fd_matrix(nk, 4, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![0.0, v.t_om.x, v.t_om.y, v.t_om.z])
            })?;
            worst[6] = worst[6].max(rel_err_rows(&rsnap.shaft.j_tom, &fd_tom));

            // Line-point squared distance to this robot's initial anchor.
            let anchor = scene.rcm_anchors[if offset == 0 { 0 } else { 1 }];
            let (_, j_lp) = line_point_squared(
                rsnap.tip.t,
                rsnap.shaft.l,
                anchor,
                &rsnap.j_t,
                &rsnap.shaft.j_l,
            )?;
            let fd_lp = fd_matrix(nk, 1, &qr, {
                let robot = robot;
                move |qq: &DVector<f64>| {
                    let v = robot_values(robot, qq.as_slice(), r_eye)?;
                    let rel = v.tip_t - anchor;
                    let s = rel.dot(v.l);
                    Ok(vec![(rel - v.l.scale(s)).norm_squared()])
                }
            })?;
            worst[8] = worst[8].max(rel_err_row(&j_lp, &RowDVector::from_row_slice(fd_lp.row(0).transpose().as_slice())));

            let (_, j_pp) = point_point_squared(rsnap.tip.t, PureQuaternion::zero(), &rsnap.j_t);
            let fd_pp = fd_matrix(nk, 1, &qr, |qq| {
                let v = robot_values(robot, qq.as_slice(), r_eye)?;
                Ok(vec![v.tip_t.norm_squared()])
            })?;
            worst[9] = worst[9].max(rel_err_row(&j_pp, &RowDVector::from_row_slice(fd_pp.row(0).transpose().as_slice())));
        }

        // Stacked quantities over both robots.
        let eval_pair = |qq: &DVector<f64>| -> Result<(PureQuaternion, PureQuaternion)> {
            let v1 = robot_values(
                &scene.robots[0],
                &qq.as_slice()[..n1],
                r_eye,
            )?;
            let v2 = robot_values(&scene.robots[1], &qq.as_slice()[n1..], r_eye)?;
            Ok((v1.t_om, v2.t_om))
        };

        let fd_dom = fd_matrix(n, 1, &q, |qq| {
            let (a, b) = eval_pair(qq)?;
            Ok(vec![(a - b).norm_squared()])
        })?;
        worst[7] = worst[7].max(rel_err_row(
            &snap.j_om,
            &RowDVector::from_row_slice(fd_dom.row(0).transpose().as_slice()),
        ));

        let rot_rows = crate::orbital::rotation_limit_rows(
            snap.r1.shaft.t_om,
            snap.r2.shaft.t_om,
            &snap.r1.shaft.j_tom,
            &snap.r2.shaft.j_tom,
            &scene.limits,
        );
        if let Ok(rows) = rot_rows {
            let planes = [
                scene.limits.plane_x_r1,
                scene.limits.plane_x_r2,
                scene.limits.plane_z,
                scene.limits.plane_z,
            ];
            let fd_rot = fd_matrix(n, 4, &q, |qq| {
                let (a, b) = eval_pair(qq)?;
                let points = [a, b, a, b];
                Ok((0..4)
                    .map(|i| points[i].dot(planes[i].normal()) - planes[i].offset())
                    .collect())
            })?;
            for (i, row) in rows.iter().enumerate() {
                // Rows carry −J_d; negate to compare with the FD gradient.
                let fd_row = RowDVector::from_row_slice(fd_rot.row(i).transpose().as_slice());
                worst[10] = worst[10].max(rel_err_row(&(-row.coeffs.clone()), &fd_row));
            }
        }

        let unit = crate::analysis::rcm_distance_unit_jacobian(
            snap.r1.shaft.t_om,
            snap.r2.shaft.t_om,
            &snap.r1.shaft.j_tom,
            &snap.r2.shaft.j_tom,
        )?;
        let fd_h3 = fd_matrix(n, 1, &q, |qq| {
            let (a, b) = eval_pair(qq)?;
            Ok(vec![(a - b).norm()])
        })?;
        worst[11] = worst[11].max(rel_err_row(
            &unit,
            &RowDVector::from_row_slice(fd_h3.row(0).transpose().as_slice()),
        ));
    }

    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, max_rel_err)| JacobianCheck {
            name,
            max_rel_err,
            samples,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floors_at_one() {
        let a = RowDVector::from_row_slice(&[0.0, 0.0]);
        let b = RowDVector::from_row_slice(&[1e-7, 0.0]);
        assert!(rel_err_row(&a, &b) <= 1e-6);
    }
}
