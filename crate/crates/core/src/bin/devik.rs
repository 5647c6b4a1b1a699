//! Dev-only helper: solve the initial postures for the shipped scene.

use nalgebra::{DMatrix, DVector};
use orbsim::kinematics::{Joint, JointKind, Pose, SerialManipulator};
use orbsim::orbital::{insertion_depth, rcm_translation, shaft_direction, line_jacobian};
use orbsim::quat::{PureQuaternion, Quaternion, UnitQuaternion};
use std::f64::consts::{FRAC_PI_2, PI};

fn arm(base_t: [f64; 3], base_yaw: f64) -> SerialManipulator {
    let dh = [
        (0.0, 200.0, 0.0, -FRAC_PI_2),
        (-FRAC_PI_2, 0.0, 180.0, 0.0),
        (0.0, 0.0, 0.0, -FRAC_PI_2),
        (0.0, 180.0, 0.0, FRAC_PI_2),
        (0.0, 0.0, 0.0, -FRAC_PI_2),
        (0.0, 40.0, 0.0, 0.0),
    ];
    let joints: Vec<Joint> = dh
        .iter()
        .map(|&(theta_offset, d, a, alpha)| Joint {
            kind: JointKind::Revolute,
            theta_offset,
            d,
            a,
            alpha,
            lower: -PI * 2.0,
            upper: PI * 2.0,
        })
        .collect();
    let base = Pose {
        r: UnitQuaternion::from_axis_angle(PureQuaternion::k(), base_yaw).unwrap(),
        t: PureQuaternion::new(base_t[0], base_t[1], base_t[2]),
    };
    SerialManipulator::new(joints, base, 50.0).unwrap()
}

fn ik(
    robot: &SerialManipulator,
    t_target: PureQuaternion,
    l_target: PureQuaternion,
    seed: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let mut q: Vec<f64> = seed.to_vec();
    for _ in 0..2000 {
        let pose = robot.forward_kinematics(&q).ok()?;
        let l = shaft_direction(pose.r);
        let et = pose.t - t_target;
        let el = l - l_target;
        let err = DVector::from_column_slice(&[et.x, et.y, et.z, el.x, el.y, el.z]);
        if err.norm() < 1e-12 {
            break;
        }
        let j_t = robot.translation_jacobian(&q).ok()?;
        let j_r = robot.rotation_jacobian(&q).ok()?;
        let j_l = line_jacobian(pose.r, &j_r);
        let mut j = DMatrix::zeros(6, 6);
        j.view_mut((0, 0), (3, 6)).copy_from(&j_t.rows(1, 3));
        j.view_mut((3, 0), (3, 6)).copy_from(&j_l.rows(1, 3));
        let jtj = j.transpose() * &j + DMatrix::identity(6, 6) * 1e-6;
        let dq = jtj.lu().solve(&(j.transpose() * err))?;
        let scale = (0.2 / dq.amax()).min(1.0);
        for k in 0..6 {
            q[k] -= dq[k] * scale;
        }
    }
    let pose = robot.forward_kinematics(&q).ok()?;
    let l = shaft_direction(pose.r);
    let et = pose.t - t_target;
    let el = l - l_target;
    let resid = (et.norm_squared() + el.norm_squared()).sqrt();
    Some((q, resid))
}

fn report(name: &str, robot: &SerialManipulator, q: &[f64], r_eye: f64) {
    let pose = robot.forward_kinematics(q).unwrap();
    let l = shaft_direction(pose.r);
    let (d, h1) = insertion_depth(pose.t, l, r_eye).unwrap();
    let t_om = rcm_translation(pose.t, d, l);
    let j_t = robot.translation_jacobian(q).unwrap();
    let sv = j_t.rows(1, 3).into_owned().svd(false, false).singular_values;
    println!("--- {name}");
    println!("q          = {:?}", q);
    println!("tip        = ({:.6}, {:.6}, {:.6})", pose.t.x, pose.t.y, pose.t.z);
    println!("l          = ({:.6}, {:.6}, {:.6})", l.x, l.y, l.z);
    println!("t_OM       = ({:.6}, {:.6}, {:.6})  |t_OM|={:.9}", t_om.x, t_om.y, t_om.z, t_om.norm());
    println!("d={d:.4} h1={h1:.4}  sv(J_t3)={:.2?}", sv.as_slice());
    let rq = pose.r.quaternion();
    println!("tip r      = ({:.9}, {:.9}, {:.9}, {:.9})", rq.w, rq.x, rq.y, rq.z);
}

fn main() {
    let r_eye = 12.0;
    let rcm1 = PureQuaternion::new(6.0, 0.0, 10.392304845413264);
    let rcm2 = PureQuaternion::new(-6.0, 0.0, 10.392304845413264);

    let tip1 = PureQuaternion::new(1.5, 0.0, -1.0);
    let l1 = (tip1 - rcm1).normalized().unwrap();
    let tip2 = PureQuaternion::new(-2.0, 0.0, 1.0);
    let l2 = (tip2 - rcm2).normalized().unwrap();
    println!("l1 target = ({:.9},{:.9},{:.9})", l1.x, l1.y, l1.z);
    println!("l2 target = ({:.9},{:.9},{:.9})", l2.x, l2.y, l2.z);

    let r1 = arm([320.0, 0.0, 60.0], PI);
    let r2 = arm([-320.0, 0.0, 60.0], 0.0);

    let seeds: Vec<Vec<f64>> = vec![
        vec![0.0, 0.6, -0.6, 0.0, 0.6, 0.0],
        vec![0.0, 0.9, -1.2, 0.0, 1.0, 0.0],
        vec![0.2, 0.4, -0.9, 0.3, 0.8, -0.3],
        vec![0.0, 1.2, -0.8, 0.0, 1.4, 0.0],
        vec![-0.2, 0.8, -1.0, -0.4, 1.2, 0.4],
    ];
    for (name, robot, tip, l) in [("R1", &r1, tip1, l1), ("R2", &r2, tip2, l2)] {
        println!("==== {name}");
        for seed in &seeds {
            if let Some((q, resid)) = ik(robot, tip, l, seed) {
                println!("seed {:?} -> resid {resid:.3e}", seed);
                if resid < 1e-9 {
                    report(name, robot, &q, r_eye);
                }
            } else {
                println!("seed {:?} -> failed", seed);
            }
        }
    }

    let q = Quaternion::new(
        (PI / 2.0).cos(),
        0.0,
        0.0,
        (PI / 2.0).sin(),
    );
    println!("Rz(pi) quaternion = ({},{},{},{})", q.w, q.x, q.y, q.z);
}
