//! Scene loading, the discrete control loop, trajectory generation, and CSV
//! logging.
//!
//! A scene holds two robots whose instruments pierce the eye sphere. Each
//! control cycle builds the tracking objective and the enabled constraint
//! rows, solves the QP, and integrates `q ← q + u·dt` (explicit Euler).
//! Two constraint modes exist: `fixed_rcm` pins each shaft to its initial
//! insertion point with a line–point safe zone, `orbital` lets the insertion
//! points slide on the sphere while the inter-RCM distance stays in a band
//! and the sphere rotation stays within plane limits.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Joint, JointKind, Pose, SerialManipulator};
use crate::orbital::{
    eye_rotation_estimate, orbital_distance_jacobian, orbital_squared_distance,
    orbital_vfi_rows_unchecked, rotation_limit_rows, EyeModel, RotationLimits, ShaftState,
};
use crate::qp::{assemble, build_objective, solve, ControlParams, QuadraticProgram};
use crate::quat::{PureQuaternion, Quaternion, UnitQuaternion};
use crate::vfi::{
    joint_limit_rows, line_point_squared, point_point_squared, safe_zone_row, ConstraintRow,
    VfiGains,
};

/// KKT tolerance used for every control-cycle QP.
pub const QP_TOL: f64 = 1e-8;

/// Tip error below which a positioning run counts as converged (mm).
pub const CONVERGENCE_TOL_MM: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FixedRcm,
    Orbital,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FixedRcm => "fixed_rcm",
            Mode::Orbital => "orbital",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointConfig {
    pub kind: JointKind,
    pub theta_offset_rad: f64,
    pub d_mm: f64,
    pub a_mm: f64,
    pub alpha_rad: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobotConfig {
    pub name: String,
    pub base_translation_mm: [f64; 3],
    /// Base rotation as `(w, x, y, z)`.
    pub base_rotation_wxyz: [f64; 4],
    pub tool_length_mm: f64,
    pub joints: Vec<JointConfig>,
    pub initial_q: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EyeConfig {
    pub radius_mm: f64,
    /// z-height of the plane on which fundus targets are generated.
    pub fundus_depth_mm: f64,
}

/// Distance margins of the zone constraints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginConfig {
    /// Instrument tips stay inside `r_eye − tip_containment_mm`.
    pub tip_containment_mm: f64,
    /// Light-guide tip stays inside `r_eye − light_retina_mm`.
    pub light_retina_mm: f64,
    /// Half-width of the allowed band on the squared RCM distance (mm²).
    pub orbital_band_mm2: f64,
    /// Band half-width the QP rows enforce; defaults to `orbital_band_mm2`.
    /// Explicit Euler inflates the squared distance at second order during
    /// sustained rotation, so enforcing a slightly tighter band keeps the
    /// monitored band intact.
    #[serde(default)]
    pub orbital_row_band_mm2: Option<f64>,
    /// Safe zone on the squared shaft-to-anchor distance in fixed mode (mm²).
    pub rcm_band_mm2: f64,
    /// Height of the rotation-limit z-plane; defaults to half the radius.
    #[serde(default)]
    pub rotation_plane_z_mm: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    pub eye: EyeConfig,
    pub robots: Vec<RobotConfig>,
    pub controller: ControlParams,
    pub gains: VfiGains,
    pub margins: MarginConfig,
    pub dt_s: f64,
}

/// A validated scene with everything the control loop needs precomputed.
#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    pub robots: [SerialManipulator; 2],
    pub eye: EyeModel,
    pub limits: RotationLimits,
    /// Stacked initial joint vector.
    pub q0: DVector<f64>,
    pub n1: usize,
    pub n2: usize,
    /// Initial tip translations.
    pub tips0: [PureQuaternion; 2],
    /// Initial RCM points; anchors of the fixed-RCM rows.
    pub rcm_anchors: [PureQuaternion; 2],
    /// Squared RCM distance at the initial configuration.
    pub d_init: f64,
    pub scene_hash: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn build_robot(cfg: &RobotConfig) -> Result<SerialManipulator> {
    let joints: Vec<Joint> = cfg
        .joints
        .iter()
        .map(|j| Joint {
            kind: j.kind,
            theta_offset: j.theta_offset_rad,
            d: j.d_mm,
            a: j.a_mm,
            alpha: j.alpha_rad,
            lower: j.lower,
            upper: j.upper,
        })
        .collect();
    let [w, x, y, z] = cfg.base_rotation_wxyz;
    let base = Pose {
        r: UnitQuaternion::new(Quaternion::new(w, x, y, z))?,
        t: PureQuaternion::new(
            cfg.base_translation_mm[0],
            cfg.base_translation_mm[1],
            cfg.base_translation_mm[2],
        ),
    };
    SerialManipulator::new(joints, base, cfg.tool_length_mm)
}

/// Loads and validates a scene file (JSON).
pub fn load_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path)?;
    let config: SceneConfig = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    scene_from_config(config, fnv1a(&bytes))
}

/// Validates a parsed configuration and precomputes the initial state.
pub fn scene_from_config(config: SceneConfig, scene_hash: u64) -> Result<Scene> {
    if config.robots.len() != 2 {
        return Err(Error::Config(format!(
            "scene needs exactly two robots, got {}",
            config.robots.len()
        )));
    }
    config.controller.validate()?;
    config.gains.validate()?;
    if !(config.dt_s > 0.0 && config.dt_s <= 0.05) {
        return Err(Error::Config(format!(
            "dt must be in (0, 0.05] s, got {}",
            config.dt_s
        )));
    }
    let eye = EyeModel::new(config.eye.radius_mm)?;
    if config.eye.fundus_depth_mm.abs() >= eye.radius() {
        return Err(Error::Config("fundus plane lies outside the eye".into()));
    }

    let r1 = build_robot(&config.robots[0])?;
    let r2 = build_robot(&config.robots[1])?;
    for (cfg, robot) in config.robots.iter().zip([&r1, &r2]) {
        if cfg.initial_q.len() != robot.dof() {
            return Err(Error::DimensionMismatch {
                context: "initial joint vector",
                expected: robot.dof(),
                got: cfg.initial_q.len(),
            });
        }
        for (k, (&q, j)) in cfg.initial_q.iter().zip(robot.joints()).enumerate() {
            if q < j.lower || q > j.upper {
                return Err(Error::InitialViolation {
                    constraint: format!("{} joint {k} limits", cfg.name),
                    margin: (q - j.lower).min(j.upper - q),
                });
            }
        }
    }

    let (n1, n2) = (r1.dof(), r2.dof());
    let mut q0 = DVector::zeros(n1 + n2);
    q0.rows_mut(0, n1)
        .copy_from_slice(&config.robots[0].initial_q);
    q0.rows_mut(n1, n2)
        .copy_from_slice(&config.robots[1].initial_q);

    let d_rot = config
        .margins
        .rotation_plane_z_mm
        .unwrap_or(eye.radius() / 2.0);
    let limits = RotationLimits::standard(d_rot, config.gains.rotation)?;

    let mut scene = Scene {
        config,
        robots: [r1, r2],
        eye,
        limits,
        q0: q0.clone(),
        n1,
        n2,
        tips0: [PureQuaternion::zero(); 2],
        rcm_anchors: [PureQuaternion::zero(); 2],
        d_init: 0.0,
        scene_hash,
    };

    // Initial geometry and feasibility.
    let snap = snapshot(&scene, &q0)?;
    scene.tips0 = [snap.r1.tip.t, snap.r2.tip.t];
    scene.rcm_anchors = [snap.r1.shaft.t_om, snap.r2.shaft.t_om];
    scene.d_init = snap.d_om;

    for (name, margin) in MARGIN_NAMES.iter().zip(margins(&scene, &snap, &q0)) {
        if margin < 0.0 {
            return Err(Error::InitialViolation {
                constraint: (*name).into(),
                margin,
            });
        }
    }
    Ok(scene)
}

/// Per-robot kinematic quantities of one instant.
#[derive(Clone, Debug)]
pub struct RobotSnapshot {
    pub tip: Pose,
    pub j_t: DMatrix<f64>,
    pub j_r: DMatrix<f64>,
    pub shaft: ShaftState,
}

/// Full kinematic state of the two-robot scene at a joint vector.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub r1: RobotSnapshot,
    pub r2: RobotSnapshot,
    pub d_om: f64,
    pub j_om: RowDVector<f64>,
}

fn robot_snapshot(robot: &SerialManipulator, q: &[f64], r_eye: f64) -> Result<RobotSnapshot> {
    let tip = robot.forward_kinematics(q)?;
    let j_t = robot.translation_jacobian(q)?;
    let j_r = robot.rotation_jacobian(q)?;
    let shaft = ShaftState::compute(tip.t, tip.r, &j_t, &j_r, r_eye)?;
    Ok(RobotSnapshot {
        tip,
        j_t,
        j_r,
        shaft,
    })
}

/// Computes poses, Jacobians, and the orbital chain at `q`.
pub fn snapshot(scene: &Scene, q: &DVector<f64>) -> Result<Snapshot> {
    let (n1, n2) = (scene.n1, scene.n2);
    if q.nrows() != n1 + n2 {
        return Err(Error::DimensionMismatch {
            context: "stacked joint vector",
            expected: n1 + n2,
            got: q.nrows(),
        });
    }
    let q1: Vec<f64> = q.rows(0, n1).iter().copied().collect();
    let q2: Vec<f64> = q.rows(n1, n2).iter().copied().collect();
    let r1 = robot_snapshot(&scene.robots[0], &q1, scene.eye.radius())?;
    let r2 = robot_snapshot(&scene.robots[1], &q2, scene.eye.radius())?;
    let d_om = orbital_squared_distance(r1.shaft.t_om, r2.shaft.t_om);
    let j_om =
        orbital_distance_jacobian(r1.shaft.t_om, r2.shaft.t_om, &r1.shaft.j_tom, &r2.shaft.j_tom);
    Ok(Snapshot { r1, r2, d_om, j_om })
}

/// Names of the logged margin columns, in order.
pub const MARGIN_NAMES: [&str; 13] = [
    "rcm_r1",
    "rcm_r2",
    "tip_eye_r1",
    "tip_eye_r2",
    "light_retina",
    "orbital_lower",
    "orbital_upper",
    "rot_x_r1",
    "rot_x_r2",
    "rot_z_r1",
    "rot_z_r2",
    "joints_r1",
    "joints_r2",
];

/// Names of the margins a mode enforces as QP rows.
pub fn enforced_margins(mode: Mode) -> Vec<&'static str> {
    let mut v = vec![
        "tip_eye_r1",
        "tip_eye_r2",
        "light_retina",
        "joints_r1",
        "joints_r2",
    ];
    match mode {
        Mode::FixedRcm => {
            v.insert(0, "rcm_r1");
            v.insert(1, "rcm_r2");
        }
        Mode::Orbital => {
            for (i, name) in [
                "orbital_lower",
                "orbital_upper",
                "rot_x_r1",
                "rot_x_r2",
                "rot_z_r1",
                "rot_z_r2",
            ]
            .iter()
            .enumerate()
            {
                v.insert(i, name);
            }
        }
    }
    v
}

fn joint_margin(robot: &SerialManipulator, q: &[f64]) -> f64 {
    robot
        .joints()
        .iter()
        .zip(q)
        .map(|(j, &qk)| (j.upper - qk).min(qk - j.lower))
        .fold(f64::INFINITY, f64::min)
}

/// All margin values (nonnegative means satisfied), in [`MARGIN_NAMES`]
/// order. Margins of rows a mode does not enforce are still reported.
pub fn margins(scene: &Scene, snap: &Snapshot, q: &DVector<f64>) -> Vec<f64> {
    let mc = &scene.config.margins;
    let r_eye = scene.eye.radius();
    let contain = (r_eye - mc.tip_containment_mm).powi(2);
    let retina = (r_eye - mc.light_retina_mm).powi(2);

    let lp = |snapr: &RobotSnapshot, anchor: PureQuaternion| -> f64 {
        let (d, _) = line_point_squared(
            snapr.tip.t,
            snapr.shaft.l,
            anchor,
            &snapr.j_t,
            &snapr.shaft.j_l,
        )
        .expect("shaft direction is unit");
        mc.rcm_band_mm2 - d
    };
    let rot = scene
        .limits
        .signed_distances(snap.r1.shaft.t_om, snap.r2.shaft.t_om);

    let q1: Vec<f64> = q.rows(0, scene.n1).iter().copied().collect();
    let q2: Vec<f64> = q.rows(scene.n1, scene.n2).iter().copied().collect();

    vec![
        lp(&snap.r1, scene.rcm_anchors[0]),
        lp(&snap.r2, scene.rcm_anchors[1]),
        contain - snap.r1.tip.t.norm_squared(),
        contain - snap.r2.tip.t.norm_squared(),
        retina - snap.r2.tip.t.norm_squared(),
        snap.d_om - (scene.d_init - mc.orbital_band_mm2),
        (scene.d_init + mc.orbital_band_mm2) - snap.d_om,
        rot[0],
        rot[1],
        rot[2],
        rot[3],
        joint_margin(&scene.robots[0], &q1),
        joint_margin(&scene.robots[1], &q2),
    ]
}

/// Builds the enabled constraint rows for a mode, in deterministic order:
/// safety (fixed-RCM, containment, retina), orbital band, rotation limits,
/// joint limits. Also returns the per-family row counts for the log ledger.
pub fn constraint_rows(
    scene: &Scene,
    snap: &Snapshot,
    q: &DVector<f64>,
    mode: Mode,
) -> Result<(Vec<ConstraintRow>, Vec<(&'static str, usize)>)> {
    let (n1, n2) = (scene.n1, scene.n2);
    let n = n1 + n2;
    let mc = &scene.config.margins;
    let gains = &scene.config.gains;
    let r_eye = scene.eye.radius();
    let mut rows = Vec::with_capacity(2 * n + 9);
    let mut ledger = Vec::new();

    // Safety family.
    let mut safety = 0usize;
    if mode == Mode::FixedRcm {
        for (snapr, anchor, offset) in [
            (&snap.r1, scene.rcm_anchors[0], 0),
            (&snap.r2, scene.rcm_anchors[1], n1),
        ] {
            let (d, j_d) = line_point_squared(
                snapr.tip.t,
                snapr.shaft.l,
                anchor,
                &snapr.j_t,
                &snapr.shaft.j_l,
            )?;
            let row = safe_zone_row(&j_d, mc.rcm_band_mm2 - d, gains.rcm, 0.0);
            rows.push(ConstraintRow::from_block(n, offset, &row.coeffs, row.bound));
            safety += 1;
        }
    }
    for (snapr, offset) in [(&snap.r1, 0), (&snap.r2, n1)] {
        let (d, j_d) = point_point_squared(snapr.tip.t, PureQuaternion::zero(), &snapr.j_t);
        let row = safe_zone_row(
            &j_d,
            (r_eye - mc.tip_containment_mm).powi(2) - d,
            gains.safety,
            0.0,
        );
        rows.push(ConstraintRow::from_block(n, offset, &row.coeffs, row.bound));
        safety += 1;
    }
    {
        let (d, j_d) = point_point_squared(snap.r2.tip.t, PureQuaternion::zero(), &snap.r2.j_t);
        let row = safe_zone_row(
            &j_d,
            (r_eye - mc.light_retina_mm).powi(2) - d,
            gains.safety,
            0.0,
        );
        rows.push(ConstraintRow::from_block(n, n1, &row.coeffs, row.bound));
        safety += 1;
    }
    ledger.push(("safety", safety));

    if mode == Mode::Orbital {
        let band = orbital_vfi_rows_unchecked(
            snap.d_om,
            scene.d_init,
            mc.orbital_row_band_mm2.unwrap_or(mc.orbital_band_mm2),
            gains.orbital,
            &snap.j_om,
        );
        rows.extend(band);
        ledger.push(("orbital", 2));

        let rot = rotation_limit_rows(
            snap.r1.shaft.t_om,
            snap.r2.shaft.t_om,
            &snap.r1.shaft.j_tom,
            &snap.r2.shaft.j_tom,
            &scene.limits,
        )?;
        rows.extend(rot);
        ledger.push(("rotation", 4));
    }

    let q1: Vec<f64> = q.rows(0, n1).iter().copied().collect();
    let q2: Vec<f64> = q.rows(n1, n2).iter().copied().collect();
    let mut joints = 0usize;
    for (robot, qk, offset) in [(&scene.robots[0], &q1, 0), (&scene.robots[1], &q2, n1)] {
        let jl = joint_limit_rows(
            qk,
            &robot.lower_limits(),
            &robot.upper_limits(),
            gains.joint,
            n,
            offset,
        );
        joints += jl.len();
        rows.extend(jl);
    }
    ledger.push(("joints", joints));

    Ok((rows, ledger))
}

/// One logged control step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub t1: [f64; 3],
    pub t2: [f64; 3],
    pub d_om: f64,
    pub margins: Vec<f64>,
    pub eye_angle_rad: f64,
}

/// Runs one control cycle: constraint rows, QP, Euler integration. Returns
/// the updated joint vector and the record of the state the cycle acted on.
pub fn step(
    scene: &Scene,
    q: &DVector<f64>,
    target1: PureQuaternion,
    target2: PureQuaternion,
    mode: Mode,
    t: f64,
) -> Result<(DVector<f64>, StepRecord)> {
    let snap = snapshot(scene, q)?;
    let (rows, _) = constraint_rows(scene, &snap, q, mode)?;
    let (h, f) = build_objective(
        &snap.r1.j_t,
        snap.r1.tip.t - target1,
        &snap.r2.j_t,
        snap.r2.tip.t - target2,
        &scene.config.controller,
    )?;
    let (w, bound) = assemble(scene.n1 + scene.n2, &rows)?;
    let qp = QuadraticProgram::new(h, f, w, bound)?;
    let sol = solve(&qp, QP_TOL)?;

    let new_q = q + &sol.u * scene.config.dt_s;
    let margins = margins(scene, &snap, q);
    let eye_angle = eye_rotation_estimate(
        (scene.rcm_anchors[0], scene.rcm_anchors[1]),
        (snap.r1.shaft.t_om, snap.r2.shaft.t_om),
    )?
    .angle();
    let record = StepRecord {
        t,
        q: q.iter().copied().collect(),
        u: sol.u.iter().copied().collect(),
        t1: [snap.r1.tip.t.x, snap.r1.tip.t.y, snap.r1.tip.t.z],
        t2: [snap.r2.tip.t.x, snap.r2.tip.t.y, snap.r2.tip.t.z],
        d_om: snap.d_om,
        margins,
        eye_angle_rad: eye_angle,
    };
    Ok((new_q, record))
}

/// Needle-tip target source.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Hold the initial tip position.
    Hold,
    /// Timestamped waypoints, linearly interpolated, clamped at the ends.
    Waypoints { waypoints: Vec<Waypoint> },
    /// Lead-in from the initial tip to the circle start, then a circle of
    /// the given diameter on the fundus plane at `rate_rad_s`.
    Circle {
        diameter_mm: f64,
        rate_rad_s: f64,
        approach_s: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub target_mm: [f64; 3],
}

impl TrajectorySpec {
    /// Parses either a JSON file path or a `circle:D=14[,W=0.12][,A=6]` spec.
    pub fn parse_cli(arg: &str) -> Result<Self> {
        if let Some(rest) = arg.strip_prefix("circle:") {
            let mut diameter = None;
            let mut rate = 0.12;
            let mut approach = 6.0;
            for part in rest.split(',') {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad circle parameter `{part}`")))?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number in `{part}`")))?;
                match key {
                    "D" => diameter = Some(v),
                    "W" => rate = v,
                    "A" => approach = v,
                    _ => return Err(Error::Parse(format!("unknown circle key `{key}`"))),
                }
            }
            let diameter_mm =
                diameter.ok_or_else(|| Error::Parse("circle spec needs D=<mm>".into()))?;
            Ok(TrajectorySpec::Circle {
                diameter_mm,
                rate_rad_s: rate,
                approach_s: approach,
            })
        } else {
            let bytes = std::fs::read(arg)?;
            serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{arg}: {e}")))
        }
    }

    fn validate(&self, scene: &Scene) -> Result<()> {
        match self {
            TrajectorySpec::Hold => Ok(()),
            TrajectorySpec::Waypoints { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Config("waypoint trajectory is empty".into()));
                }
                for w in waypoints {
                    let p = PureQuaternion::new(w.target_mm[0], w.target_mm[1], w.target_mm[2]);
                    if p.norm() >= scene.eye.radius() {
                        return Err(Error::Config(format!(
                            "waypoint at t={} s lies outside the eye",
                            w.t_s
                        )));
                    }
                }
                Ok(())
            }
            TrajectorySpec::Circle { diameter_mm, .. } => {
                let r = diameter_mm / 2.0;
                let z = scene.config.eye.fundus_depth_mm;
                if (r * r + z * z).sqrt() >= scene.eye.radius() {
                    return Err(Error::Config(format!(
                        "circle of diameter {diameter_mm} mm exceeds the eye"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Needle target at time `t`.
    pub fn target_at(&self, t: f64, scene: &Scene) -> PureQuaternion {
        match self {
            TrajectorySpec::Hold => scene.tips0[0],
            TrajectorySpec::Waypoints { waypoints } => {
                let p = |w: &Waypoint| {
                    PureQuaternion::new(w.target_mm[0], w.target_mm[1], w.target_mm[2])
                };
                if t <= waypoints[0].t_s {
                    return p(&waypoints[0]);
                }
                for pair in waypoints.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    if t <= b.t_s {
                        let span = (b.t_s - a.t_s).max(1e-12);
                        let alpha = ((t - a.t_s) / span).clamp(0.0, 1.0);
                        return p(a) + (p(b) - p(a)).scale(alpha);
                    }
                }
                p(waypoints.last().expect("nonempty"))
            }
            TrajectorySpec::Circle {
                diameter_mm,
                rate_rad_s,
                approach_s,
            } => {
                let radius = diameter_mm / 2.0;
                let z = scene.config.eye.fundus_depth_mm;
                let start = PureQuaternion::new(radius, 0.0, z);
                if t < *approach_s {
                    let alpha = (t / approach_s).clamp(0.0, 1.0);
                    return scene.tips0[0] + (start - scene.tips0[0]).scale(alpha);
                }
                let phi = rate_rad_s * (t - approach_s);
                PureQuaternion::new(radius * phi.cos(), radius * phi.sin(), z)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LogHeader {
    pub scene_hash: u64,
    pub mode: Mode,
    pub dt_s: f64,
    /// Enabled constraint families with their row counts.
    pub ledger: Vec<(&'static str, usize)>,
    pub params_json: String,
}

/// Time series of a rollout plus metadata for the CSV header.
#[derive(Clone, Debug)]
pub struct SimLog {
    pub header: LogHeader,
    pub n1: usize,
    pub n2: usize,
    pub records: Vec<StepRecord>,
}

fn fmt_g(v: f64) -> String {
    // 12 significant digits.
    format!("{v:.11e}")
}

impl SimLog {
    pub fn total_rows(&self) -> usize {
        self.header.ledger.iter().map(|(_, c)| c).sum()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "# scene_hash={:016x} mode={} dt_s={}",
            self.header.scene_hash,
            self.header.mode.as_str(),
            self.header.dt_s
        )?;
        let ledger: Vec<String> = self
            .header
            .ledger
            .iter()
            .map(|(name, count)| format!("{name}={count}"))
            .collect();
        writeln!(out, "# constraints: {}", ledger.join(","))?;
        writeln!(out, "# params: {}", self.header.params_json)?;

        let n = self.n1 + self.n2;
        let mut cols: Vec<String> = vec!["t".into()];
        cols.extend((1..=n).map(|i| format!("q_{i}")));
        cols.extend((1..=n).map(|i| format!("u_{i}")));
        cols.extend(["t1_x", "t1_y", "t1_z", "t2_x", "t2_y", "t2_z", "D_OM"].map(String::from));
        cols.extend(MARGIN_NAMES.iter().map(|m| format!("margin_{m}")));
        cols.push("eye_angle_rad".into());
        writeln!(out, "{}", cols.join(","))?;

        for r in &self.records {
            let mut fields: Vec<String> = vec![fmt_g(r.t)];
            fields.extend(r.q.iter().map(|&v| fmt_g(v)));
            fields.extend(r.u.iter().map(|&v| fmt_g(v)));
            fields.extend(r.t1.iter().map(|&v| fmt_g(v)));
            fields.extend(r.t2.iter().map(|&v| fmt_g(v)));
            fields.push(fmt_g(r.d_om));
            fields.extend(r.margins.iter().map(|&v| fmt_g(v)));
            fields.push(fmt_g(r.eye_angle_rad));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn log_header(scene: &Scene, mode: Mode) -> Result<LogHeader> {
    let snap = snapshot(scene, &scene.q0)?;
    let (_, ledger) = constraint_rows(scene, &snap, &scene.q0, mode)?;
    let params_json = serde_json::to_string(&serde_json::json!({
        "controller": scene.config.controller,
        "gains": scene.config.gains,
        "margins": scene.config.margins,
    }))
    .expect("serializable params");
    Ok(LogHeader {
        scene_hash: scene.scene_hash,
        mode,
        dt_s: scene.config.dt_s,
        ledger,
        params_json,
    })
}

/// Rolls the scene forward for `duration_s`, tracking the trajectory with
/// the needle while the light guide holds its initial tip position.
pub fn run_trajectory(
    scene: &Scene,
    traj: &TrajectorySpec,
    mode: Mode,
    duration_s: f64,
) -> Result<SimLog> {
    traj.validate(scene)?;
    let header = log_header(scene, mode)?;
    let dt = scene.config.dt_s;
    let steps = (duration_s / dt).round() as usize;
    let mut q = scene.q0.clone();
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let target1 = traj.target_at(t, scene);
        let (next, record) = step(scene, &q, target1, scene.tips0[1], mode, t)?;
        records.push(record);
        q = next;
    }
    Ok(SimLog {
        header,
        n1: scene.n1,
        n2: scene.n2,
        records,
    })
}

/// Outcome of a single positioning run used by the comparison studies.
#[derive(Clone, Debug)]
pub struct PositioningOutcome {
    pub q: DVector<f64>,
    pub tip_error_mm: f64,
    pub converged: bool,
    pub steps: usize,
    /// Estimated sphere rotation at the final configuration.
    pub eye_angle_final_rad: f64,
    /// Largest estimated rotation anywhere in the run.
    pub eye_angle_max_rad: f64,
    /// Worst enabled-constraint margin seen in the run.
    pub min_margin: f64,
    /// Largest |D_OM − D_init| seen in the run.
    pub max_band_dev: f64,
}

/// Positioning protocol: the commanded target moves from the initial tip to
/// `target` at `approach_speed_mm_s`, then holds; the run stops when the tip
/// error drops below [`CONVERGENCE_TOL_MM`] or after `max_s` simulated
/// seconds.
pub fn run_positioning(
    scene: &Scene,
    target: PureQuaternion,
    mode: Mode,
    approach_speed_mm_s: f64,
    max_s: f64,
) -> Result<PositioningOutcome> {
    let dt = scene.config.dt_s;
    let start = scene.tips0[0];
    let distance = (target - start).norm();
    let approach_s = distance / approach_speed_mm_s;
    let max_steps = (max_s / dt).ceil() as usize;
    let enforced = enforced_margins(mode);
    let enforced_idx: Vec<usize> = MARGIN_NAMES
        .iter()
        .enumerate()
        .filter(|(_, name)| enforced.contains(name))
        .map(|(i, _)| i)
        .collect();

    let mut q = scene.q0.clone();
    let mut outcome = PositioningOutcome {
        q: q.clone(),
        tip_error_mm: f64::INFINITY,
        converged: false,
        steps: 0,
        eye_angle_final_rad: 0.0,
        eye_angle_max_rad: 0.0,
        min_margin: f64::INFINITY,
        max_band_dev: 0.0,
    };
    for k in 0..max_steps {
        let t = k as f64 * dt;
        let commanded = if t < approach_s {
            start + (target - start).scale(t / approach_s)
        } else {
            target
        };
        let (next, record) = step(scene, &q, commanded, scene.tips0[1], mode, t)?;
        let tip = PureQuaternion::new(record.t1[0], record.t1[1], record.t1[2]);
        let err = (tip - target).norm();
        outcome.steps = k + 1;
        outcome.eye_angle_final_rad = record.eye_angle_rad;
        outcome.eye_angle_max_rad = outcome.eye_angle_max_rad.max(record.eye_angle_rad);
        for &i in &enforced_idx {
            outcome.min_margin = outcome.min_margin.min(record.margins[i]);
        }
        outcome.max_band_dev = outcome
            .max_band_dev
            .max((record.d_om - scene.d_init).abs());
        outcome.tip_error_mm = err;
        if t >= approach_s && err < CONVERGENCE_TOL_MM {
            outcome.converged = true;
            outcome.q = next;
            return Ok(outcome);
        }
        q = next;
    }
    outcome.q = q;
    Ok(outcome)
}

/// Deterministic near-uniform covering of a disc of the given diameter on
/// the fundus plane (sunflower layout; a single point sits at the center).
pub fn make_fundus_targets(
    count: usize,
    diameter_mm: f64,
    scene: &Scene,
) -> Result<Vec<PureQuaternion>> {
    if count == 0 {
        return Err(Error::Config("target count must be ≥ 1".into()));
    }
    let radius = diameter_mm / 2.0;
    let z = scene.config.eye.fundus_depth_mm;
    if (radius * radius + z * z).sqrt() >= scene.eye.radius() {
        return Err(Error::Config(format!(
            "grid of diameter {diameter_mm} mm does not fit inside the eye"
        )));
    }
    if count == 1 {
        return Ok(vec![PureQuaternion::new(0.0, 0.0, z)]);
    }
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    Ok((1..=count)
        .map(|k| {
            let r = radius * (((k as f64) - 0.5) / count as f64).sqrt();
            let phi = golden * k as f64;
            PureQuaternion::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_circle_parsing() {
        match TrajectorySpec::parse_cli("circle:D=14").unwrap() {
            TrajectorySpec::Circle { diameter_mm, .. } => assert_eq!(diameter_mm, 14.0),
            other => panic!("unexpected {other:?}"),
        }
        match TrajectorySpec::parse_cli("circle:D=10,W=0.3,A=2").unwrap() {
            TrajectorySpec::Circle {
                diameter_mm,
                rate_rad_s,
                approach_s,
            } => {
                assert_eq!(diameter_mm, 10.0);
                assert_eq!(rate_rad_s, 0.3);
                assert_eq!(approach_s, 2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(TrajectorySpec::parse_cli("circle:R=1").is_err());
        assert!(TrajectorySpec::parse_cli("circle:D=bad").is_err());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_ne!(fnv1a(b"a"), fnv1a(b"b"));
    }
}
