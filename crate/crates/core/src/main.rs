use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orbsim::analysis::{emit_report, grid_study_disc, StudyOptions};
use orbsim::sim::{load_scene, run_trajectory, Mode, TrajectorySpec};
use orbsim::verify::check_jacobians;

#[derive(Parser)]
#[command(name = "orbsim", version, about = "Constrained bimanual eye-surgery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory rollout and write the CSV log.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Trajectory JSON file or `circle:D=14[,W=0.12][,A=6]`.
        #[arg(long)]
        trajectory: String,
        /// `fixed` or `orbital`.
        #[arg(long)]
        mode: String,
        /// Override the scene's integration step (seconds).
        #[arg(long)]
        dt: Option<f64>,
        /// Simulated duration (seconds).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every analytic Jacobian against central finite differences.
    CheckJacobians {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the manipulability comparison over a fundus grid.
    GridStudy {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 149)]
        points: usize,
        #[arg(long, default_value_t = 14.0)]
        diameter: f64,
        /// Commanded-target approach speed (mm/s).
        #[arg(long, default_value_t = 3.0)]
        approach_speed: f64,
        /// Per-point settling budget (simulated seconds).
        #[arg(long, default_value_t = 10.0)]
        max_settle: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "fixed" | "fixed_rcm" => Ok(Mode::FixedRcm),
        "orbital" => Ok(Mode::Orbital),
        other => Err(format!("unknown mode `{other}` (use fixed|orbital)")),
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            scene,
            trajectory,
            mode,
            dt,
            duration,
            out,
        } => {
            let mut scene = load_scene(&scene).map_err(|e| e.to_string())?;
            if let Some(dt) = dt {
                if !(dt > 0.0 && dt <= 0.05) {
                    return Err(format!("dt must be in (0, 0.05] s, got {dt}"));
                }
                scene.config.dt_s = dt;
            }
            let mode = parse_mode(&mode)?;
            let traj = TrajectorySpec::parse_cli(&trajectory).map_err(|e| e.to_string())?;
            let log = run_trajectory(&scene, &traj, mode, duration).map_err(|e| e.to_string())?;
            let file = File::create(&out).map_err(|e| e.to_string())?;
            let mut writer = BufWriter::new(file);
            log.write_csv(&mut writer).map_err(|e| e.to_string())?;
            writer.flush().map_err(|e| e.to_string())?;

            let worst = log
                .records
                .iter()
                .flat_map(|r| r.margins.iter())
                .fold(f64::INFINITY, |m, &v| m.min(v));
            println!(
                "wrote {} steps to {} (worst logged margin {worst:.3e})",
                log.records.len(),
                out.display()
            );
            Ok(())
        }
        Command::CheckJacobians {
            scene,
            samples,
            seed,
        } => {
            let scene = load_scene(&scene).map_err(|e| e.to_string())?;
            let checks = check_jacobians(&scene, samples, seed).map_err(|e| e.to_string())?;
            let mut failed = false;
            for c in &checks {
                let status = if c.max_rel_err <= 1e-5 { "ok" } else { "FAIL" };
                failed |= c.max_rel_err > 1e-5;
                println!(
                    "{status:4} {:<20} max relative error {:.3e} over {} samples",
                    c.name, c.max_rel_err, c.samples
                );
            }
            if failed {
                Err("finite-difference check exceeded 1e-5".into())
            } else {
                Ok(())
            }
        }
        Command::GridStudy {
            scene,
            points,
            diameter,
            approach_speed,
            max_settle,
            out,
        } => {
            let scene = load_scene(&scene).map_err(|e| e.to_string())?;
            let opts = StudyOptions {
                approach_speed_mm_s: approach_speed,
                max_settle_s: max_settle,
            };
            let report =
                grid_study_disc(&scene, points, diameter, &opts).map_err(|e| e.to_string())?;
            emit_report(&report, &out).map_err(|e| e.to_string())?;
            print!("{}", report.summary().render());
            println!("report written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
