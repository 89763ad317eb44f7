use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use steerlabel::geometry::relative_pose;
use steerlabel::odometry::{estimate_trajectory, PointCloud, TrajectoryEstimate};
use steerlabel::pipeline::config::Config;
use steerlabel::pipeline::io::{
    export_log, load_scans, load_trajectory, read_ground_truth, read_labels, read_trajectory_lines, write_ground_truth,
    write_labels, write_trajectory, GROUND_TRUTH_FILE, SCANS_DIR, TRAJECTORY_FILE,
};
use steerlabel::pipeline::{
    evaluate_mse, generate_pseudo_labels_with, pid_baseline_labels, EvalReport, GroundTruth, LabelSource, PidGains,
    PseudoLabelRecord,
};
use steerlabel::simulator::{run_scenario, DrivingLog};
use steerlabel::ssrl::{run_configuration, write_report_csv, ModelKind, SsrlRow};

use crate::args::{EvalArgs, FullArgs, LabelArgs, Model, OdometryArgs, Predictor, SsrlArgs};
use crate::error::CliError;
use crate::manifest::RunManifest;

pub const ESTIMATED_TRAJECTORY_FILE: &str = "estimated_trajectory.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SSRL_REPORT_FILE: &str = "ssrl_report.csv";
/// Intervals of the temporal sweep in the `full` report.
pub const K_SWEEP: [usize; 4] = [1, 4, 8, 12];

pub fn labels_file(source: LabelSource) -> String {
    format!("labels_{}.csv", source.as_str())
}

fn require_out(out: &Option<PathBuf>, command: &str) -> Result<PathBuf, CliError> {
    let dir = out
        .clone()
        .ok_or_else(|| CliError::Usage(format!("`{command}` needs --out <DIR>")))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn print_json_line(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("report serializes"));
}

fn print_report(name: &str, k: Option<usize>, r: &EvalReport) {
    let k = k.map(|k| format!("k={k:<2} ")).unwrap_or_default();
    println!(
        "{name:<9} {k}MSE {:.6e} rad² over {} frames ({} invalid)",
        r.mse, r.n_frames, r.n_invalid
    );
    for b in &r.bins {
        println!(
            "          |truth| in [{:.4}, {:.4}] rad: MSE {:.6e} over {} frames",
            b.lower_abs_rad, b.upper_abs_rad, b.mse, b.n_frames
        );
    }
}

fn simulate_log(cfg: &Config) -> Result<DrivingLog, CliError> {
    let scenario = cfg.simulator.scenario(&cfg.vehicle);
    let world = cfg.simulator.world(&scenario)?;
    Ok(run_scenario(&world, &scenario)?)
}

fn truth_of(log: &DrivingLog) -> GroundTruth {
    GroundTruth::from_sequence(&log.timestamps, &log.steering_truth)
}

/// Distance between the estimated and true position of the last frame,
/// both taken relative to the first frame.
fn final_drift_m(estimate: &TrajectoryEstimate, truth: &[steerlabel::geometry::Pose]) -> Option<f64> {
    let (est, gt) = (estimate.poses(), truth);
    if est.len() != gt.len() || est.is_empty() {
        return None;
    }
    let e = relative_pose(&est[est.len() - 1], &est[0]);
    let g = relative_pose(&gt[gt.len() - 1], &gt[0]);
    Some((e.translation() - g.translation()).norm())
}

/// Scans of a log directory with their timestamps: from the log's trajectory
/// file when there is one, otherwise evenly spaced by `simulator.dt`.
fn load_log_scans(
    dir: &Path,
    cfg: &Config,
) -> Result<(Vec<PointCloud>, Vec<f64>, Option<Vec<steerlabel::geometry::Pose>>), CliError> {
    let scans = load_scans(&dir.join(SCANS_DIR))?;
    let traj_path = dir.join(TRAJECTORY_FILE);
    if traj_path.exists() {
        let (_, poses, timestamps) = read_trajectory_lines(&traj_path)?;
        if poses.len() != scans.len() {
            return Err(CliError::Data(format!(
                "{}: {} poses for {} scans",
                traj_path.display(),
                poses.len(),
                scans.len()
            )));
        }
        Ok((scans, timestamps, Some(poses)))
    } else {
        let timestamps = (0..scans.len()).map(|i| i as f64 * cfg.simulator.dt).collect();
        Ok((scans, timestamps, None))
    }
}

pub fn simulate(cfg: &Config, out: &Option<PathBuf>, manifest: &mut RunManifest) -> Result<(), CliError> {
    let dir = require_out(out, "simulate")?;
    let log = simulate_log(cfg)?;
    export_log(&log, &dir, cfg.pipeline.ply_format.into())?;
    manifest.outputs = vec![
        dir.join(TRAJECTORY_FILE),
        dir.join(GROUND_TRUTH_FILE),
        dir.join(SCANS_DIR),
    ];
    let points: usize = log.scans.iter().map(PointCloud::len).sum();
    println!(
        "simulated {} frames ({} LiDAR points) into {}",
        log.len(),
        points,
        dir.display()
    );
    print_json_line(&json!({"subcommand": "simulate", "frames": log.len(), "points": points, "out": dir}));
    Ok(())
}

pub fn odometry(cfg: &Config, args: &OdometryArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let dir = require_out(&args.common.out, "odometry")?;
    let (scans, timestamps, truth_poses) = load_log_scans(&args.log, cfg)?;
    let traj = estimate_trajectory(&scans, &timestamps, &cfg.odometry)?;
    let path = dir.join(ESTIMATED_TRAJECTORY_FILE);
    write_trajectory(traj.poses(), traj.timestamps(), &path)?;
    manifest.inputs = vec![args.log.clone()];
    manifest.outputs = vec![path.clone()];
    let drift = truth_poses.and_then(|p| final_drift_m(&traj, &p));
    let mean_residual = traj.residuals().iter().skip(1).sum::<f64>() / (traj.len() - 1) as f64;
    println!(
        "estimated {} poses, mean ICP residual {:.4e} m, wrote {}",
        traj.len(),
        mean_residual,
        path.display()
    );
    if let Some(d) = drift {
        println!("final position error against the log's trajectory: {d:.4e} m");
    }
    print_json_line(&json!({
        "subcommand": "odometry",
        "frames": traj.len(),
        "mean_residual_m": mean_residual,
        "final_drift_m": drift,
        "trajectory": path,
    }));
    Ok(())
}

fn predict(
    source: LabelSource,
    traj: &TrajectoryEstimate,
    cfg: &Config,
    k: usize,
) -> Result<Vec<PseudoLabelRecord>, CliError> {
    Ok(match source {
        LabelSource::Proposed => generate_pseudo_labels_with(traj, &cfg.vehicle, k, &cfg.pipeline.label_options())?,
        LabelSource::Pid => pid_baseline_labels(traj, &cfg.pid, &cfg.vehicle, k)?,
    })
}

#[derive(Debug, Serialize)]
struct LabelResult {
    predictor: &'static str,
    labels: usize,
    file: Option<PathBuf>,
    report: Option<EvalReport>,
}

pub fn label(cfg: &mut Config, args: &LabelArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if let Some(k) = args.k {
        if k == 0 {
            return Err(CliError::Usage("--k must be >= 1".into()));
        }
        cfg.pipeline.k = k;
        manifest.config.pipeline.k = k;
    }
    let k = cfg.pipeline.k;
    let (traj, mut truth) = if let Some(path) = &args.trajectory {
        manifest.inputs.push(path.clone());
        (load_trajectory(path)?, None)
    } else if let Some(dir) = &args.log {
        manifest.inputs.push(dir.clone());
        let (scans, timestamps, _) = load_log_scans(dir, cfg)?;
        let gt_path = dir.join(GROUND_TRUTH_FILE);
        let truth = if gt_path.exists() {
            Some(read_ground_truth(&gt_path)?)
        } else {
            None
        };
        (estimate_trajectory(&scans, &timestamps, &cfg.odometry)?, truth)
    } else {
        let log = simulate_log(cfg)?;
        let traj = estimate_trajectory(&log.scans, &log.timestamps, &cfg.odometry)?;
        (traj, Some(truth_of(&log)))
    };
    if let Some(path) = &args.ground_truth {
        manifest.inputs.push(path.clone());
        truth = Some(read_ground_truth(path)?);
    }
    let out = match &args.common.out {
        Some(_) => Some(require_out(&args.common.out, "label")?),
        None => None,
    };
    let sources: &[LabelSource] = match args.predictor {
        Predictor::Proposed => &[LabelSource::Proposed],
        Predictor::Pid => &[LabelSource::Pid],
        Predictor::Both => &[LabelSource::Proposed, LabelSource::Pid],
    };
    let mut results = Vec::new();
    for &source in sources {
        let labels = predict(source, &traj, cfg, k)?;
        let file = match &out {
            Some(dir) => {
                let path = dir.join(labels_file(source));
                write_labels(&labels, &path)?;
                manifest.outputs.push(path.clone());
                Some(path)
            }
            None => None,
        };
        let report = truth.as_ref().map(|t| evaluate_mse(&labels, t)).transpose()?;
        match &report {
            Some(r) => print_report(source.as_str(), Some(k), r),
            None => println!(
                "{:<9} k={k:<2} {} labels (no ground truth to score against)",
                source.as_str(),
                labels.len()
            ),
        }
        results.push(LabelResult {
            predictor: source.as_str(),
            labels: labels.len(),
            file,
            report,
        });
    }
    print_json_line(&json!({"subcommand": "label", "k": k, "results": results}));
    Ok(())
}

pub fn eval(args: &EvalArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    manifest.inputs = vec![args.labels.clone(), args.ground_truth.clone()];
    let labels = read_labels(&args.labels)?;
    let truth = read_ground_truth(&args.ground_truth)?;
    let report = evaluate_mse(&labels, &truth).map_err(|e| {
        CliError::Data(format!(
            "{} against {}: {e}",
            args.labels.display(),
            args.ground_truth.display()
        ))
    })?;
    let name = labels.first().map_or("labels", |r| r.source.as_str());
    println!("{}", args.labels.display());
    print_report(name, None, &report);
    print_json_line(&json!({"subcommand": "eval", "labels": args.labels, "report": report}));
    Ok(())
}

pub fn ssrl_demo(cfg: &mut Config, args: &SsrlArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    if let Some(m) = args.model {
        cfg.ssrl.model = match m {
            Model::Linear => ModelKind::Linear,
            Model::Mlp => ModelKind::Mlp,
        };
        manifest.config.ssrl.model = cfg.ssrl.model;
    }
    let section = &cfg.ssrl;
    let rows: Vec<SsrlRow> = section
        .tasks()
        .iter()
        .map(|t| run_configuration(t, section.model, section.train_config(), section.n_test))
        .collect::<Result<_, _>>()?;

    println!(
        "model    sigma_2  bias_g  seeds  lhs       gap       variance  gap+var   closed-form  max |lhs-(gap+var)|/lhs"
    );
    for &sigma_2 in &section.sigma_2_values {
        for &bias in &section.biases {
            let group: Vec<_> = rows
                .iter()
                .filter(|r| r.sigma_2 == sigma_2 && r.bias_g == bias)
                .collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&SsrlRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let lhs = mean(&|r| r.report.lhs);
            let gap = mean(&|r| r.report.gap_term);
            let var = group[0].report.variance_term;
            let worst = group.iter().map(|r| r.report.identity_error()).fold(0.0, f64::max);
            let model = match section.model {
                ModelKind::Linear => "linear",
                ModelKind::Mlp => "mlp",
            };
            println!(
                "{model:<8} {sigma_2:<8} {bias:<7} {:<6} {lhs:<9.5} {gap:<9.5} {var:<9.5} {:<9.5} {:<12.5} {worst:.3e}",
                group.len(),
                gap + var,
                group[0].report.closed_form_lhs,
            );
        }
    }
    if let Some(out) = &args.common.out {
        let dir = require_out(&Some(out.clone()), "ssrl-demo")?;
        let path = dir.join(SSRL_REPORT_FILE);
        let file = fs::File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        write_report_csv(&rows, file)?;
        manifest.outputs.push(path);
    }
    print_json_line(&json!({"subcommand": "ssrl-demo", "rows": rows}));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct KSweepEntry {
    pub k: usize,
    pub mse: f64,
}

/// Everything `full` measures, written to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FullReport {
    pub frames: usize,
    pub k: usize,
    pub proposed: EvalReport,
    pub pid: EvalReport,
    pub pid_over_proposed: f64,
    pub pid_gains: PidGains,
    /// Proposed-predictor MSE for each interval of [`K_SWEEP`].
    pub k_sweep: Vec<KSweepEntry>,
    pub final_drift_m: Option<f64>,
}

pub fn full(cfg: &Config, args: &FullArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let dir = require_out(&args.common.out, "full")?;
    let log = simulate_log(cfg)?;
    let traj = estimate_trajectory(&log.scans, &log.timestamps, &cfg.odometry)?;
    let truth = truth_of(&log);
    let k = cfg.pipeline.k;

    let proposed = predict(LabelSource::Proposed, &traj, cfg, k)?;
    let pid = predict(LabelSource::Pid, &traj, cfg, k)?;
    let proposed_report = evaluate_mse(&proposed, &truth)?;
    let pid_report = evaluate_mse(&pid, &truth)?;
    let k_sweep = K_SWEEP
        .iter()
        .map(|&k| {
            let labels = predict(LabelSource::Proposed, &traj, cfg, k)?;
            Ok(KSweepEntry {
                k,
                mse: evaluate_mse(&labels, &truth)?.mse,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut outputs = Vec::new();
    if args.write_scans {
        export_log(&log, &dir, cfg.pipeline.ply_format.into())?;
        outputs.push(dir.join(SCANS_DIR));
    } else {
        write_trajectory(&log.poses, &log.timestamps, &dir.join(TRAJECTORY_FILE))?;
        write_ground_truth(&truth, &dir.join(GROUND_TRUTH_FILE))?;
    }
    outputs.push(dir.join(TRAJECTORY_FILE));
    outputs.push(dir.join(GROUND_TRUTH_FILE));
    let est_path = dir.join(ESTIMATED_TRAJECTORY_FILE);
    write_trajectory(traj.poses(), traj.timestamps(), &est_path)?;
    outputs.push(est_path);
    for (source, labels) in [(LabelSource::Proposed, &proposed), (LabelSource::Pid, &pid)] {
        let path = dir.join(labels_file(source));
        write_labels(labels, &path)?;
        outputs.push(path);
    }

    let report = FullReport {
        frames: log.len(),
        k,
        pid_over_proposed: pid_report.mse / proposed_report.mse,
        proposed: proposed_report,
        pid: pid_report,
        pid_gains: cfg.pid,
        k_sweep,
        final_drift_m: final_drift_m(&traj, &log.poses),
    };
    let report_path = dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(&report_path, text).map_err(|e| CliError::Data(format!("{}: {e}", report_path.display())))?;
    outputs.push(report_path);
    manifest.outputs = outputs;

    println!(
        "{} frames, final position error {:.4e} m",
        report.frames,
        report.final_drift_m.unwrap_or(f64::NAN)
    );
    print_report("proposed", Some(k), &report.proposed);
    print_report("pid", Some(k), &report.pid);
    println!("PID / proposed MSE ratio: {:.3}", report.pid_over_proposed);
    for e in &report.k_sweep {
        println!("proposed  k={:<2} MSE {:.6e}", e.k, e.mse);
    }
    println!("wrote {}", dir.display());
    print_json_line(&json!({"subcommand": "full", "report": report}));
    Ok(())
}
