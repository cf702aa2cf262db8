//! Pipeline front end: synthetic fixtures, sensor calibration, motion
//! refinement, and evaluation.
//!
//! Every run writes a machine-readable manifest recording the merged
//! configuration and the SHA-256 digest of each input and output, so a run
//! is reproducible from its manifest alone. Stdout is deterministic; the
//! only nondeterministic value (the wall-clock timestamp) is confined to
//! the manifest.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 refinement
//! aborted (divergence or a non-finite value) with partial artifacts.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use sha2::{Digest, Sha256};

use scenefit::body::skin_all;
use scenefit::calib::{calibration_from_scan, coarse_calibration_imu, coarse_calibration_lidar};
use scenefit::cloud::PointCloudFrame;
use scenefit::config::PipelineConfig;
use scenefit::frame::CoordinateFrame;
use scenefit::io::{self, SensorTrajectory};
use scenefit::losses::SequenceInputs;
use scenefit::metrics::{self, EvalResult, FrameJoints};
use scenefit::optimize::refine_sequence;
use scenefit::transform::RigidTransform;

#[derive(Parser)]
#[command(name = "scenefit", version, about = "Scene-aware human motion refinement")]
struct Cli {
    /// Cap the worker thread count (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixture: scene, motions, sweeps, trajectory.
    Synth(SynthArgs),
    /// Derive sensor-to-world transforms from a setup scan.
    Calibrate(CalibrateArgs),
    /// Refine a motion against point clouds and a scene mesh.
    Refine(RefineArgs),
    /// Score a predicted motion against ground truth.
    Evaluate(EvaluateArgs),
    /// Print or check the merged pipeline configuration.
    Config(ConfigArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Setup scan (PLY, LIDAR frame) viewing ground and climbing surface.
    #[arg(long)]
    scan: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    /// Initial motion JSON.
    #[arg(long)]
    motion: PathBuf,
    /// Directory of per-frame human point clouds (PLY), in filename order.
    #[arg(long)]
    clouds: PathBuf,
    /// Scene mesh PLY.
    #[arg(long)]
    scene: PathBuf,
    /// Sensor trajectory JSON, one pose per frame.
    #[arg(long)]
    trajectory: PathBuf,
    /// Body template JSON.
    #[arg(long)]
    template: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted motion JSON.
    pred: PathBuf,
    /// Ground-truth motion JSON.
    gt: PathBuf,
    /// Body template JSON shared by both motions.
    #[arg(long)]
    template: PathBuf,
    /// Report destination.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Optional CSV export of all metrics and per-segment values.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Print the merged configuration as JSON.
    #[arg(long)]
    dump: bool,
    /// Write the dump to a file instead of stdout.
    #[arg(long, requires = "dump")]
    out: Option<PathBuf>,
    /// Validate a config file ("-" or no value reads stdin) and confirm it
    /// round-trips.
    #[arg(long, conflicts_with = "dump", num_args = 0..=1, default_missing_value = "-")]
    check: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let config = merged_config(cli)?;
    match &cli.command {
        Command::Synth(args) => run_synth(args, cli, &config),
        Command::Calibrate(args) => run_calibrate(args, cli, &config),
        Command::Refine(args) => run_refine(args, cli, &config),
        Command::Evaluate(args) => run_evaluate(args, cli, &config),
        Command::Config(args) => run_config(args, &config),
    }
}

/// Flags override the config file, which overrides built-in defaults.
fn merged_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

#[derive(Serialize)]
struct FileDigest {
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a PipelineConfig,
    inputs: BTreeMap<String, FileDigest>,
    outputs: BTreeMap<String, FileDigest>,
    /// The only nondeterministic content any run produces.
    timestamp_unix_seconds: f64,
}

fn sha256_file(path: &Path) -> Result<FileDigest> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut sha256 = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(sha256, "{b:02x}").expect("writing to a string cannot fail");
    }
    Ok(FileDigest { sha256, bytes: bytes.len() as u64 })
}

/// Writes `<dir>/manifest.json` (or the given explicit path). Output keys
/// are relative to the manifest's directory, input keys are as passed.
fn write_manifest(
    path: &Path,
    command: &'static str,
    cli: &Cli,
    config: &PipelineConfig,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut input_map = BTreeMap::new();
    if let Some(config_path) = &cli.config {
        input_map.insert(config_path.display().to_string(), sha256_file(config_path)?);
    }
    for p in inputs {
        input_map.insert(p.display().to_string(), sha256_file(p)?);
    }
    let mut output_map = BTreeMap::new();
    for p in outputs {
        let key = p.strip_prefix(base).unwrap_or(p).display().to_string();
        output_map.insert(key, sha256_file(p)?);
    }
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        inputs: input_map,
        outputs: output_map,
        timestamp_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
    };
    io::save_json(path, &manifest)?;
    Ok(())
}

fn run_synth(args: &SynthArgs, cli: &Cli, config: &PipelineConfig) -> Result<ExitCode> {
    config.validate()?;
    let synth_config = config.effective_synth();
    let seq = scenefit::synth::generate_sequence(&synth_config)?;
    let sensor = synth_config.sensor();
    let clouds =
        scenefit::synth::simulate_lidar(&seq.template, &seq.motion, &sensor, &synth_config)?;
    let init = scenefit::synth::corrupt_motion(&seq.motion, &synth_config)?;

    let out = &args.out;
    let cloud_dir = out.join("clouds");
    std::fs::create_dir_all(&cloud_dir)
        .with_context(|| format!("creating {}", cloud_dir.display()))?;

    let mut outputs = Vec::new();
    let mut emit = |path: PathBuf, write: &dyn Fn(&Path) -> scenefit::Result<()>| -> Result<PathBuf> {
        write(&path).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.clone());
        Ok(path)
    };
    emit(out.join("template.json"), &|p| io::save_template(p, &seq.template))?;
    emit(out.join("scene.ply"), &|p| io::save_mesh_ply(p, &seq.scene, true))?;
    emit(out.join("motion_gt.json"), &|p| io::save_motion(p, &seq.motion))?;
    emit(out.join("motion_init.json"), &|p| io::save_motion(p, &init))?;
    for (k, cloud) in clouds.iter().enumerate() {
        emit(cloud_dir.join(format!("frame_{k:05}.ply")), &|p| {
            io::save_cloud_ply(p, cloud, true)
        })?;
    }
    let timestamps: Vec<f64> = (0..seq.motion.num_frames())
        .map(|k| k as f64 / seq.motion.frame_rate)
        .collect();
    let poses: Vec<RigidTransform> = seq
        .sensor_positions
        .iter()
        .map(|p| {
            RigidTransform::new(
                Matrix3::identity(),
                *p,
                CoordinateFrame::Lidar,
                CoordinateFrame::World,
            )
        })
        .collect::<scenefit::Result<_>>()?;
    let trajectory = SensorTrajectory::new(timestamps, poses)?;
    emit(out.join("trajectory.json"), &|p| io::save_trajectory(p, &trajectory))?;
    emit(out.join("config.json"), &|p| config.save(p))?;

    write_manifest(&out.join("manifest.json"), "synth", cli, config, &[], &outputs)?;
    println!(
        "wrote synthetic fixture to {}: {} frames, {} clouds, wall {:?}",
        out.display(),
        seq.motion.num_frames(),
        clouds.len(),
        synth_config.wall,
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CalibrationReport {
    ground_normal: [f64; 3],
    surface_normal: [f64; 3],
    lidar_height: f64,
    forward_offset: f64,
    /// Orthonormality deviation of the raw observation triad before repair.
    orthonormality_deviation: f64,
}

fn run_calibrate(args: &CalibrateArgs, cli: &Cli, config: &PipelineConfig) -> Result<ExitCode> {
    let scan = io::load_cloud_ply(&args.scan)?;
    let input = calibration_from_scan(&scan, config.seed)
        .with_context(|| format!("calibrating from {}", args.scan.display()))?;
    let (lidar_to_world, deviation) = coarse_calibration_lidar(&input)?;
    let imu_to_world = coarse_calibration_imu();

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let lidar_path = args.out.join("lidar_to_world.json");
    let imu_path = args.out.join("imu_to_world.json");
    let report_path = args.out.join("calibration_report.json");
    io::save_transform(&lidar_path, &lidar_to_world)?;
    io::save_transform(&imu_path, &imu_to_world)?;
    io::save_json(
        &report_path,
        &CalibrationReport {
            ground_normal: input.ground.into(),
            surface_normal: input.plane.into(),
            lidar_height: input.lidar_height,
            forward_offset: input.forward_offset,
            orthonormality_deviation: deviation,
        },
    )?;
    write_manifest(
        &args.out.join("manifest.json"),
        "calibrate",
        cli,
        config,
        &[&args.scan],
        &[lidar_path, imu_path, report_path],
    )?;
    println!(
        "calibrated {}: lidar height {}, triad deviation {}",
        args.scan.display(),
        input.lidar_height,
        deviation,
    );
    Ok(ExitCode::SUCCESS)
}

/// PLY files of a directory in filename order.
fn cloud_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("reading cloud directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("reading cloud directory {}", dir.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "ply"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("{}: no .ply point clouds found", dir.display());
    }
    Ok(paths)
}

fn run_refine(args: &RefineArgs, cli: &Cli, config: &PipelineConfig) -> Result<ExitCode> {
    config.validate()?;
    let template = io::load_template(&args.template)?;
    let motion = io::load_motion(&args.motion)?;
    let scene = io::load_mesh_ply(&args.scene)?;
    let trajectory = io::load_trajectory(&args.trajectory)?;
    let paths = cloud_paths(&args.clouds)?;
    let clouds: Vec<PointCloudFrame> = paths
        .iter()
        .map(|p| io::load_cloud_ply(p))
        .collect::<scenefit::Result<_>>()?;

    if clouds.len() != motion.num_frames() {
        bail!(
            "{}: contains {} clouds but {} has {} frames",
            args.clouds.display(),
            clouds.len(),
            args.motion.display(),
            motion.num_frames(),
        );
    }
    if trajectory.len() != motion.num_frames() {
        bail!(
            "{}: poses field has {} entries but {} has {} frames",
            args.trajectory.display(),
            trajectory.len(),
            args.motion.display(),
            motion.num_frames(),
        );
    }
    let sensor_positions: Vec<Vector3<f64>> =
        trajectory.poses.iter().map(|t| t.translation()).collect();
    let inputs = SequenceInputs {
        template: &template,
        motion: &motion,
        scene: &scene,
        clouds: &clouds,
        sensor_positions: &sensor_positions,
    };
    let (refined, report) = refine_sequence(&inputs, &config.losses, &config.optimizer)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let motion_path = args.out.join("motion_refined.json");
    let report_path = args.out.join("report.json");
    io::save_motion(&motion_path, &refined)?;
    io::save_json(&report_path, &report)?;
    let mut input_paths: Vec<&Path> = vec![
        &args.motion,
        &args.scene,
        &args.trajectory,
        &args.template,
    ];
    input_paths.extend(paths.iter().map(PathBuf::as_path));
    write_manifest(
        &args.out.join("manifest.json"),
        "refine",
        cli,
        config,
        &input_paths,
        &[motion_path, report_path],
    )?;

    for stage in &report.stages {
        println!(
            "stage {}: {} iterations, total {} -> {}{}",
            stage.stage,
            stage.iterations_run,
            stage.initial_total,
            stage.final_total,
            if stage.converged { " (converged)" } else { "" },
        );
    }
    println!("wrote {}", args.out.join("motion_refined.json").display());
    if let Some(abort) = &report.aborted {
        eprintln!(
            "refinement aborted during {} at iteration {}: {}",
            abort.stage, abort.iteration, abort.reason,
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SegmentDetail {
    index: usize,
    start_frame: usize,
    end_frame: usize,
    wa_mpjpe: f64,
    w_mpjpe: f64,
}

#[derive(Serialize)]
struct EvaluationReport {
    result: EvalResult,
    conventions: BTreeMap<String, String>,
    segments: Vec<SegmentDetail>,
}

fn run_evaluate(args: &EvaluateArgs, cli: &Cli, config: &PipelineConfig) -> Result<ExitCode> {
    let pred = io::load_motion(&args.pred)?;
    let gt = io::load_motion(&args.gt)?;
    let template = io::load_template(&args.template)?;
    let result = EvalResult::compute(&pred, &gt, &template)?;

    let pred_joints: Vec<FrameJoints> =
        skin_all(&template, &pred).iter().map(|b| b.joints).collect();
    let gt_joints: Vec<FrameJoints> =
        skin_all(&template, &gt).iter().map(|b| b.joints).collect();
    let wa = metrics::wa_mpjpe_segments(&pred_joints, &gt_joints)?;
    let w = metrics::w_mpjpe_segments(&pred_joints, &gt_joints)?;
    let segments: Vec<SegmentDetail> = metrics::segment_bounds(pred.num_frames())
        .into_iter()
        .zip(wa.iter().zip(&w))
        .enumerate()
        .map(|(index, ((start, end), (&wa_mpjpe, &w_mpjpe)))| SegmentDetail {
            index,
            start_frame: start,
            end_frame: end,
            wa_mpjpe,
            w_mpjpe,
        })
        .collect();
    let report = EvaluationReport {
        result,
        conventions: metrics::conventions(),
        segments,
    };
    io::save_json(&args.report, &report)?;

    let rows = metric_rows(&report);
    if let Some(csv_path) = &args.csv {
        let mut csv = String::from("metric,value\n");
        for (name, value) in &rows {
            csv.push_str(&format!("{name},{value}\n"));
        }
        std::fs::write(csv_path, csv)
            .with_context(|| format!("writing {}", csv_path.display()))?;
    }

    let mut outputs = vec![args.report.clone()];
    outputs.extend(args.csv.clone());
    let manifest_path = args.report.with_extension("manifest.json");
    write_manifest(
        &manifest_path,
        "evaluate",
        cli,
        config,
        &[&args.pred, &args.gt, &args.template],
        &outputs,
    )?;
    for (name, value) in rows.iter().take(10) {
        println!("{name} {value}");
    }
    println!("wrote {}", args.report.display());
    Ok(ExitCode::SUCCESS)
}

/// Flat name/value rows: the ten summary metrics, then per-segment detail.
fn metric_rows(report: &EvaluationReport) -> Vec<(String, f64)> {
    let r = &report.result;
    let mut rows = vec![
        ("mpjpe_mm".to_string(), r.mpjpe),
        ("pa_mpjpe_mm".to_string(), r.pa_mpjpe),
        ("pve_mm".to_string(), r.pve),
        ("accel_m_per_s2".to_string(), r.accel),
        ("pck03".to_string(), r.pck03),
        ("wa_mpjpe_mm".to_string(), r.wa_mpjpe),
        ("w_mpjpe_mm".to_string(), r.w_mpjpe),
        ("rte_percent".to_string(), r.rte),
        ("jitter_m_per_s3".to_string(), r.jitter),
        ("t_error_m".to_string(), r.t_error),
    ];
    for s in &report.segments {
        rows.push((format!("wa_mpjpe_segment_{:03}_mm", s.index), s.wa_mpjpe));
        rows.push((format!("w_mpjpe_segment_{:03}_mm", s.index), s.w_mpjpe));
    }
    rows
}

fn run_config(args: &ConfigArgs, config: &PipelineConfig) -> Result<ExitCode> {
    if args.dump {
        config.validate()?;
        let text = config.dump()?;
        match &args.out {
            Some(path) => std::fs::write(path, &text)
                .with_context(|| format!("writing {}", path.display()))?,
            None => print!("{text}"),
        }
        return Ok(ExitCode::SUCCESS);
    }
    let Some(source) = &args.check else {
        bail!("pass --dump or --check; see --help");
    };
    let (label, text) = if source == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .context("reading config from stdin")?;
        ("<stdin>".to_string(), text)
    } else {
        let text = std::fs::read_to_string(source)
            .with_context(|| format!("reading {source}"))?;
        (source.clone(), text)
    };
    let parsed: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{label}: line {}, column {}: {e}", e.line(), e.column()))?;
    parsed.validate().with_context(|| label.clone())?;
    let canonical = parsed.dump()?;
    let reparsed: PipelineConfig = serde_json::from_str(&canonical)
        .context("re-parsing the canonical dump")?;
    if reparsed != parsed {
        bail!("{label}: config does not round-trip through its canonical dump");
    }
    println!("config ok ({} bytes canonical)", canonical.len());
    Ok(ExitCode::SUCCESS)
}
