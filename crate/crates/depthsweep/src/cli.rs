//! Command-line front end: dataset synthesis, training, inference,
//! evaluation, benchmarking, and preset ablation sweeps, all driven by
//! one TOML configuration with per-key overrides.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 missing model
//! checkpoint, 1 any other failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::config::{resolve, AppConfig, ConfigError};
use crate::depthnets::{DepthNetsError, Model};
use crate::eval::{EvalError, EvalReport};
use crate::geometry::{save_rig, GeometryError};
use crate::pipeline::{
    self, camera_subset, config_for_planes, config_for_rel_planes, depth_groups, eval_frames,
    ground_truth_results, infer_frame, observed_views, read_results, write_results, FrameResult,
    PipelineError, RunConfig,
};
use crate::sweep::{SweepConfig, SweepCounters, SweepError};
use crate::synth::{
    generate_dataset, generate_dataset_random_rigs, read_dataset, write_dataset, Dataset,
    SkeletonTemplate, SynthError,
};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_MISSING_CHECKPOINT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nets(#[from] DepthNetsError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Pipeline(PipelineError::Config(_))
            | CliError::Synth(SynthError::Config(_))
            | CliError::Usage(_) => EXIT_INVALID_CONFIG,
            CliError::MissingCheckpoint(_) => EXIT_MISSING_CHECKPOINT,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "depthsweep",
    version,
    about = "Estimates 3D human poses from multi-camera 2D detections by sweeping depth planes"
)]
pub struct Cli {
    /// Configuration file (TOML). Falls back to $DEPTHSWEEP_CONFIG,
    /// then to built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.learning_rate=5e-4.
    /// Repeatable; applied in order after the file loads.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for frame-parallel inference; 1 disables
    /// parallelism entirely.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-view dataset plus its rig file
    Synth(SynthArgs),
    /// Train the depth networks on a dataset
    Train(TrainArgs),
    /// Estimate and fuse 3D poses for every frame of a dataset
    Infer(InferArgs),
    /// Score inference results against dataset ground truth
    Eval(EvalArgs),
    /// Measure per-stage inference cost and plane-count scaling
    Bench(BenchArgs),
    /// Run preset ablation sweeps (plane counts, cameras, rigs)
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for dataset.jsonl and rig.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of frames to generate
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Generation seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fix the person count per frame (overrides the configured range)
    #[arg(long)]
    pub persons: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset produced by `synth`
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output directory for model.ckpt, checkpoints, and metrics.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Override the configured training seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Dataset to run inference over
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Trained model checkpoint
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Output results file (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Only process the first N frames
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset holding the ground truth
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Results file produced by `infer`
    #[arg(long, value_name = "FILE", conflicts_with = "oracle")]
    pub results: Option<PathBuf>,
    /// Evaluate ground truth against itself (metric sanity check)
    #[arg(long)]
    pub oracle: bool,
    /// Output report (JSON)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the flat metric,value CSV here
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Also write the depth-recall curve CSV here
    #[arg(long, value_name = "FILE")]
    pub recall_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Trained model checkpoint
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Dataset to benchmark on; generated from config when omitted
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Frames to measure
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Seed for generated benchmark data
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the timing report as JSON here
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Output directory; one subdirectory per variant
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Comma-separated person-level plane counts, e.g. 16,64
    #[arg(long, value_name = "LIST")]
    pub planes: Option<String>,
    /// Comma-separated joint-level plane counts, e.g. 16,64
    #[arg(long, value_name = "LIST")]
    pub rel_planes: Option<String>,
    /// Comma-separated camera counts (subsets of the configured rig)
    #[arg(long, value_name = "LIST")]
    pub cameras: Option<String>,
    /// Compare training on per-frame random rigs vs the fixed rig
    #[arg(long)]
    pub rig_generalization: bool,
    /// Training frames generated per variant
    #[arg(long, default_value_t = 400)]
    pub frames: usize,
    /// Held-out evaluation frames generated per variant
    #[arg(long, default_value_t = 100)]
    pub eval_frames: usize,
    /// Generation seed (evaluation sets use seed+1)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses arguments from the process environment, runs, prints errors
/// to stderr, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one parsed command to completion.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = resolve(cli.config.as_deref())?.with_overrides(&cli.overrides)?;
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(config, args),
        Command::Train(args) => cmd_train(config, args),
        Command::Infer(args) => cmd_infer(config, args, cli.threads),
        Command::Eval(args) => cmd_eval(config, args),
        Command::Bench(args) => cmd_bench(config, args),
        Command::Ablate(args) => cmd_ablate(config, args, cli.threads),
    }
}

fn cmd_synth(mut config: AppConfig, args: SynthArgs) -> Result<(), CliError> {
    if let Some(n) = args.persons {
        config.synth.persons_min = n;
        config.synth.persons_max = n;
    }
    config.validate()?;
    let hash = config.hash();
    let template = SkeletonTemplate::default_15();
    let dataset = if config.rig.randomize_per_frame {
        generate_dataset_random_rigs(
            &template,
            config.rig.cameras,
            &config.synth,
            args.frames,
            args.seed,
        )?
    } else {
        let rig = config.rig.build()?;
        generate_dataset(&template, &rig, &config.synth, args.frames, args.seed)?
    };
    std::fs::create_dir_all(&args.out)?;
    let data_path = args.out.join("dataset.jsonl");
    let rig_path = args.out.join("rig.json");
    write_dataset(&data_path, &dataset, &hash)?;
    save_rig(&rig_path, &dataset.rig)?;
    let persons: usize = dataset.frames.iter().map(|f| f.persons.len()).sum();
    let poses_2d: usize =
        dataset.frames.iter().flat_map(|f| f.views.iter()).map(|v| v.len()).sum();
    println!(
        "wrote {} frames ({} persons, {} observed 2D poses, {} cameras) to {}",
        dataset.frames.len(),
        persons,
        poses_2d,
        dataset.rig.len(),
        data_path.display()
    );
    println!("rig: {}", rig_path.display());
    println!("config {hash}");
    Ok(())
}

fn cmd_train(mut config: AppConfig, args: TrainArgs) -> Result<(), CliError> {
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    let hash = config.hash();
    let (dataset, data_hash) = read_dataset(&args.data)?;
    if data_hash != hash {
        eprintln!("note: dataset was generated under config {data_hash}, training under {hash}");
    }
    let report = pipeline::train(&dataset, &config.run_config(), &args.out, &hash)?;
    println!(
        "trained {} steps; final person loss {:.2} mm, joint loss {:.2} mm, validation MAE {:.2} mm",
        report.steps, report.final_person_loss, report.final_joint_loss, report.final_val_mae
    );
    println!("model: {}", report.model_path.display());
    println!("metrics: {}", report.metrics_path.display());
    println!("config {hash}");
    Ok(())
}

/// Loads a checkpoint, mapping a missing file to the dedicated exit
/// code and extracting the sweep geometry it was trained under.
fn load_model(path: &Path) -> Result<(Model, Option<SweepConfig>), CliError> {
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path.display().to_string()));
    }
    let (model, extra) = Model::load(path)?;
    let sweep = extra
        .get("sweep")
        .cloned()
        .and_then(|v| serde_json::from_value::<SweepConfig>(v).ok());
    Ok((model, sweep))
}

/// The sweep geometry inference must run under: the one the checkpoint
/// was trained with. Falls back to the configured sweep for checkpoints
/// that predate the metadata.
fn inference_sweep(config: &AppConfig, from_checkpoint: Option<SweepConfig>) -> SweepConfig {
    match from_checkpoint {
        Some(sweep) => {
            if sweep != config.sweep {
                eprintln!("note: using the checkpoint's sweep geometry, not the configured one");
            }
            sweep
        }
        None => config.sweep.clone(),
    }
}

/// Runs full-frame inference over a dataset, optionally in parallel,
/// preserving frame order. Returns the per-frame results and the merged
/// sweep counters.
fn infer_dataset(
    model: &Model,
    sweep: &SweepConfig,
    dataset: &Dataset,
    fusion_threshold_mm: f64,
    threads: usize,
) -> Result<(Vec<FrameResult>, SweepCounters), CliError> {
    let frame_result = |fi: usize| -> Result<(FrameResult, SweepCounters), PipelineError> {
        let frame = &dataset.frames[fi];
        let rig = frame.rig.as_deref().unwrap_or(&dataset.rig);
        let views = observed_views(frame);
        let mut counters = SweepCounters::default();
        let inference = infer_frame(
            model,
            sweep,
            rig,
            &views,
            fusion_threshold_mm,
            Some(&mut counters),
        )?;
        Ok((inference.to_result(rig.len()), counters))
    };

    let per_frame: Vec<(FrameResult, SweepCounters)> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        use rayon::prelude::*;
        pool.install(|| {
            (0..dataset.frames.len())
                .into_par_iter()
                .map(frame_result)
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        (0..dataset.frames.len())
            .map(frame_result)
            .collect::<Result<Vec<_>, _>>()?
    };

    let mut totals = SweepCounters::default();
    let mut results = Vec::with_capacity(per_frame.len());
    for (result, counters) in per_frame {
        totals.merge(&counters);
        results.push(result);
    }
    Ok((results, totals))
}

fn cmd_infer(config: AppConfig, args: InferArgs, threads: usize) -> Result<(), CliError> {
    config.validate()?;
    let hash = config.hash();
    let (model, ckpt_sweep) = load_model(&args.model)?;
    let sweep = inference_sweep(&config, ckpt_sweep);
    let (mut dataset, _) = read_dataset(&args.data)?;
    if let Some(cap) = args.frames {
        dataset.frames.truncate(cap);
    }
    if model.joints() != dataset.joints {
        return Err(CliError::Pipeline(PipelineError::Data(format!(
            "model regresses {} joints, dataset has {}",
            model.joints(),
            dataset.joints
        ))));
    }
    let started = Instant::now();
    let (results, counters) =
        infer_dataset(&model, &sweep, &dataset, config.fusion.threshold_mm, threads)?;
    let elapsed = started.elapsed();
    write_results(&args.out, &results, &hash)?;
    let fused: usize = results.iter().map(|r| r.fused.len()).sum();
    println!(
        "inferred {} frames in {:.2}s ({} fused poses, {} score cells, {} warps)",
        results.len(),
        elapsed.as_secs_f64(),
        fused,
        counters.score_cells,
        counters.warps
    );
    println!("results: {}", args.out.display());
    println!("config {hash}");
    Ok(())
}

fn cmd_eval(config: AppConfig, args: EvalArgs) -> Result<(), CliError> {
    config.validate()?;
    let (dataset, _) = read_dataset(&args.data)?;
    let (results, hash) = if args.oracle {
        (ground_truth_results(&dataset), config.hash())
    } else {
        let path = args.results.as_ref().ok_or_else(|| {
            CliError::Usage("eval needs --results FILE or --oracle".into())
        })?;
        read_results(path)?
    };
    let frames = eval_frames(&dataset, &results)?;
    let groups = depth_groups(&dataset, &results)?;
    let report =
        EvalReport::compute(&frames, &groups, &SkeletonTemplate::default_pcp_bones(), &hash);
    report.validate().map_err(CliError::Eval)?;
    report.save_json(&args.out)?;
    if let Some(csv) = &args.csv {
        report.save_csv(csv)?;
    }
    if let Some(recall) = &args.recall_csv {
        report.save_recall_csv(recall)?;
    }
    let recall_500 = report
        .depth_recall
        .iter()
        .find(|(t, _)| *t == 500.0)
        .map(|&(_, r)| r)
        .unwrap_or(f64::NAN);
    println!(
        "PCP {:.4} | MPJPE mean {:.1} mm median {:.1} mm ({} matched, {} missed)",
        report.pcp.average,
        report.mpjpe.mean_mm,
        report.mpjpe.median_mm,
        report.mpjpe.matched,
        report.mpjpe.missed
    );
    let ap: Vec<String> =
        report.ap.iter().map(|(t, v)| format!("AP@{t:.0} {v:.4}")).collect();
    println!("{} | depth recall@500 {recall_500:.4}", ap.join(" | "));
    println!("report: {}", args.out.display());
    println!("config {hash}");
    Ok(())
}

/// Per-stage mean milliseconds over the benchmarked frames.
#[derive(Debug, Default, Clone, Copy)]
struct StageMillis {
    person_sweep: f64,
    person_net: f64,
    joint_sweep: f64,
    joint_net: f64,
    fusion: f64,
}

/// Times each inference stage separately by running the same primitives
/// [`infer_frame`] composes, stage by stage.
fn bench_stages(
    model: &Model,
    sweep: &SweepConfig,
    dataset: &Dataset,
    fusion_threshold_mm: f64,
) -> Result<StageMillis, CliError> {
    use crate::depthnets::{local_soft_argmax, soft_argmax};
    use crate::geometry::back_project;
    use crate::pipeline::{fuse_views, ViewEstimate};
    use crate::sweep::{relative_score_matrix, score_matrix};

    let person_planes = sweep.person_planes();
    let rel_offsets = sweep.rel_offsets();
    let window = model.person.config().window;
    let mut acc = StageMillis::default();
    for frame in &dataset.frames {
        let rig = frame.rig.as_deref().unwrap_or(&dataset.rig);
        let views = observed_views(frame);
        let mut estimates: Vec<ViewEstimate> = Vec::new();
        for target in 0..rig.len() {
            let candidates = &views[target];
            if candidates.is_empty() {
                continue;
            }
            let refs: Vec<_> = views
                .iter()
                .enumerate()
                .filter(|&(v, _)| v != target)
                .map(|(v, poses)| (&rig[v], poses.as_slice()))
                .collect();

            let t0 = Instant::now();
            let person_mats: Vec<_> = candidates
                .iter()
                .map(|p| score_matrix(p, &rig[target], &refs, &person_planes, sweep.sigma, None))
                .collect::<Result<_, _>>()?;
            acc.person_sweep += t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let dist = model.person.infer(&model.params, &person_mats.iter().collect::<Vec<_>>())?;
            let depths: Vec<f64> = (0..candidates.len())
                .map(|i| local_soft_argmax(dist.row(i, 0), person_planes.depths(), window))
                .collect::<Result<_, _>>()?;
            acc.person_net += t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let joint_mats: Vec<_> = candidates
                .iter()
                .zip(&depths)
                .map(|(p, &d)| {
                    relative_score_matrix(
                        p,
                        d,
                        &rig[target],
                        &refs,
                        &rel_offsets,
                        sweep.sigma,
                        None,
                    )
                })
                .collect::<Result<_, _>>()?;
            acc.joint_sweep += t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let jdist =
                model.joint.infer(&model.params, &joint_mats.iter().collect::<Vec<_>>())?;
            for (i, (pose, &d_hat)) in candidates.iter().zip(&depths).enumerate() {
                let rel: Vec<f64> = (0..model.joints())
                    .map(|j| soft_argmax(jdist.row(i, j), rel_offsets.depths()))
                    .collect::<Result<_, _>>()?;
                let joint_depths: Vec<f64> = crate::depthnets::absolute_joint_depths(d_hat, &rel)
                    .into_iter()
                    .map(|d| d.max(pipeline::MIN_JOINT_DEPTH_MM))
                    .collect();
                let joints = pose
                    .joints()
                    .iter()
                    .zip(&joint_depths)
                    .map(|(&px, &d)| back_project(&rig[target], px, d))
                    .collect::<Result<Vec<_>, _>>()?;
                estimates.push(ViewEstimate {
                    view: target,
                    pose_index: i,
                    person_depth: d_hat,
                    joint_depths,
                    pose: crate::geometry::Pose3D::new(joints),
                    confidence: pose.mean_confidence(),
                });
            }
            acc.joint_net += t0.elapsed().as_secs_f64();
        }
        let t0 = Instant::now();
        let _ = fuse_views(&estimates, fusion_threshold_mm);
        acc.fusion += t0.elapsed().as_secs_f64();
    }
    let n = dataset.frames.len().max(1) as f64;
    let ms = 1000.0 / n;
    Ok(StageMillis {
        person_sweep: acc.person_sweep * ms,
        person_net: acc.person_net * ms,
        joint_sweep: acc.joint_sweep * ms,
        joint_net: acc.joint_net * ms,
        fusion: acc.fusion * ms,
    })
}

fn cmd_bench(config: AppConfig, args: BenchArgs) -> Result<(), CliError> {
    config.validate()?;
    let hash = config.hash();
    let (model, ckpt_sweep) = load_model(&args.model)?;
    let sweep = inference_sweep(&config, ckpt_sweep);
    let dataset = match &args.data {
        Some(path) => {
            let (mut d, _) = read_dataset(path)?;
            d.frames.truncate(args.frames);
            d
        }
        None => {
            let template = SkeletonTemplate::default_15();
            let rig = config.rig.build()?;
            generate_dataset(&template, &rig, &config.synth, args.frames, args.seed)?
        }
    };
    if dataset.frames.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one frame".into()));
    }
    let persons: usize = dataset.frames.iter().map(|f| f.persons.len()).sum();
    let mean_persons = persons as f64 / dataset.frames.len() as f64;

    // End-to-end timing and op counts on the real composed path.
    let started = Instant::now();
    let (_, counters) =
        infer_dataset(&model, &sweep, &dataset, config.fusion.threshold_mm, 1)?;
    let total_ms = started.elapsed().as_secs_f64() * 1000.0 / dataset.frames.len() as f64;
    let stages = bench_stages(&model, &sweep, &dataset, config.fusion.threshold_mm)?;

    // Linear-scaling check: untrained models at the working plane count
    // and at double, same frames; op counters must double.
    let run = RunConfig {
        sweep: sweep.clone(),
        person_net: model.person.config().clone(),
        joint_net: model.joint.config().clone(),
        ..RunConfig::default()
    };
    let doubled_run = config_for_rel_planes(
        &config_for_planes(&run, sweep.planes * 2),
        sweep.rel_planes * 2,
    );
    let count_ops = |rc: &RunConfig| -> Result<SweepCounters, CliError> {
        let probe = Model::new(
            dataset.joints,
            rc.sweep.planes,
            rc.sweep.rel_planes,
            rc.person_net.clone(),
            rc.joint_net.clone(),
            0,
        )?;
        let (_, c) =
            infer_dataset(&probe, &rc.sweep, &dataset, config.fusion.threshold_mm, 1)?;
        Ok(c)
    };
    let base_ops = count_ops(&run)?;
    let doubled_ops = count_ops(&doubled_run)?;
    let cell_ratio = doubled_ops.score_cells as f64 / base_ops.score_cells as f64;
    let warp_ratio = doubled_ops.warps as f64 / base_ops.warps as f64;

    // Empty workload: no candidate poses, near-zero sweep cost.
    let empty_views = vec![Vec::new(); dataset.rig.len()];
    let mut empty_counters = SweepCounters::default();
    let t0 = Instant::now();
    infer_frame(
        &model,
        &sweep,
        &dataset.rig,
        &empty_views,
        config.fusion.threshold_mm,
        Some(&mut empty_counters),
    )?;
    let empty_ms = t0.elapsed().as_secs_f64() * 1000.0;

    let n = dataset.frames.len();
    let cameras = dataset.rig.len();
    println!(
        "benchmark: {n} frames, {cameras} cameras, {mean_persons:.2} persons/frame, single thread"
    );
    println!("  end-to-end    {total_ms:8.2} ms/frame");
    println!("  person sweep  {:8.2} ms/frame", stages.person_sweep);
    println!("  person net    {:8.2} ms/frame", stages.person_net);
    println!("  joint sweep   {:8.2} ms/frame", stages.joint_sweep);
    println!("  joint net     {:8.2} ms/frame", stages.joint_net);
    println!("  fusion        {:8.2} ms/frame", stages.fusion);
    println!(
        "  ops/frame: {} score cells, {} warps, {} exp evals, {} pose matchings",
        counters.score_cells / n as u64,
        counters.warps / n as u64,
        counters.exp_evals / n as u64,
        counters.pose_matchings / n as u64
    );
    println!(
        "  plane doubling: score cells x{cell_ratio:.3}, warps x{warp_ratio:.3} (2.0 = linear)"
    );
    println!(
        "  empty frame: {empty_ms:.3} ms, {} score cells, {} warps",
        empty_counters.score_cells, empty_counters.warps
    );
    println!("config {hash}");

    if let Some(out) = &args.out {
        let report = json!({
            "kind": "depthsweep-bench",
            "version": 1,
            "config_hash": hash,
            "frames": n,
            "cameras": dataset.rig.len(),
            "mean_persons": mean_persons,
            "end_to_end_ms": total_ms,
            "stages_ms": {
                "person_sweep": stages.person_sweep,
                "person_net": stages.person_net,
                "joint_sweep": stages.joint_sweep,
                "joint_net": stages.joint_net,
                "fusion": stages.fusion,
            },
            "ops_per_frame": {
                "score_cells": counters.score_cells / n as u64,
                "warps": counters.warps / n as u64,
                "exp_evals": counters.exp_evals / n as u64,
                "pose_matchings": counters.pose_matchings / n as u64,
            },
            "plane_doubling": { "score_cells": cell_ratio, "warps": warp_ratio },
            "empty_frame": {
                "ms": empty_ms,
                "score_cells": empty_counters.score_cells,
                "warps": empty_counters.warps,
            },
        });
        std::fs::write(out, serde_json::to_string_pretty(&report).expect("bench serializes"))?;
        println!("bench report: {}", out.display());
    }
    Ok(())
}

/// One ablation variant: a name, the config it runs under, and the
/// datasets it trains and evaluates on.
struct Variant {
    name: String,
    config: AppConfig,
    train_data: Dataset,
    eval_data: Dataset,
}

fn parse_list(raw: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("--{flag}: '{s}' is not a count")))
        })
        .collect()
}

fn cmd_ablate(config: AppConfig, args: AblateArgs, threads: usize) -> Result<(), CliError> {
    config.validate()?;
    if args.planes.is_none()
        && args.rel_planes.is_none()
        && args.cameras.is_none()
        && !args.rig_generalization
    {
        return Err(CliError::Usage(
            "ablate needs at least one axis: --planes, --rel-planes, --cameras, or --rig-generalization"
                .into(),
        ));
    }
    if args.frames == 0 || args.eval_frames == 0 {
        return Err(CliError::Usage("ablate needs nonzero --frames and --eval-frames".into()));
    }
    let template = SkeletonTemplate::default_15();
    let rig = config.rig.build()?;
    let master_train =
        generate_dataset(&template, &rig, &config.synth, args.frames, args.seed)?;
    let master_eval =
        generate_dataset(&template, &rig, &config.synth, args.eval_frames, args.seed + 1)?;

    let mut variants: Vec<Variant> = Vec::new();
    if let Some(raw) = &args.planes {
        for planes in parse_list(raw, "planes")? {
            let mut variant = config.clone();
            let adjusted = config_for_planes(&variant.run_config(), planes);
            variant.sweep = adjusted.sweep;
            variant.person_net = adjusted.person_net;
            variants.push(Variant {
                name: format!("planes_{planes}"),
                config: variant,
                train_data: master_train.clone(),
                eval_data: master_eval.clone(),
            });
        }
    }
    if let Some(raw) = &args.rel_planes {
        for rel_planes in parse_list(raw, "rel-planes")? {
            let mut variant = config.clone();
            let adjusted = config_for_rel_planes(&variant.run_config(), rel_planes);
            variant.sweep = adjusted.sweep;
            variant.joint_net = adjusted.joint_net;
            variants.push(Variant {
                name: format!("rel_planes_{rel_planes}"),
                config: variant,
                train_data: master_train.clone(),
                eval_data: master_eval.clone(),
            });
        }
    }
    if let Some(raw) = &args.cameras {
        for cameras in parse_list(raw, "cameras")? {
            let mut variant = config.clone();
            variant.rig.cameras = cameras;
            variants.push(Variant {
                name: format!("cameras_{cameras}"),
                config: variant,
                train_data: camera_subset(&master_train, cameras)?,
                eval_data: camera_subset(&master_eval, cameras)?,
            });
        }
    }
    if args.rig_generalization {
        variants.push(Variant {
            name: "rig_fixed".into(),
            config: config.clone(),
            train_data: master_train.clone(),
            eval_data: master_eval.clone(),
        });
        let mut random = config.clone();
        random.rig.randomize_per_frame = true;
        variants.push(Variant {
            name: "rig_random".into(),
            config: random,
            train_data: generate_dataset_random_rigs(
                &template,
                config.rig.cameras,
                &config.synth,
                args.frames,
                args.seed,
            )?,
            eval_data: master_eval.clone(),
        });
    }

    std::fs::create_dir_all(&args.out)?;
    let mut summary = String::from("variant,config_hash,pcp_average,mpjpe_mean_mm,recall_500\n");
    for variant in &variants {
        variant.config.validate()?;
        let hash = variant.config.hash();
        let dir = args.out.join(&variant.name);
        let report = pipeline::train(
            &variant.train_data,
            &variant.config.run_config(),
            &dir,
            &hash,
        )?;
        let (model, ckpt_sweep) = load_model(&report.model_path)?;
        let sweep = inference_sweep(&variant.config, ckpt_sweep);
        let (results, _) = infer_dataset(
            &model,
            &sweep,
            &variant.eval_data,
            variant.config.fusion.threshold_mm,
            threads,
        )?;
        write_results(dir.join("results.jsonl"), &results, &hash)?;
        let frames = eval_frames(&variant.eval_data, &results)?;
        let groups = depth_groups(&variant.eval_data, &results)?;
        let eval = EvalReport::compute(
            &frames,
            &groups,
            &SkeletonTemplate::default_pcp_bones(),
            &hash,
        );
        eval.save_json(dir.join("report.json"))?;
        eval.save_recall_csv(dir.join("recall.csv"))?;
        let recall_500 = eval
            .depth_recall
            .iter()
            .find(|(t, _)| *t == 500.0)
            .map(|&(_, r)| r)
            .unwrap_or(f64::NAN);
        println!(
            "{}: PCP {:.4}, MPJPE {:.1} mm, recall@500 {:.4} -> {}",
            variant.name,
            eval.pcp.average,
            eval.mpjpe.mean_mm,
            recall_500,
            dir.display()
        );
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            variant.name, hash, eval.pcp.average, eval.mpjpe.mean_mm, recall_500
        ));
    }
    let summary_path = args.out.join("summary.csv");
    std::fs::write(&summary_path, summary)?;
    println!("summary: {}", summary_path.display());
    Ok(())
}
