//! Command line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use actloc_core::constraints::{build_constraints, LevelParams, SupervisionLevel};
use actloc_core::eval::IouMode;
use actloc_core::solver::SolverConfig;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataio;
use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineConfig, Report};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "actloc", version, about = "Weakly supervised action localization by discriminative clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test benchmark
    Synth(SynthCmd),
    /// Turn annotations into per-video constraint sets
    BuildConstraints(BuildCmd),
    /// Learn the assignment and classifier
    Solve(SolveCmd),
    /// Calibrate thresholds and write detections
    Infer(InferCmd),
    /// Score detections against ground truth
    Eval(EvalCmd),
    /// Synthesize, train, infer and evaluate in one go
    E2e(E2eCmd),
    /// mAP as a function of the fraction of strongly annotated videos
    MixCurve(MixCmd),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    videos: usize,
    #[arg(long, default_value_t = 25)]
    test_videos: usize,
    #[arg(long, default_value_t = 5)]
    actions: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long = "tracks-per-video", default_value_t = 2)]
    tracks_per_video: usize,
    #[arg(long, default_value_t = 1000)]
    frames: u32,
    #[arg(long = "instances-per-video", default_value_t = 2)]
    instances_per_video: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    distractors: f64,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            videos: self.videos,
            test_videos: self.test_videos,
            actions: self.actions,
            dim: self.dim,
            tracks_per_video: self.tracks_per_video,
            frames: self.frames,
            instances_per_video: self.instances_per_video,
            separation: self.separation,
            noise: self.noise,
            jitter: self.jitter,
            distractor_fraction: self.distractors,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 30_000)]
    iterations: usize,
    #[arg(long = "calibrate-frac", default_value_t = 0.1)]
    calibrate_frac: f64,
    #[arg(long = "box-scale", default_value_t = 1.0)]
    box_scale: f64,
    #[arg(long, default_value = "full")]
    mode: String,
    #[arg(long, default_value = "0.2,0.5")]
    iou: String,
}

impl SolverArgs {
    fn config(&self, seed: u64) -> Result<PipelineConfig> {
        if !(self.lambda > 0.0) {
            return Err(Error::Usage("--lambda must be positive".into()));
        }
        if !(self.box_scale > 0.0) {
            return Err(Error::Usage("--box-scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.calibrate_frac) {
            return Err(Error::Usage("--calibrate-frac must be in [0, 1)".into()));
        }
        Ok(PipelineConfig {
            solver: SolverConfig {
                iterations: self.iterations,
                lambda: self.lambda,
                seed,
                ..SolverConfig::default()
            },
            params: LevelParams::default(),
            calibrate_frac: self.calibrate_frac,
            box_scale: self.box_scale,
            mode: parse_mode(&self.mode)?,
            ious: parse_list(&self.iou, "--iou")?,
        })
    }
}

#[derive(Debug, Args)]
struct SynthCmd {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BuildCmd {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    level: String,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SolveCmd {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    tracks: PathBuf,
    /// Prebuilt constraints; otherwise built from --annotations and --level
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    level: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct InferCmd {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    tracks: PathBuf,
    /// Training tracks; the held-out tail calibrates the thresholds
    #[arg(long = "train-tracks")]
    train_tracks: Option<PathBuf>,
    #[arg(long = "train-features")]
    train_features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long, default_value = "0.2,0.5")]
    iou: String,
    #[arg(long, default_value = "full")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct E2eCmd {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value = "temporal")]
    level: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct MixCmd {
    #[command(flatten)]
    synth: SynthArgs,
    /// Weak and strong level, comma separated
    #[arg(long, default_value = "video,full")]
    levels: String,
    #[arg(long, default_value = "0,0.05,0.1,0.2,0.4,0.6,0.8,1")]
    fractions: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

fn parse_mode(s: &str) -> Result<IouMode> {
    s.parse().map_err(|_| Error::Usage(format!("--mode must be full or keyframe, got `{s}`")))
}

fn parse_level(s: &str) -> Result<SupervisionLevel> {
    s.parse().map_err(|_| Error::Usage(format!("unknown supervision level `{s}`")))
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("{flag} expects comma separated numbers, got `{s}`")))?;
    if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage(format!("{flag} expects comma separated numbers, got `{s}`")));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
    version: &'static str,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&str],
    started: Instant,
) -> Result<()> {
    let m = RunManifest {
        command,
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|o| out_dir.join(o).display().to_string()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
    };
    dataio::save_json(&out_dir.join("manifest.json"), &m)
}

fn synth_cmd(c: SynthCmd, started: Instant) -> Result<()> {
    let cfg = c.synth.config();
    let train = synth::generate(&cfg)?;
    let test = synth::generate_test(&cfg)?;
    pipeline::write_split(&c.out_dir, "train", &train)?;
    pipeline::write_split(&c.out_dir, "test", &test)?;
    let outputs = [
        "train.tracks.jsonl",
        "train.features.dfc",
        "train.annotations.jsonl",
        "test.tracks.jsonl",
        "test.features.dfc",
        "test.annotations.jsonl",
    ];
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    write_manifest(&c.out_dir, "synth", echo, cfg.seed, &[], &outputs, started)
}

fn build_cmd(c: BuildCmd, started: Instant) -> Result<()> {
    let level = parse_level(&c.level)?;
    let ds = dataio::load_tracks(&c.tracks)?;
    let ann = dataio::load_annotations(&c.annotations, &ds)?;
    let sets = build_constraints(&ds, level, &ann, &LevelParams::default())?;
    let levels = vec![level; sets.len()];
    dataio::save_constraints(&c.out_dir.join("constraints.jsonl"), &ds, &sets, &levels)?;
    let echo = serde_json::json!({ "level": level.to_string() });
    write_manifest(&c.out_dir, "build-constraints", echo, 0, &[&c.tracks, &c.annotations], &["constraints.jsonl"], started)
}

fn solve_cmd(c: SolveCmd, started: Instant) -> Result<()> {
    let config = c.solver.config(c.seed)?;
    let ds = dataio::load_tracks(&c.tracks)?;
    let features = dataio::load_features(&c.features)?;
    if features.rows() != ds.num_rows() {
        return Err(Error::format(&c.features, format!("{} rows for {} tracklets", features.rows(), ds.num_rows())));
    }
    let (all_sets, levels) = match (&c.constraints, &c.annotations, &c.level) {
        (Some(p), _, _) => dataio::load_constraints(p, &ds)?,
        (None, Some(a), Some(l)) => {
            let level = parse_level(l)?;
            let ann = dataio::load_annotations(a, &ds)?;
            let sets = build_constraints(&ds, level, &ann, &config.params)?;
            let n = sets.len();
            (sets, vec![level; n])
        }
        _ => return Err(Error::Usage("solve needs --constraints or both --annotations and --level".into())),
    };
    let (fit, _) = pipeline::calibration_split(&ds, config.calibrate_frac);
    let (sub, rows) = ds.subset(&fit)?;
    let sets = fit
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            let s = &all_sets[old];
            let shift = sub.video_rows(new).start as isize - s.rows.start as isize;
            let mv = |r: usize| (r as isize + shift) as usize;
            actloc_core::constraints::VideoConstraintSet {
                video: new,
                rows: sub.video_rows(new),
                classes: s.classes,
                fixed_one: s.fixed_one.iter().map(|&(r, k)| (mv(r), k)).collect(),
                fixed_zero: s.fixed_zero.iter().map(|&(r, k)| (mv(r), k)).collect(),
                bags: s
                    .bags
                    .iter()
                    .map(|b| actloc_core::constraints::Bag {
                        class: b.class,
                        rows: b.rows.iter().map(|&r| mv(r)).collect(),
                    })
                    .collect(),
            }
        })
        .collect();
    let trained = pipeline::train_with_sets(&features.select_rows(&rows), sets, &config)?;
    let out = &trained.output;
    dataio::save_features(&c.out_dir.join("assignment.bin"), out.assignment.matrix())?;
    dataio::save_classifier(&c.out_dir.join("classifier.json"), &out.classifier, None)?;
    dataio::save_trace(&c.out_dir.join("trace.csv"), &sub, &out.trace)?;
    let summary = serde_json::json!({
        "initial_objective": out.initial_objective,
        "objective": out.objective,
        "total_gap": out.total_gap(),
        "iterations": out.iterations,
        "moves": out.moves,
        "training_videos": fit.iter().map(|&v| ds.videos[v].id.clone()).collect::<Vec<_>>(),
        "levels": fit.iter().map(|&v| levels[v].to_string()).collect::<Vec<_>>(),
    });
    dataio::save_json(&c.out_dir.join("solve.json"), &summary)?;
    let echo = serde_json::json!({ "lambda": config.solver.lambda, "iterations": config.solver.iterations, "calibrate_frac": config.calibrate_frac });
    let mut inputs = vec![c.features.as_path(), c.tracks.as_path()];
    inputs.extend(c.constraints.as_deref());
    inputs.extend(c.annotations.as_deref());
    write_manifest(
        &c.out_dir,
        "solve",
        echo,
        c.seed,
        &inputs,
        &["assignment.bin", "classifier.json", "trace.csv", "solve.json"],
        started,
    )
}

fn infer_cmd(c: InferCmd, started: Instant) -> Result<()> {
    let config = c.solver.config(c.seed)?;
    let (classifier, stored) = dataio::load_classifier(&c.classifier)?;
    let thresholds = match (&c.train_tracks, &c.train_features) {
        (Some(t), Some(f)) => {
            let ds = dataio::load_tracks(t)?;
            let feats = dataio::load_features(f)?;
            let (_, held) = pipeline::calibration_split(&ds, config.calibrate_frac);
            if held.is_empty() {
                return Err(Error::Usage("the calibration split is empty".into()));
            }
            let (cal, rows) = ds.subset(&held)?;
            pipeline::calibrate(&cal, &feats.select_rows(&rows), &classifier, &config)?
        }
        (None, None) => stored.ok_or_else(|| {
            Error::Usage("the classifier has no thresholds; pass --train-tracks and --train-features".into())
        })?,
        _ => return Err(Error::Usage("--train-tracks and --train-features go together".into())),
    };
    let ds = dataio::load_tracks(&c.tracks)?;
    let feats = dataio::load_features(&c.features)?;
    let dets = pipeline::infer(&ds, &feats, &classifier, &thresholds, &config)?;
    dataio::save_detections(&c.out_dir.join("detections.jsonl"), &ds, &dets)?;
    dataio::save_json(&c.out_dir.join("thresholds.json"), &thresholds.thetas)?;
    let echo = serde_json::json!({ "box_scale": config.box_scale, "calibrate_frac": config.calibrate_frac, "mode": config.mode.to_string() });
    write_manifest(
        &c.out_dir,
        "infer",
        echo,
        c.seed,
        &[&c.classifier, &c.features, &c.tracks],
        &["detections.jsonl", "thresholds.json"],
        started,
    )
}

fn eval_cmd(c: EvalCmd, started: Instant) -> Result<()> {
    let config = PipelineConfig {
        mode: parse_mode(&c.mode)?,
        ious: parse_list(&c.iou, "--iou")?,
        ..PipelineConfig::default()
    };
    let ds = dataio::load_tracks(&c.tracks)?;
    let dets = dataio::load_detections(&c.detections, &ds)?;
    let map = pipeline::evaluate(&ds, &dets, &config)?;
    let echo = serde_json::json!({ "mode": config.mode.to_string(), "ious": config.ious });
    let report = Report::new(&map, "", c.seed, echo.clone());
    dataio::save_json(&c.out_dir.join("report.json"), &report)?;
    for e in &report.results {
        println!("mAP@{} = {:.4}", e.iou, e.map);
    }
    write_manifest(&c.out_dir, "eval", echo, c.seed, &[&c.detections, &c.tracks], &["report.json"], started)
}

fn e2e_cmd(c: E2eCmd, started: Instant) -> Result<()> {
    let synth = c.synth.config();
    let level = parse_level(&c.level)?;
    let config = c.solver.config(synth.seed)?;
    let report = pipeline::e2e(&synth, level, &config, &c.out_dir)?;
    for e in &report.results {
        println!("mAP@{} = {:.4}", e.iou, e.map);
    }
    let echo = serde_json::to_value(pipeline::echo(&synth, &c.level, &config)).expect("config serializes");
    write_manifest(
        &c.out_dir,
        "e2e",
        echo,
        synth.seed,
        &[],
        &["constraints.jsonl", "assignment.bin", "classifier.json", "trace.csv", "detections.jsonl", "report.json"],
        started,
    )
}

fn mix_cmd(c: MixCmd, started: Instant) -> Result<()> {
    let synth = c.synth.config();
    let config = c.solver.config(synth.seed)?;
    let names: Vec<&str> = c.levels.split(',').map(str::trim).collect();
    let [weak, strong] = names[..] else {
        return Err(Error::Usage("--levels expects weak,strong".into()));
    };
    let (weak, strong) = (parse_level(weak)?, parse_level(strong)?);
    let fractions = parse_list(&c.fractions, "--fractions")?;
    let train = synth::generate(&synth)?;
    let test = synth::generate_test(&synth)?;
    let points = pipeline::mix_curve(&train, &test, weak, strong, &fractions, synth.seed, &config)?;
    pipeline::save_curve(&c.out_dir.join("curve.csv"), &config.ious, &points)?;
    for p in &points {
        println!("{:>5} strong: {:?}", p.fraction, p.map);
    }
    let echo = serde_json::json!({
        "synth": synth,
        "weak": weak.to_string(),
        "strong": strong.to_string(),
        "fractions": fractions,
        "lambda": config.solver.lambda,
        "iterations": config.solver.iterations,
    });
    write_manifest(&c.out_dir, "mix-curve", echo, synth.seed, &[], &["curve.csv"], started)
}

fn dispatch(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Synth(c) => synth_cmd(c, started),
        Command::BuildConstraints(c) => build_cmd(c, started),
        Command::Solve(c) => solve_cmd(c, started),
        Command::Infer(c) => infer_cmd(c, started),
        Command::Eval(c) => eval_cmd(c, started),
        Command::E2e(c) => e2e_cmd(c, started),
        Command::MixCurve(c) => mix_cmd(c, started),
    }
}

/// Runs one invocation; `argv[0]` is the program name. Returns the exit
/// code: 0 success, 1 usage, 2 data or validation, 3 numerical failure.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
