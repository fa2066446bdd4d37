//! Train, calibrate, detect and evaluate, plus the end-to-end and mixed
//! supervision experiments built from them.

use std::path::Path;

use actloc_core::constraints::{mix_levels, Annotation, LevelParams, SupervisionLevel, VideoConstraintSet};
use actloc_core::eval::{video_map, IouMode, MapReport};
use actloc_core::inference::{
    calibrate_thresholds, detect, smoothed_scores, DetectionRecord, ThresholdSet, MEDIAN_WINDOW, NMS_IOU,
};
use actloc_core::linalg::Matrix;
use actloc_core::objective::{Classifier, RidgeCache};
use actloc_core::solver::{run, SolverConfig, SolverOutput};
use actloc_core::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{Error, Result};
use crate::synth::{self, SynthConfig, SynthData};

pub const MIX_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub params: LevelParams,
    pub calibrate_frac: f64,
    pub box_scale: f64,
    pub mode: IouMode,
    pub ious: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverConfig::default(),
            params: LevelParams::default(),
            calibrate_frac: 0.1,
            box_scale: 1.0,
            mode: IouMode::Full,
            ious: vec![0.2, 0.5],
        }
    }
}

/// Splits video indices into (training, calibration). The calibration part
/// is the last `frac` of the videos in id order, at least one video when
/// `frac > 0` and never all of them.
pub fn calibration_split(ds: &Dataset, frac: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..ds.videos.len()).collect();
    order.sort_by(|&a, &b| ds.videos[a].id.cmp(&ds.videos[b].id));
    let n = order.len();
    let held = if frac <= 0.0 || n < 2 {
        0
    } else {
        ((n as f64 * frac).round() as usize).clamp(1, n - 1)
    };
    let calib = order.split_off(n - held);
    order.sort_unstable();
    let mut calib = calib;
    calib.sort_unstable();
    (order, calib)
}

/// The listed videos with their features, annotations and levels, all
/// reindexed.
pub struct Subset {
    pub dataset: Dataset,
    pub features: Matrix,
    pub annotations: Vec<Annotation>,
    pub levels: Vec<SupervisionLevel>,
}

pub fn subset(
    ds: &Dataset,
    features: &Matrix,
    annotations: &[Annotation],
    levels: &[SupervisionLevel],
    videos: &[usize],
) -> Result<Subset> {
    let (dataset, rows) = ds.subset(videos)?;
    let mut remap = vec![usize::MAX; ds.videos.len()];
    for (new, &old) in videos.iter().enumerate() {
        remap[old] = new;
    }
    let annotations = annotations
        .iter()
        .filter(|a| remap.get(a.video).is_some_and(|v| *v != usize::MAX))
        .map(|a| Annotation {
            video: remap[a.video],
            ..a.clone()
        })
        .collect();
    Ok(Subset {
        dataset,
        features: features.select_rows(&rows),
        annotations,
        levels: videos.iter().map(|&v| levels.get(v).copied().unwrap_or(SupervisionLevel::VideoLevel)).collect(),
    })
}

pub struct Trained {
    pub sets: Vec<VideoConstraintSet>,
    pub output: SolverOutput,
}

/// Builds the per-video constraints and runs the solver.
pub fn train(
    ds: &Dataset,
    features: &Matrix,
    annotations: &[Annotation],
    levels: &[SupervisionLevel],
    config: &PipelineConfig,
) -> Result<Trained> {
    let sets = mix_levels(ds, levels, annotations, &config.params)?;
    train_with_sets(features, sets, config)
}

pub fn train_with_sets(features: &Matrix, sets: Vec<VideoConstraintSet>, config: &PipelineConfig) -> Result<Trained> {
    let cache = RidgeCache::build(features.clone(), config.solver.lambda)?;
    let output = run(&sets, &cache, &config.solver)?;
    Ok(Trained { sets, output })
}

fn scaled(ds: &Dataset, factor: f64) -> Dataset {
    let mut ds = ds.clone();
    if factor != 1.0 {
        ds.scale_track_boxes(factor);
    }
    ds
}

/// Thresholds from the held-out videos.
pub fn calibrate(ds: &Dataset, features: &Matrix, classifier: &Classifier, config: &PipelineConfig) -> Result<ThresholdSet> {
    let ds = scaled(ds, config.box_scale);
    let scores = smoothed_scores(&ds, features, None, classifier, MEDIAN_WINDOW)?;
    Ok(calibrate_thresholds(&ds, &scores, NMS_IOU, config.mode)?)
}

pub fn infer(
    ds: &Dataset,
    features: &Matrix,
    classifier: &Classifier,
    thresholds: &ThresholdSet,
    config: &PipelineConfig,
) -> Result<Vec<DetectionRecord>> {
    let ds = scaled(ds, config.box_scale);
    let scores = smoothed_scores(&ds, features, None, classifier, MEDIAN_WINDOW)?;
    Ok(detect(&ds, &scores, thresholds, NMS_IOU)?)
}

pub fn evaluate(ds: &Dataset, detections: &[DetectionRecord], config: &PipelineConfig) -> Result<MapReport> {
    Ok(video_map(detections, &ds.instances, ds.num_actions, &config.ious, config.mode)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub iou: f64,
    pub map: f64,
    /// AP per action class, `null` for classes without instances.
    pub ap: Vec<Option<f64>>,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: String,
    pub level: String,
    pub seed: u64,
    pub results: Vec<ReportEntry>,
    pub instances: Vec<usize>,
    pub detections: usize,
    pub config: serde_json::Value,
}

impl Report {
    pub fn new(map: &MapReport, level: &str, seed: u64, config: serde_json::Value) -> Self {
        Report {
            mode: map.mode.to_string(),
            level: level.into(),
            seed,
            results: map
                .entries
                .iter()
                .map(|e| ReportEntry {
                    iou: e.threshold,
                    map: e.map,
                    ap: e.ap.clone(),
                    true_positives: e.true_positives,
                })
                .collect(),
            instances: map.instances.clone(),
            detections: map.detections,
            config,
        }
    }

    pub fn map_at(&self, iou: f64) -> Option<f64> {
        self.results.iter().find(|e| e.iou == iou).map(|e| e.map)
    }
}

/// Everything one training run produces.
pub struct RunResult {
    pub trained: Trained,
    pub train: Subset,
    pub thresholds: ThresholdSet,
    pub detections: Vec<DetectionRecord>,
    pub map: MapReport,
}

/// Trains on the non-held-out part of `train`, calibrates on the held-out
/// part and evaluates on `test`.
pub fn run_levels(train: &SynthData, test: &SynthData, levels: &[SupervisionLevel], config: &PipelineConfig) -> Result<RunResult> {
    let (fit, held) = calibration_split(&train.dataset, config.calibrate_frac);
    if held.is_empty() {
        return Err(Error::Usage("the calibration split is empty".into()));
    }
    let fit_set = subset(&train.dataset, &train.features, &train.annotations, levels, &fit)?;
    let trained = train_fn(&fit_set, config)?;
    let cal = subset(&train.dataset, &train.features, &train.annotations, levels, &held)?;
    let thresholds = calibrate(&cal.dataset, &cal.features, &trained.output.classifier, config)?;
    let detections = infer(&test.dataset, &test.features, &trained.output.classifier, &thresholds, config)?;
    let map = evaluate(&test.dataset, &detections, config)?;
    Ok(RunResult {
        trained,
        train: fit_set,
        thresholds,
        detections,
        map,
    })
}

fn train_fn(s: &Subset, config: &PipelineConfig) -> Result<Trained> {
    train(&s.dataset, &s.features, &s.annotations, &s.levels, config)
}

/// Echo of every knob of an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eEcho {
    pub synth: SynthConfig,
    pub level: String,
    pub lambda: f64,
    pub iterations: usize,
    pub calibrate_frac: f64,
    pub box_scale: f64,
    pub mode: String,
    pub ious: Vec<f64>,
}

pub fn echo(synth: &SynthConfig, level: &str, config: &PipelineConfig) -> E2eEcho {
    E2eEcho {
        synth: synth.clone(),
        level: level.into(),
        lambda: config.solver.lambda,
        iterations: config.solver.iterations,
        calibrate_frac: config.calibrate_frac,
        box_scale: config.box_scale,
        mode: config.mode.to_string(),
        ious: config.ious.clone(),
    }
}

pub fn write_split(dir: &Path, prefix: &str, data: &SynthData) -> Result<()> {
    dataio::save_tracks(&dir.join(format!("{prefix}.tracks.jsonl")), &data.dataset)?;
    dataio::save_features(&dir.join(format!("{prefix}.features.dfc")), &data.features)?;
    dataio::save_annotations(&dir.join(format!("{prefix}.annotations.jsonl")), &data.dataset, &data.annotations)
}

/// Generates data, trains at one level, evaluates and writes every artifact
/// into `out_dir`.
pub fn e2e(synth: &SynthConfig, level: SupervisionLevel, config: &PipelineConfig, out_dir: &Path) -> Result<Report> {
    let train = synth::generate(synth)?;
    let test = synth::generate_test(synth)?;
    write_split(out_dir, "train", &train)?;
    write_split(out_dir, "test", &test)?;

    let levels = vec![level; train.dataset.videos.len()];
    let result = run_levels(&train, &test, &levels, config)?;
    let fit = &result.train;
    dataio::save_constraints(&out_dir.join("constraints.jsonl"), &fit.dataset, &result.trained.sets, &fit.levels)?;
    dataio::save_features(&out_dir.join("assignment.bin"), result.trained.output.assignment.matrix())?;
    dataio::save_classifier(&out_dir.join("classifier.json"), &result.trained.output.classifier, Some(&result.thresholds))?;
    dataio::save_trace(&out_dir.join("trace.csv"), &fit.dataset, &result.trained.output.trace)?;
    dataio::save_detections(&out_dir.join("detections.jsonl"), &test.dataset, &result.detections)?;

    let echo = serde_json::to_value(echo(synth, &level.to_string(), config)).expect("config echo serializes");
    let report = Report::new(&result.map, &level.to_string(), synth.seed, echo);
    dataio::save_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub strong_videos: usize,
    /// mAP per IoU threshold, in config order.
    pub map: Vec<f64>,
}

/// Levels for a mix: the first `round(fraction · n)` training videos of a
/// seeded permutation get `strong`, the rest `weak`. Held-out videos keep
/// `weak`; their level is never used.
pub fn mix_assignment(
    ds: &Dataset,
    fit: &[usize],
    weak: SupervisionLevel,
    strong: SupervisionLevel,
    fraction: f64,
    seed: u64,
) -> (Vec<SupervisionLevel>, usize) {
    let mut perm = fit.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MIX_STREAM);
    perm.shuffle(&mut rng);
    let n_strong = ((fit.len() as f64 * fraction).round() as usize).min(fit.len());
    let mut levels = vec![weak; ds.videos.len()];
    for &v in &perm[..n_strong] {
        levels[v] = strong;
    }
    (levels, n_strong)
}

/// One train/calibrate/evaluate run per strong fraction.
pub fn mix_curve(
    train: &SynthData,
    test: &SynthData,
    weak: SupervisionLevel,
    strong: SupervisionLevel,
    fractions: &[f64],
    seed: u64,
    config: &PipelineConfig,
) -> Result<Vec<CurvePoint>> {
    let (fit, _) = calibration_split(&train.dataset, config.calibrate_frac);
    fractions
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Usage(format!("fraction {f} is outside [0, 1]")));
            }
            let (levels, n) = mix_assignment(&train.dataset, &fit, weak, strong, f, seed);
            let r = run_levels(train, test, &levels, config)?;
            Ok(CurvePoint {
                fraction: f,
                strong_videos: n,
                map: r.map.entries.iter().map(|e| e.map).collect(),
            })
        })
        .collect()
}

pub fn save_curve(path: &Path, ious: &[f64], points: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("fraction,strong_videos");
    for t in ious {
        out.push_str(&format!(",map@{t}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{}", p.fraction, p.strong_videos));
        for m in &p.map {
            out.push_str(&format!(",{m}"));
        }
        out.push('\n');
    }
    dataio::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthConfig {
        SynthConfig {
            videos: 10,
            test_videos: 4,
            frames: 160,
            min_units: 2,
            max_units: 6,
            actions: 2,
            dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn split_takes_the_tail_by_id() {
        let data = synth::generate(&tiny()).unwrap();
        let (fit, held) = calibration_split(&data.dataset, 0.1);
        assert_eq!(held, vec![9]);
        assert_eq!(fit, (0..9).collect::<Vec<_>>());
        let (fit, held) = calibration_split(&data.dataset, 0.0);
        assert!(held.is_empty());
        assert_eq!(fit.len(), 10);
    }

    #[test]
    fn mixes_are_nested() {
        let data = synth::generate(&tiny()).unwrap();
        let (fit, _) = calibration_split(&data.dataset, 0.1);
        let strong = |f| {
            let (l, _) = mix_assignment(&data.dataset, &fit, SupervisionLevel::VideoLevel, SupervisionLevel::Full, f, 3);
            l.iter().map(|x| *x == SupervisionLevel::Full).collect::<Vec<_>>()
        };
        let (a, b) = (strong(0.3), strong(0.6));
        assert!(a.iter().zip(&b).all(|(x, y)| !*x || *y));
        assert_eq!(strong(1.0).iter().filter(|x| **x).count(), 9);
        assert_eq!(strong(0.0).iter().filter(|x| **x).count(), 0);
    }

    #[test]
    fn full_supervision_without_noise_is_perfect() {
        let synth = SynthConfig { noise: 0.0, ..tiny() };
        let train = synth::generate(&synth).unwrap();
        let test = synth::generate_test(&synth).unwrap();
        let config = PipelineConfig {
            solver: SolverConfig { iterations: 2000, ..Default::default() },
            ..Default::default()
        };
        let levels = vec![SupervisionLevel::Full; train.dataset.videos.len()];
        let r = run_levels(&train, &test, &levels, &config).unwrap();
        assert_eq!(r.map.map_at(0.5), Some(1.0));
        assert_eq!(r.map.map_at(0.2), Some(1.0));
    }
}
