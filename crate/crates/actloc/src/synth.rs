//! Synthetic benchmark: person tracks in separate horizontal lanes, action
//! instances aligned to tracklet units with at least one background unit between
//! two instances on the same lane, and tracklet descriptors drawn from
//! one Gaussian per class around the vertices of a regular simplex.

use actloc_core::constraints::Annotation;
use actloc_core::linalg::Matrix;
use actloc_core::{ActionInstance, BoundingBox, Dataset, FrameSpan, Keyframe, Track, Video, BACKGROUND, TRACKLET_FRAMES};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CENTERS_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const TEST_STREAM: u64 = 4;

const LANE_HEIGHT: f64 = 100.0;
const BOX_WIDTH: f64 = 40.0;
const BOX_HEIGHT: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub videos: usize,
    pub test_videos: usize,
    pub actions: usize,
    pub dim: usize,
    pub tracks_per_video: usize,
    pub frames: u32,
    pub instances_per_video: usize,
    /// Distance between any two class centers.
    pub separation: f64,
    /// Per-dimension standard deviation of the descriptors.
    pub noise: f64,
    /// Largest per-coordinate box perturbation, in pixels.
    pub jitter: f64,
    pub distractor_fraction: f64,
    /// Instance length range in tracklet units, inclusive.
    pub min_units: u32,
    pub max_units: u32,
    pub keyframes: usize,
    pub shots_per_video: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            videos: 50,
            test_videos: 25,
            actions: 5,
            dim: 32,
            tracks_per_video: 2,
            frames: 1000,
            instances_per_video: 2,
            separation: 1.0,
            noise: 0.25,
            jitter: 2.0,
            distractor_fraction: 0.0,
            min_units: 4,
            max_units: 12,
            keyframes: 3,
            shots_per_video: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(format!("synth: {m}")));
        if self.videos == 0 || self.actions == 0 || self.tracks_per_video == 0 || self.instances_per_video == 0 {
            return bad("counts must be at least 1");
        }
        if self.dim < self.actions + 1 {
            return bad("dim must exceed the number of actions");
        }
        if !(self.separation >= 0.0 && self.noise >= 0.0 && self.jitter >= 0.0) {
            return bad("separation, noise and jitter must be non-negative");
        }
        if self.jitter >= BOX_WIDTH / 4.0 {
            return bad("jitter must stay below a quarter of the box width");
        }
        if !(0.0..1.0).contains(&self.distractor_fraction) {
            return bad("distractor fraction must be in [0, 1)");
        }
        if self.min_units == 0 || self.min_units > self.max_units {
            return bad("instance length range is empty");
        }
        if self.frames < self.max_units * TRACKLET_FRAMES {
            return bad("videos are shorter than the longest instance");
        }
        if self.keyframes == 0 || self.shots_per_video == 0 {
            return bad("keyframes and shots must be at least 1");
        }
        Ok(())
    }

    /// The benchmark for supervision comparisons: enough held-out videos
    /// that every class is calibrated on several instances.
    pub fn benchmark(seed: u64) -> Self {
        SynthConfig {
            seed,
            videos: 300,
            test_videos: 100,
            instances_per_video: 4,
            ..SynthConfig::default()
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// A generated split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    /// One descriptor per tracklet row.
    pub features: Matrix,
    /// Every annotation kind for every instance.
    pub annotations: Vec<Annotation>,
    /// True class per tracklet row.
    pub labels: Vec<usize>,
}

/// `K × d` class centers, background first and at the origin: a regular
/// simplex with every pair at distance `s`.
pub fn class_centers(config: &SynthConfig) -> Result<Matrix> {
    config.validate()?;
    let (k, d) = (config.actions + 1, config.dim);
    let mut rng = config.rng(CENTERS_STREAM);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut q = Matrix::zeros(k, d);
    let mut i = 0;
    while i < k {
        let mut v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        for j in 0..i {
            let p = actloc_core::linalg::dot(&v, q.row(j));
            actloc_core::linalg::axpy(&mut v, -p, q.row(j));
        }
        let n = actloc_core::linalg::dot(&v, &v).sqrt();
        if n < 1e-6 {
            continue;
        }
        for (dst, x) in q.row_mut(i).iter_mut().zip(&v) {
            *dst = x / n;
        }
        i += 1;
    }
    let base = q.row(0).to_vec();
    for i in 0..k {
        for (x, b) in q.row_mut(i).iter_mut().zip(&base) {
            *x -= b;
        }
    }
    q.scale(config.separation / std::f64::consts::SQRT_2);
    Ok(q)
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let centers = class_centers(config)?;
    generate_split(config, &centers, TRAIN_STREAM, config.videos, "train")
}

pub fn generate_test(config: &SynthConfig) -> Result<SynthData> {
    let centers = class_centers(config)?;
    generate_split(config, &centers, TEST_STREAM, config.test_videos.max(1), "test")
}

fn lane_box(lane: usize, x0: f64) -> BoundingBox {
    let y0 = lane as f64 * LANE_HEIGHT;
    BoundingBox {
        x1: x0,
        y1: y0,
        x2: x0 + BOX_WIDTH,
        y2: y0 + BOX_HEIGHT,
    }
}

fn jittered(b: &BoundingBox, amp: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    if amp == 0.0 {
        return *b;
    }
    let mut j = || rng.random_range(-amp..=amp);
    BoundingBox {
        x1: b.x1 + j(),
        y1: b.y1 + j(),
        x2: b.x2 + j(),
        y2: b.y2 + j(),
    }
}

pub fn generate_split(config: &SynthConfig, centers: &Matrix, stream: u64, videos: usize, prefix: &str) -> Result<SynthData> {
    config.validate()?;
    if centers.rows() != config.actions + 1 || centers.cols() != config.dim {
        return Err(Error::Usage("synth: centers do not match the config".into()));
    }
    let mut rng = config.rng(stream);
    let unit = TRACKLET_FRAMES;
    let units = config.frames / unit;
    let distractors = ((config.tracks_per_video as f64 * config.distractor_fraction).round() as usize)
        .min(config.tracks_per_video - 1);
    let actors = config.tracks_per_video - distractors;

    let mut all_videos = Vec::with_capacity(videos);
    let mut tracks = Vec::new();
    let mut instances = Vec::new();
    let mut annotations = Vec::new();
    // (track, span, class) of every instance, for the labels
    let mut placed: Vec<(usize, FrameSpan, usize)> = Vec::new();

    for v in 0..videos {
        let vid = format!("{prefix}-{v:04}");
        let mut video = Video::new(vid.clone(), config.frames);
        if config.shots_per_video > 1 {
            let mut cuts: Vec<u32> = sample(&mut rng, units as usize - 1, (config.shots_per_video - 1).min(units as usize - 1))
                .into_iter()
                .map(|u| (u as u32 + 1) * unit)
                .collect();
            cuts.sort_unstable();
            video.shots = cuts;
        }
        all_videos.push(video);

        let first_track = tracks.len();
        let mut clean = Vec::with_capacity(config.tracks_per_video);
        for lane in 0..config.tracks_per_video {
            let x0 = rng.random_range(0.0..200.0);
            let b = lane_box(lane, x0);
            let boxes = (0..config.frames).map(|_| jittered(&b, config.jitter, &mut rng)).collect();
            tracks.push(Track::from_boxes(v, format!("{vid}/t{lane}"), 0, boxes)?);
            clean.push(b);
        }

        let mut taken: Vec<(usize, FrameSpan)> = Vec::new();
        for n in 0..config.instances_per_video {
            let mut chosen = None;
            for _ in 0..100 {
                let lane = rng.random_range(0..actors);
                let len = rng.random_range(config.min_units..=config.max_units);
                let start = rng.random_range(0..=units - len);
                let span = FrameSpan::new(start * unit, (start + len) * unit)?;
                let padded = FrameSpan::new(span.start.saturating_sub(unit), span.end + unit)?;
                if !taken.iter().any(|(l, s)| *l == lane && s.overlaps(&padded)) {
                    chosen = Some((lane, span));
                    break;
                }
            }
            let Some((lane, span)) = chosen else { continue };
            taken.push((lane, span));
            let class = rng.random_range(1..=config.actions);
            let gt = clean[lane];
            let boxes = vec![gt; span.len() as usize];
            let point = rng.random_range(span.start..span.end);
            let kf_count = config.keyframes.min(span.len() as usize);
            let keyframes: Vec<Keyframe> = sample(&mut rng, span.len() as usize, kf_count)
                .into_iter()
                .map(|i| Keyframe {
                    frame: span.start + i as u32,
                    bbox: gt,
                })
                .collect();
            let id = format!("{vid}/a{n}");
            instances.push(ActionInstance {
                id: id.clone(),
                video: v,
                class,
                span,
                keyframes: keyframes.clone(),
                boxes: Some(boxes.clone()),
            });
            annotations.push(Annotation {
                instance_id: id,
                video: v,
                class,
                span: Some(span),
                point: Some(point),
                point_box: Some(gt),
                keyframes,
                boxes: Some(boxes),
            });
            placed.push((first_track + lane, span, class));
        }
    }

    let dataset = Dataset::new(all_videos, tracks, instances, config.actions, unit)?;
    let mut labels = vec![BACKGROUND; dataset.num_rows()];
    for &(track, span, class) in &placed {
        for r in dataset.track_rows(track) {
            if span.covers(&dataset.tracklets[r].span) {
                labels[r] = class;
            }
        }
    }
    let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Usage(format!("synth: {e}")))?;
    let mut features = Matrix::zeros(dataset.num_rows(), config.dim);
    for (r, &label) in labels.iter().enumerate() {
        let center = centers.row(label);
        for (dst, c) in features.row_mut(r).iter_mut().zip(center) {
            *dst = (c + normal.sample(&mut rng)) as f32 as f64;
        }
    }
    Ok(SynthData {
        dataset,
        features,
        annotations,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            videos: 4,
            test_videos: 2,
            frames: 200,
            min_units: 2,
            max_units: 5,
            ..Default::default()
        }
    }

    #[test]
    fn counts() {
        let c = SynthConfig {
            videos: 50,
            tracks_per_video: 2,
            frames: 1000,
            ..Default::default()
        };
        let data = generate(&c).unwrap();
        assert_eq!(data.dataset.num_rows(), 12500);
        assert_eq!(data.features.rows(), 12500);
    }

    #[test]
    fn centers_are_equidistant() {
        let c = small();
        let m = class_centers(&c).unwrap();
        for i in 0..m.rows() {
            for j in i + 1..m.rows() {
                let d2: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!((d2.sqrt() - c.separation).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_sits_on_centers() {
        let c = SynthConfig { noise: 0.0, ..small() };
        let data = generate(&c).unwrap();
        let centers = class_centers(&c).unwrap();
        for (r, &l) in data.labels.iter().enumerate() {
            for (a, b) in data.features.row(r).iter().zip(centers.row(l)) {
                assert_eq!(*a, *b as f32 as f64);
            }
        }
        assert!(data.labels.iter().any(|&l| l != BACKGROUND));
    }

    #[test]
    fn deterministic() {
        let c = small();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate(&c).unwrap().features, generate(&other).unwrap().features);
        assert_ne!(generate(&c).unwrap().features, generate_test(&c).unwrap().features);
    }

    #[test]
    fn annotations_project_ground_truth() {
        let c = SynthConfig { distractor_fraction: 0.5, tracks_per_video: 2, ..small() };
        let data = generate(&c).unwrap();
        let ds = &data.dataset;
        for (a, inst) in data.annotations.iter().zip(&ds.instances) {
            assert_eq!(a.span, Some(inst.span));
            assert!(inst.span.contains(a.point.unwrap()));
            assert_eq!(a.keyframes.len(), 3);
            for k in &a.keyframes {
                assert!(inst.span.contains(k.frame));
                // the matching track box is the jittered ground truth
                let best = ds
                    .video_tracks(inst.video)
                    .map(|t| ds.tracks[t].box_at(k.frame).unwrap().iou(&k.bbox))
                    .fold(0.0, f64::max);
                assert!(best >= 0.8);
            }
        }
        // lane 1 is the distractor and never carries an action
        for (t, track) in ds.tracks.iter().enumerate() {
            if track.id.ends_with("/t1") {
                assert!(ds.track_rows(t).all(|r| data.labels[r] == BACKGROUND));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { dim: 3, ..small() }).is_err());
        assert!(generate(&SynthConfig { videos: 0, ..small() }).is_err());
        assert!(generate(&SynthConfig { frames: 16, ..small() }).is_err());
    }
}
