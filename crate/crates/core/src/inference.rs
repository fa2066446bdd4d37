//! From a trained classifier to scored, temporally trimmed detections.
//!
//! Every detection of a track is scored per class, the score sequence is
//! median-filtered, maximal runs above the class threshold become candidate
//! subtracks (scored by their mean), and overlapping candidates of the same
//! class are suppressed greedily.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::eval::{average_precision, match_detections, IouMode};
use crate::geometry::{st_iou, BoundingBox, BoxedSegment, FrameSpan};
use crate::linalg::Matrix;
use crate::model::{ActionInstance, Dataset};
use crate::objective::Classifier;

pub const MEDIAN_WINDOW: usize = 25;
pub const NMS_IOU: f64 = 0.2;
/// Quantiles per class searched during calibration.
pub const CALIBRATION_GRID: usize = 101;
pub const CALIBRATION_IOU: f64 = 0.5;

/// Per-detection scores of one track for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub track: usize,
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Temporal localization threshold per action class.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    /// Index `class - 1`.
    pub thetas: Vec<f64>,
}

impl ThresholdSet {
    pub fn get(&self, class: usize) -> Option<f64> {
        class.checked_sub(1).and_then(|i| self.thetas.get(i)).copied()
    }

    pub fn scaled(&self, c: f64) -> ThresholdSet {
        ThresholdSet {
            thetas: self.thetas.iter().map(|t| t * c).collect(),
        }
    }
}

/// A scored subtrack.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub video: usize,
    pub class: usize,
    pub span: FrameSpan,
    pub score: f64,
    /// One box per frame of `span`.
    pub boxes: Vec<BoundingBox>,
}

impl DetectionRecord {
    pub fn segment(&self) -> Result<BoxedSegment<'_>> {
        BoxedSegment::new(self.span, &self.boxes)
    }
}

/// Descriptor rows for every detection of `track`: per-detection rows of
/// `detection_features` when the track carries indices into it, otherwise
/// the row of the tracklet containing the frame.
pub fn track_descriptors<'a>(
    dataset: &Dataset,
    track: usize,
    features: &'a Matrix,
    detection_features: Option<&'a Matrix>,
) -> Result<Vec<&'a [f64]>> {
    let t = dataset
        .tracks
        .get(track)
        .ok_or_else(|| Error::invalid(alloc::format!("no track {track}")))?;
    if let (Some(idx), Some(m)) = (t.descriptor_indices(), detection_features) {
        return idx
            .iter()
            .map(|&i| {
                if i < m.rows() {
                    Ok(m.row(i))
                } else {
                    Err(Error::invalid(alloc::format!("track {} refers to missing descriptor {i}", t.id)))
                }
            })
            .collect();
    }
    let rows = dataset.track_rows(track);
    if rows.end > features.rows() {
        return Err(Error::invalid(alloc::format!("track {} has no tracklet descriptors", t.id)));
    }
    let mut out = Vec::with_capacity(t.len());
    let mut row = rows.start;
    for f in t.span().frames() {
        while row < rows.end && !dataset.tracklets[row].span.contains(f) {
            row += 1;
        }
        if row == rows.end {
            return Err(Error::invalid(alloc::format!("frame {f} of track {} is in no tracklet", t.id)));
        }
        out.push(features.row(row));
    }
    Ok(out)
}

/// `s_t^k = x_tᵀ W[:, k]` for every action class `k ≥ 1`.
pub fn score_track(track: usize, descriptors: &[&[f64]], classifier: &Classifier) -> Result<Vec<ScoreSeries>> {
    let k = classifier.classes();
    let mut out: Vec<ScoreSeries> = (1..k)
        .map(|class| ScoreSeries {
            track,
            class,
            scores: Vec::with_capacity(descriptors.len()),
        })
        .collect();
    for x in descriptors {
        let s = classifier.score(x)?;
        for (series, v) in out.iter_mut().zip(&s[1..]) {
            series.scores.push(*v);
        }
    }
    Ok(out)
}

/// Centered running median; near the borders the window shrinks
/// symmetrically so it stays centered.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid("median window must be odd and positive"));
    }
    let n = series.len();
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let h = half.min(t).min(n - 1 - t);
        buf.clear();
        buf.extend_from_slice(&series[t - h..=t + h]);
        buf.sort_by(f64::total_cmp);
        out.push(buf[h]);
    }
    Ok(out)
}

/// Maximal runs with `s_t > θ`, each with its mean score.
pub fn extract_subtracks(series: &[f64], theta: f64) -> Vec<(Range<usize>, f64)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < series.len() {
        if series[t] > theta {
            let start = t;
            let mut sum = 0.0;
            while t < series.len() && series[t] > theta {
                sum += series[t];
                t += 1;
            }
            out.push((start..t, sum / (t - start) as f64));
        } else {
            t += 1;
        }
    }
    out
}

/// Greedy class-wise suppression in descending score order, ties in input
/// order. Returns the kept detections by descending score.
pub fn nms(detections: Vec<DetectionRecord>, iou_threshold: f64) -> Vec<DetectionRecord> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &detections[i];
        let seg = BoxedSegment {
            span: d.span,
            boxes: &d.boxes,
        };
        let suppressed = kept.iter().any(|&j| {
            let o = &detections[j];
            o.video == d.video
                && o.class == d.class
                && st_iou(
                    &seg,
                    &BoxedSegment {
                        span: o.span,
                        boxes: &o.boxes,
                    },
                ) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<DetectionRecord>> = detections.into_iter().map(Some).collect();
    kept.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Smoothed scores indexed `[track][class - 1][detection]`.
pub type TrackScores = Vec<Vec<Vec<f64>>>;

/// Scores and median-filters every track of the dataset.
pub fn smoothed_scores(
    dataset: &Dataset,
    features: &Matrix,
    detection_features: Option<&Matrix>,
    classifier: &Classifier,
    window: usize,
) -> Result<TrackScores> {
    if classifier.classes() != dataset.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "classifier classes",
            expected: dataset.num_classes(),
            got: classifier.classes(),
        });
    }
    (0..dataset.tracks.len())
        .map(|t| {
            let desc = track_descriptors(dataset, t, features, detection_features)?;
            score_track(t, &desc, classifier)?
                .into_iter()
                .map(|s| median_filter(&s.scores, window))
                .collect()
        })
        .collect()
}

fn class_candidates(dataset: &Dataset, scores: &TrackScores, class: usize, theta: f64, out: &mut Vec<DetectionRecord>) {
    for (t, per_class) in scores.iter().enumerate() {
        let track = &dataset.tracks[t];
        let start = track.span().start;
        for (run, score) in extract_subtracks(&per_class[class - 1], theta) {
            out.push(DetectionRecord {
                video: track.video,
                class,
                span: FrameSpan {
                    start: start + run.start as u32,
                    end: start + run.end as u32,
                },
                score,
                boxes: track.boxes()[run].to_vec(),
            });
        }
    }
}

/// Thresholded, suppressed detections for every action class.
pub fn detect(dataset: &Dataset, scores: &TrackScores, thresholds: &ThresholdSet, nms_iou: f64) -> Result<Vec<DetectionRecord>> {
    if thresholds.thetas.len() != dataset.num_actions {
        return Err(Error::DimensionMismatch {
            what: "thresholds",
            expected: dataset.num_actions,
            got: thresholds.thetas.len(),
        });
    }
    let mut out = Vec::new();
    for class in 1..=dataset.num_actions {
        let mut cand = Vec::new();
        class_candidates(dataset, scores, class, thresholds.thetas[class - 1], &mut cand);
        out.extend(nms(cand, nms_iou));
    }
    Ok(out)
}

/// `q`-quantile with linear interpolation of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Calibration grid of one class: evenly spaced quantiles of its scores.
pub fn threshold_grid(scores: &TrackScores, class: usize) -> Vec<f64> {
    let mut all: Vec<f64> = scores.iter().flat_map(|t| t[class - 1].iter().copied()).collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.sort_by(f64::total_cmp);
    (0..CALIBRATION_GRID)
        .map(|i| quantile(&all, i as f64 / (CALIBRATION_GRID - 1) as f64))
        .collect()
}

/// AP of one class at `theta` on a held-out split.
pub fn class_ap_at(
    dataset: &Dataset,
    scores: &TrackScores,
    class: usize,
    theta: f64,
    nms_iou: f64,
    mode: IouMode,
) -> Result<Option<f64>> {
    let gt: Vec<ActionInstance> = dataset.instances.iter().filter(|i| i.class == class).cloned().collect();
    if gt.is_empty() {
        return Ok(None);
    }
    let mut cand = Vec::new();
    class_candidates(dataset, scores, class, theta, &mut cand);
    let dets = nms(cand, nms_iou);
    let m = match_detections(&dets, &gt, dataset.num_actions, CALIBRATION_IOU, mode)?;
    Ok(Some(average_precision(&m, class)?))
}

/// Per class, the grid threshold with the best AP@0.5 on the held-out
/// split; ties go to the larger threshold. Classes without held-out
/// instances get the median of the other classes' thresholds.
pub fn calibrate_thresholds(dataset: &Dataset, scores: &TrackScores, nms_iou: f64, mode: IouMode) -> Result<ThresholdSet> {
    if dataset.instances.is_empty() || scores.is_empty() {
        return Err(Error::Empty("calibration split has no instances"));
    }
    let mut thetas: Vec<Option<f64>> = vec![None; dataset.num_actions];
    for class in 1..=dataset.num_actions {
        let grid = threshold_grid(scores, class);
        let mut best: Option<(f64, f64)> = None;
        for &theta in &grid {
            let Some(ap) = class_ap_at(dataset, scores, class, theta, nms_iou, mode)? else {
                break;
            };
            if best.map_or(true, |(b, _)| ap >= b) {
                best = Some((ap, theta));
            }
        }
        thetas[class - 1] = best.map(|b| b.1);
    }
    let mut known: Vec<f64> = thetas.iter().flatten().copied().collect();
    if known.is_empty() {
        return Err(Error::Empty("calibration split has no instances"));
    }
    known.sort_by(f64::total_cmp);
    let n = known.len();
    let median = if n % 2 == 1 {
        known[n / 2]
    } else {
        0.5 * (known[n / 2 - 1] + known[n / 2])
    };
    Ok(ThresholdSet {
        thetas: thetas.into_iter().map(|t| t.unwrap_or(median)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Keyframe, Track, Video};
    use proptest::prelude::*;

    fn bb(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    fn rec(start: u32, end: u32, x: f64, score: f64) -> DetectionRecord {
        DetectionRecord {
            video: 0,
            class: 1,
            span: FrameSpan::new(start, end).unwrap(),
            score,
            boxes: vec![bb(x); (end - start) as usize],
        }
    }

    #[test]
    fn score_examples() {
        let w = Matrix::from_rows(&[&[0.0, 2.0]]).unwrap();
        let c = Classifier { weights: w, lambda: 1.0 };
        let (a, b, d) = ([1.0], [2.0], [3.0]);
        let s = score_track(0, &[&a, &b, &d], &c).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].scores, vec![2.0, 4.0, 6.0]);
        let zero = Classifier { weights: Matrix::zeros(1, 2), lambda: 1.0 };
        assert_eq!(score_track(0, &[&a, &b], &zero).unwrap()[0].scores, vec![0.0, 0.0]);
        assert!(score_track(0, &[&[1.0, 2.0][..]], &c).is_err());
    }

    #[test]
    fn median_examples() {
        let mut impulse = vec![0.0; 51];
        impulse[25] = 9.0;
        assert_eq!(median_filter(&impulse, 25).unwrap(), vec![0.0; 51]);
        assert_eq!(median_filter(&[3.0; 7], 25).unwrap(), vec![3.0; 7]);
        assert_eq!(median_filter(&[5.0], 25).unwrap(), vec![5.0]);
        // borders shrink: t=1 uses [0, 2]
        assert_eq!(median_filter(&[1.0, 9.0, 2.0, 8.0, 3.0], 5).unwrap(), vec![1.0, 2.0, 3.0, 3.0, 3.0]);
        assert!(median_filter(&[1.0], 4).is_err());
    }

    #[test]
    fn run_examples() {
        assert_eq!(extract_subtracks(&[1.0, 1.0, 0.0, 1.0], 0.5), vec![(0..2, 1.0), (3..4, 1.0)]);
        assert!(extract_subtracks(&[0.1, 0.2], 0.5).is_empty());
        assert_eq!(extract_subtracks(&[1.0, 2.0, 3.0], 0.0), vec![(0..3, 2.0)]);
        // strict inequality
        assert!(extract_subtracks(&[0.5], 0.5).is_empty());
    }

    #[test]
    fn nms_examples() {
        let kept = nms(vec![rec(0, 10, 0.0, 0.8), rec(0, 10, 0.0, 0.9)], 0.2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        let kept = nms(vec![rec(0, 10, 0.0, 0.8), rec(20, 30, 0.0, 0.9)], 0.2);
        assert_eq!(kept.len(), 2);

        // #2 overlaps #1 with temporal IoU 0.5, #3 is disjoint
        let kept = nms(vec![rec(0, 20, 0.0, 0.9), rec(10, 20, 0.0, 0.8), rec(40, 50, 0.0, 0.7)], 0.2);
        let scores: Vec<f64> = kept.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.7]);

        // other classes are never suppressed
        let mut other = rec(0, 10, 0.0, 0.5);
        other.class = 2;
        assert_eq!(nms(vec![rec(0, 10, 0.0, 0.9), other], 0.2).len(), 2);
    }

    fn tiny_dataset() -> Dataset {
        let videos = vec![Video::new("v", 32)];
        let tracks = vec![
            Track::from_boxes(0, "t0", 0, vec![bb(0.0); 32]).unwrap(),
            Track::from_boxes(0, "t1", 0, vec![bb(50.0); 32]).unwrap(),
        ];
        let instances = vec![ActionInstance {
            id: "i".into(),
            video: 0,
            class: 1,
            span: FrameSpan::new(8, 24).unwrap(),
            keyframes: vec![Keyframe { frame: 16, bbox: bb(0.0) }],
            boxes: Some(vec![bb(0.0); 16]),
        }];
        Dataset::new(videos, tracks, instances, 1, 8).unwrap()
    }

    #[test]
    fn calibration_picks_separating_threshold() {
        let ds = tiny_dataset();
        let mut s0 = vec![0.0; 32];
        for v in &mut s0[8..24] {
            *v = 1.0;
        }
        let scores: TrackScores = vec![vec![s0], vec![vec![0.2; 32]]];
        let th = calibrate_thresholds(&ds, &scores, NMS_IOU, IouMode::Full).unwrap();
        let theta = th.get(1).unwrap();
        // largest grid value that still keeps the instance
        assert!(theta >= 0.2 && theta < 1.0, "{theta}");
        let dets = detect(&ds, &scores, &th, NMS_IOU).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].span, FrameSpan::new(8, 24).unwrap());
        let best = class_ap_at(&ds, &scores, 1, theta, NMS_IOU, IouMode::Full).unwrap().unwrap();
        let off = class_ap_at(&ds, &scores, 1, -5.0, NMS_IOU, IouMode::Full).unwrap().unwrap();
        assert!(off <= best);
    }

    #[test]
    fn scaled_scores_give_scaled_thresholds() {
        let ds = tiny_dataset();
        let s0: Vec<f64> = (0..32).map(|t| if (8..24).contains(&t) { 0.7 + 0.01 * t as f64 } else { 0.1 * (t % 3) as f64 }).collect();
        let s1: Vec<f64> = (0..32).map(|t| 0.05 * (t % 5) as f64).collect();
        let a: TrackScores = vec![vec![s0.clone()], vec![s1.clone()]];
        let b: TrackScores = vec![
            vec![s0.iter().map(|v| v * 4.0).collect()],
            vec![s1.iter().map(|v| v * 4.0).collect()],
        ];
        let ta = calibrate_thresholds(&ds, &a, NMS_IOU, IouMode::Full).unwrap();
        let tb = calibrate_thresholds(&ds, &b, NMS_IOU, IouMode::Full).unwrap();
        let da = detect(&ds, &a, &ta, NMS_IOU).unwrap();
        let db = detect(&ds, &b, &tb, NMS_IOU).unwrap();
        assert_eq!(da.len(), db.len());
        for (x, y) in da.iter().zip(&db) {
            assert_eq!(x.span, y.span);
        }
    }

    #[test]
    fn tracklet_descriptors_fill_frames() {
        let ds = tiny_dataset();
        let f = Matrix::new(8, 1, (0..8).map(|v| v as f64).collect()).unwrap();
        let d = track_descriptors(&ds, 1, &f, None).unwrap();
        assert_eq!(d.len(), 32);
        assert_eq!(d[0], &[4.0][..]);
        assert_eq!(d[31], &[7.0][..]);
        assert!(track_descriptors(&ds, 1, &Matrix::zeros(3, 1), None).is_err());
    }

    proptest! {
        #[test]
        fn median_bounded(xs in proptest::collection::vec(-10.0f64..10.0, 1..60), w in 0usize..13) {
            let window = 2 * w + 1;
            let out = median_filter(&xs, window).unwrap();
            prop_assert_eq!(out.len(), xs.len());
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in &out {
                prop_assert!(*v >= lo && *v <= hi);
                prop_assert!(xs.contains(v));
            }
        }

        #[test]
        fn runs_are_maximal(xs in proptest::collection::vec(-1.0f64..1.0, 0..60), theta in -0.5f64..0.5) {
            let runs = extract_subtracks(&xs, theta);
            for (r, _) in &runs {
                prop_assert!(xs[r.clone()].iter().all(|v| *v > theta));
                if r.start > 0 { prop_assert!(xs[r.start - 1] <= theta); }
                if r.end < xs.len() { prop_assert!(xs[r.end] <= theta); }
            }
            let covered: usize = runs.iter().map(|(r, _)| r.len()).sum();
            prop_assert_eq!(covered, xs.iter().filter(|v| **v > theta).count());
        }

        #[test]
        fn nms_idempotent(spec in proptest::collection::vec((0u32..40, 1u32..20, 0.0f64..30.0, 0.0f64..1.0), 0..12)) {
            let dets: Vec<_> = spec.iter().map(|&(s, l, x, sc)| rec(s, s + l, x, sc)).collect();
            let once = nms(dets, 0.2);
            let twice = nms(once.clone(), 0.2);
            prop_assert_eq!(&once, &twice);
            for i in 0..once.len() {
                for j in i + 1..once.len() {
                    prop_assert!(st_iou(&once[i].segment().unwrap(), &once[j].segment().unwrap()) <= 0.2);
                }
            }
        }
    }
}
