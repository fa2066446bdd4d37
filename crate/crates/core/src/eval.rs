//! Detection matching, average precision and video mAP.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{st_iou, st_iou_keyframe};
use crate::inference::DetectionRecord;
use crate::model::ActionInstance;

/// Which frames the spatial part of the ST-IoU is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouMode {
    /// Every frame the two tubes share.
    #[default]
    Full,
    /// Only the annotated keyframes of the instance.
    Keyframe,
}

impl fmt::Display for IouMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouMode::Full => "full",
            IouMode::Keyframe => "keyframe",
        })
    }
}

impl FromStr for IouMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(IouMode::Full),
            "keyframe" => Ok(IouMode::Keyframe),
            _ => Err(Error::invalid(alloc::format!("unknown IoU mode `{s}`"))),
        }
    }
}

/// ST-IoU between a detection and an instance under `mode`.
pub fn detection_iou(det: &DetectionRecord, inst: &ActionInstance, mode: IouMode) -> Result<f64> {
    let seg = det.segment()?;
    match mode {
        IouMode::Full => {
            let gt = inst
                .segment()
                .ok_or_else(|| Error::invalid(alloc::format!("instance {} has no dense boxes", inst.id)))?;
            Ok(st_iou(&seg, &gt))
        }
        IouMode::Keyframe => st_iou_keyframe(&seg, &inst.span, &inst.keyframe_pairs()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices by descending score, ties in input order.
    pub order: Vec<usize>,
    /// Per detection, in input order.
    pub true_positive: Vec<bool>,
    /// Matched instance index per detection, in input order.
    pub matched: Vec<Option<usize>>,
    pub classes: Vec<usize>,
    /// Ground-truth count per class id; index 0 is background and stays 0.
    pub instances_per_class: Vec<usize>,
}

fn check_instances(instances: &[ActionInstance], num_actions: usize, mode: IouMode) -> Result<()> {
    for inst in instances {
        if inst.class == 0 || inst.class > num_actions {
            return Err(Error::UnknownClass(inst.class));
        }
        match mode {
            IouMode::Keyframe if inst.keyframes.is_empty() => {
                return Err(Error::invalid(alloc::format!("instance {} has no keyframes", inst.id)))
            }
            IouMode::Full if inst.boxes.is_none() => {
                return Err(Error::invalid(alloc::format!("instance {} has no dense boxes", inst.id)))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Greedy matching in score order. A detection is a true positive iff some
/// unmatched instance of its class in its video has ST-IoU ≥ `threshold`;
/// it takes the one with the highest IoU. Duplicates are false positives.
pub fn match_detections(
    detections: &[DetectionRecord],
    instances: &[ActionInstance],
    num_actions: usize,
    threshold: f64,
    mode: IouMode,
) -> Result<MatchResult> {
    check_instances(instances, num_actions, mode)?;
    for d in detections {
        if d.class == 0 || d.class > num_actions {
            return Err(Error::UnknownClass(d.class));
        }
        if !d.score.is_finite() {
            return Err(Error::NonFinite("detection score"));
        }
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));

    let mut taken = vec![false; instances.len()];
    let mut true_positive = vec![false; detections.len()];
    let mut matched = vec![None; detections.len()];
    for &i in &order {
        let d = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, inst) in instances.iter().enumerate() {
            if taken[j] || inst.video != d.video || inst.class != d.class {
                continue;
            }
            let iou = detection_iou(d, inst, mode)?;
            if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            true_positive[i] = true;
            matched[i] = Some(j);
        }
    }
    let mut instances_per_class = vec![0; num_actions + 1];
    for inst in instances {
        instances_per_class[inst.class] += 1;
    }
    Ok(MatchResult {
        order,
        true_positive,
        matched,
        classes: detections.iter().map(|d| d.class).collect(),
        instances_per_class,
    })
}

/// All-point interpolated AP of one class: area under the precision-recall
/// curve after replacing precision by its running maximum from the right.
pub fn average_precision(result: &MatchResult, class: usize) -> Result<f64> {
    let total = *result.instances_per_class.get(class).ok_or(Error::UnknownClass(class))?;
    if total == 0 {
        return Err(Error::Empty("class has no ground-truth instances"));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &result.order {
        if result.classes[i] != class {
            continue;
        }
        if result.true_positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / total as f64, tp as f64 / (tp + fp) as f64));
    }
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub threshold: f64,
    pub map: f64,
    /// AP per action class (index `class - 1`); `None` without instances.
    pub ap: Vec<Option<f64>>,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub mode: IouMode,
    pub entries: Vec<MapEntry>,
    /// Ground-truth count per action class (index `class - 1`).
    pub instances: Vec<usize>,
    pub detections: usize,
}

impl MapReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.entries.iter().find(|e| e.threshold == threshold).map(|e| e.map)
    }
}

/// Mean AP over classes with at least one instance, per threshold.
pub fn video_map(
    detections: &[DetectionRecord],
    instances: &[ActionInstance],
    num_actions: usize,
    thresholds: &[f64],
    mode: IouMode,
) -> Result<MapReport> {
    if instances.is_empty() {
        return Err(Error::Empty("no ground-truth instances"));
    }
    let mut entries = Vec::with_capacity(thresholds.len());
    let mut counts = Vec::new();
    for &t in thresholds {
        let m = match_detections(detections, instances, num_actions, t, mode)?;
        let ap: Vec<Option<f64>> = (1..=num_actions)
            .map(|c| average_precision(&m, c).ok())
            .collect();
        let present: Vec<f64> = ap.iter().flatten().copied().collect();
        entries.push(MapEntry {
            threshold: t,
            map: present.iter().sum::<f64>() / present.len() as f64,
            ap,
            true_positives: m.true_positive.iter().filter(|b| **b).count(),
        });
        counts = m.instances_per_class[1..].to_vec();
    }
    Ok(MapReport {
        mode,
        entries,
        instances: counts,
        detections: detections.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, FrameSpan};
    use crate::model::Keyframe;

    fn bb(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    fn inst(id: &str, class: usize, start: u32, end: u32, x: f64) -> ActionInstance {
        ActionInstance {
            id: id.into(),
            video: 0,
            class,
            span: FrameSpan::new(start, end).unwrap(),
            keyframes: vec![Keyframe { frame: start, bbox: bb(x) }],
            boxes: Some(vec![bb(x); (end - start) as usize]),
        }
    }

    fn det(class: usize, start: u32, end: u32, x: f64, score: f64) -> DetectionRecord {
        DetectionRecord {
            video: 0,
            class,
            span: FrameSpan::new(start, end).unwrap(),
            score,
            boxes: vec![bb(x); (end - start) as usize],
        }
    }

    #[test]
    fn exact_detection_is_true_positive() {
        let gt = [inst("a", 1, 0, 10, 0.0)];
        let m = match_detections(&[det(1, 0, 10, 0.0, 0.5)], &gt, 1, 0.5, IouMode::Full).unwrap();
        assert_eq!(m.true_positive, vec![true]);
        assert_eq!(average_precision(&m, 1).unwrap(), 1.0);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let gt = [inst("a", 1, 0, 10, 0.0)];
        let dets = [det(1, 0, 10, 0.0, 0.9), det(1, 0, 10, 0.0, 0.8)];
        let m = match_detections(&dets, &gt, 1, 0.5, IouMode::Full).unwrap();
        assert_eq!(m.true_positive, vec![true, false]);
    }

    #[test]
    fn boundary_iou() {
        // temporal IoU 19/100 with identical boxes
        let gt = [inst("a", 1, 0, 100, 0.0)];
        let d = det(1, 81, 100, 0.0, 1.0);
        assert!((detection_iou(&d, &gt[0], IouMode::Full).unwrap() - 0.19).abs() < 1e-15);
        let m = match_detections(&[d], &gt, 1, 0.2, IouMode::Full).unwrap();
        assert_eq!(m.true_positive, vec![false]);
    }

    #[test]
    fn ap_examples() {
        let gt = [inst("a", 1, 0, 10, 0.0)];
        let dets = [det(1, 50, 60, 0.0, 0.9), det(1, 0, 10, 0.0, 0.8)];
        let m = match_detections(&dets, &gt, 1, 0.5, IouMode::Full).unwrap();
        assert_eq!(average_precision(&m, 1).unwrap(), 0.5);

        let gt2 = [inst("a", 1, 0, 10, 0.0), inst("b", 1, 20, 30, 0.0)];
        let m = match_detections(&[det(1, 0, 10, 0.0, 1.0)], &gt2, 1, 0.5, IouMode::Full).unwrap();
        assert_eq!(average_precision(&m, 1).unwrap(), 0.5);
        assert!(average_precision(&m, 0).is_err());
    }

    #[test]
    fn map_examples() {
        let gt = [inst("a", 1, 0, 10, 0.0), inst("b", 2, 0, 10, 0.0), inst("c", 2, 20, 30, 0.0)];
        let dets = [det(1, 0, 10, 0.0, 1.0), det(2, 0, 10, 0.0, 1.0)];
        let r = video_map(&dets, &gt, 3, &[0.2, 0.5], IouMode::Full).unwrap();
        assert_eq!(r.map_at(0.5), Some(0.75));
        assert_eq!(r.entries[0].ap, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.instances, vec![1, 2, 0]);
        let empty = video_map(&[], &gt, 3, &[0.5], IouMode::Full).unwrap();
        assert_eq!(empty.map_at(0.5), Some(0.0));
        assert!(video_map(&dets, &[], 3, &[0.5], IouMode::Full).is_err());
    }

    #[test]
    fn keyframe_mode() {
        let gt = [inst("a", 1, 0, 10, 0.0)];
        // spatially wrong everywhere except the keyframe at frame 0
        let mut d = det(1, 0, 10, 100.0, 1.0);
        d.boxes[0] = bb(0.0);
        assert_eq!(detection_iou(&d, &gt[0], IouMode::Keyframe).unwrap(), 1.0);
        assert!(detection_iou(&d, &gt[0], IouMode::Full).unwrap() < 0.2);
        let mut bare = gt[0].clone();
        bare.keyframes.clear();
        assert!(match_detections(&[d], &[bare], 1, 0.5, IouMode::Keyframe).is_err());
    }

    #[test]
    fn unknown_class_rejected() {
        let gt = [inst("a", 1, 0, 10, 0.0)];
        assert_eq!(
            match_detections(&[det(2, 0, 10, 0.0, 1.0)], &gt, 1, 0.5, IouMode::Full),
            Err(Error::UnknownClass(2))
        );
    }

    #[test]
    fn monotone_transform_keeps_map() {
        let gt = [inst("a", 1, 0, 10, 0.0), inst("b", 1, 30, 40, 0.0)];
        let dets = [det(1, 0, 10, 0.0, 0.2), det(1, 50, 60, 0.0, 0.7), det(1, 30, 40, 3.0, 0.4)];
        let a = video_map(&dets, &gt, 1, &[0.2, 0.5], IouMode::Full).unwrap();
        let moved: Vec<_> = dets
            .iter()
            .map(|d| DetectionRecord { score: libm::exp(3.0 * d.score) - 7.0, ..d.clone() })
            .collect();
        let b = video_map(&moved, &gt, 1, &[0.2, 0.5], IouMode::Full).unwrap();
        assert_eq!(a.entries, b.entries);
        assert!(a.map_at(0.5).unwrap() <= a.map_at(0.2).unwrap());
    }
}
