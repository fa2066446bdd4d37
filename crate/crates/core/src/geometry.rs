//! Boxes, frame intervals and the overlap measures built on them.

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::NonFinite("bounding box"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid("bounding box corners are out of order"));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Closed containment test, so points on the border count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        spatial_iou(self, other)
    }

    /// Scales width and height by `factor` about the box center.
    pub fn scaled(&self, factor: f64) -> BoundingBox {
        scale_box(self, factor)
    }
}

/// Intersection over union of two boxes; 0 when the union is empty.
pub fn spatial_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn scale_box(b: &BoundingBox, factor: f64) -> BoundingBox {
    let (cx, cy) = b.center();
    let hw = 0.5 * b.width() * factor;
    let hh = 0.5 * b.height() * factor;
    BoundingBox {
        x1: cx - hw,
        y1: cy - hh,
        x2: cx + hw,
        y2: cy + hh,
    }
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameSpan {
    pub start: u32,
    pub end: u32,
}

impl FrameSpan {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start > end {
            return Err(Error::invalid("frame span ends before it starts"));
        }
        Ok(FrameSpan { start, end })
    }

    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: u32) -> bool {
        frame >= self.start && frame < self.end
    }

    /// True when `other` lies entirely inside `self`.
    pub fn covers(&self, other: &FrameSpan) -> bool {
        other.start >= self.start && other.end <= self.end
    }

    pub fn intersect(&self, other: &FrameSpan) -> Option<FrameSpan> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(FrameSpan { start, end })
    }

    pub fn overlaps(&self, other: &FrameSpan) -> bool {
        self.intersect(other).is_some()
    }

    pub fn frames(&self) -> core::ops::Range<u32> {
        self.start..self.end
    }

    /// Splits the span into consecutive bins of `unit` frames; the last bin
    /// may be shorter.
    pub fn units(&self, unit: u32) -> impl Iterator<Item = FrameSpan> + '_ {
        let unit = unit.max(1);
        let count = self.len().div_ceil(unit);
        (0..count).map(move |i| {
            let start = self.start + i * unit;
            FrameSpan {
                start,
                end: (start + unit).min(self.end),
            }
        })
    }
}

pub fn temporal_iou(a: &FrameSpan, b: &FrameSpan) -> f64 {
    let inter = match a.intersect(b) {
        Some(s) => s.len() as f64,
        None => return 0.0,
    };
    let union = a.len() as f64 + b.len() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A span of frames with one box per frame, e.g. a (sub)track or a
/// ground-truth tube.
#[derive(Debug, Clone, Copy)]
pub struct BoxedSegment<'a> {
    pub span: FrameSpan,
    pub boxes: &'a [BoundingBox],
}

impl<'a> BoxedSegment<'a> {
    pub fn new(span: FrameSpan, boxes: &'a [BoundingBox]) -> Result<Self> {
        if boxes.len() != span.len() as usize {
            return Err(Error::DimensionMismatch {
                what: "boxed segment",
                expected: span.len() as usize,
                got: boxes.len(),
            });
        }
        Ok(BoxedSegment { span, boxes })
    }

    pub fn box_at(&self, frame: u32) -> Option<&'a BoundingBox> {
        if self.span.contains(frame) {
            self.boxes.get((frame - self.span.start) as usize)
        } else {
            None
        }
    }
}

/// Temporal IoU times the mean spatial IoU over the frames both segments
/// share.
pub fn st_iou(a: &BoxedSegment<'_>, b: &BoxedSegment<'_>) -> f64 {
    let Some(common) = a.span.intersect(&b.span) else {
        return 0.0;
    };
    let tiou = temporal_iou(&a.span, &b.span);
    let mut sum = 0.0;
    for f in common.frames() {
        let (Some(ba), Some(bb)) = (a.box_at(f), b.box_at(f)) else {
            continue;
        };
        sum += spatial_iou(ba, bb);
    }
    tiou * sum / common.len() as f64
}

/// Keyframe variant of [`st_iou`]: spatial overlap is only measured at the
/// annotated frames, and keyframes the candidate does not cover count as 0.
pub fn st_iou_keyframe(
    candidate: &BoxedSegment<'_>,
    instance_span: &FrameSpan,
    keyframes: &[(u32, BoundingBox)],
) -> Result<f64> {
    if keyframes.is_empty() {
        return Err(Error::invalid("keyframe IoU needs at least one keyframe"));
    }
    let tiou = temporal_iou(&candidate.span, instance_span);
    if tiou == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = keyframes
        .iter()
        .map(|(f, gt)| candidate.box_at(*f).map_or(0.0, |b| spatial_iou(b, gt)))
        .sum();
    Ok(tiou * sum / keyframes.len() as f64)
}
