//! Supervision levels expressed as constraints on one video's block of the
//! assignment matrix.
//!
//! Every level produces the same three ingredients per video:
//!
//! * `fixed_one`: (row, class) pairs forced to 1,
//! * `fixed_zero`: (row, class) pairs forced to 0,
//! * bags: sets of rows of which at least one must take the bag's class.
//!
//! Rows are global tracklet rows; each set also records the contiguous row
//! range of its video.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, FrameSpan};
use crate::model::{ActionInstance, Dataset, Keyframe};
use crate::BACKGROUND;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub class: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoConstraintSet {
    pub video: usize,
    pub rows: Range<usize>,
    /// Label columns, background included.
    pub classes: usize,
    pub fixed_one: Vec<(usize, usize)>,
    pub fixed_zero: Vec<(usize, usize)>,
    pub bags: Vec<Bag>,
}

impl VideoConstraintSet {
    pub fn unconstrained(video: usize, rows: Range<usize>, classes: usize) -> Self {
        VideoConstraintSet {
            video,
            rows,
            classes,
            fixed_one: Vec::new(),
            fixed_zero: Vec::new(),
            bags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of rows with a `fixed_one` entry.
    pub fn fixed_rows(&self) -> usize {
        let mut rows: Vec<usize> = self.fixed_one.iter().map(|p| p.0).collect();
        rows.dedup();
        rows.len()
    }

    fn canonicalize(&mut self) {
        self.fixed_one.sort_unstable();
        self.fixed_one.dedup();
        self.fixed_zero.sort_unstable();
        self.fixed_zero.dedup();
        for b in &mut self.bags {
            b.rows.sort_unstable();
            b.rows.dedup();
        }
    }
}

/// Tunables shared by the level builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelParams {
    /// Candidate interval around a temporal point, in frames.
    pub window: u32,
    /// Time-unit size used to cut intervals into bags.
    pub unit: u32,
    /// Spatial IoU needed to match a track to an annotated box.
    pub iou_gate: f64,
}

impl Default for LevelParams {
    fn default() -> Self {
        LevelParams {
            window: 50,
            unit: 8,
            iou_gate: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupervisionLevel {
    VideoLevel,
    ShotLevel,
    TemporalPoint,
    OneBox,
    Temporal,
    /// Temporal bounds plus `k` annotated boxes per instance.
    TemporalBoxes(usize),
    SpatialPoints,
    Full,
}

impl fmt::Display for SupervisionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupervisionLevel::VideoLevel => f.write_str("video"),
            SupervisionLevel::ShotLevel => f.write_str("shot"),
            SupervisionLevel::TemporalPoint => f.write_str("temporal-point"),
            SupervisionLevel::OneBox => f.write_str("one-box"),
            SupervisionLevel::Temporal => f.write_str("temporal"),
            SupervisionLevel::TemporalBoxes(k) => write!(f, "temporal-{k}bb"),
            SupervisionLevel::SpatialPoints => f.write_str("spatial-points"),
            SupervisionLevel::Full => f.write_str("full"),
        }
    }
}

impl FromStr for SupervisionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let level = match s {
            "video" | "video-level" => SupervisionLevel::VideoLevel,
            "shot" | "shot-level" => SupervisionLevel::ShotLevel,
            "temporal-point" | "point" => SupervisionLevel::TemporalPoint,
            "one-box" | "1bb" => SupervisionLevel::OneBox,
            "temporal" => SupervisionLevel::Temporal,
            "spatial-points" => SupervisionLevel::SpatialPoints,
            "full" => SupervisionLevel::Full,
            other => {
                let k = other
                    .strip_prefix("temporal-")
                    .and_then(|r| r.strip_suffix("bb"))
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|k| *k >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown supervision level `{other}`")))?;
                SupervisionLevel::TemporalBoxes(k)
            }
        };
        Ok(level)
    }
}

/// What an annotator provided for one action instance. Builders only read
/// the fields their level permits.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub instance_id: String,
    pub video: usize,
    pub class: usize,
    pub span: Option<FrameSpan>,
    /// A single frame inside the action.
    pub point: Option<u32>,
    /// Box at `point`.
    pub point_box: Option<BoundingBox>,
    /// Sparse boxes, in annotation order; the first `k` serve `TemporalBoxes(k)`.
    pub keyframes: Vec<Keyframe>,
    /// Dense boxes over `span`.
    pub boxes: Option<Vec<BoundingBox>>,
}

impl Annotation {
    /// Everything the ground truth knows, without a temporal point.
    pub fn from_instance(inst: &ActionInstance) -> Self {
        Annotation {
            instance_id: inst.id.clone(),
            video: inst.video,
            class: inst.class,
            span: Some(inst.span),
            point: None,
            point_box: None,
            keyframes: inst.keyframes.clone(),
            boxes: inst.boxes.clone(),
        }
    }

    fn box_at(&self, frame: u32) -> Option<&BoundingBox> {
        let span = self.span?;
        if !span.contains(frame) {
            return None;
        }
        self.boxes.as_ref()?.get((frame - span.start) as usize)
    }
}

/// A broken invariant or an unsatisfiable part of a constraint set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RowOutOfRange { row: usize },
    ClassOutOfRange { class: usize },
    ConflictingFixedOne { row: usize },
    FixedOneAndZero { row: usize, class: usize },
    AllClassesForbidden { row: usize },
    EmptyBag { bag: usize },
    BackgroundBag { bag: usize },
    UnsatisfiableBag { bag: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowOutOfRange { row } => write!(f, "row {row} is outside the video"),
            Violation::ClassOutOfRange { class } => write!(f, "class {class} is out of range"),
            Violation::ConflictingFixedOne { row } => write!(f, "row {row} is fixed to two classes"),
            Violation::FixedOneAndZero { row, class } => {
                write!(f, "row {row} is both fixed to and forbidden from class {class}")
            }
            Violation::AllClassesForbidden { row } => write!(f, "row {row} has no allowed class"),
            Violation::EmptyBag { bag } => write!(f, "bag {bag} is empty"),
            Violation::BackgroundBag { bag } => write!(f, "bag {bag} asks for the background class"),
            Violation::UnsatisfiableBag { bag } => write!(f, "unsatisfiable bag {bag}"),
        }
    }
}

/// Per-row view of the hard constraints of one set, in local row indices.
#[derive(Debug, Clone)]
pub(crate) struct RowRules {
    pub fixed: Vec<Option<usize>>,
    /// `forbidden[r * classes + k]`
    pub forbidden: Vec<bool>,
    pub classes: usize,
}

impl RowRules {
    pub fn new(set: &VideoConstraintSet) -> Self {
        let n = set.rows.len();
        let k = set.classes;
        let mut fixed = alloc::vec![None; n];
        let mut forbidden = alloc::vec![false; n * k];
        for &(r, c) in &set.fixed_one {
            if set.rows.contains(&r) && c < k {
                fixed[r - set.rows.start] = Some(c);
            }
        }
        for &(r, c) in &set.fixed_zero {
            if set.rows.contains(&r) && c < k {
                forbidden[(r - set.rows.start) * k + c] = true;
            }
        }
        RowRules {
            fixed,
            forbidden,
            classes: k,
        }
    }

    /// Whether local row `r` may take class `c`.
    #[inline]
    pub fn allowed(&self, r: usize, c: usize) -> bool {
        match self.fixed[r] {
            Some(f) => f == c,
            None => !self.forbidden[r * self.classes + c],
        }
    }
}

pub fn validate(set: &VideoConstraintSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = set.classes;
    let in_rows = |r: usize| set.rows.contains(&r);

    let mut fixed: BTreeMap<usize, usize> = BTreeMap::new();
    for &(r, c) in &set.fixed_one {
        if !in_rows(r) {
            out.push(Violation::RowOutOfRange { row: r });
        }
        if c >= k {
            out.push(Violation::ClassOutOfRange { class: c });
        }
        if let Some(prev) = fixed.insert(r, c) {
            if prev != c {
                out.push(Violation::ConflictingFixedOne { row: r });
            }
        }
    }
    let mut zero_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut zeros = set.fixed_zero.clone();
    zeros.sort_unstable();
    zeros.dedup();
    for &(r, c) in &zeros {
        if !in_rows(r) {
            out.push(Violation::RowOutOfRange { row: r });
        }
        if c >= k {
            out.push(Violation::ClassOutOfRange { class: c });
        }
        if fixed.get(&r) == Some(&c) {
            out.push(Violation::FixedOneAndZero { row: r, class: c });
        }
        *zero_count.entry(r).or_default() += 1;
    }
    for (&r, &n) in &zero_count {
        if n >= k {
            out.push(Violation::AllClassesForbidden { row: r });
        }
    }
    for (i, bag) in set.bags.iter().enumerate() {
        if bag.rows.is_empty() {
            out.push(Violation::EmptyBag { bag: i });
            continue;
        }
        if bag.class == BACKGROUND {
            out.push(Violation::BackgroundBag { bag: i });
        }
        if bag.class >= k {
            out.push(Violation::ClassOutOfRange { class: bag.class });
            continue;
        }
        if let Some(&r) = bag.rows.iter().find(|r| !in_rows(**r)) {
            out.push(Violation::RowOutOfRange { row: r });
            continue;
        }
        let satisfiable = bag.rows.iter().any(|r| {
            fixed.get(r).map_or(true, |c| *c == bag.class) && zeros.binary_search(&(*r, bag.class)).is_err()
        });
        if !satisfiable {
            out.push(Violation::UnsatisfiableBag { bag: i });
        }
    }
    out
}

/// Checks one-hot `labels` (one class per row of the video, in row order)
/// against the equality and bag constraints.
pub fn is_feasible_integer(set: &VideoConstraintSet, labels: &[usize]) -> Result<bool> {
    if labels.len() != set.rows.len() {
        return Err(Error::DimensionMismatch {
            what: "video assignment",
            expected: set.rows.len(),
            got: labels.len(),
        });
    }
    let at = |r: usize| labels[r - set.rows.start];
    if labels.iter().any(|&c| c >= set.classes) {
        return Ok(false);
    }
    let ok = set.fixed_one.iter().all(|&(r, c)| at(r) == c)
        && set.fixed_zero.iter().all(|&(r, c)| at(r) != c)
        && set.bags.iter().all(|b| b.rows.iter().any(|&r| at(r) == b.class));
    Ok(ok)
}

/// Builds one constraint set per video, all at the same level.
pub fn build_constraints(
    dataset: &Dataset,
    level: SupervisionLevel,
    annotations: &[Annotation],
    params: &LevelParams,
) -> Result<Vec<VideoConstraintSet>> {
    let levels = alloc::vec![level; dataset.videos.len()];
    mix_levels(dataset, &levels, annotations, params)
}

/// Builds each video's set with its own level.
pub fn mix_levels(
    dataset: &Dataset,
    levels: &[SupervisionLevel],
    annotations: &[Annotation],
    params: &LevelParams,
) -> Result<Vec<VideoConstraintSet>> {
    if levels.len() != dataset.videos.len() {
        return Err(Error::DimensionMismatch {
            what: "per-video levels",
            expected: dataset.videos.len(),
            got: levels.len(),
        });
    }
    if params.unit == 0 || params.window == 0 || !(params.iou_gate > 0.0) {
        return Err(Error::invalid("level parameters must be positive"));
    }
    let mut per_video: Vec<Vec<&Annotation>> = alloc::vec![Vec::new(); dataset.videos.len()];
    for a in annotations {
        let slot = per_video
            .get_mut(a.video)
            .ok_or_else(|| Error::invalid(format!("annotation {} refers to an unknown video", a.instance_id)))?;
        if a.class == BACKGROUND || a.class > dataset.num_actions {
            return Err(Error::UnknownClass(a.class));
        }
        slot.push(a);
    }
    levels
        .iter()
        .enumerate()
        .map(|(v, &level)| {
            let ctx = Ctx {
                ds: dataset,
                video: v,
                anns: &per_video[v],
                params,
                level,
            };
            ctx.build()
        })
        .collect()
}

struct Ctx<'a> {
    ds: &'a Dataset,
    video: usize,
    anns: &'a [&'a Annotation],
    params: &'a LevelParams,
    level: SupervisionLevel,
}

struct Builder {
    set: VideoConstraintSet,
    fixed: BTreeMap<usize, usize>,
}

impl Builder {
    fn fix(&mut self, row: usize, class: usize, video: &str) -> Result<()> {
        match self.fixed.insert(row, class) {
            Some(prev) if prev != class => Err(Error::Infeasible {
                video: video.to_string(),
                detail: format!("row {row} fixed to both {prev} and {class}"),
            }),
            _ => Ok(()),
        }
    }

    fn finish(mut self) -> VideoConstraintSet {
        self.set.fixed_one = self.fixed.into_iter().collect();
        self.set.canonicalize();
        self.set
    }
}

impl<'a> Ctx<'a> {
    fn video_id(&self) -> &str {
        &self.ds.videos[self.video].id
    }

    fn rows(&self) -> Range<usize> {
        self.ds.video_rows(self.video)
    }

    fn missing(&self, a: &Annotation, field: &'static str) -> Error {
        Error::MissingAnnotation {
            level: self.level.to_string(),
            instance: a.instance_id.clone(),
            field,
        }
    }

    fn span_of(&self, a: &Annotation) -> Result<FrameSpan> {
        a.span.filter(|s| !s.is_empty()).ok_or_else(|| self.missing(a, "interval"))
    }

    fn present_classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.anns.iter().map(|a| a.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    fn absent_zeros(&self, b: &mut Builder) {
        let present = self.present_classes();
        for r in self.rows() {
            for c in 1..=self.ds.num_actions {
                if present.binary_search(&c).is_err() {
                    b.set.fixed_zero.push((r, c));
                }
            }
        }
    }

    fn rows_overlapping(&self, span: &FrameSpan) -> Vec<usize> {
        self.rows()
            .filter(|&r| self.ds.tracklets[r].span.overlaps(span))
            .collect()
    }

    fn unit_bags(&self, b: &mut Builder, a: &Annotation, span: &FrameSpan) -> Result<()> {
        for unit in span.units(self.params.unit) {
            let rows = self.rows_overlapping(&unit);
            if rows.is_empty() {
                return Err(Error::EmptyBag {
                    video: self.video_id().to_string(),
                    instance: a.instance_id.clone(),
                });
            }
            b.set.bags.push(Bag { class: a.class, rows });
        }
        Ok(())
    }

    /// Candidate interval of `window` frames centered on `point`, clipped to
    /// the video.
    fn window(&self, point: u32) -> FrameSpan {
        let frames = self.ds.videos[self.video].frames;
        let half = self.params.window / 2;
        let start = point.saturating_sub(half);
        let end = (point + (self.params.window - half)).min(frames);
        FrameSpan { start, end }
    }

    fn point_of(&self, a: &Annotation) -> Result<u32> {
        let p = a.point.ok_or_else(|| self.missing(a, "point"))?;
        if p >= self.ds.videos[self.video].frames {
            return Err(Error::invalid(format!(
                "temporal point of instance {} is past the end of the video",
                a.instance_id
            )));
        }
        Ok(p)
    }

    fn new_builder(&self) -> Builder {
        Builder {
            set: VideoConstraintSet::unconstrained(self.video, self.rows(), self.ds.num_classes()),
            fixed: BTreeMap::new(),
        }
    }

    fn build(&self) -> Result<VideoConstraintSet> {
        let mut b = self.new_builder();
        match self.level {
            SupervisionLevel::VideoLevel => self.video_level(&mut b),
            SupervisionLevel::ShotLevel => self.shot_level(&mut b)?,
            SupervisionLevel::TemporalPoint => self.temporal_point(&mut b)?,
            SupervisionLevel::OneBox => self.one_box(&mut b)?,
            SupervisionLevel::Temporal => self.temporal(&mut b)?,
            SupervisionLevel::TemporalBoxes(k) => self.temporal_boxes(&mut b, k)?,
            SupervisionLevel::SpatialPoints => self.spatial_points(&mut b)?,
            SupervisionLevel::Full => self.full(&mut b)?,
        }
        Ok(b.finish())
    }

    fn video_level(&self, b: &mut Builder) {
        let all: Vec<usize> = self.rows().collect();
        for class in self.present_classes() {
            if !all.is_empty() {
                b.set.bags.push(Bag {
                    class,
                    rows: all.clone(),
                });
            }
        }
        self.absent_zeros(b);
    }

    fn shot_level(&self, b: &mut Builder) -> Result<()> {
        let shots = self.ds.videos[self.video].shot_spans();
        let mut shot_classes: Vec<Vec<usize>> = alloc::vec![Vec::new(); shots.len()];
        for a in self.anns {
            let span = match (a.span, a.point) {
                (Some(s), _) => s,
                (None, Some(p)) => FrameSpan { start: p, end: p + 1 },
                _ => return Err(self.missing(a, "interval")),
            };
            for (i, shot) in shots.iter().enumerate() {
                if shot.overlaps(&span) {
                    shot_classes[i].push(a.class);
                }
            }
        }
        for c in &mut shot_classes {
            c.sort_unstable();
            c.dedup();
        }
        for (i, shot) in shots.iter().enumerate() {
            let rows = self.rows_overlapping(shot);
            for &class in &shot_classes[i] {
                if rows.is_empty() {
                    let inst = self
                        .anns
                        .iter()
                        .find(|a| a.class == class)
                        .map_or_else(String::new, |a| a.instance_id.clone());
                    return Err(Error::EmptyBag {
                        video: self.video_id().to_string(),
                        instance: inst,
                    });
                }
                b.set.bags.push(Bag {
                    class,
                    rows: rows.clone(),
                });
            }
        }
        for r in self.rows() {
            let span = self.ds.tracklets[r].span;
            let mut allowed: Vec<usize> = shots
                .iter()
                .enumerate()
                .filter(|(_, s)| s.overlaps(&span))
                .flat_map(|(i, _)| shot_classes[i].iter().copied())
                .collect();
            allowed.sort_unstable();
            for c in 1..=self.ds.num_actions {
                if allowed.binary_search(&c).is_err() {
                    b.set.fixed_zero.push((r, c));
                }
            }
        }
        Ok(())
    }

    fn temporal_point(&self, b: &mut Builder) -> Result<()> {
        for a in self.anns {
            let w = self.window(self.point_of(a)?);
            self.unit_bags(b, a, &w)?;
        }
        self.absent_zeros(b);
        Ok(())
    }

    fn one_box(&self, b: &mut Builder) -> Result<()> {
        let mut gated = Vec::with_capacity(self.anns.len());
        for a in self.anns {
            let p = self.point_of(a)?;
            let bbox = a.point_box.ok_or_else(|| self.missing(a, "point_box"))?;
            let w = self.window(p);
            self.unit_bags(b, a, &w)?;
            gated.push(GatedInstance {
                class: a.class,
                region: w,
                order: a.span.map_or(p, |s| s.start),
                keyframes: alloc::vec![(p, bbox)],
            });
        }
        self.keyframe_fixing(b, &gated)?;
        self.absent_zeros(b);
        Ok(())
    }

    fn temporal(&self, b: &mut Builder) -> Result<()> {
        let mut spans = Vec::with_capacity(self.anns.len());
        for a in self.anns {
            let span = self.span_of(a)?;
            self.unit_bags(b, a, &span)?;
            spans.push(span);
        }
        for r in self.rows() {
            let t = self.ds.tracklets[r].span;
            if !spans.iter().any(|s| s.overlaps(&t)) {
                b.fix(r, BACKGROUND, self.video_id())?;
            }
        }
        self.absent_zeros(b);
        Ok(())
    }

    fn temporal_boxes(&self, b: &mut Builder, k: usize) -> Result<()> {
        self.temporal(b)?;
        let mut gated = Vec::with_capacity(self.anns.len());
        for a in self.anns {
            if a.keyframes.len() < k {
                return Err(self.missing(a, "keyframes"));
            }
            let span = self.span_of(a)?;
            gated.push(GatedInstance {
                class: a.class,
                region: span,
                order: span.start,
                keyframes: a.keyframes[..k].iter().map(|kf| (kf.frame, kf.bbox)).collect(),
            });
        }
        self.keyframe_fixing(b, &gated)
    }

    /// Matches tracks to annotated boxes. A track that overlaps some
    /// annotated frame but matches no instance (IoU below the gate) is fixed
    /// to background; otherwise its tracklets lying inside a matched
    /// instance's region are fixed to the best-matching instance's class.
    /// The match score of a track is the minimum IoU over the instance's
    /// keyframes, missing boxes counting as 0.
    fn keyframe_fixing(&self, b: &mut Builder, gated: &[GatedInstance]) -> Result<()> {
        let gate = self.params.iou_gate;
        for t in self.ds.video_tracks(self.video) {
            let track = &self.ds.tracks[t];
            let mut covered = false;
            let mut matches: Vec<(usize, f64)> = Vec::new();
            for (i, g) in gated.iter().enumerate() {
                if !g.keyframes.iter().any(|(f, _)| track.span().contains(*f)) {
                    continue;
                }
                covered = true;
                let score = g
                    .keyframes
                    .iter()
                    .map(|(f, bb)| track.box_at(*f).map_or(0.0, |tb| tb.iou(bb)))
                    .fold(f64::INFINITY, f64::min);
                if score >= gate {
                    matches.push((i, score));
                }
            }
            if !covered {
                continue;
            }
            for r in self.ds.track_rows(t) {
                if matches.is_empty() {
                    b.fix(r, BACKGROUND, self.video_id())?;
                    continue;
                }
                let span = self.ds.tracklets[r].span;
                let best = matches
                    .iter()
                    .filter(|(i, _)| gated[*i].region.covers(&span))
                    .fold(None::<(usize, f64)>, |best, &(i, s)| match best {
                        Some((j, bs)) if !better(s, gated[i].order, i, bs, gated[j].order, j) => Some((j, bs)),
                        _ => Some((i, s)),
                    });
                if let Some((i, _)) = best {
                    b.fix(r, gated[i].class, self.video_id())?;
                }
            }
        }
        Ok(())
    }

    fn full(&self, b: &mut Builder) -> Result<()> {
        for a in self.anns {
            self.span_of(a)?;
            if a.boxes.is_none() {
                return Err(self.missing(a, "boxes"));
            }
        }
        for r in self.rows() {
            let tl = self.ds.tracklets[r];
            let track = &self.ds.tracks[tl.track];
            let mut best: Option<(usize, f64)> = None;
            for (i, a) in self.anns.iter().enumerate() {
                let mut sum = 0.0;
                for f in tl.span.frames() {
                    if let (Some(tb), Some(gb)) = (track.box_at(f), a.box_at(f)) {
                        sum += tb.iou(gb);
                    }
                }
                let iou = sum / tl.span.len() as f64;
                if iou < self.params.iou_gate {
                    continue;
                }
                best = match best {
                    Some((j, s)) if !better(iou, self.order(a), i, s, self.order(self.anns[j]), j) => Some((j, s)),
                    _ => Some((i, iou)),
                };
            }
            let class = best.map_or(BACKGROUND, |(i, _)| self.anns[i].class);
            b.fix(r, class, self.video_id())?;
        }
        Ok(())
    }

    fn spatial_points(&self, b: &mut Builder) -> Result<()> {
        let mut points: Vec<Vec<(u32, f64, f64)>> = Vec::with_capacity(self.anns.len());
        for a in self.anns {
            let pts: Vec<(u32, f64, f64)> = match (&a.boxes, a.span) {
                (Some(boxes), Some(span)) => span
                    .frames()
                    .zip(boxes)
                    .map(|(f, bb)| {
                        let (x, y) = bb.center();
                        (f, x, y)
                    })
                    .collect(),
                _ if !a.keyframes.is_empty() => a
                    .keyframes
                    .iter()
                    .map(|k| {
                        let (x, y) = k.bbox.center();
                        (k.frame, x, y)
                    })
                    .collect(),
                _ => return Err(self.missing(a, "boxes")),
            };
            points.push(pts);
        }
        for r in self.rows() {
            let tl = self.ds.tracklets[r];
            let track = &self.ds.tracks[tl.track];
            let mut best: Option<(usize, f64)> = None;
            for (i, pts) in points.iter().enumerate() {
                let inside: Vec<&(u32, f64, f64)> = pts.iter().filter(|p| tl.span.contains(p.0)).collect();
                if inside.is_empty() {
                    continue;
                }
                let mut dist = 0.0;
                let mut all_in = true;
                for &&(f, x, y) in &inside {
                    let Some(tb) = track.box_at(f) else {
                        all_in = false;
                        break;
                    };
                    if !tb.contains(x, y) {
                        all_in = false;
                        break;
                    }
                    let (cx, cy) = tb.center();
                    dist += libm::sqrt((cx - x) * (cx - x) + (cy - y) * (cy - y));
                }
                if !all_in {
                    continue;
                }
                dist /= inside.len() as f64;
                let a = self.anns[i];
                // lower distance wins, so compare negated distances
                best = match best {
                    Some((j, d)) if !better(-dist, self.order(a), i, -d, self.order(self.anns[j]), j) => Some((j, d)),
                    _ => Some((i, dist)),
                };
            }
            let class = best.map_or(BACKGROUND, |(i, _)| self.anns[i].class);
            b.fix(r, class, self.video_id())?;
        }
        Ok(())
    }

    fn order(&self, a: &Annotation) -> u32 {
        a.span.map(|s| s.start).or(a.point).unwrap_or(0)
    }
}

struct GatedInstance {
    class: usize,
    region: FrameSpan,
    order: u32,
    keyframes: Vec<(u32, BoundingBox)>,
}

/// Higher score wins; ties go to the earlier instance start, then the lower
/// index.
fn better(score: f64, start: u32, idx: usize, best_score: f64, best_start: u32, best_idx: usize) -> bool {
    if score != best_score {
        return score > best_score;
    }
    (start, idx) < (best_start, best_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Track, Video};
    use alloc::vec;

    fn bb(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 20.0).unwrap()
    }

    fn track(video: usize, id: &str, frames: u32, x: f64) -> Track {
        Track::from_boxes(video, id, 0, vec![bb(x); frames as usize]).unwrap()
    }

    fn annotation(id: &str, class: usize, span: FrameSpan, x: f64) -> Annotation {
        Annotation {
            instance_id: id.into(),
            video: 0,
            class,
            span: Some(span),
            point: Some(span.start + span.len() / 2),
            point_box: Some(bb(x)),
            keyframes: span.frames().step_by(4).take(3).map(|f| Keyframe { frame: f, bbox: bb(x) }).collect(),
            boxes: Some(vec![bb(x); span.len() as usize]),
        }
    }

    #[test]
    fn video_level_counts() {
        // 30 tracklets: 3 tracks of 80 frames
        let videos = vec![Video::new("v", 80)];
        let tracks = (0..3).map(|i| track(0, "t", 80, 50.0 * i as f64)).collect();
        let ds = Dataset::new(videos, tracks, vec![], 10, 8).unwrap();
        assert_eq!(ds.num_rows(), 30);
        let anns = vec![
            annotation("a", 2, FrameSpan { start: 0, end: 16 }, 0.0),
            annotation("b", 5, FrameSpan { start: 8, end: 40 }, 50.0),
        ];
        let sets = build_constraints(&ds, SupervisionLevel::VideoLevel, &anns, &LevelParams::default()).unwrap();
        let s = &sets[0];
        assert_eq!(s.bags.len(), 2);
        assert!(s.bags.iter().all(|b| b.rows.len() == 30));
        assert_eq!(s.fixed_zero.len(), 30 * 8);
        assert!(s.fixed_zero.iter().all(|&(_, c)| c != BACKGROUND && c != 2 && c != 5));
        assert!(validate(s).is_empty());
    }

    #[test]
    fn temporal_bags_per_unit() {
        let videos = vec![Video::new("v", 96)];
        let ds = Dataset::new(videos, vec![track(0, "t", 96, 0.0)], vec![], 3, 8).unwrap();
        let anns = vec![annotation("a", 1, FrameSpan { start: 0, end: 48 }, 0.0)];
        let s = &build_constraints(&ds, SupervisionLevel::Temporal, &anns, &LevelParams::default()).unwrap()[0];
        assert_eq!(s.bags.len(), 6);
        assert!(s.bags.iter().all(|b| b.rows.len() == 1));
        // tracklets 6..12 lie after the interval
        assert_eq!(s.fixed_one, (6..12).map(|r| (r, BACKGROUND)).collect::<Vec<_>>());
    }

    #[test]
    fn full_follows_ground_truth() {
        let videos = vec![Video::new("v", 64)];
        let tracks = vec![track(0, "gt", 64, 0.0), track(0, "other", 64, 100.0)];
        let ds = Dataset::new(videos, tracks, vec![], 3, 8).unwrap();
        let anns = vec![annotation("a", 3, FrameSpan { start: 0, end: 64 }, 0.0)];
        let s = &build_constraints(&ds, SupervisionLevel::Full, &anns, &LevelParams::default()).unwrap()[0];
        for &(r, c) in &s.fixed_one {
            let expect = if ds.tracklets[r].track == 0 { 3 } else { BACKGROUND };
            assert_eq!(c, expect);
        }
        assert_eq!(s.fixed_rows(), 16);
    }

    #[test]
    fn temporal_point_window_is_clipped() {
        let videos = vec![Video::new("v", 40)];
        let ds = Dataset::new(videos, vec![track(0, "t", 40, 0.0)], vec![], 2, 8).unwrap();
        let mut a = annotation("a", 1, FrameSpan { start: 0, end: 20 }, 0.0);
        a.point = Some(5);
        let s = &build_constraints(&ds, SupervisionLevel::TemporalPoint, &[a], &LevelParams::default()).unwrap()[0];
        // window [0, 30) -> 4 units
        assert_eq!(s.bags.len(), 4);
    }

    #[test]
    fn one_box_gates_tracks() {
        let videos = vec![Video::new("v", 64)];
        let tracks = vec![track(0, "gt", 64, 0.0), track(0, "far", 64, 100.0)];
        let ds = Dataset::new(videos, tracks, vec![], 2, 8).unwrap();
        let mut a = annotation("a", 2, FrameSpan { start: 8, end: 56 }, 0.0);
        a.point = Some(32);
        let s = &build_constraints(&ds, SupervisionLevel::OneBox, &[a], &LevelParams::default()).unwrap()[0];
        let fixed: BTreeMap<usize, usize> = s.fixed_one.iter().copied().collect();
        // the distant track is background everywhere
        for r in ds.track_rows(1) {
            assert_eq!(fixed.get(&r), Some(&BACKGROUND));
        }
        // window [7, 57): tracklets [8,16)..[48,56) of the matching track are fixed
        for r in ds.track_rows(0) {
            let span = ds.tracklets[r].span;
            let inside = span.start >= 7 && span.end <= 57;
            assert_eq!(fixed.get(&r), if inside { Some(&2) } else { None });
        }
        assert!(validate(s).is_empty());
    }

    #[test]
    fn missing_fields_are_reported() {
        let videos = vec![Video::new("v", 16)];
        let ds = Dataset::new(videos, vec![track(0, "t", 16, 0.0)], vec![], 2, 8).unwrap();
        let mut a = annotation("a", 1, FrameSpan { start: 0, end: 8 }, 0.0);
        a.point = None;
        let err = build_constraints(&ds, SupervisionLevel::TemporalPoint, &[a.clone()], &LevelParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingAnnotation { field: "point", .. }));
        a.boxes = None;
        assert!(build_constraints(&ds, SupervisionLevel::Full, &[a.clone()], &LevelParams::default()).is_err());
        let err = build_constraints(&ds, SupervisionLevel::TemporalBoxes(5), &[a], &LevelParams::default()).unwrap_err();
        assert!(matches!(err, Error::MissingAnnotation { field: "keyframes", .. }));
    }

    #[test]
    fn empty_bag_is_an_error() {
        let videos = vec![Video::new("v", 100)];
        let t = Track::from_boxes(0, "t", 0, vec![bb(0.0); 16]).unwrap();
        let ds = Dataset::new(videos, vec![t], vec![], 2, 8).unwrap();
        let a = annotation("late", 1, FrameSpan { start: 60, end: 80 }, 0.0);
        let err = build_constraints(&ds, SupervisionLevel::Temporal, &[a], &LevelParams::default()).unwrap_err();
        assert_eq!(err, Error::EmptyBag { video: "v".into(), instance: "late".into() });
    }

    #[test]
    fn shot_level_uses_boundaries() {
        let mut v = Video::new("v", 64);
        v.shots = vec![32];
        let ds = Dataset::new(vec![v], vec![track(0, "t", 64, 0.0)], vec![], 3, 8).unwrap();
        let a = annotation("a", 2, FrameSpan { start: 0, end: 16 }, 0.0);
        let s = &build_constraints(&ds, SupervisionLevel::ShotLevel, &[a], &LevelParams::default()).unwrap()[0];
        assert_eq!(s.bags.len(), 1);
        assert_eq!(s.bags[0].rows, vec![0, 1, 2, 3]);
        // second-shot tracklets may not take class 2
        assert!(s.fixed_zero.contains(&(4, 2)));
        assert!(!s.fixed_zero.contains(&(0, 2)));
    }

    #[test]
    fn spatial_points_pick_the_containing_track() {
        let videos = vec![Video::new("v", 32)];
        let tracks = vec![track(0, "gt", 32, 0.0), track(0, "far", 32, 100.0)];
        let ds = Dataset::new(videos, tracks, vec![], 2, 8).unwrap();
        let a = annotation("a", 1, FrameSpan { start: 0, end: 16 }, 2.0);
        let s = &build_constraints(&ds, SupervisionLevel::SpatialPoints, &[a], &LevelParams::default()).unwrap()[0];
        let fixed: BTreeMap<usize, usize> = s.fixed_one.iter().copied().collect();
        assert_eq!(fixed[&0], 1);
        assert_eq!(fixed[&1], 1);
        assert_eq!(fixed[&2], BACKGROUND);
        assert_eq!(fixed[&4], BACKGROUND);
    }

    #[test]
    fn validate_examples() {
        let empty = VideoConstraintSet::unconstrained(0, 0..3, 3);
        assert!(validate(&empty).is_empty());

        let mut s = VideoConstraintSet::unconstrained(0, 0..3, 3);
        s.fixed_one = vec![(0, 0), (1, 0)];
        s.bags = vec![Bag { class: 2, rows: vec![0, 1] }];
        assert_eq!(validate(&s), vec![Violation::UnsatisfiableBag { bag: 0 }]);

        let mut s = VideoConstraintSet::unconstrained(0, 0..3, 3);
        s.fixed_one = vec![(1, 2)];
        s.fixed_zero = vec![(1, 2)];
        assert!(validate(&s).contains(&Violation::FixedOneAndZero { row: 1, class: 2 }));

        let mut s = VideoConstraintSet::unconstrained(0, 0..2, 2);
        s.fixed_zero = vec![(0, 0), (0, 1)];
        s.bags = vec![Bag { class: 0, rows: vec![1] }, Bag { class: 1, rows: vec![] }];
        let v = validate(&s);
        assert!(v.contains(&Violation::AllClassesForbidden { row: 0 }));
        assert!(v.contains(&Violation::BackgroundBag { bag: 0 }));
        assert!(v.contains(&Violation::EmptyBag { bag: 1 }));
    }

    #[test]
    fn feasibility_examples() {
        let free = VideoConstraintSet::unconstrained(0, 0..2, 3);
        assert!(is_feasible_integer(&free, &[2, 0]).unwrap());
        let mut s = free.clone();
        s.bags = vec![Bag { class: 2, rows: vec![0, 1] }];
        assert!(!is_feasible_integer(&s, &[0, 0]).unwrap());
        assert!(is_feasible_integer(&s, &[0, 2]).unwrap());
        assert!(is_feasible_integer(&s, &[0]).is_err());
    }

    // brute-force reading of the row-sum, equality and bag constraints
    fn oracle(set: &VideoConstraintSet, labels: &[usize]) -> bool {
        let k = set.classes;
        let n = labels.len();
        let mut y = vec![vec![0u8; k]; n];
        for (r, &c) in labels.iter().enumerate() {
            y[r][c] = 1;
        }
        let rows_ok = y.iter().all(|row| row.iter().map(|&v| v as u32).sum::<u32>() == 1);
        let ones = set.fixed_one.iter().all(|&(r, c)| y[r][c] == 1);
        let zeros = set.fixed_zero.iter().all(|&(r, c)| y[r][c] == 0);
        let bags = set
            .bags
            .iter()
            .all(|b| b.rows.iter().map(|&r| y[r][b.class] as u32).sum::<u32>() >= 1);
        rows_ok && ones && zeros && bags
    }

    #[test]
    fn feasibility_matches_enumeration() {
        let mut s = VideoConstraintSet::unconstrained(0, 0..2, 3);
        s.bags = vec![Bag { class: 1, rows: vec![0, 1] }];
        s.fixed_zero = vec![(1, 2)];
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(is_feasible_integer(&s, &[a, b]).unwrap(), oracle(&s, &[a, b]));
            }
        }
    }

    #[test]
    fn level_tags_roundtrip() {
        for l in [
            SupervisionLevel::VideoLevel,
            SupervisionLevel::ShotLevel,
            SupervisionLevel::TemporalPoint,
            SupervisionLevel::OneBox,
            SupervisionLevel::Temporal,
            SupervisionLevel::TemporalBoxes(3),
            SupervisionLevel::SpatialPoints,
            SupervisionLevel::Full,
        ] {
            assert_eq!(l.to_string().parse::<SupervisionLevel>().unwrap(), l);
        }
        assert!("temporal-0bb".parse::<SupervisionLevel>().is_err());
        assert!("bogus".parse::<SupervisionLevel>().is_err());
    }
}
