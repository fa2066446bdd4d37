//! Videos, person tracks, tracklets and ground-truth action instances.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, BoxedSegment, FrameSpan};

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: u32,
    /// Frames at which a new shot starts, strictly increasing, excluding 0.
    pub shots: Vec<u32>,
}

impl Video {
    pub fn new(id: impl Into<String>, frames: u32) -> Self {
        Video {
            id: id.into(),
            frames,
            shots: Vec::new(),
        }
    }

    pub fn span(&self) -> FrameSpan {
        FrameSpan {
            start: 0,
            end: self.frames,
        }
    }

    /// Shot intervals; a video without boundaries is a single shot.
    pub fn shot_spans(&self) -> Vec<FrameSpan> {
        let mut out = Vec::with_capacity(self.shots.len() + 1);
        let mut start = 0;
        for &b in &self.shots {
            if b > start && b < self.frames {
                out.push(FrameSpan { start, end: b });
                start = b;
            }
        }
        out.push(FrameSpan {
            start,
            end: self.frames,
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BoundingBox,
    pub descriptor_index: Option<usize>,
}

/// A person track: one box per frame over consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub video: usize,
    pub id: String,
    start: u32,
    boxes: Vec<BoundingBox>,
    descriptors: Option<Vec<usize>>,
}

impl Track {
    pub fn new(video: usize, id: impl Into<String>, detections: &[Detection]) -> Result<Self> {
        let id = id.into();
        let first = detections
            .first()
            .ok_or_else(|| Error::invalid(alloc::format!("track {id} has no detections")))?;
        for (i, w) in detections.windows(2).enumerate() {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::invalid(alloc::format!(
                    "track {id}: frames are not consecutive at position {}",
                    i + 1
                )));
            }
        }
        let with_desc = detections.iter().filter(|d| d.descriptor_index.is_some()).count();
        let descriptors = if with_desc == 0 {
            None
        } else if with_desc == detections.len() {
            Some(detections.iter().map(|d| d.descriptor_index.unwrap_or(0)).collect())
        } else {
            return Err(Error::invalid(alloc::format!(
                "track {id}: descriptor indices given for only some detections"
            )));
        };
        Ok(Track {
            video,
            id,
            start: first.frame,
            boxes: detections.iter().map(|d| d.bbox).collect(),
            descriptors,
        })
    }

    /// Builds a track from a start frame and one box per frame.
    pub fn from_boxes(video: usize, id: impl Into<String>, start: u32, boxes: Vec<BoundingBox>) -> Result<Self> {
        let id = id.into();
        if boxes.is_empty() {
            return Err(Error::invalid(alloc::format!("track {id} has no detections")));
        }
        Ok(Track {
            video,
            id,
            start,
            boxes,
            descriptors: None,
        })
    }

    pub fn span(&self) -> FrameSpan {
        FrameSpan {
            start: self.start,
            end: self.start + self.boxes.len() as u32,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn descriptor_indices(&self) -> Option<&[usize]> {
        self.descriptors.as_deref()
    }

    pub fn box_at(&self, frame: u32) -> Option<&BoundingBox> {
        if self.span().contains(frame) {
            self.boxes.get((frame - self.start) as usize)
        } else {
            None
        }
    }

    pub fn segment(&self) -> BoxedSegment<'_> {
        BoxedSegment {
            span: self.span(),
            boxes: &self.boxes,
        }
    }

    /// The part of the track inside `span`, if any.
    pub fn sub_segment(&self, span: &FrameSpan) -> Option<BoxedSegment<'_>> {
        let s = self.span().intersect(span)?;
        let lo = (s.start - self.start) as usize;
        let hi = (s.end - self.start) as usize;
        Some(BoxedSegment {
            span: s,
            boxes: &self.boxes[lo..hi],
        })
    }

    pub fn detections(&self) -> impl Iterator<Item = Detection> + '_ {
        self.boxes.iter().enumerate().map(move |(i, b)| Detection {
            frame: self.start + i as u32,
            bbox: *b,
            descriptor_index: self.descriptors.as_ref().map(|d| d[i]),
        })
    }

    pub fn scale_boxes(&mut self, factor: f64) {
        for b in &mut self.boxes {
            *b = b.scaled(factor);
        }
    }
}

/// Elementary segment of a track; one row of the assignment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tracklet {
    pub track: usize,
    pub index: usize,
    pub span: FrameSpan,
    pub row: usize,
}

/// Cuts `track` into consecutive tracklets of `unit` frames. A trailing
/// remainder becomes a final, shorter tracklet. Rows are numbered from
/// `first_row`.
pub fn subdivide_track(track_index: usize, track: &Track, first_row: usize, unit: u32) -> Vec<Tracklet> {
    track
        .span()
        .units(unit)
        .enumerate()
        .map(|(i, span)| Tracklet {
            track: track_index,
            index: i,
            span,
            row: first_row + i,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub frame: u32,
    pub bbox: BoundingBox,
}

/// A ground-truth action occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionInstance {
    pub id: String,
    pub video: usize,
    /// Action class in `1..=num_actions`; 0 is background.
    pub class: usize,
    pub span: FrameSpan,
    pub keyframes: Vec<Keyframe>,
    /// Optional dense tube: one box per frame of `span`.
    pub boxes: Option<Vec<BoundingBox>>,
}

impl ActionInstance {
    pub fn segment(&self) -> Option<BoxedSegment<'_>> {
        self.boxes.as_ref().map(|b| BoxedSegment {
            span: self.span,
            boxes: b,
        })
    }

    pub fn box_at(&self, frame: u32) -> Option<&BoundingBox> {
        if !self.span.contains(frame) {
            return None;
        }
        self.boxes.as_ref().and_then(|b| b.get((frame - self.span.start) as usize))
    }

    pub fn keyframe_pairs(&self) -> Vec<(u32, BoundingBox)> {
        self.keyframes.iter().map(|k| (k.frame, k.bbox)).collect()
    }

    fn validate(&self, num_videos: usize, num_actions: usize) -> Result<()> {
        if self.video >= num_videos {
            return Err(Error::invalid(alloc::format!(
                "instance {} refers to an unknown video",
                self.id
            )));
        }
        if self.class == 0 || self.class > num_actions {
            return Err(Error::UnknownClass(self.class));
        }
        if self.span.is_empty() {
            return Err(Error::invalid(alloc::format!("instance {} has an empty interval", self.id)));
        }
        if let Some(k) = self.keyframes.iter().find(|k| !self.span.contains(k.frame)) {
            return Err(Error::invalid(alloc::format!(
                "instance {}: keyframe {} lies outside its interval",
                self.id, k.frame
            )));
        }
        if let Some(b) = &self.boxes {
            if b.len() != self.span.len() as usize {
                return Err(Error::DimensionMismatch {
                    what: "instance boxes",
                    expected: self.span.len() as usize,
                    got: b.len(),
                });
            }
        }
        Ok(())
    }
}

/// A validated collection of videos, tracks, tracklets and ground truth.
///
/// Tracks are stored grouped by video, so each video owns a contiguous block
/// of tracklet rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Video>,
    pub tracks: Vec<Track>,
    pub tracklets: Vec<Tracklet>,
    pub instances: Vec<ActionInstance>,
    pub num_actions: usize,
    unit: u32,
    video_tracks: Vec<Range<usize>>,
    video_rows: Vec<Range<usize>>,
    track_rows: Vec<Range<usize>>,
}

impl Dataset {
    pub fn new(
        videos: Vec<Video>,
        mut tracks: Vec<Track>,
        instances: Vec<ActionInstance>,
        num_actions: usize,
        unit: u32,
    ) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Empty("dataset has no videos"));
        }
        if unit == 0 {
            return Err(Error::invalid("tracklet unit must be positive"));
        }
        for t in &tracks {
            let v = videos.get(t.video).ok_or_else(|| {
                Error::invalid(alloc::format!("track {} refers to an unknown video", t.id))
            })?;
            if t.span().end > v.frames {
                return Err(Error::invalid(alloc::format!(
                    "track {} runs past the end of video {}",
                    t.id, v.id
                )));
            }
        }
        for inst in &instances {
            inst.validate(videos.len(), num_actions)?;
        }
        tracks.sort_by_key(|t| t.video);

        let mut tracklets = Vec::new();
        let mut video_tracks = Vec::with_capacity(videos.len());
        let mut video_rows = Vec::with_capacity(videos.len());
        let mut track_rows = Vec::with_capacity(tracks.len());
        let mut ti = 0;
        for v in 0..videos.len() {
            let (t0, r0) = (ti, tracklets.len());
            while ti < tracks.len() && tracks[ti].video == v {
                let first = tracklets.len();
                tracklets.extend(subdivide_track(ti, &tracks[ti], first, unit));
                track_rows.push(first..tracklets.len());
                ti += 1;
            }
            video_tracks.push(t0..ti);
            video_rows.push(r0..tracklets.len());
        }

        Ok(Dataset {
            videos,
            tracks,
            tracklets,
            instances,
            num_actions,
            unit,
            video_tracks,
            video_rows,
            track_rows,
        })
    }

    /// Number of tracklets, i.e. rows of the assignment matrix.
    pub fn num_rows(&self) -> usize {
        self.tracklets.len()
    }

    /// Label columns including background.
    pub fn num_classes(&self) -> usize {
        self.num_actions + 1
    }

    pub fn unit(&self) -> u32 {
        self.unit
    }

    pub fn video_rows(&self, video: usize) -> Range<usize> {
        self.video_rows[video].clone()
    }

    pub fn video_tracks(&self, video: usize) -> Range<usize> {
        self.video_tracks[video].clone()
    }

    pub fn track_rows(&self, track: usize) -> Range<usize> {
        self.track_rows[track].clone()
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.id == id)
    }

    pub fn video_instances(&self, video: usize) -> impl Iterator<Item = (usize, &ActionInstance)> {
        self.instances
            .iter()
            .enumerate()
            .filter(move |(_, i)| i.video == video)
    }

    /// Classes with at least one instance in the video, ascending.
    pub fn video_classes(&self, video: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.video_instances(video).map(|(_, i)| i.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Restricts the dataset to the listed videos (in the given order).
    /// Returns the new dataset and, for each new row, the row it came from.
    pub fn subset(&self, videos: &[usize]) -> Result<(Dataset, Vec<usize>)> {
        let mut remap = alloc::vec![usize::MAX; self.videos.len()];
        for (new, &old) in videos.iter().enumerate() {
            if old >= self.videos.len() {
                return Err(Error::invalid("subset refers to an unknown video"));
            }
            remap[old] = new;
        }
        let new_videos = videos.iter().map(|&v| self.videos[v].clone()).collect();
        let mut new_tracks = Vec::new();
        let mut rows = Vec::new();
        for &v in videos {
            for t in self.video_tracks(v) {
                let mut track = self.tracks[t].clone();
                track.video = remap[v];
                new_tracks.push(track);
                rows.extend(self.track_rows(t));
            }
        }
        let new_instances = self
            .instances
            .iter()
            .filter(|i| remap[i.video] != usize::MAX)
            .map(|i| ActionInstance {
                video: remap[i.video],
                ..i.clone()
            })
            .collect();
        let ds = Dataset::new(new_videos, new_tracks, new_instances, self.num_actions, self.unit)?;
        Ok((ds, rows))
    }

    pub fn scale_track_boxes(&mut self, factor: f64) {
        for t in &mut self.tracks {
            t.scale_boxes(factor);
        }
    }

    /// Mean per-frame spatial IoU between a tracklet and an instance tube;
    /// frames where the instance has no box contribute 0.
    pub fn tracklet_instance_iou(&self, row: usize, instance: &ActionInstance) -> f64 {
        let tl = &self.tracklets[row];
        let track = &self.tracks[tl.track];
        let mut sum = 0.0;
        for f in tl.span.frames() {
            if let (Some(a), Some(b)) = (track.box_at(f), instance.box_at(f)) {
                sum += a.iou(b);
            }
        }
        sum / tl.span.len().max(1) as f64
    }
}
