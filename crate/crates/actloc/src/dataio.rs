//! On-disk formats.
//!
//! * features and assignments: `DFC1` binary, a 24-byte little-endian header
//!   (magic, `u32` version 1, `u64` rows, `u64` dim) followed by row-major
//!   `f32` values;
//! * tracks, annotations, constraints and detections: JSON lines;
//! * classifier and report: one JSON document;
//! * solver trace: CSV.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use actloc_core::constraints::{Annotation, Bag, SupervisionLevel, VideoConstraintSet};
use actloc_core::inference::{DetectionRecord, ThresholdSet};
use actloc_core::linalg::Matrix;
use actloc_core::objective::Classifier;
use actloc_core::solver::TraceRow;
use actloc_core::{ActionInstance, BoundingBox, Dataset, Detection, FrameSpan, Keyframe, Track, Video, TRACKLET_FRAMES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DFC1";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;

/// Writes through a sibling temporary file so readers never see a partial
/// file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + m.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a header and returns `(rows, dim, payload bytes)`.
fn parse_header(header: &[u8; 24]) -> std::result::Result<(u64, u64, u64), String> {
    if &header[0..4] != FEATURE_MAGIC {
        return Err("bad magic, expected DFC1".into());
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let dim = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if rows == 0 || dim == 0 {
        return Err("rows and dim must be positive".into());
    }
    let payload = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or("rows × dim overflows")?;
    Ok((rows, dim, payload))
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    let header: &[u8; 24] = bytes
        .get(..24)
        .and_then(|h| h.try_into().ok())
        .ok_or("truncated header")?;
    let (rows, dim, payload) = parse_header(header)?;
    if bytes.len() as u64 - HEADER_LEN != payload {
        return Err(format!("payload is {} bytes, header says {payload}", bytes.len() as u64 - HEADER_LEN));
    }
    let data = bytes[24..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::new(rows as usize, dim as usize, data).map_err(|e| e.to_string())
}

pub fn save_features(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode_features(m))
}

/// Loads a `DFC1` file. The payload length is checked against the file
/// size before the matrix is allocated.
pub fn load_features(path: &Path) -> Result<Matrix> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut header = [0u8; 24];
    f.read_exact(&mut header)
        .map_err(|_| Error::format(path, "truncated header"))?;
    let (rows, dim, payload) = parse_header(&header).map_err(|m| Error::format(path, m))?;
    if len - HEADER_LEN != payload {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header says {payload}", len - HEADER_LEN),
        ));
    }
    let mut raw = vec![0u8; payload as usize];
    f.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::new(rows as usize, dim as usize, data)?)
}

fn box_array(b: &BoundingBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn array_box(a: [f64; 4]) -> actloc_core::Result<BoundingBox> {
    BoundingBox::new(a[0], a[1], a[2], a[3])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub frames: u32,
    #[serde(default)]
    pub shots: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_actions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub video_id: String,
    pub track_id: String,
    pub detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub video_id: String,
    pub instance_id: String,
    pub class_id: usize,
    pub interval: [u32; 2],
    #[serde(default)]
    pub keyframes: Vec<KeyframeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TrackFileRecord {
    Video(VideoRecord),
    Track(TrackRecord),
    Instance(InstanceRecord),
}

/// Reads JSON lines, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::format(path, e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn video_lookup(ds: &Dataset, id: &str, path: &Path) -> Result<usize> {
    ds.video_index(id)
        .ok_or_else(|| Error::format(path, format!("unknown video_id `{id}`")))
}

/// Builds a dataset from track-file records. `num_actions` comes from the
/// video records when present, otherwise from the largest class id.
pub fn dataset_from_records(records: Vec<TrackFileRecord>, path: &Path) -> Result<Dataset> {
    let mut videos = Vec::new();
    let mut declared: Option<usize> = None;
    let mut track_recs = Vec::new();
    let mut inst_recs = Vec::new();
    for r in records {
        match r {
            TrackFileRecord::Video(v) => {
                if let Some(n) = v.num_actions {
                    declared = Some(declared.map_or(n, |d| d.max(n)));
                }
                let mut video = Video::new(v.video_id, v.frames);
                video.shots = v.shots;
                videos.push(video);
            }
            TrackFileRecord::Track(t) => track_recs.push(t),
            TrackFileRecord::Instance(i) => inst_recs.push(i),
        }
    }
    if videos.is_empty() {
        return Err(Error::format(path, "no video records"));
    }
    let index = |id: &str| {
        videos
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| Error::format(path, format!("unknown video_id `{id}`")))
    };
    let mut tracks = Vec::with_capacity(track_recs.len());
    for t in track_recs {
        let video = index(&t.video_id)?;
        let dets = t
            .detections
            .iter()
            .map(|d| {
                Ok(Detection {
                    frame: d.frame,
                    bbox: array_box(d.bbox)?,
                    descriptor_index: d.descriptor,
                })
            })
            .collect::<actloc_core::Result<Vec<_>>>()?;
        tracks.push(Track::new(video, t.track_id, &dets)?);
    }
    let mut instances = Vec::with_capacity(inst_recs.len());
    for i in inst_recs {
        let video = index(&i.video_id)?;
        let keyframes = i
            .keyframes
            .iter()
            .map(|k| {
                Ok(Keyframe {
                    frame: k.frame,
                    bbox: array_box(k.bbox)?,
                })
            })
            .collect::<actloc_core::Result<Vec<_>>>()?;
        let boxes = i
            .boxes
            .map(|b| b.into_iter().map(array_box).collect::<actloc_core::Result<Vec<_>>>())
            .transpose()?;
        instances.push(ActionInstance {
            id: i.instance_id,
            video,
            class: i.class_id,
            span: FrameSpan::new(i.interval[0], i.interval[1])?,
            keyframes,
            boxes,
        });
    }
    let num_actions = declared.unwrap_or_else(|| instances.iter().map(|i| i.class).max().unwrap_or(0));
    Ok(Dataset::new(videos, tracks, instances, num_actions, TRACKLET_FRAMES)?)
}

pub fn dataset_records(ds: &Dataset) -> Vec<TrackFileRecord> {
    let mut out = Vec::new();
    for v in &ds.videos {
        out.push(TrackFileRecord::Video(VideoRecord {
            video_id: v.id.clone(),
            frames: v.frames,
            shots: v.shots.clone(),
            num_actions: Some(ds.num_actions),
        }));
    }
    for t in &ds.tracks {
        out.push(TrackFileRecord::Track(TrackRecord {
            video_id: ds.videos[t.video].id.clone(),
            track_id: t.id.clone(),
            detections: t
                .detections()
                .map(|d| DetectionEntry {
                    frame: d.frame,
                    bbox: box_array(&d.bbox),
                    descriptor: d.descriptor_index,
                })
                .collect(),
        }));
    }
    for i in &ds.instances {
        out.push(TrackFileRecord::Instance(InstanceRecord {
            video_id: ds.videos[i.video].id.clone(),
            instance_id: i.id.clone(),
            class_id: i.class,
            interval: [i.span.start, i.span.end],
            keyframes: i
                .keyframes
                .iter()
                .map(|k| KeyframeEntry {
                    frame: k.frame,
                    bbox: box_array(&k.bbox),
                })
                .collect(),
            boxes: i.boxes.as_ref().map(|b| b.iter().map(box_array).collect()),
        }));
    }
    out
}

pub fn load_tracks(path: &Path) -> Result<Dataset> {
    dataset_from_records(read_jsonl(path)?, path)
}

pub fn save_tracks(path: &Path, ds: &Dataset) -> Result<()> {
    write_jsonl(path, &dataset_records(ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub instance_id: String,
    pub class_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_box: Option<[f64; 4]>,
    #[serde(default)]
    pub keyframes: Vec<KeyframeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
}

pub fn load_annotations(path: &Path, ds: &Dataset) -> Result<Vec<Annotation>> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            Ok(Annotation {
                video: video_lookup(ds, &r.video_id, path)?,
                instance_id: r.instance_id,
                class: r.class_id,
                span: r.interval.map(|i| FrameSpan::new(i[0], i[1])).transpose()?,
                point: r.point,
                point_box: r.point_box.map(array_box).transpose()?,
                keyframes: r
                    .keyframes
                    .iter()
                    .map(|k| {
                        Ok(Keyframe {
                            frame: k.frame,
                            bbox: array_box(k.bbox)?,
                        })
                    })
                    .collect::<actloc_core::Result<Vec<_>>>()?,
                boxes: r
                    .boxes
                    .map(|b| b.into_iter().map(array_box).collect::<actloc_core::Result<Vec<_>>>())
                    .transpose()?,
            })
        })
        .collect()
}

pub fn save_annotations(path: &Path, ds: &Dataset, annotations: &[Annotation]) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .map(|a| AnnotationRecord {
            video_id: ds.videos[a.video].id.clone(),
            instance_id: a.instance_id.clone(),
            class_id: a.class,
            interval: a.span.map(|s| [s.start, s.end]),
            point: a.point,
            point_box: a.point_box.as_ref().map(box_array),
            keyframes: a
                .keyframes
                .iter()
                .map(|k| KeyframeEntry {
                    frame: k.frame,
                    bbox: box_array(&k.bbox),
                })
                .collect(),
            boxes: a.boxes.as_ref().map(|b| b.iter().map(box_array).collect()),
        })
        .collect();
    write_jsonl(path, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub class: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub video_id: String,
    pub level: String,
    pub rows: [usize; 2],
    pub classes: usize,
    pub fixed_one: Vec<[usize; 2]>,
    pub fixed_zero: Vec<[usize; 2]>,
    pub bags: Vec<BagRecord>,
}

pub fn save_constraints(path: &Path, ds: &Dataset, sets: &[VideoConstraintSet], levels: &[SupervisionLevel]) -> Result<()> {
    let records: Vec<ConstraintRecord> = sets
        .iter()
        .zip(levels)
        .map(|(s, l)| ConstraintRecord {
            video_id: ds.videos[s.video].id.clone(),
            level: l.to_string(),
            rows: [s.rows.start, s.rows.end],
            classes: s.classes,
            fixed_one: s.fixed_one.iter().map(|&(r, c)| [r, c]).collect(),
            fixed_zero: s.fixed_zero.iter().map(|&(r, c)| [r, c]).collect(),
            bags: s
                .bags
                .iter()
                .map(|b| BagRecord {
                    class: b.class,
                    rows: b.rows.clone(),
                })
                .collect(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Loads one set per video, in dataset order.
pub fn load_constraints(path: &Path, ds: &Dataset) -> Result<(Vec<VideoConstraintSet>, Vec<SupervisionLevel>)> {
    let records: Vec<ConstraintRecord> = read_jsonl(path)?;
    let mut slots: Vec<Option<(VideoConstraintSet, SupervisionLevel)>> = vec![None; ds.videos.len()];
    for r in records {
        let v = video_lookup(ds, &r.video_id, path)?;
        if r.rows[0] > r.rows[1] || (r.rows[0]..r.rows[1]) != ds.video_rows(v) {
            return Err(Error::format(path, format!("rows of video `{}` do not match the tracks", r.video_id)));
        }
        let level: SupervisionLevel = r.level.parse()?;
        let set = VideoConstraintSet {
            video: v,
            rows: r.rows[0]..r.rows[1],
            classes: r.classes,
            fixed_one: r.fixed_one.iter().map(|p| (p[0], p[1])).collect(),
            fixed_zero: r.fixed_zero.iter().map(|p| (p[0], p[1])).collect(),
            bags: r
                .bags
                .into_iter()
                .map(|b| Bag {
                    class: b.class,
                    rows: b.rows,
                })
                .collect(),
        };
        if let Some(v) = actloc_core::constraints::validate(&set).first() {
            return Err(Error::format(path, format!("video `{}`: {v}", r.video_id)));
        }
        slots[v] = Some((set, level));
    }
    let mut sets = Vec::with_capacity(slots.len());
    let mut levels = Vec::with_capacity(slots.len());
    for (v, s) in slots.into_iter().enumerate() {
        let (set, level) = s.ok_or_else(|| Error::format(path, format!("no constraints for video `{}`", ds.videos[v].id)))?;
        sets.push(set);
        levels.push(level);
    }
    Ok((sets, levels))
}

/// Field order is the documented line layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub video_id: String,
    pub class_id: usize,
    pub interval: [u32; 2],
    pub score: f64,
    pub boxes: Vec<[f64; 4]>,
}

pub fn save_detections(path: &Path, ds: &Dataset, dets: &[DetectionRecord]) -> Result<()> {
    let lines: Vec<DetectionLine> = dets
        .iter()
        .map(|d| DetectionLine {
            video_id: ds.videos[d.video].id.clone(),
            class_id: d.class,
            interval: [d.span.start, d.span.end],
            score: d.score,
            boxes: d.boxes.iter().map(box_array).collect(),
        })
        .collect();
    write_jsonl(path, &lines)
}

pub fn load_detections(path: &Path, ds: &Dataset) -> Result<Vec<DetectionRecord>> {
    let lines: Vec<DetectionLine> = read_jsonl(path)?;
    lines
        .into_iter()
        .map(|l| {
            let span = FrameSpan::new(l.interval[0], l.interval[1])?;
            if span.is_empty() || l.boxes.len() != span.len() as usize {
                return Err(Error::format(path, "detection needs one box per frame of a non-empty interval"));
            }
            Ok(DetectionRecord {
                video: video_lookup(ds, &l.video_id, path)?,
                class: l.class_id,
                span,
                score: l.score,
                boxes: l.boxes.into_iter().map(array_box).collect::<actloc_core::Result<Vec<_>>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub lambda: f64,
    pub dim: usize,
    pub classes: usize,
    /// `dim` rows of `classes` weights.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
}

pub fn save_classifier(path: &Path, c: &Classifier, thresholds: Option<&ThresholdSet>) -> Result<()> {
    let file = ClassifierFile {
        lambda: c.lambda,
        dim: c.dim(),
        classes: c.classes(),
        weights: (0..c.dim()).map(|r| c.weights.row(r).to_vec()).collect(),
        thresholds: thresholds.map(|t| t.thetas.clone()),
    };
    let mut buf = serde_json::to_vec_pretty(&file).map_err(|e| Error::format(path, e.to_string()))?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn load_classifier(path: &Path) -> Result<(Classifier, Option<ThresholdSet>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ClassifierFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.weights.len() != file.dim || file.weights.iter().any(|r| r.len() != file.classes) {
        return Err(Error::format(path, "weights do not match dim × classes"));
    }
    let weights = Matrix::new(file.dim, file.classes, file.weights.concat())?;
    Ok((
        Classifier {
            weights,
            lambda: file.lambda,
        },
        file.thresholds.map(|thetas| ThresholdSet { thetas }),
    ))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub const TRACE_HEADER: &str = "iteration,video_id,h,total_gap,gamma";

pub fn save_trace(path: &Path, ds: &Dataset, trace: &[TraceRow]) -> Result<()> {
    let mut buf = Vec::with_capacity(trace.len() * 64);
    writeln!(buf, "{TRACE_HEADER}").unwrap();
    for t in trace {
        writeln!(
            buf,
            "{},{},{:e},{:e},{:e}",
            t.iteration, ds.videos[t.video].id, t.h, t.total_gap, t.gamma
        )
        .unwrap();
    }
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn feature_examples() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DFC1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        let m = decode_features(&bytes).unwrap();
        assert_eq!(m.as_slice(), &[1.0]);

        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let enc = encode_features(&m);
        assert_eq!(enc.len(), 24 + 24);
        assert_eq!(decode_features(&enc).unwrap(), m);

        let mut bad = enc.clone();
        bad[0] = b'X';
        assert!(decode_features(&bad).unwrap_err().contains("magic"));
        assert!(decode_features(&enc[..40]).is_err());
    }

    #[test]
    fn huge_header_is_rejected_before_allocation() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.dfc");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DFC1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&(1u64 << 40).to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_features(&p), Err(Error::Format { .. })));
        bytes[8..16].copy_from_slice(&(1u64 << 30).to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_features(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.dfc");
        let m = Matrix::new(3, 2, vec![0.5, -1.0, 2.0, 3.25, 0.0, 8.0]).unwrap();
        save_features(&p, &m).unwrap();
        assert_eq!(load_features(&p).unwrap(), m);
    }

    #[test]
    fn minimal_track_file() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let dets: Vec<String> = (0..8)
            .map(|f| format!(r#"{{"frame":{f},"box":[0,0,10,10]}}"#))
            .collect();
        let text = format!(
            "{}\n{}\n",
            r#"{"type":"video","video_id":"a","frames":20,"extra":1}"#,
            format!(r#"{{"type":"track","video_id":"a","track_id":"t","detections":[{}]}}"#, dets.join(","))
        );
        fs::write(&p, text).unwrap();
        let ds = load_tracks(&p).unwrap();
        assert_eq!(ds.num_rows(), 1);

        fs::write(&p, "").unwrap();
        assert!(load_tracks(&p).is_err());

        fs::write(&p, r#"{"type":"track","video_id":"zz","track_id":"t","detections":[]}"#).unwrap();
        assert!(load_tracks(&p).is_err());

        let gap = r#"{"type":"video","video_id":"a","frames":20}
{"type":"track","video_id":"a","track_id":"t","detections":[{"frame":0,"box":[0,0,1,1]},{"frame":2,"box":[0,0,1,1]}]}"#;
        fs::write(&p, gap).unwrap();
        assert!(load_tracks(&p).is_err());
    }

    #[test]
    fn detection_lines_keep_field_order() {
        let ds = {
            let v = Video::new("v0", 10);
            Dataset::new(vec![v], vec![], vec![], 2, 8).unwrap()
        };
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_detections(&p, &ds, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
        let b = BoundingBox::new(0.0, 0.0, 1.0, 2.0).unwrap();
        let d = DetectionRecord {
            video: 0,
            class: 2,
            span: FrameSpan::new(3, 5).unwrap(),
            score: 0.5,
            boxes: vec![b, b],
        };
        save_detections(&p, &ds, &[d.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "{\"video_id\":\"v0\",\"class_id\":2,\"interval\":[3,5],\"score\":0.5,\"boxes\":[[0.0,0.0,1.0,2.0],[0.0,0.0,1.0,2.0]]}\n"
        );
        assert_eq!(load_detections(&p, &ds).unwrap(), vec![d]);
    }

    #[test]
    fn classifier_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = Classifier {
            weights: Matrix::new(2, 3, vec![0.1, 0.2, 0.3, -1.0, 1e-30, 7.0]).unwrap(),
            lambda: 1e-4,
        };
        let th = ThresholdSet { thetas: vec![0.25, -0.5] };
        save_classifier(&p, &c, Some(&th)).unwrap();
        let (c2, th2) = load_classifier(&p).unwrap();
        assert_eq!(c, c2);
        assert_eq!(th2, Some(th));
    }
}
