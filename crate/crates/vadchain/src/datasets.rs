//! Manifests and ground-truth files.
//!
//! * manifest: JSON array of `{video_id, frames_dir, fps, total_frames,
//!   dataset_prior_preset}`; `frames_dir` is relative to the manifest file.
//! * temporal: `video_id start end [start end ...]`, `-1 -1` for none.
//! * spatial: `video_id frame x1 y1 x2 y2`.
//! * descriptions: `video_id<TAB>reference text`.
//!
//! Blank lines and lines starting with `#` are skipped in the text formats.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vadchain_core::{BoundingBox, MediaRef};

use crate::media;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Manifest {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Annotation {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn default_preset() -> String {
    "base".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    pub video_id: String,
    pub frames_dir: PathBuf,
    pub fps: f64,
    pub total_frames: usize,
    #[serde(default = "default_preset")]
    pub dataset_prior_preset: String,
}

/// A manifest entry with its frame files resolved in playback order.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub manifest: VideoManifest,
    pub frames: Vec<PathBuf>,
}

impl Video {
    pub fn id(&self) -> &str {
        &self.manifest.video_id
    }

    pub fn total_frames(&self) -> usize {
        self.manifest.total_frames
    }

    /// Path of 1-based frame `f`.
    pub fn frame_path(&self, f: usize) -> &Path {
        &self.frames[f - 1]
    }

    pub fn frame_ref(&self, f: usize) -> MediaRef {
        media::media_ref(self.frame_path(f))
    }

    pub fn frame_refs(&self, frames: &[usize]) -> Vec<MediaRef> {
        frames.iter().map(|&f| self.frame_ref(f)).collect()
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Line of the `n`-th `"video_id"` key, for pointing at a bad entry.
fn entry_line(text: &str, n: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .flat_map(|(i, l)| std::iter::repeat_n(i + 1, l.matches("\"video_id\"").count()))
        .nth(n)
}

/// Frame files of a directory in playback order. Numbered names are ordered
/// numerically and must be consecutive.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("cannot list {}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && media::is_frame_file(p))
        .collect();
    let numbered: Option<Vec<u64>> = files.iter().map(|p| media::frame_number(p)).collect();
    match numbered {
        Some(_) => {
            files.sort_by_key(|p| (media::frame_number(p), p.clone()));
            for pair in files.windows(2) {
                let (a, b) = (media::frame_number(&pair[0]).unwrap(), media::frame_number(&pair[1]).unwrap());
                if b == a {
                    return Err(format!("frame number {a} appears twice in {}", dir.display()));
                }
                if b != a + 1 {
                    let missing = if b == a + 2 {
                        format!("frame {}", a + 1)
                    } else {
                        format!("frames {}..={}", a + 1, b - 1)
                    };
                    return Err(format!("{missing} missing from {}", dir.display()));
                }
            }
        }
        None => files.sort(),
    }
    Ok(files)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Video>, DatasetError> {
    let text = read(path)?;
    let fail = |line: Option<usize>, message: String| DatasetError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let entries: Vec<VideoManifest> =
        serde_json::from_str(&text).map_err(|e| fail(Some(e.line()), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut videos = Vec::with_capacity(entries.len());
    for (i, mut m) in entries.into_iter().enumerate() {
        let line = entry_line(&text, i);
        let id = m.video_id.clone();
        let bad = |msg: String| fail(line, format!("video `{id}`: {msg}"));
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(bad("video_id must be a non-empty file-name-safe string".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(bad("duplicate video_id".into()));
        }
        if !(m.fps.is_finite() && m.fps > 0.0) {
            return Err(bad(format!("fps must be > 0, got {}", m.fps)));
        }
        if m.total_frames == 0 {
            return Err(bad("total_frames must be >= 1".into()));
        }
        if vadchain_core::prompt::dataset_prior(&m.dataset_prior_preset).is_none() {
            return Err(bad(format!("unknown dataset_prior_preset `{}`", m.dataset_prior_preset)));
        }
        if m.frames_dir.is_relative() {
            m.frames_dir = base.join(&m.frames_dir);
        }
        let frames = list_frames(&m.frames_dir).map_err(bad)?;
        if frames.len() != m.total_frames {
            return Err(bad(format!(
                "total_frames is {} but {} holds {} frame files",
                m.total_frames,
                m.frames_dir.display(),
                frames.len()
            )));
        }
        videos.push(Video { manifest: m, frames });
    }
    Ok(videos)
}

/// Inclusive 1-based frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub type TemporalAnnotations = BTreeMap<String, Vec<Interval>>;
pub type SpatialAnnotations = BTreeMap<String, BTreeMap<usize, Vec<BoundingBox>>>;
pub type Descriptions = BTreeMap<String, String>;

/// Sorted, with overlapping intervals merged.
pub fn normalize_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort();
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_temporal_annotations(text: &str, origin: &Path) -> Result<TemporalAnnotations, DatasetError> {
    let mut out: TemporalAnnotations = BTreeMap::new();
    for (line, row) in lines(text) {
        let bad = |message: String| DatasetError::Annotation {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut fields = row.split_whitespace();
        let id = fields.next().expect("row is non-empty");
        let nums = fields
            .map(|f| f.parse::<i64>().map_err(|_| bad(format!("`{f}` is not an integer frame index"))))
            .collect::<Result<Vec<_>, _>>()?;
        if nums.len() % 2 != 0 {
            return Err(bad(format!("video `{id}` has an unpaired frame index")));
        }
        let entry = out.entry(id.to_owned()).or_default();
        for pair in nums.chunks(2) {
            match (pair[0], pair[1]) {
                (-1, -1) => {}
                (s, e) if s >= 1 && s <= e => entry.push(Interval::new(s as usize, e as usize)),
                (s, e) => return Err(bad(format!("invalid interval [{s}, {e}] for `{id}`"))),
            }
        }
    }
    for v in out.values_mut() {
        *v = normalize_intervals(std::mem::take(v));
    }
    Ok(out)
}

pub fn load_temporal_annotations(path: &Path) -> Result<TemporalAnnotations, DatasetError> {
    parse_temporal_annotations(&read(path)?, path)
}

/// `true` exactly on frames inside some interval; frames past `total_frames`
/// are ignored.
pub fn frame_label_vector(total_frames: usize, intervals: &[Interval]) -> Vec<bool> {
    let mut labels = vec![false; total_frames];
    for iv in intervals {
        let end = iv.end.min(total_frames);
        for f in iv.start.max(1)..=end {
            labels[f - 1] = true;
        }
    }
    labels
}

fn box_order(a: &BoundingBox, b: &BoundingBox) -> std::cmp::Ordering {
    a.x1.total_cmp(&b.x1)
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x2.total_cmp(&b.x2))
        .then(a.y2.total_cmp(&b.y2))
}

pub fn parse_bbox_annotations(text: &str, origin: &Path) -> Result<SpatialAnnotations, DatasetError> {
    let mut out: SpatialAnnotations = BTreeMap::new();
    for (line, row) in lines(text) {
        let bad = |message: String| DatasetError::Annotation {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        let frame: usize = fields[1]
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| bad(format!("`{}` is not a 1-based frame index", fields[1])))?;
        let mut c = [0.0; 4];
        for (slot, f) in c.iter_mut().zip(&fields[2..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("`{f}` is not a coordinate")))?;
        }
        let b = BoundingBox::from_corners(c[0], c[1], c[2], c[3], 1.0).clamped(f64::INFINITY, f64::INFINITY);
        if b.is_degenerate() {
            log::warn!("{}:{line}: zero-area ground-truth box kept", origin.display());
        }
        out.entry(fields[0].to_owned()).or_default().entry(frame).or_default().push(b);
    }
    for frames in out.values_mut() {
        for boxes in frames.values_mut() {
            boxes.sort_by(box_order);
        }
    }
    Ok(out)
}

pub fn load_bbox_annotations(path: &Path) -> Result<SpatialAnnotations, DatasetError> {
    parse_bbox_annotations(&read(path)?, path)
}

pub fn parse_descriptions(text: &str, origin: &Path) -> Result<Descriptions, DatasetError> {
    let mut out = BTreeMap::new();
    for (line, row) in lines(text) {
        let bad = |message: String| DatasetError::Annotation {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let (id, reference) = row.split_once('\t').ok_or_else(|| bad("expected `video_id<TAB>text`".into()))?;
        let (id, reference) = (id.trim(), reference.trim());
        if id.is_empty() || reference.is_empty() {
            return Err(bad("empty video id or reference".into()));
        }
        if out.insert(id.to_owned(), reference.to_owned()).is_some() {
            return Err(bad(format!("second reference for `{id}`")));
        }
    }
    Ok(out)
}

pub fn load_descriptions(path: &Path) -> Result<Descriptions, DatasetError> {
    parse_descriptions(&read(path)?, path)
}

/// Every source of ground truth for one evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub temporal: TemporalAnnotations,
    pub spatial: SpatialAnnotations,
    pub descriptions: Descriptions,
}
