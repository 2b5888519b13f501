//! Per-video stage execution: detection, localization, description.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use vadchain_core::prompt::dataset_prior;
use vadchain_core::sampling::{clip_indices, vau_frame_sample, window_subsample};
use vadchain_core::score::{
    gate_decision_with_kind, gaussian_smooth, sliding_window_max_mean, surrogate_score,
};
use vadchain_core::{
    BoundingBox, GateDecision, MediaRef, ScoreSeries, SeriesError, SuspicionWindow, TagList,
};

use crate::client::{ModelClient, ModelError};
use crate::config::{EndpointRole, RunConfig, Stage};
use crate::datasets::{SpatialAnnotations, Video};
use crate::media;

/// Decision threshold on the surrogate score.
pub const DECISION_BOUNDARY: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Stage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VauQuery {
    pub frames: Vec<usize>,
    /// Frames carried localization overlays.
    pub overlaid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnalysis {
    pub video_id: String,
    pub total_frames: usize,
    pub dataset_prior: String,
    pub captions: Vec<String>,
    pub first_pass: ScoreSeries,
    pub window: SuspicionWindow,
    pub surrogate: f64,
    pub tags: TagList,
    pub gate: GateDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<ScoreSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_surrogate: Option<f64>,
    pub final_scores: ScoreSeries,
    pub video_label: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub localizations: BTreeMap<usize, Vec<BoundingBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vau_query: Option<VauQuery>,
}

impl VideoAnalysis {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("analysis serializes");
        s.push('\n');
        s
    }

    /// Frames considered for the description stage.
    pub fn vau_frames(&self, count: usize) -> Vec<usize> {
        let window = (self.surrogate > DECISION_BOUNDARY).then_some(&self.window);
        vau_frame_sample(self.total_frames, window, count)
    }
}

pub fn analysis_path(out_dir: &Path, video_id: &str) -> PathBuf {
    out_dir.join("analysis").join(format!("{video_id}.json"))
}

pub fn load_analysis(out_dir: &Path, video_id: &str) -> Result<VideoAnalysis, PipelineError> {
    let path = analysis_path(out_dir, video_id);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Io(format!("invalid analysis {}: {e}", path.display())))
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Ordered results of `f(0..n)` on up to `threads` scoped threads. Stops
/// handing out work after the first error.
pub fn parallel_map<R, E, F>(n: usize, threads: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for r in slots.into_inner().unwrap() {
        match r {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    Ok(out)
}

/// Gate-dependent part of detection, reusable for sweeps over cached
/// first-pass results.
pub struct Detection {
    pub window: SuspicionWindow,
    pub surrogate: f64,
    pub tags: TagList,
    pub gate: GateDecision,
    pub refined: Option<ScoreSeries>,
    pub refined_surrogate: Option<f64>,
    pub final_scores: ScoreSeries,
    pub video_label: bool,
}

pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub client: &'a ModelClient,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a RunConfig, client: &'a ModelClient) -> Self {
        Self { config, client }
    }

    fn prior(&self, video: &Video) -> String {
        let preset = self
            .config
            .dataset_prior_preset
            .as_deref()
            .unwrap_or(&video.manifest.dataset_prior_preset);
        dataset_prior(preset).unwrap_or(vadchain_core::prompt::BASE_PRIOR).to_owned()
    }

    fn parallelism(&self, roles: &[EndpointRole]) -> usize {
        roles.iter().map(|&r| self.client.endpoint(r).max_parallel).max().unwrap_or(1)
    }

    /// Caption and score every stride position.
    pub fn first_pass(&self, video: &Video) -> Result<(Vec<String>, ScoreSeries), PipelineError> {
        let t = video.total_frames();
        let stride = self.config.stride;
        let positions = vadchain_core::score::position_count(t, stride);
        let prior = self.prior(video);
        let clip = self.config.clip;
        let threads = self.parallelism(&[EndpointRole::Captioner, EndpointRole::Scorer]);
        let pairs = parallel_map(positions, threads, |p| -> Result<(String, f64), PipelineError> {
            let spec = clip_indices(p * stride + 1, t, video.manifest.fps, clip.radius_seconds, clip.frames);
            let caption = self.client.caption_clip(&video.frame_refs(&spec.indices))?;
            let score = self.client.score_caption(&caption, &prior, None)?;
            Ok((caption, score))
        })?;
        let (captions, scores): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok((captions, ScoreSeries::new(scores, stride, t)?))
    }

    /// Window, tags, gate, optional refinement and smoothing.
    pub fn detect(
        &self,
        video: &Video,
        captions: &[String],
        first_pass: &ScoreSeries,
    ) -> Result<Detection, PipelineError> {
        let c = self.config;
        let t = video.total_frames();
        let window_len = c.window.length_for(t);
        let window = sliding_window_max_mean(first_pass, window_len);
        let surrogate = surrogate_score(&window);

        let sample = window_subsample(&window, c.window_subsample_cap);
        let tags = self.client.extract_tags(&video.frame_refs(&sample))?.with_window(window);

        let margin = c.margin.resolve(first_pass);
        let gate = gate_decision_with_kind(surrogate, margin, DECISION_BOUNDARY, c.margin.kind());

        let refined = if gate.refine {
            let prior = self.prior(video);
            let threads = self.parallelism(&[EndpointRole::Scorer]);
            let scores = parallel_map(captions.len(), threads, |p| {
                self.client.score_caption(&captions[p], &prior, Some(&tags))
            })?;
            Some(first_pass.with_values(scores)?)
        } else {
            None
        };
        let refined_surrogate = refined
            .as_ref()
            .map(|r| surrogate_score(&sliding_window_max_mean(r, window_len)));
        let final_scores = gaussian_smooth(refined.as_ref().unwrap_or(first_pass), &c.smoothing);
        let label_score = match refined_surrogate {
            Some(r) if c.relabel_from_refined => r,
            _ => surrogate,
        };
        Ok(Detection {
            window,
            surrogate,
            tags,
            gate,
            refined,
            refined_surrogate,
            final_scores,
            video_label: label_score > DECISION_BOUNDARY,
        })
    }

    pub fn run_vad(&self, video: &Video) -> Result<VideoAnalysis, PipelineError> {
        let (captions, first_pass) = self.first_pass(video)?;
        let d = self.detect(video, &captions, &first_pass)?;
        Ok(self.assemble(video, captions, first_pass, d))
    }

    pub fn assemble(
        &self,
        video: &Video,
        captions: Vec<String>,
        first_pass: ScoreSeries,
        d: Detection,
    ) -> VideoAnalysis {
        VideoAnalysis {
            video_id: video.id().to_owned(),
            total_frames: video.total_frames(),
            dataset_prior: self.prior(video),
            captions,
            first_pass,
            window: d.window,
            surrogate: d.surrogate,
            tags: d.tags,
            gate: d.gate,
            refined: d.refined,
            refined_surrogate: d.refined_surrogate,
            final_scores: d.final_scores,
            video_label: d.video_label,
            localizations: BTreeMap::new(),
            description: None,
            vau_query: None,
        }
    }

    fn localize(&self, video: &Video, frame: usize, tags: &TagList) -> Vec<BoundingBox> {
        let path = video.frame_path(frame);
        let dims = match media::image_dimensions(path) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("{}: cannot read frame {frame} ({e}); no boxes", video.id());
                return Vec::new();
            }
        };
        match self.client.localize_frame(&video.frame_ref(frame), Some(tags), dims) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("{}: localization of frame {frame} failed ({e}); no boxes", video.id());
                Vec::new()
            }
        }
    }

    /// Frames localized by the `val` stage.
    pub fn val_frames(
        &self,
        analysis: &VideoAnalysis,
        spatial: Option<&SpatialAnnotations>,
    ) -> Vec<usize> {
        match spatial {
            Some(gt) => gt
                .get(&analysis.video_id)
                .map(|frames| {
                    frames
                        .iter()
                        .filter(|(_, b)| !b.is_empty())
                        .map(|(&f, _)| f)
                        .filter(|&f| f >= 1 && f <= analysis.total_frames)
                        .collect()
                })
                .unwrap_or_default(),
            None => analysis.vau_frames(self.config.vau_sample_count),
        }
    }

    pub fn run_val(&self, video: &Video, analysis: &mut VideoAnalysis, frames: &[usize]) {
        let threads = self.parallelism(&[EndpointRole::Localizer]);
        let boxes = parallel_map(frames.len(), threads, |i| {
            Ok::<_, ()>(self.localize(video, frames[i], &analysis.tags))
        })
        .expect("localization never fails");
        for (&f, b) in frames.iter().zip(boxes) {
            analysis.localizations.insert(f, b);
        }
    }

    fn overlay_frame(&self, video: &Video, frame: usize, boxes: &[BoundingBox]) -> Result<PathBuf, String> {
        let img = image::open(video.frame_path(frame)).map_err(|e| e.to_string())?.to_rgb8();
        let drawn = media::overlay_boxes(&img, boxes);
        let path = self
            .config
            .out_dir
            .join("overlays")
            .join(video.id())
            .join(format!("{frame:06}.png"));
        let mut png = Vec::new();
        drawn
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| e.to_string())?;
        write_atomic(&path, &png).map_err(|e| e.to_string())?;
        self.client.media().forget(&path);
        Ok(path)
    }

    /// Localization overlay (when the video looks anomalous) and the final
    /// description.
    pub fn run_vau(&self, video: &Video, analysis: &mut VideoAnalysis) -> Result<(), PipelineError> {
        let frames = analysis.vau_frames(self.config.vau_sample_count);
        let anomalous = analysis.surrogate > DECISION_BOUNDARY;
        let mut overlaid = false;
        let media: Vec<MediaRef> = if anomalous && self.config.overlay {
            self.run_val(video, analysis, &frames);
            overlaid = true;
            frames
                .iter()
                .map(|&f| match self.overlay_frame(video, f, &analysis.localizations[&f]) {
                    Ok(p) => media::media_ref(&p),
                    Err(e) => {
                        log::warn!("{}: overlay on frame {f} failed ({e}); using the plain frame", video.id());
                        overlaid = false;
                        video.frame_ref(f)
                    }
                })
                .collect()
        } else {
            video.frame_refs(&frames)
        };
        let description = self.client.describe_video(&media, Some(&analysis.tags))?;
        analysis.description = Some(description);
        analysis.vau_query = Some(VauQuery { frames, overlaid });
        Ok(())
    }

    /// All requested stages for one video; the analysis is written on
    /// success.
    pub fn run_video(
        &self,
        video: &Video,
        stages: &BTreeSet<Stage>,
        spatial: Option<&SpatialAnnotations>,
    ) -> Result<VideoAnalysis, (Stage, PipelineError)> {
        let mut analysis = if stages.contains(&Stage::Vad) {
            self.run_vad(video).map_err(|e| (Stage::Vad, e))?
        } else {
            let first = *stages.iter().next().unwrap_or(&Stage::Vad);
            let a = load_analysis(&self.config.out_dir, video.id()).map_err(|e| (first, e))?;
            if a.total_frames != video.total_frames() {
                return Err((first, PipelineError::Stage("stored analysis does not match the manifest".into())));
            }
            a
        };
        if stages.contains(&Stage::Val) {
            let frames = self.val_frames(&analysis, spatial);
            self.run_val(video, &mut analysis, &frames);
        }
        if stages.contains(&Stage::Vau) {
            self.run_vau(video, &mut analysis).map_err(|e| (Stage::Vau, e))?;
        }
        let path = analysis_path(&self.config.out_dir, video.id());
        write_atomic(&path, analysis.to_json().as_bytes())
            .map_err(|e| (Stage::Vad, PipelineError::Io(format!("cannot write {}: {e}", path.display()))))?;
        Ok(analysis)
    }

    /// Every video on a bounded worker pool. Failures are recorded, never
    /// fatal.
    pub fn run_batch(
        &self,
        videos: &[Video],
        stages: &BTreeSet<Stage>,
        spatial: Option<&SpatialAnnotations>,
    ) -> Vec<VideoOutcome> {
        let outcomes = parallel_map(videos.len(), self.config.workers, |i| {
            let v = &videos[i];
            Ok::<_, ()>(match self.run_video(v, stages, spatial) {
                Ok(a) => VideoOutcome::Done(Box::new(a)),
                Err((stage, e)) => {
                    log::warn!("{}: {stage} stage failed: {e}", v.id());
                    VideoOutcome::Failed(FailureRecord {
                        video_id: v.id().to_owned(),
                        stage,
                        error: e.to_string(),
                    })
                }
            })
        });
        outcomes.expect("batch workers never fail")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub video_id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VideoOutcome {
    Done(Box<VideoAnalysis>),
    Failed(FailureRecord),
}

impl VideoOutcome {
    pub fn video_id(&self) -> &str {
        match self {
            VideoOutcome::Done(a) => &a.video_id,
            VideoOutcome::Failed(f) => &f.video_id,
        }
    }
}

/// `{out}/summary.csv`, one row per video, plus `{out}/failures.json`.
pub fn write_run_summary(out_dir: &Path, outcomes: &[VideoOutcome]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "video_id", "status", "positions", "surrogate", "margin", "refined", "label", "tags", "error",
    ])?;
    for o in outcomes {
        match o {
            VideoOutcome::Done(a) => w.write_record([
                a.video_id.clone(),
                "ok".into(),
                a.first_pass.len().to_string(),
                format!("{:.6}", a.surrogate),
                format!("{:.6}", a.gate.margin),
                a.gate.refine.to_string(),
                a.video_label.to_string(),
                a.tags.tags.join("; "),
                String::new(),
            ])?,
            VideoOutcome::Failed(f) => w.write_record([
                f.video_id.as_str(),
                "failed",
                "",
                "",
                "",
                "",
                "",
                "",
                &format!("{}: {}", f.stage, f.error),
            ])?,
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(&out_dir.join("summary.csv"), &bytes)?;
    let failures: Vec<&FailureRecord> = outcomes
        .iter()
        .filter_map(|o| match o {
            VideoOutcome::Failed(f) => Some(f),
            VideoOutcome::Done(_) => None,
        })
        .collect();
    let mut json = serde_json::to_string_pretty(&failures)?;
    json.push('\n');
    write_atomic(&out_dir.join("failures.json"), json.as_bytes())
}
