//! Metric reports over stored analyses.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vadchain_core::metrics::{self, BleuOptions, BleuStats, MetricError};
use vadchain_core::score::expand_to_frames;

use crate::datasets::{frame_label_vector, AnnotationSet};
use crate::pipeline::{write_atomic, VideoAnalysis};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{metric}: {source}. {guidance}")]
    Metric {
        metric: &'static str,
        source: MetricError,
        guidance: &'static str,
    },
    #[error("cannot read analyses in {path}: {message}")]
    Analyses { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const DEGENERATE_GUIDANCE: &str =
    "Frame-level AUC/AP need both normal and anomalous frames; include at least one annotated anomalous interval and one normal frame among the evaluated videos";

/// A metric value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Value(f64),
    Absent { absent: String },
}

impl Metric {
    pub fn absent(reason: impl Into<String>) -> Self {
        Metric::Absent { absent: reason.into() }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(*v),
            Metric::Absent { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// All frames of all videos pooled into one ranking.
    #[default]
    Concatenated,
    /// Mean of per-video values over videos with both classes.
    PerVideo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub auc_mode: AucMode,
    pub tiou_threshold: f64,
    pub bleu: BleuOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            auc_mode: AucMode::Concatenated,
            tiou_threshold: 0.5,
            bleu: BleuOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub frames: usize,
    pub anomalous_frames: Option<usize>,
    pub surrogate: f64,
    pub refined: bool,
    pub label: bool,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub tiou: Option<f64>,
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub videos: usize,
    pub frames: usize,
    pub auc_mode: AucMode,
    pub tiou_threshold: f64,
    pub auc: Metric,
    pub ap: Metric,
    pub tiou: Metric,
    pub bleu: Metric,
    pub rouge_l: Metric,
    pub per_video: Vec<VideoMetrics>,
}

fn degenerate(metric: &'static str, source: MetricError) -> EvalError {
    EvalError::Metric {
        metric,
        source,
        guidance: DEGENERATE_GUIDANCE,
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn evaluate(
    analyses: &[VideoAnalysis],
    annotations: &AnnotationSet,
    options: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    let mut per_video = Vec::with_capacity(analyses.len());
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    let mut bleu_total = BleuStats::default();
    let mut bleu_pairs = 0usize;
    let mut rouges = Vec::new();
    let mut predictions = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();

    for a in analyses {
        let mut vm = VideoMetrics {
            video_id: a.video_id.clone(),
            frames: a.total_frames,
            anomalous_frames: None,
            surrogate: a.surrogate,
            refined: a.gate.refine,
            label: a.video_label,
            auc: None,
            ap: None,
            tiou: None,
            bleu: None,
            rouge_l: None,
        };

        match annotations.temporal.get(&a.video_id) {
            Some(intervals) => {
                let scores = expand_to_frames(&a.final_scores);
                let labels = frame_label_vector(a.total_frames, intervals);
                vm.anomalous_frames = Some(labels.iter().filter(|&&l| l).count());
                vm.auc = metrics::roc_auc(&scores, &labels).ok();
                vm.ap = metrics::average_precision(&scores, &labels).ok();
                pooled_scores.extend(scores);
                pooled_labels.extend(labels);
            }
            None if !annotations.temporal.is_empty() => {
                log::warn!("{}: no temporal annotation; left out of AUC/AP", a.video_id);
            }
            None => {}
        }

        if let Some(gt) = annotations.spatial.get(&a.video_id) {
            let gt: BTreeMap<usize, _> = gt.iter().filter(|(_, b)| !b.is_empty()).map(|(&f, b)| (f, b.clone())).collect();
            vm.tiou = metrics::tiou(&a.localizations, &gt, options.tiou_threshold).ok();
            for (f, b) in gt {
                ground_truth.insert((a.video_id.clone(), f), b);
            }
            for (&f, b) in &a.localizations {
                predictions.insert((a.video_id.clone(), f), b.clone());
            }
        }

        if let (Some(d), Some(r)) = (&a.description, annotations.descriptions.get(&a.video_id)) {
            match (BleuStats::from_pair(d, r), metrics::rouge_l(d, r)) {
                (Ok(stats), Ok(rouge)) => {
                    vm.bleu = Some(stats.score(options.bleu));
                    vm.rouge_l = Some(rouge);
                    bleu_total.merge(&stats);
                    bleu_pairs += 1;
                    rouges.push(rouge);
                }
                _ => log::warn!("{}: description or reference has no tokens; skipped", a.video_id),
            }
        }
        per_video.push(vm);
    }

    let (auc, ap) = if annotations.temporal.is_empty() {
        let a = Metric::absent("no temporal annotations");
        (a.clone(), a)
    } else if pooled_labels.is_empty() {
        let a = Metric::absent("no evaluated video has a temporal annotation");
        (a.clone(), a)
    } else {
        match options.auc_mode {
            AucMode::Concatenated => (
                Metric::Value(metrics::roc_auc(&pooled_scores, &pooled_labels).map_err(|e| degenerate("auc", e))?),
                Metric::Value(
                    metrics::average_precision(&pooled_scores, &pooled_labels).map_err(|e| degenerate("ap", e))?,
                ),
            ),
            AucMode::PerVideo => {
                let aucs: Vec<f64> = per_video.iter().filter_map(|v| v.auc).collect();
                let aps: Vec<f64> = per_video.iter().filter_map(|v| v.ap).collect();
                let auc = mean(&aucs).ok_or_else(|| {
                    degenerate("auc", MetricError::DegenerateLabels { positives: 0, negatives: 0 })
                })?;
                let ap = mean(&aps).map_or_else(|| Metric::absent("no video has anomalous frames"), Metric::Value);
                (Metric::Value(auc), ap)
            }
        }
    };

    let tiou = if annotations.spatial.is_empty() {
        Metric::absent("no spatial annotations")
    } else {
        match metrics::tiou(&predictions, &ground_truth, options.tiou_threshold) {
            Ok(v) => Metric::Value(v),
            Err(_) => Metric::absent("no annotated frames among evaluated videos"),
        }
    };

    let (bleu, rouge_l) = if bleu_pairs == 0 {
        let reason = if annotations.descriptions.is_empty() {
            "no reference descriptions"
        } else {
            "no video has both a description and a reference"
        };
        (Metric::absent(reason), Metric::absent(reason))
    } else {
        (
            Metric::Value(bleu_total.score(options.bleu)),
            Metric::Value(mean(&rouges).expect("pairs present")),
        )
    };

    Ok(MetricReport {
        videos: analyses.len(),
        frames: pooled_labels.len(),
        auc_mode: options.auc_mode,
        tiou_threshold: options.tiou_threshold,
        auc,
        ap,
        tiou,
        bleu,
        rouge_l,
        per_video,
    })
}

/// Every `*.json` under `{run_dir}/analysis`, ordered by file name.
pub fn load_analyses(run_dir: &Path) -> Result<Vec<VideoAnalysis>, EvalError> {
    let dir = run_dir.join("analysis");
    let fail = |message: String| EvalError::Analyses {
        path: dir.display().to_string(),
        message,
    };
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| fail(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| fail(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn headline(&self) -> [(&'static str, &Metric); 5] {
        [
            ("auc", &self.auc),
            ("ap", &self.ap),
            ("tiou", &self.tiou),
            ("bleu", &self.bleu),
            ("rouge_l", &self.rouge_l),
        ]
    }

    /// Headline rows `metric,value,note` then a blank line and the per-video
    /// table.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(["metric", "value", "note"]).unwrap();
        for (name, m) in self.headline() {
            match m {
                Metric::Value(v) => w.write_record([name, &format!("{v:.6}"), ""]),
                Metric::Absent { absent } => w.write_record([name, "", &format!("absent: {absent}")]),
            }
            .unwrap();
        }
        w.write_record([""]).unwrap();
        w.write_record([
            "video_id", "frames", "anomalous_frames", "surrogate", "refined", "label", "auc", "ap", "tiou", "bleu",
            "rouge_l",
        ])
        .unwrap();
        for v in &self.per_video {
            w.write_record([
                v.video_id.clone(),
                v.frames.to_string(),
                v.anomalous_frames.map(|n| n.to_string()).unwrap_or_default(),
                format!("{:.6}", v.surrogate),
                v.refined.to_string(),
                v.label.to_string(),
                fmt_opt(v.auc),
                fmt_opt(v.ap),
                fmt_opt(v.tiou),
                fmt_opt(v.bleu),
                fmt_opt(v.rouge_l),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        write_atomic(&out_dir.join("metrics.json"), self.to_json().as_bytes())?;
        write_atomic(&out_dir.join("metrics.csv"), self.to_csv().as_bytes())
    }
}
