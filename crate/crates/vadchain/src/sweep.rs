//! Sensitivity sweeps over the gate margin and the window divisor.
//!
//! First-pass captions and scores are computed once per video; each grid
//! point re-runs only the window, gate, refinement and smoothing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vadchain_core::{MarginMode, ScoreSeries};

use crate::client::ModelClient;
use crate::config::RunConfig;
use crate::datasets::{AnnotationSet, Video};
use crate::evaluate::{evaluate, EvalError, EvalOptions, Metric};
use crate::pipeline::{parallel_map, write_atomic, Pipeline, PipelineError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub margins: Vec<MarginMode>,
    pub divisors: Vec<usize>,
}

impl SweepGrid {
    /// Missing axes fall back to the run configuration's value.
    pub fn new(config: &RunConfig, margins: Vec<MarginMode>, divisors: Vec<usize>) -> Self {
        Self {
            margins: if margins.is_empty() { vec![config.margin] } else { margins },
            divisors: if divisors.is_empty() { vec![config.window.divisor] } else { divisors },
        }
    }

    pub fn len(&self) -> usize {
        self.margins.len() * self.divisors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub margin: String,
    pub window_length: String,
    pub auc: Metric,
    pub ap: Metric,
}

pub fn margin_label(m: &MarginMode) -> String {
    match m {
        MarginMode::Fixed(v) => format!("m={v:.2}"),
        MarginMode::AdaptiveVariance => "m_V=Var(S_V)".into(),
    }
}

pub fn window_label(floor: usize, divisor: usize) -> String {
    format!("l=max({floor},T/{divisor})")
}

/// `margin` accepts a number or `var`/`variance`/`adaptive`.
pub fn parse_margin(s: &str) -> Result<MarginMode, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "var" | "variance" | "adaptive" => Ok(MarginMode::AdaptiveVariance),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|m| (0.0..=0.5).contains(m))
            .map(MarginMode::Fixed)
            .ok_or_else(|| format!("`{s}` is neither a margin in [0, 0.5] nor `var`")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("every video failed its first pass; last error: {0}")]
    NoVideos(PipelineError),
}

pub fn run_sweep(
    config: &RunConfig,
    client: &ModelClient,
    videos: &[Video],
    annotations: &AnnotationSet,
    grid: &SweepGrid,
    options: &EvalOptions,
) -> Result<Vec<SweepRow>, SweepError> {
    let base = Pipeline::new(config, client);
    let passes = parallel_map(videos.len(), config.workers, |i| {
        Ok::<_, ()>(base.first_pass(&videos[i]))
    })
    .expect("workers never fail");
    let mut ready: Vec<(&Video, Vec<String>, ScoreSeries)> = Vec::new();
    let mut last_error = None;
    for (v, r) in videos.iter().zip(passes) {
        match r {
            Ok((c, s)) => ready.push((v, c, s)),
            Err(e) => {
                log::warn!("{}: first pass failed, left out of the sweep: {e}", v.id());
                last_error = Some(e);
            }
        }
    }
    if ready.is_empty() {
        if let Some(e) = last_error {
            return Err(SweepError::NoVideos(e));
        }
    }

    let mut rows = Vec::with_capacity(grid.len());
    for margin in &grid.margins {
        for &divisor in &grid.divisors {
            let mut point = config.clone();
            point.margin = *margin;
            point.window.divisor = divisor;
            let p = Pipeline::new(&point, client);
            let mut analyses = Vec::with_capacity(ready.len());
            for (v, captions, first) in &ready {
                match p.detect(v, captions, first) {
                    Ok(d) => analyses.push(p.assemble(v, captions.clone(), first.clone(), d)),
                    Err(e) => log::warn!("{}: detection failed at {}: {e}", v.id(), margin_label(margin)),
                }
            }
            let report = evaluate(&analyses, annotations, options)?;
            rows.push(SweepRow {
                margin: margin_label(margin),
                window_length: window_label(point.window.floor, divisor),
                auc: report.auc,
                ap: report.ap,
            });
        }
    }
    Ok(rows)
}

fn cell(m: &Metric) -> String {
    m.value().map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["margin", "window_length", "auc", "ap"]).unwrap();
    for r in rows {
        w.write_record([r.margin.clone(), r.window_length.clone(), cell(&r.auc), cell(&r.ap)])
            .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn write_sweep(out_dir: &Path, rows: &[SweepRow]) -> std::io::Result<()> {
    write_atomic(&out_dir.join("sweep.csv"), sweep_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(margin_label(&MarginMode::Fixed(0.05)), "m=0.05");
        assert_eq!(margin_label(&MarginMode::Fixed(0.4)), "m=0.40");
        assert_eq!(margin_label(&MarginMode::AdaptiveVariance), "m_V=Var(S_V)");
        assert_eq!(window_label(300, 5), "l=max(300,T/5)");
    }

    #[test]
    fn margin_parsing() {
        assert_eq!(parse_margin("0.1"), Ok(MarginMode::Fixed(0.1)));
        assert_eq!(parse_margin("var"), Ok(MarginMode::AdaptiveVariance));
        assert!(parse_margin("0.6").is_err());
        assert!(parse_margin("wide").is_err());
    }

    #[test]
    fn grid_defaults_from_config() {
        let c = RunConfig::default();
        let g = SweepGrid::new(&c, vec![], vec![5, 10, 15]);
        assert_eq!(g.margins, [MarginMode::Fixed(0.05)]);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn csv_shape() {
        let rows = vec![SweepRow {
            margin: "m=0.05".into(),
            window_length: "l=max(300,T/10)".into(),
            auc: Metric::Value(0.75),
            ap: Metric::absent("x"),
        }];
        assert_eq!(sweep_csv(&rows), "margin,window_length,auc,ap\nm=0.05,\"l=max(300,T/10)\",0.750000,\n");
    }
}
