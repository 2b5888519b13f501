use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use vadchain_core::metrics::BleuOptions;
use vadchain_core::{MarginMode, PromptKind};

use crate::client::{KindCounts, ModelClient};
use crate::config::{ConfigError, EndpointRole, RunConfig, Stage};
use crate::datasets::{self, AnnotationSet};
use crate::evaluate::{self, AucMode, EvalOptions, MetricReport};
use crate::pipeline::{self, analysis_path, Pipeline, VideoOutcome};
use crate::plot::{self, PlotOptions};
use crate::sweep::{self, SweepGrid, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "vadchain", version, about = "Chained zero-shot video anomaly detection, localization and description")]
pub struct Cli {
    /// Log filter, e.g. `info` or `vadchain=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run stages over every video of a manifest.
    Run(RunArgs),
    /// Score stored analyses against ground truth.
    Evaluate(EvalArgs),
    /// Re-run gating over a grid of margins and window divisors.
    Sweep(SweepArgs),
    /// Render score curves as SVG.
    Plot(PlotArgs),
    /// Print the default configuration.
    Config,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated subset of vad,val,vau.
    #[arg(long, value_delimiter = ',')]
    pub stages: Vec<Stage>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Fixed gate margin, or `var` for the per-video variance.
    #[arg(long, value_parser = sweep::parse_margin)]
    pub margin: Option<MarginMode>,
    #[arg(long)]
    pub window_floor: Option<usize>,
    #[arg(long)]
    pub window_divisor: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub truncate: Option<f64>,
    /// Seconds of context on each side of a scored position.
    #[arg(long)]
    pub clip_radius: Option<f64>,
    #[arg(long)]
    pub tag_cap: Option<usize>,
    #[arg(long)]
    pub subsample_cap: Option<usize>,
    #[arg(long)]
    pub vau_count: Option<usize>,
    /// Dataset prior preset for every video (base, ucf-crime, xd-violence, ubnormal).
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub no_overlay: bool,
    #[arg(long)]
    pub relabel_from_refined: bool,
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of `<template>.txt` overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Spatial ground truth selecting the frames localized by `val`.
    #[arg(long)]
    pub val_annotations: Option<PathBuf>,
    /// Serve every request from a scripted mock instead of HTTP.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Base URL applied to every endpoint role.
    #[arg(long)]
    pub base_url: Option<String>,
    /// API-key environment variable applied to every endpoint role.
    #[arg(long)]
    pub api_key_env: Option<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.manifest, c.manifest);
        if !self.stages.is_empty() {
            c.stages = self.stages.iter().copied().collect();
        }
        set!(self.stride, c.stride);
        set!(self.margin, c.margin);
        set!(self.window_floor, c.window.floor);
        set!(self.window_divisor, c.window.divisor);
        set!(self.sigma, c.smoothing.sigma);
        set!(self.truncate, c.smoothing.truncate);
        set!(self.clip_radius, c.clip.radius_seconds);
        set!(self.tag_cap, c.tag_cap);
        set!(self.subsample_cap, c.window_subsample_cap);
        set!(self.vau_count, c.vau_sample_count);
        set!(self.workers, c.workers);
        set!(self.cache_dir, c.cache_dir);
        set!(self.out, c.out_dir);
        if self.prior.is_some() {
            c.dataset_prior_preset = self.prior.clone();
        }
        if self.templates.is_some() {
            c.template_dir = self.templates.clone();
        }
        if self.val_annotations.is_some() {
            c.val_annotations = self.val_annotations.clone();
        }
        if self.mock_script.is_some() {
            c.mock_script = self.mock_script.clone();
        }
        c.overlay &= !self.no_overlay;
        c.relabel_from_refined |= self.relabel_from_refined;
        c.strict_parsing |= self.strict;
        for role in EndpointRole::ALL {
            let e = c.endpoints.get_mut(role);
            set!(self.base_url, e.base_url);
            if self.api_key_env.is_some() {
                e.api_key_env = self.api_key_env.clone();
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnnotationArgs {
    /// Temporal ground truth (`video_id start end ...`).
    #[arg(long)]
    pub temporal: Option<PathBuf>,
    /// Spatial ground truth (`video_id frame x1 y1 x2 y2`).
    #[arg(long)]
    pub spatial: Option<PathBuf>,
    /// Reference descriptions (`video_id<TAB>text`).
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
}

impl AnnotationArgs {
    pub fn load(&self) -> anyhow::Result<AnnotationSet> {
        let mut a = AnnotationSet::default();
        if let Some(p) = &self.temporal {
            a.temporal = datasets::load_temporal_annotations(p)?;
        }
        if let Some(p) = &self.spatial {
            a.spatial = datasets::load_bbox_annotations(p)?;
        }
        if let Some(p) = &self.descriptions {
            a.descriptions = datasets::load_descriptions(p)?;
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalFlags {
    /// Average per-video AUC/AP instead of pooling all frames.
    #[arg(long)]
    pub per_video: bool,
    #[arg(long, default_value_t = 0.5)]
    pub tiou_threshold: f64,
    /// Add-one smoothing for BLEU orders >= 2.
    #[arg(long)]
    pub bleu_smoothing: bool,
}

impl EvalFlags {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            auc_mode: if self.per_video { AucMode::PerVideo } else { AucMode::Concatenated },
            tiou_threshold: self.tiou_threshold,
            bleu: BleuOptions {
                smoothing: self.bleu_smoothing,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Output directory of a previous `run`.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[command(flatten)]
    pub annotations: AnnotationArgs,
    #[command(flatten)]
    pub flags: EvalFlags,
    /// Where to write metrics.{json,csv}; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub annotations: AnnotationArgs,
    #[command(flatten)]
    pub flags: EvalFlags,
    /// Comma-separated margins; `var` adds the variance mode.
    #[arg(long, value_delimiter = ',', value_parser = sweep::parse_margin)]
    pub margins: Vec<MarginMode>,
    /// Comma-separated window divisors.
    #[arg(long, value_delimiter = ',')]
    pub divisors: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Temporal ground truth to shade.
    #[arg(long)]
    pub temporal: Option<PathBuf>,
    /// Only these videos (repeatable); default all.
    #[arg(long = "video")]
    pub videos: Vec<String>,
    #[arg(long)]
    pub no_first_pass: bool,
    /// Defaults to `{run_dir}/plots`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a `run` did.
#[derive(Debug)]
pub struct RunReport {
    pub outcomes: Vec<VideoOutcome>,
    pub counts: BTreeMap<PromptKind, KindCounts>,
}

impl RunReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| matches!(o, VideoOutcome::Failed(_))).count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

/// Stage prerequisites: `val`/`vau` alone need stored detection results.
fn check_stage_order(config: &RunConfig, videos: &[datasets::Video]) -> Result<(), ConfigError> {
    if config.stages.contains(&Stage::Vad) {
        return Ok(());
    }
    let missing: Vec<String> = videos
        .iter()
        .map(|v| analysis_path(&config.out_dir, v.id()))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let requested: Vec<&str> = config.stages.iter().map(|s| s.as_str()).collect();
    Err(ConfigError::Invalid(format!(
        "stage(s) {} need detection results; run the vad stage first (missing {})",
        requested.join(","),
        missing.join(", ")
    )))
}

pub fn cmd_run_with(config: &RunConfig, client: &ModelClient) -> Result<RunReport, RunError> {
    config.validate()?;
    let videos = datasets::load_manifest(&config.manifest).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    check_stage_order(config, &videos)?;
    let spatial = match (&config.val_annotations, config.stages.contains(&Stage::Val)) {
        (Some(p), true) => Some(datasets::load_bbox_annotations(p).map_err(|e| ConfigError::Invalid(e.to_string()))?),
        _ => None,
    };
    let outcomes = Pipeline::new(config, client).run_batch(&videos, &config.stages, spatial.as_ref());
    pipeline::write_run_summary(&config.out_dir, &outcomes)
        .with_context(|| format!("cannot write run summary under {}", config.out_dir.display()))?;
    Ok(RunReport {
        outcomes,
        counts: client.counts(),
    })
}

pub fn cmd_run(config: &RunConfig) -> Result<RunReport, RunError> {
    let client = ModelClient::from_config(config).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cmd_run_with(config, &client)
}

pub fn cmd_evaluate(
    run_dir: &Path,
    annotations: &AnnotationSet,
    options: &EvalOptions,
    out: &Path,
) -> anyhow::Result<MetricReport> {
    let analyses = evaluate::load_analyses(run_dir)?;
    let report = evaluate::evaluate(&analyses, annotations, options)?;
    report.write(out).with_context(|| format!("cannot write metrics under {}", out.display()))?;
    Ok(report)
}

pub fn cmd_sweep_with(
    config: &RunConfig,
    client: &ModelClient,
    annotations: &AnnotationSet,
    grid: &SweepGrid,
    options: &EvalOptions,
) -> Result<Vec<SweepRow>, RunError> {
    config.validate()?;
    let videos = datasets::load_manifest(&config.manifest).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let rows = sweep::run_sweep(config, client, &videos, annotations, grid, options).map_err(anyhow::Error::from)?;
    sweep::write_sweep(&config.out_dir, &rows)
        .with_context(|| format!("cannot write sweep.csv under {}", config.out_dir.display()))?;
    Ok(rows)
}

pub fn cmd_plot(args: &PlotArgs) -> anyhow::Result<Vec<PathBuf>> {
    let analyses = evaluate::load_analyses(&args.run_dir)?;
    let temporal = match &args.temporal {
        Some(p) => datasets::load_temporal_annotations(p)?,
        None => Default::default(),
    };
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.join("plots"));
    let options = PlotOptions {
        first_pass: !args.no_first_pass,
        gate_band: true,
    };
    let mut written = Vec::new();
    for a in &analyses {
        if !args.videos.is_empty() && !args.videos.contains(&a.video_id) {
            continue;
        }
        let intervals = temporal.get(&a.video_id).map(Vec::as_slice).unwrap_or(&[]);
        let path = out.join(format!("{}.svg", a.video_id));
        pipeline::write_atomic(&path, plot::render_score_plot(a, intervals, options).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn log_counts(counts: &BTreeMap<PromptKind, KindCounts>) {
    for (kind, c) in counts {
        log::info!("{}: {} backend call(s), {} cache hit(s)", kind.as_str(), c.backend_calls, c.cache_hits);
    }
}

fn exit_for(e: &RunError) -> ExitCode {
    match e {
        RunError::Config(_) => ExitCode::from(2),
        RunError::Other(_) => ExitCode::from(1),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    let result: Result<(), RunError> = (|| match &cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let report = cmd_run(&config)?;
            log_counts(&report.counts);
            let failed = report.failed();
            if failed > 0 {
                log::warn!("{failed} of {} video(s) failed; see failures.json", report.outcomes.len());
            }
            println!(
                "{} video(s) processed, {failed} failed; results in {}",
                report.outcomes.len(),
                config.out_dir.display()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let annotations = args.annotations.load()?;
            let out = args.out.clone().unwrap_or_else(|| args.run_dir.clone());
            let report = cmd_evaluate(&args.run_dir, &annotations, &args.flags.options(), &out)?;
            print!("{}", report.to_csv().split("\n\n").next().unwrap_or_default());
            println!();
            Ok(())
        }
        Command::Sweep(args) => {
            let config = args.run.resolve()?;
            let annotations = args.annotations.load()?;
            let client = ModelClient::from_config(&config).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let grid = SweepGrid::new(&config, args.margins.clone(), args.divisors.clone());
            let rows = cmd_sweep_with(&config, &client, &annotations, &grid, &args.flags.options())?;
            log_counts(&client.counts());
            print!("{}", sweep::sweep_csv(&rows));
            Ok(())
        }
        Command::Plot(args) => {
            let written = cmd_plot(args)?;
            println!("{} plot(s) written", written.len());
            Ok(())
        }
        Command::Config => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_for(&e)
        }
    }
}

pub fn main() -> ExitCode {
    main_with(Cli::parse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "vadchain", "run", "--stages", "vad,vau", "--margin", "var", "--stride", "8", "--no-overlay",
            "--base-url", "http://h:1/v1",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let c = args.resolve().unwrap();
        assert_eq!(c.stages.iter().copied().collect::<Vec<_>>(), [Stage::Vad, Stage::Vau]);
        assert_eq!(c.margin, MarginMode::AdaptiveVariance);
        assert_eq!(c.stride, 8);
        assert!(!c.overlay);
        assert_eq!(c.endpoints.localizer.base_url, "http://h:1/v1");
    }

    #[test]
    fn sweep_grid_flags() {
        let cli = Cli::try_parse_from([
            "vadchain", "sweep", "--margins", "0.05,0.10,0.20,0.40,var", "--divisors", "5,10,15",
        ])
        .unwrap();
        let Command::Sweep(args) = cli.command else { panic!() };
        assert_eq!(args.margins.len(), 5);
        assert_eq!(args.divisors, [5, 10, 15]);
    }

    #[test]
    fn bad_flag_values_rejected() {
        assert!(Cli::try_parse_from(["vadchain", "run", "--stages", "vad,foo"]).is_err());
        assert!(Cli::try_parse_from(["vadchain", "run", "--margin", "0.9"]).is_err());
    }
}
