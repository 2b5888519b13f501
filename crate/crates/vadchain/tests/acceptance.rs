//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs with `cargo test --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
#[path = "support/fixture.rs"]
mod fixture;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use vadchain::cli::{cmd_evaluate, cmd_run_with, cmd_sweep_with};
use vadchain::core::metrics::{self, BleuOptions};
use vadchain::core::prompt::{DATASET_PRIORS, DEFAULT_TAG_CAP};
use vadchain::core::score::{
    gate_decision, gaussian_smooth, sliding_window_max_mean, variance_margin,
};
use vadchain::core::{BoundingBox, MarginMode, MediaRef, PromptKind, ScoreSeries, SmoothingConfig, TagList, Templates};
use vadchain::datasets::{self, AnnotationSet};
use vadchain::evaluate::EvalOptions;
use vadchain::pipeline::{load_analysis, Pipeline};
use vadchain::sweep::SweepGrid;

use fixture::Fixture;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn window_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    for case in 0..1000 {
        let n = rng.gen_range(1..=2000);
        let stride = rng.gen_range(1..=32);
        let t = (n - 1) * stride + rng.gen_range(1..=stride);
        // dyadic scores keep every window sum exact
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=1024) as f64 / 1024.0).collect();
        let s = ScoreSeries::new(values, stride, t).map_err(|e| e.to_string())?;
        let len = rng.gen_range(1..=t + 50);
        let w = sliding_window_max_mean(&s, len);
        let (start, mean) = oracles::window_scan(s.values(), stride, t, len);
        ensure!(
            w.start == start && w.mean_score == mean,
            "case {case}: got ({}, {}), oracle ({start}, {mean})",
            w.start,
            w.mean_score
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("1000 series exact, {:.2} s", elapsed.as_secs_f64()))
}

fn smoothing_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let cfg = SmoothingConfig::default();
    ensure!(cfg.radius() == 40, "radius {} for sigma 10 truncate 4", cfg.radius());
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.gen_range(1..=1500);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let out = gaussian_smooth(&ScoreSeries::new(values.clone(), 16, n * 16).unwrap(), &cfg);
        let want = oracles::gaussian_direct(&values, 10.0, 4.0);
        for (a, b) in out.values().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        ensure!(worst <= 1e-9, "case {case}: deviation {worst:e}");
        let c = rng.gen_range(0.0..=1.0);
        let flat = gaussian_smooth(&ScoreSeries::new(vec![c; n], 16, n * 16).unwrap(), &cfg);
        ensure!(flat.values().iter().all(|v| close(*v, c, 1e-9)), "case {case}: constant {c} moved");
    }
    Ok(format!("200 series, max deviation {worst:.1e}, radius 40"))
}

fn gate_law() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    for case in 0..10_000 {
        let s: f64 = rng.gen_range(0.0..=1.0);
        let m: f64 = rng.gen_range(0.0..0.5);
        let g = gate_decision(s, m, 0.5);
        ensure!(g.refine == ((s - 0.5).abs() <= m), "case {case}: s={s} m={m}");
        let wider = m + rng.gen_range(0.0..0.5);
        ensure!(!g.refine || gate_decision(s, wider, 0.5).refine, "case {case}: not monotone in m");
    }
    for case in 0..1000 {
        let n = rng.gen_range(1..=500);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let pop = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = ScoreSeries::new(values, 1, n).unwrap();
        ensure!(close(variance_margin(&s), pop, 1e-12), "case {case}: variance {} vs {pop}", variance_margin(&s));
        ensure!(
            close(MarginMode::AdaptiveVariance.resolve(&s), pop, 1e-12),
            "case {case}: adaptive margin differs from variance"
        );
    }
    Ok("10000 gate pairs, 1000 variance series".into())
}

fn metric_oracles() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    for case in 0..500 {
        let n = rng.gen_range(2..=500);
        let levels = rng.gen_range(1..=10);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.35)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let auc = metrics::roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let ap = metrics::average_precision(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(close(auc, oracles::auc_pairwise(&scores, &labels), 1e-9), "case {case}: auc {auc}");
        ensure!(close(ap, oracles::ap_thresholds(&scores, &labels), 1e-9), "case {case}: ap {ap}");
    }

    let one = |pred: BoundingBox, gt: BoundingBox| {
        metrics::tiou(&BTreeMap::from([(1, vec![pred])]), &BTreeMap::from([(1, vec![gt])]), 0.5).unwrap()
    };
    let gt = BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0, 1.0);
    ensure!(one(BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0, 0.9), gt) == 1.0, "identical box");
    ensure!(one(BoundingBox::from_corners(0.0, 0.0, 10.0, 10.0, 0.4), gt) == 0.0, "low confidence");
    ensure!(
        one(BoundingBox::from_corners(5.0, 0.0, 15.0, 10.0, 0.9), gt) == 50.0 / 150.0,
        "half-overlap box"
    );

    // clipped n-gram precisions 5/7, 3/6, 2/5, 1/4 and no brevity penalty
    let b = metrics::bleu("the cat sat on the mat today", "the cat sat on a mat", BleuOptions::default()).unwrap();
    ensure!(close(b, (5.0 / 7.0 * 0.5 * 0.4 * 0.25f64).powf(0.25), 1e-9), "bleu {b}");
    let b = metrics::bleu("The cat sat on the", "the cat sat on the mat", BleuOptions::default()).unwrap();
    ensure!(close(b, (-0.2f64).exp(), 1e-9), "bleu with brevity penalty {b}");

    let r = metrics::rouge_l("a b c d", "a c d e").unwrap();
    let lcs = oracles::lcs_recursive(&["a", "b", "c", "d"], &["a", "c", "d", "e"]) as f64;
    let (p, rec) = (lcs / 4.0, lcs / 4.0);
    ensure!(close(r, (1.0 + 1.44) * rec * p / (rec + 1.44 * p), 1e-9), "rouge {r}");
    let cand: Vec<&str> = "the cat sat on the mat today".split(' ').collect();
    let refr: Vec<&str> = "the cat sat on a mat".split(' ').collect();
    let lcs = oracles::lcs_recursive(&cand, &refr) as f64;
    let (p, rec) = (lcs / 7.0, lcs / 6.0);
    let r = metrics::rouge_l("the cat sat on the mat today", "the cat sat on a mat").unwrap();
    ensure!(close(r, (1.0 + 1.44) * rec * p / (rec + 1.44 * p), 1e-9), "rouge {r}");
    Ok("500 tied instances, TIoU 1 / 0 / 1/3, BLEU and ROUGE-L hand cases".into())
}

fn golden(name: &str) -> Result<String, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn prompt_goldens() -> Outcome {
    let t = Templates::default();
    let media = |n: usize| -> Vec<MediaRef> { (1..=n).map(|i| MediaRef::new(format!("frames/{i:06}.png"))).collect() };
    let variants = [
        ("absent", None),
        ("empty", Some(TagList::empty())),
        ("tags", Some(TagList::from_phrases(["fighting", "hitting with sticks"], DEFAULT_TAG_CAP))),
    ];
    let mut checked = 0;
    let mut check = |got: String, name: String| -> Result<(), String> {
        checked += 1;
        ensure!(got == golden(&name)?, "{name} differs");
        Ok(())
    };
    check(t.caption(&media(10)).render_canonical(), "caption.txt".into())?;
    check(t.extract(&media(3)).render_canonical(), "extract.txt".into())?;
    for (label, tags) in &variants {
        for (preset, prior) in DATASET_PRIORS {
            let got = t.vad(prior, "Two people fight near a car.", tags.as_ref()).render_canonical();
            check(got, format!("vad_{preset}_{label}.txt"))?;
        }
        check(
            t.loc(&MediaRef::new("frames/000017.png"), tags.as_ref()).render_canonical(),
            format!("loc_{label}.txt"),
        )?;
        check(t.vau(&media(16), tags.as_ref()).render_canonical(), format!("vau_{label}.txt"))?;
    }
    Ok(format!("{checked} renders byte-identical"))
}

fn analyses_of(out: &Path) -> Result<BTreeMap<String, vadchain::pipeline::VideoAnalysis>, String> {
    ["normal", "anomalous", "ambiguous"]
        .into_iter()
        .map(|id| load_analysis(out, id).map(|a| (id.to_owned(), a)).map_err(|e| e.to_string()))
        .collect()
}

fn annotations(fx: &Fixture) -> AnnotationSet {
    AnnotationSet {
        temporal: datasets::load_temporal_annotations(&fx.temporal).unwrap(),
        ..AnnotationSet::default()
    }
}

fn mock_end_to_end(fx: &Fixture) -> Outcome {
    let started = Instant::now();
    let mut outputs = Vec::new();
    for run in ["run-a", "run-b"] {
        let config = fx.config(run);
        let (client, mock) = fx.client(&config);
        let report = cmd_run_with(&config, &client).map_err(|e| e.to_string())?;
        ensure!(report.failed() == 0, "{run}: {} video(s) failed", report.failed());

        let analyses = analyses_of(&config.out_dir)?;
        for (id, a) in &analyses {
            ensure!(a.gate.refine == (id == "ambiguous"), "{run}: {id} refine = {}", a.gate.refine);
        }
        let amb = &analyses["ambiguous"].surrogate;
        ensure!(close(*amb, 0.52, 1e-12), "ambiguous first-pass window mean {amb}");

        let mut law: BTreeMap<PromptKind, usize> = BTreeMap::new();
        for v in fixture::videos() {
            let a = &analyses[v.id];
            let f_sel = if a.surrogate > 0.5 { a.vau_frames(config.vau_sample_count).len() } else { 0 };
            ensure!(a.localizations.len() == f_sel, "{run}: {} localized {} frames", v.id, a.localizations.len());
            for (kind, n) in fixture::expected_calls(&v, a.gate.refine, f_sel) {
                *law.entry(kind).or_default() += n;
            }
        }
        for (kind, want) in &law {
            ensure!(mock.calls(*kind) == *want, "{run}: {} calls {} != law {want}", kind.as_str(), mock.calls(*kind));
        }
        ensure!(mock.total_calls() == law.values().sum::<usize>(), "{run}: unexpected extra calls");
        outputs.push(fixture::analysis_files(&config.out_dir));
    }
    ensure!(outputs[0] == outputs[1], "analysis JSON differs between runs");

    let out = fx.config("run-a").out_dir;
    let report = cmd_evaluate(&out, &annotations(fx), &EvalOptions::default(), &out).map_err(|e| format!("{e:#}"))?;
    let auc = report.auc.value().ok_or("AUC absent")?;
    ensure!(close(auc, fixture::EXPECTED_AUC, 1e-9), "AUC {auc} vs oracle {}", fixture::EXPECTED_AUC);

    // the same number straight from the pairwise oracle on the stored curves
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let gt = annotations(fx).temporal;
    for a in analyses_of(&out)?.values() {
        scores.extend(vadchain::core::score::expand_to_frames(&a.final_scores));
        labels.extend(datasets::frame_label_vector(a.total_frames, gt.get(&a.video_id).map_or(&[][..], |v| v)));
    }
    let pairwise = oracles::auc_pairwise(&scores, &labels);
    ensure!(close(auc, pairwise, 1e-9), "AUC {auc} vs pairwise {pairwise}");
    let ap = report.ap.value().ok_or("AP absent")?;
    ensure!(close(ap, fixture::EXPECTED_AP, 1e-9), "AP {ap} vs oracle {}", fixture::EXPECTED_AP);

    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("law holds, outputs identical, AUC {auc:.6}, {:.2} s", elapsed.as_secs_f64()))
}

fn algorithm_branching(fx: &Fixture) -> Outcome {
    let config = fx.config("branching");
    let (client, mock) = fx.client(&config);
    cmd_run_with(&config, &client).map_err(|e| e.to_string())?;
    let analyses = analyses_of(&config.out_dir)?;

    let a = &analyses["anomalous"];
    ensure!(close(a.surrogate, 0.9, 1e-12), "anomalous surrogate {}", a.surrogate);
    let f_sel = a.vau_frames(config.vau_sample_count);
    ensure!(f_sel.len() == 16, "|F_sel| = {}", f_sel.len());
    ensure!(a.localizations.len() == f_sel.len(), "{} localized frames", a.localizations.len());
    let q = a.vau_query.as_ref().ok_or("no VAU query recorded")?;
    ensure!(q.overlaid && q.frames == f_sel, "VAU query {q:?}");
    for &f in &f_sel {
        let overlay = config.out_dir.join("overlays/anomalous").join(format!("{f:06}.png"));
        let drawn = image::open(&overlay).map_err(|e| format!("{}: {e}", overlay.display()))?.to_rgb8();
        let plain = image::open(fx.frame("anomalous", f)).unwrap().to_rgb8();
        ensure!(drawn != plain, "frame {f} overlay has no boxes");
    }
    let loc_requests = mock
        .requests()
        .into_iter()
        .filter(|r| r.kind() == PromptKind::Loc && r.bundle.media().any(|m| m.as_str().contains("/anomalous/")))
        .count();
    ensure!(loc_requests == f_sel.len(), "{loc_requests} localization requests");

    let videos = datasets::load_manifest(&config.manifest).map_err(|e| e.to_string())?;
    let video = |id: &str| videos.iter().find(|v| v.id() == id).unwrap();
    let pipeline = Pipeline::new(&config, &client);
    for (id, surrogate) in [("normal", analyses["normal"].surrogate), ("normal", 0.5), ("ambiguous", 0.5)] {
        ensure!(surrogate <= 0.5, "{id} surrogate {surrogate}");
        let mut a = analyses[id].clone();
        a.surrogate = surrogate;
        a.localizations.clear();
        mock.reset_counts();
        pipeline.run_vau(video(id), &mut a).map_err(|e| e.to_string())?;
        ensure!(mock.calls(PromptKind::Loc) == 0, "{id} at {surrogate}: {} localizations", mock.calls(PromptKind::Loc));
        ensure!(a.localizations.is_empty() && !a.vau_query.unwrap().overlaid, "{id} at {surrogate} overlaid");
    }
    Ok(format!("0.9 -> {} localizations with overlays; 0.1 and 0.5 -> 0", f_sel.len()))
}

fn cache_idempotence(fx: &Fixture) -> Outcome {
    let config = fx.config("cached");
    let (first, _) = fx.client(&config);
    cmd_run_with(&config, &first).map_err(|e| e.to_string())?;
    let before = fixture::analysis_files(&config.out_dir);
    let (client, mock) = fx.client(&config);
    cmd_run_with(&config, &client).map_err(|e| e.to_string())?;
    ensure!(mock.total_calls() == 0, "re-run made {} backend calls", mock.total_calls());
    ensure!(client.total_backend_calls() == 0, "client counted backend calls on re-run");
    ensure!(fixture::analysis_files(&config.out_dir) == before, "re-run changed the analyses");
    Ok("re-run served from cache with identical outputs".into())
}

fn sweep_structure(fx: &Fixture) -> Outcome {
    let expect_header = "margin,window_length,auc,ap";
    let margins = [0.05, 0.10, 0.20, 0.40].map(MarginMode::Fixed);
    let cases = [
        ("sweep-m", margins.iter().copied().chain([MarginMode::AdaptiveVariance]).collect(), vec![], 5),
        ("sweep-l", vec![], vec![5, 10, 15], 3),
    ];
    let mut seen = Vec::new();
    for (run, margins, divisors, rows) in cases {
        let config = fx.config(run);
        let (client, _) = fx.client(&config);
        let grid = SweepGrid::new(&config, margins, divisors);
        let got = cmd_sweep_with(&config, &client, &annotations(fx), &grid, &EvalOptions::default())
            .map_err(|e| e.to_string())?;
        ensure!(got.len() == rows, "{run}: {} rows", got.len());
        let csv = std::fs::read_to_string(config.out_dir.join("sweep.csv")).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = csv.lines().collect();
        ensure!(lines.len() == rows + 1 && lines[0] == expect_header, "{run}: csv {csv:?}");
        ensure!(got.iter().all(|r| r.auc.value().is_some() && r.ap.value().is_some()), "{run}: missing values");
        seen.push(got);
    }
    let labels: Vec<&str> = seen[0].iter().map(|r| r.margin.as_str()).collect();
    ensure!(labels == ["m=0.05", "m=0.10", "m=0.20", "m=0.40", "m_V=Var(S_V)"], "margin labels {labels:?}");
    let windows: Vec<&str> = seen[1].iter().map(|r| r.window_length.as_str()).collect();
    ensure!(
        windows == ["l=max(300,T/5)", "l=max(300,T/10)", "l=max(300,T/15)"],
        "window labels {windows:?}"
    );
    let default_row = &seen[0][0];
    ensure!(
        default_row.auc.value().is_some_and(|v| close(v, fixture::EXPECTED_AUC, 1e-9)),
        "m=0.05 row disagrees with run + evaluate"
    );
    Ok("5 margin rows and 3 window rows".into())
}

fn main() {
    let fx = Fixture::build();
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 9] = [
        ("window oracle", Box::new(window_oracle)),
        ("smoothing oracle", Box::new(smoothing_oracle)),
        ("gate law", Box::new(gate_law)),
        ("metric oracles", Box::new(metric_oracles)),
        ("prompt goldens", Box::new(prompt_goldens)),
        ("mock end-to-end", Box::new(|| mock_end_to_end(&fx))),
        ("localization branching", Box::new(|| algorithm_branching(&fx))),
        ("cache idempotence", Box::new(|| cache_idempotence(&fx))),
        ("sweep structure", Box::new(|| sweep_structure(&fx))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
