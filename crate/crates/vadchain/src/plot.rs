//! Static SVG score curves.

use std::fmt::Write;

use vadchain_core::ScoreSeries;

use crate::datasets::Interval;
use crate::pipeline::{VideoAnalysis, DECISION_BOUNDARY};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const PAD_LEFT: f64 = 48.0;
const PAD_RIGHT: f64 = 16.0;
const PAD_TOP: f64 = 28.0;
const PAD_BOTTOM: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlotOptions {
    pub first_pass: bool,
    pub gate_band: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            first_pass: true,
            gate_band: true,
        }
    }
}

struct Frame {
    total: f64,
}

impl Frame {
    /// Left edge of 1-based frame `f`; `total + 1` is the right edge.
    fn x(&self, f: f64) -> f64 {
        PAD_LEFT + (f - 1.0) / self.total * (WIDTH - PAD_LEFT - PAD_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        PAD_TOP + (1.0 - v.clamp(0.0, 1.0)) * (HEIGHT - PAD_TOP - PAD_BOTTOM)
    }
}

/// Step curve: each position holds its value across the frames it covers.
fn step_points(series: &ScoreSeries, fr: &Frame) -> String {
    let mut pts = String::new();
    let t = series.total_frames();
    for (p, &v) in series.values().iter().enumerate() {
        let start = series.position_start_frame(p);
        let end = (start + series.stride()).min(t + 1);
        let y = fr.y(v);
        let _ = write!(pts, "{:.2},{:.2} {:.2},{:.2} ", fr.x(start as f64), y, fr.x(end as f64), y);
    }
    pts.trim_end().to_owned()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_score_plot(analysis: &VideoAnalysis, intervals: &[Interval], options: PlotOptions) -> String {
    let t = analysis.total_frames;
    let fr = Frame { total: t as f64 };
    let (x0, x1) = (fr.x(1.0), fr.x(t as f64 + 1.0));
    let (y_top, y_bottom) = (fr.y(1.0), fr.y(0.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{PAD_LEFT}" y="18" font-size="13">{} (surrogate {:.3}, {})</text>"#,
        escape(&analysis.video_id),
        analysis.surrogate,
        if analysis.video_label { "anomalous" } else { "normal" }
    );
    for iv in intervals {
        let a = fr.x(iv.start.max(1) as f64);
        let b = fr.x(iv.end.min(t) as f64 + 1.0);
        if b > a {
            let _ = writeln!(
                s,
                r##"<rect class="gt" x="{a:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="#f4c7c3"/>"##,
                b - a,
                y_bottom - y_top
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{x0:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444444"/>"##,
        x1 - x0,
        y_bottom - y_top
    );
    for v in [0.0, 0.5, 1.0] {
        let y = fr.y(v);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{x0:.2}" y="{:.2}">1</text>"#, y_bottom + 16.0);
    let _ = writeln!(s, r#"<text x="{x1:.2}" y="{:.2}" text-anchor="end">{t}</text>"#, y_bottom + 16.0);
    if options.gate_band {
        let m = analysis.gate.margin;
        for (v, dash) in [
            (DECISION_BOUNDARY, "none"),
            (DECISION_BOUNDARY - m, "4 3"),
            (DECISION_BOUNDARY + m, "4 3"),
        ] {
            let y = fr.y(v);
            let _ = writeln!(
                s,
                r##"<line class="gate" x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#999999" stroke-dasharray="{dash}"/>"##
            );
        }
    }
    if options.first_pass {
        let _ = writeln!(
            s,
            r##"<polyline class="first-pass" points="{}" fill="none" stroke="#aaaaaa" stroke-width="1"/>"##,
            step_points(&analysis.first_pass, &fr)
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline class="final" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        step_points(&analysis.final_scores, &fr)
    );
    s.push_str("</svg>\n");
    s
}
