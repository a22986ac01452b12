//! Line charts of aggregated matrix results, written as plain SVG.
//!
//! Each dataset gets a row of two panels (AUC ratio and outlier EMD against
//! student size). Every panel has an 800×500 coordinate system; output bytes
//! depend only on the input rows.

use std::fmt::Write as _;

use crate::eval::{aggregate, GroupSummary, MetricsReport, Summary};
use crate::models::StudentId;
use crate::pipeline::Regime;

pub const PANEL_W: f64 = 800.0;
pub const PANEL_H: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

fn colour(r: Regime) -> &'static str {
    match r {
        Regime::Offline => "#1f77b4",
        Regime::Colearn => "#ff7f0e",
        Regime::ColearnOutlier => "#2ca02c",
        Regime::ColearnNoise => "#d62728",
    }
}

#[derive(Clone, Copy)]
enum Metric {
    AucRatio,
    EmdOutlier,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::AucRatio => "ROC-AUC ratio (student / teacher)",
            Metric::EmdOutlier => "EMD on anomalies (teacher vs student)",
        }
    }

    fn pick(self, g: &GroupSummary) -> Summary {
        match self {
            Metric::AucRatio => g.auc_ratio,
            Metric::EmdOutlier => g.emd_outlier,
        }
    }
}

/// About five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn panel(out: &mut String, x0: f64, y0: f64, title: &str, metric: Metric, groups: &[&GroupSummary]) {
    let series: Vec<(Regime, Vec<(usize, Summary)>)> = Regime::ALL
        .iter()
        .filter_map(|&r| {
            let pts: Vec<(usize, Summary)> = StudentId::ALL
                .iter()
                .enumerate()
                .filter_map(|(i, &s)| groups.iter().find(|g| g.regime == r && g.student_id == s).map(|g| (i, metric.pick(g))))
                .collect();
            (!pts.is_empty()).then_some((r, pts))
        })
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in &series {
        for (_, s) in pts {
            lo = lo.min(s.mean - s.std);
            hi = hi.max(s.mean + s.std);
        }
    }
    let pad = ((hi - lo) * 0.1).max(0.05 * hi.abs().max(1e-3));
    let (lo, hi) = (lo - pad, hi + pad);
    let (pw, ph) = (PANEL_W - LEFT - RIGHT, PANEL_H - TOP - BOTTOM);
    let px = |i: usize| LEFT + pw * (i as f64 + 0.5) / StudentId::ALL.len() as f64;
    let py = |v: f64| TOP + ph * (hi - v) / (hi - lo);

    let _ = writeln!(out, r#"<svg x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" viewBox="0 0 {PANEL_W} {PANEL_H}">"#);
    let _ = writeln!(out, r##"<rect width="{PANEL_W}" height="{PANEL_H}" fill="#ffffff"/>"##);
    let _ = writeln!(out, r#"<text x="{}" y="28" text-anchor="middle" font-size="18">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
    );
    for t in ticks(lo, hi) {
        let y = py(t);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="12">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(t));
    }
    for (i, s) in StudentId::ALL.iter().enumerate() {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{s}</text>"#, px(i), TOP + ph + 20.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">student (largest to smallest)</text>"#, LEFT + pw / 2.0, PANEL_H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(metric.label())
    );
    for (k, (regime, pts)) in series.iter().enumerate() {
        let c = colour(*regime);
        let path: Vec<String> = pts.iter().map(|(i, s)| format!("{:.2},{:.2}", px(*i), py(s.mean))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for (i, s) in pts {
            let x = px(*i);
            if s.std > 0.0 {
                let (ya, yb) = (py(s.mean - s.std), py(s.mean + s.std));
                let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{ya:.2}" x2="{x:.2}" y2="{yb:.2}" stroke="{c}"/>"#);
                for y in [ya, yb] {
                    let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{c}"/>"#, x - 4.0, x + 4.0);
                }
            }
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="{c}"/>"#, py(s.mean));
        }
        let ly = TOP + 10.0 + 22.0 * k as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12">{regime}</text>"#, lx + 30.0, ly + 4.0);
    }
    out.push_str("</svg>\n");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart for a non-empty set of runs.
pub fn render_svg(reports: &[MetricsReport]) -> Option<String> {
    if reports.is_empty() {
        return None;
    }
    let summary = aggregate(reports);
    let mut datasets: Vec<_> = summary.iter().map(|g| g.dataset).collect();
    datasets.dedup();
    let (w, h) = (2.0 * PANEL_W, PANEL_H * datasets.len() as f64);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    for (row, ds) in datasets.iter().enumerate() {
        let groups: Vec<&GroupSummary> = summary.iter().filter(|g| g.dataset == *ds).collect();
        let y = PANEL_H * row as f64;
        panel(&mut out, 0.0, y, &format!("{ds}: ROC-AUC ratio"), Metric::AucRatio, &groups);
        panel(&mut out, PANEL_W, y, &format!("{ds}: EMD on anomalies"), Metric::EmdOutlier, &groups);
    }
    out.push_str("</svg>\n");
    Some(out)
}
