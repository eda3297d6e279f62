//! Static SVG rendering of error-rate curves read from report CSVs.
//!
//! Output bytes depend only on the rows and options: coordinates are printed
//! with fixed precision, fonts and ids are fixed, and curves are ordered by
//! series and lattice size.
//!
//! ```
//! use qecc_lab::plot::{render_curves, Metric, PlotOptions};
//! use qecc_lab::report::parse_csv;
//!
//! let csv = "decoder,code,L,channel,sector,rounds,q,p,samples,bits,bit_errors,ber,ber_lo,ber_hi,logical_failures,ler,ler_lo,ler_hi\n\
//!            mwpm,toric,4,independent,x,1,0,0.05,1000,32000,900,0.028,0.026,0.030,40,0.04,0.03,0.05\n\
//!            mwpm,toric,4,independent,x,1,0,0.1,1000,32000,2500,0.078,0.075,0.081,150,0.15,0.13,0.17\n";
//! let rows = parse_csv(csv).unwrap();
//! let svg = render_curves(&rows, &PlotOptions::default()).unwrap();
//! assert_eq!(svg.matches("<polyline").count(), 1);
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::report::{curves_by_series, estimate_threshold, ReportRow, Threshold};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const FONT: &str = "DejaVu Sans, Arial, sans-serif";
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const DASHES: [&str; 3] = ["", "6,3", "2,2"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Ler,
    Ber,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ler => "LER",
            Metric::Ber => "BER",
        }
    }

    fn value(self, row: &ReportRow) -> f64 {
        match self {
            Metric::Ler => row.ler,
            Metric::Ber => row.ber,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ler" => Ok(Metric::Ler),
            "ber" => Ok(Metric::Ber),
            _ => Err(invalid(format!("unknown metric {s:?} (expected ler or ber)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOptions {
    pub metric: Metric,
    /// Draw a vertical marker at the estimated threshold of each series
    /// (LER plots only; series without an estimate get none).
    pub thresholds: bool,
    pub title: Option<String>,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Renders one curve per (series, `L`), log-scaled on the vertical axis.
/// Points with a zero rate cannot be placed on a log axis and are skipped.
pub fn render_curves(rows: &[ReportRow], opts: &PlotOptions) -> Result<String> {
    if rows.is_empty() {
        return Err(invalid("nothing to plot"));
    }
    let mut grouped: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if !r.p.is_finite() {
            return Err(invalid(format!("non-finite p in row for {}", r.series_key())));
        }
        grouped
            .entry((r.series_key(), r.l))
            .or_default()
            .push((r.p, opts.metric.value(r)));
    }
    let decoders: BTreeMap<&str, ()> = rows.iter().map(|r| (r.decoder.as_str(), ())).collect();
    let series_keys: BTreeMap<String, ()> = rows.iter().map(|r| (r.series_key(), ())).collect();
    let short_labels = decoders.len() == series_keys.len();
    let decoder_of: BTreeMap<String, String> = rows.iter().map(|r| (r.series_key(), r.decoder.clone())).collect();
    let series: Vec<Series> = grouped
        .into_iter()
        .map(|((key, l), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let name = if short_labels { decoder_of[&key].clone() } else { key };
            Series {
                label: format!("{name} L={l}"),
                points,
            }
        })
        .collect();

    let markers: Vec<(String, f64)> = if opts.thresholds && opts.metric == Metric::Ler {
        let mut out = Vec::new();
        for (key, curves) in curves_by_series(rows) {
            if let Ok(Threshold::Found { p, .. }) = estimate_threshold(&curves) {
                let name = if short_labels { decoder_of[&key].clone() } else { key };
                out.push((name, p));
            }
        }
        out
    } else {
        Vec::new()
    };

    let (x0, x1) = x_range(rows.iter().map(|r| r.p).chain(markers.iter().map(|m| m.1)));
    let (d0, d1) = decade_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |p: f64| LEFT + (p - x0) / (x1 - x0) * plot_w;
    let sy = |v: f64| TOP + (d1 as f64 - v.log10()) / (d1 - d0) as f64 * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="{FONT}" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(title) = &opts.title {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(title)
        );
    }

    // Decade lines, minor lines at 2..9 times each decade, then p ticks.
    let _ = writeln!(svg, r##"<g id="y-grid" stroke="#cccccc" stroke-width="1">"##);
    for d in d0..=d1 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(svg, r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, LEFT + plot_w);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g id="minor-grid" stroke="#eeeeee" stroke-width="1">"##);
    for d in d0..d1 {
        for m in 2..=9 {
            let y = sy(m as f64 * 10f64.powi(d));
            let _ = writeln!(svg, r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, LEFT + plot_w);
        }
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g id="x-grid" stroke="#cccccc" stroke-width="1">"##);
    let xticks = x_ticks(x0, x1);
    for &t in &xticks {
        let x = sx(t);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}"/>"#, TOP + plot_h);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<g id="tick-labels">"#);
    for d in d0..=d1 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    if d1 - d0 <= 2 {
        for d in d0..d1 {
            for m in [2, 5] {
                let y = sy(m as f64 * 10f64.powi(d));
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{m}e{d}</text>"#,
                    LEFT - 6.0,
                    y + 4.0
                );
            }
        }
    }
    for &t in &xticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(t),
            TOP + plot_h + 16.0,
            trim_number(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">physical error rate p</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        opts.metric.name()
    );
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g id="curves" fill="none" stroke-width="1.5">"#);
    for (i, s) in series.iter().enumerate() {
        let (color, dash) = style(i);
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(p, v)| format!("{:.2},{:.2}", sx(p), sy(v)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let _ = writeln!(
            svg,
            r#"<polyline id="curve-{i}" stroke="{color}"{dash_attr} points="{}"/>"#,
            pts.join(" ")
        );
        for pt in &pts {
            let (x, y) = pt.split_once(',').expect("formatted as x,y");
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}" stroke="none"/>"#);
        }
    }
    let _ = writeln!(svg, "</g>");

    if !markers.is_empty() {
        let _ = writeln!(svg, r#"<g id="thresholds" stroke="black" stroke-dasharray="4,4">"#);
        for (i, (name, p)) in markers.iter().enumerate() {
            let x = sx(*p);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
                TOP + plot_h
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" stroke="none" font-size="10">{} p_th={:.4}</text>"#,
                x + 3.0,
                TOP + 12.0 + 12.0 * i as f64,
                escape(name),
                p
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let _ = writeln!(svg, r#"<g id="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let (color, dash) = style(i);
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"{dash_attr}/>"#,
            x + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 30.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn style(i: usize) -> (&'static str, &'static str) {
    (COLORS[i % COLORS.len()], DASHES[(i / COLORS.len()) % DASHES.len()])
}

fn x_range(ps: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = ps.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if hi - lo < 1e-12 {
        return (lo - 0.01, hi + 0.01);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn decade_range(values: impl Iterator<Item = f64>) -> (i32, i32) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-3, 0);
    }
    let d0 = lo.log10().floor() as i32;
    let d1 = (hi.log10().ceil() as i32).max(d0 + 1);
    (d0, d1)
}

/// Round steps of 1, 2 or 5 times a power of ten, at most eight per axis.
fn x_ticks(x0: f64, x1: f64) -> Vec<f64> {
    let raw = (x1 - x0) / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (x0 / step).ceil() as i64;
    let last = (x1 / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::parse_csv;

    fn row(decoder: &str, l: usize, p: f64, ler: f64) -> String {
        format!("{decoder},toric,{l},independent,x,1,0,{p},1000,32000,100,0.003125,0.002,0.004,{},{ler},0,1", (ler * 1000.0) as u64)
    }

    fn rows(lines: &[String]) -> Vec<ReportRow> {
        let mut text = crate::report::CSV_HEADER.to_string();
        for l in lines {
            text.push('\n');
            text.push_str(l);
        }
        parse_csv(&text).unwrap()
    }

    #[test]
    fn single_two_point_curve_is_one_polyline() {
        let r = rows(&[row("mwpm", 4, 0.05, 0.01), row("mwpm", 4, 0.1, 0.2)]);
        let svg = render_curves(&r, &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        assert_eq!(svg[start..end].split(' ').count(), 2);
    }

    #[test]
    fn one_curve_per_decoder_and_size_with_legend() {
        let r = rows(&[
            row("mwpm", 4, 0.05, 0.01),
            row("mwpm", 6, 0.05, 0.005),
            row("qecct", 4, 0.05, 0.02),
            row("mwpm", 4, 0.1, 0.2),
        ]);
        let svg = render_curves(&r, &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        for label in ["mwpm L=4", "mwpm L=6", "qecct L=4"] {
            assert!(svg.contains(&format!(">{label}</text>")), "{label}");
        }
        assert!(svg.contains(">1e-3</text>") && svg.contains(">1e0</text>"));
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let r = rows(&[
            row("mwpm", 4, 0.05, 0.1),
            row("mwpm", 6, 0.05, 0.05),
            row("mwpm", 4, 0.1, 0.2),
            row("mwpm", 6, 0.1, 0.2),
            row("mwpm", 4, 0.15, 0.3),
            row("mwpm", 6, 0.15, 0.4),
        ]);
        let opts = PlotOptions {
            thresholds: true,
            ..PlotOptions::default()
        };
        let a = render_curves(&r, &opts).unwrap();
        assert_eq!(a, render_curves(&r, &opts).unwrap());
        assert!(a.contains("id=\"thresholds\""));
        assert!(render_curves(&[], &opts).is_err());
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(x_ticks(0.045, 0.155).len(), 5);
        assert_eq!(trim_number(0.1), "0.1");
        assert_eq!(decade_range([0.02, 0.3].into_iter()), (-2, 0));
        assert_eq!(decade_range([0.5].into_iter()), (-1, 0));
    }
}
