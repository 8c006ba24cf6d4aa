//! Force and summary plots: plain data builders plus a small SVG renderer.
//!
//! Output is byte-deterministic: every coordinate is printed with six
//! decimals and nothing time- or environment-dependent is emitted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMeta, Matrix};
use crate::error::{Error, Result};
use crate::shapley::ShapExplanation;
use crate::sp::ExplanationMatrix;

pub const PLOT_WIDTH: f64 = 900.0;
pub const FORCE_HEIGHT: f64 = 160.0;
pub const DEFAULT_SUMMARY_FEATURES: usize = 15;

const FORCE_TOLERANCE: f64 = 1e-6;
const LABEL_WIDTH: f64 = 200.0;
const MARGIN: f64 = 40.0;
const POSITIVE: &str = "#ff0d57";
const NEGATIVE: &str = "#1e88e5";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub index: usize,
    pub name: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlotData {
    pub base_value: f64,
    pub fx: f64,
    /// By |phi| descending, lower index first on ties.
    pub contributions: Vec<Contribution>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub phi: f64,
    /// Min-max normalised feature value in `[0, 1]`.
    pub color: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFeature {
    pub index: usize,
    pub name: String,
    pub mean_abs_phi: f64,
    pub points: Vec<SummaryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPlotData {
    /// Display order, most important first.
    pub features: Vec<SummaryFeature>,
    pub n_samples: usize,
}

pub fn build_force_plot(e: &ShapExplanation, features: &[FeatureMeta]) -> Result<ForcePlotData> {
    let d = features.len();
    if e.phi.len() != d || e.instance.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: e.phi.len() });
    }
    e.check_efficiency(FORCE_TOLERANCE)?;
    let contributions: Vec<Contribution> = e
        .ranking()
        .into_iter()
        .map(|j| Contribution {
            index: j,
            name: features[j].name.clone(),
            value: e.instance[j],
            phi: e.phi[j],
        })
        .collect();
    let positive = contributions.iter().filter(|c| c.phi > 0.0).map(|c| c.index).collect();
    let negative = contributions.iter().filter(|c| c.phi < 0.0).map(|c| c.index).collect();
    Ok(ForcePlotData {
        base_value: e.base_value,
        fx: e.fx,
        contributions,
        positive,
        negative,
    })
}

pub fn build_summary_plot(
    m: &ExplanationMatrix,
    x: &Matrix,
    features: &[FeatureMeta],
) -> Result<SummaryPlotData> {
    let n = m.n_instances();
    let d = m.n_features();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.nrows() });
    }
    if x.ncols() != d || features.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.ncols() });
    }
    if n == 0 {
        return Err(Error::Empty("explanation matrix".into()));
    }
    let mut out: Vec<SummaryFeature> = (0..d)
        .map(|j| {
            let phi = m.values.column(j);
            let vals = x.column(j);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let points = phi
                .iter()
                .zip(&vals)
                .map(|(&p, &v)| SummaryPoint {
                    phi: p,
                    color: if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 },
                })
                .collect();
            SummaryFeature {
                index: j,
                name: features[j].name.clone(),
                mean_abs_phi: phi.iter().map(|p| p.abs()).sum::<f64>() / n as f64,
                points,
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then(a.index.cmp(&b.index)));
    Ok(SummaryPlotData { features: out, n_samples: n })
}

#[derive(Debug, Clone, Copy)]
pub enum Plot<'a> {
    Force(&'a ForcePlotData),
    Summary(&'a SummaryPlotData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Rows drawn in a summary plot.
    pub max_summary_features: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { max_summary_features: DEFAULT_SUMMARY_FEATURES }
    }
}

pub fn summary_height(rows: usize) -> f64 {
    30.0 * rows as f64 + 80.0
}

pub fn render_svg(plot: Plot<'_>, path: impl AsRef<Path>, opts: &RenderOptions) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg_string(plot, opts)).map_err(|e| Error::io(path, e))
}

pub fn render_svg_string(plot: Plot<'_>, opts: &RenderOptions) -> String {
    match plot {
        Plot::Force(p) => render_force(p),
        Plot::Summary(p) => render_summary(p, opts.max_summary_features),
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" { "0.000000".into() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
        w = num(PLOT_WIDTH),
        h = num(height)
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, num(PLOT_WIDTH), num(height));
}

fn render_force(p: &ForcePlotData) -> String {
    let pos_total: f64 = p.contributions.iter().filter(|c| c.phi > 0.0).map(|c| c.phi).sum();
    let neg_total: f64 = p.contributions.iter().filter(|c| c.phi < 0.0).map(|c| -c.phi).sum();
    // Positive pushes end at fx from the left, negative ones start at fx to the right.
    let mut lo = (p.fx - pos_total).min(p.base_value).min(p.fx);
    let mut hi = (p.fx + neg_total).max(p.base_value).max(p.fx);
    if hi - lo <= 0.0 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| MARGIN + (v - lo) / (hi - lo) * (PLOT_WIDTH - 2.0 * MARGIN);
    let axis_y = 100.0;
    let bar_y = 60.0;
    let bar_h = 24.0;

    let mut out = String::new();
    header(&mut out, FORCE_HEIGHT);
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#333333" stroke-width="1"/>"##,
        num(MARGIN),
        num(axis_y),
        num(PLOT_WIDTH - MARGIN),
        num(axis_y)
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let x = sx(v);
        let _ = writeln!(
            out,
            r##"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333333"/><text x="{x}" y="{}" text-anchor="middle">{}</text>"##,
            num(axis_y),
            num(axis_y + 4.0),
            num(axis_y + 16.0),
            num(v),
            x = num(x)
        );
    }

    let mut cursor = p.fx;
    for c in p.contributions.iter().filter(|c| c.phi > 0.0) {
        segment(&mut out, sx(cursor - c.phi), sx(cursor), bar_y, bar_h, POSITIVE, c);
        cursor -= c.phi;
    }
    let mut cursor = p.fx;
    for c in p.contributions.iter().filter(|c| c.phi < 0.0) {
        segment(&mut out, sx(cursor), sx(cursor - c.phi), bar_y, bar_h, NEGATIVE, c);
        cursor -= c.phi;
    }

    let bx = num(sx(p.base_value));
    let _ = writeln!(
        out,
        r##"<line x1="{bx}" y1="{}" x2="{bx}" y2="{}" stroke="#777777" stroke-dasharray="4,3"/><text x="{bx}" y="{}" text-anchor="middle" fill="#777777">base value {}</text>"##,
        num(bar_y - 20.0),
        num(axis_y),
        num(bar_y - 24.0),
        num(p.base_value)
    );
    let fx = num(sx(p.fx));
    let _ = writeln!(
        out,
        r##"<line x1="{fx}" y1="{}" x2="{fx}" y2="{}" stroke="#000000" stroke-width="2"/><text x="{fx}" y="{}" text-anchor="middle" font-weight="bold">f(x) {}</text>"##,
        num(bar_y - 4.0),
        num(bar_y + bar_h + 4.0),
        num(bar_y - 8.0),
        num(p.fx)
    );
    out.push_str("</svg>\n");
    out
}

fn segment(out: &mut String, x0: f64, x1: f64, y: f64, h: f64, color: &str, c: &Contribution) {
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="white" stroke-width="1"><title>{} = {} ({})</title></rect>"#,
        num(x0),
        num(y),
        num(x1 - x0),
        num(h),
        escape(&c.name),
        num(c.value),
        num(c.phi)
    );
    if x1 - x0 >= 60.0 {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" fill="white">{}</text>"#,
            num((x0 + x1) / 2.0),
            num(y + h / 2.0 + 4.0),
            escape(&c.name)
        );
    }
}

fn lerp_color(t: f64) -> String {
    // Blue (low) to red (high).
    let (r0, g0, b0) = (0x1e as f64, 0x88 as f64, 0xe5 as f64);
    let (r1, g1, b1) = (0xff as f64, 0x0d as f64, 0x57 as f64);
    let c = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r0, r1), c(g0, g1), c(b0, b1))
}

fn render_summary(p: &SummaryPlotData, max_rows: usize) -> String {
    let rows = &p.features[..p.features.len().min(max_rows)];
    let height = summary_height(rows.len());
    let max_abs = rows
        .iter()
        .flat_map(|f| f.points.iter().map(|q| q.phi.abs()))
        .fold(0.0, f64::max);
    let span = if max_abs > 0.0 { max_abs * 1.05 } else { 1.0 };
    let left = LABEL_WIDTH + 20.0;
    let right = PLOT_WIDTH - MARGIN;
    let sx = |v: f64| left + (v + span) / (2.0 * span) * (right - left);
    let top = 40.0;

    let mut out = String::new();
    header(&mut out, height);
    let zero = num(sx(0.0));
    let _ = writeln!(
        out,
        r##"<line x1="{zero}" y1="{}" x2="{zero}" y2="{}" stroke="#999999"/>"##,
        num(top - 10.0),
        num(height - 40.0)
    );
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#333333"/>"##,
        num(left),
        num(right),
        y = num(height - 40.0)
    );
    for k in 0..=4 {
        let v = -span + 2.0 * span * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            num(sx(v)),
            num(height - 26.0),
            num(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">Shapley value</text>"#,
        num((left + right) / 2.0),
        num(height - 8.0)
    );
    for (r, f) in rows.iter().enumerate() {
        let y = top + 30.0 * r as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            num(LABEL_WIDTH),
            num(y + 4.0),
            escape(&f.name)
        );
        for (i, q) in f.points.iter().enumerate() {
            let jitter = ((i % 7) as f64 - 3.0) * 2.0;
            let _ = writeln!(
                out,
                r#"<circle cx="{}" cy="{}" r="3" fill="{}" fill-opacity="0.8"/>"#,
                num(sx(q.phi)),
                num(y + jitter),
                lerp_color(q.color)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
