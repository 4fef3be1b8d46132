//! Static SVG figures.
//!
//! Output is deterministic except for an optional `<!-- generated ... -->`
//! comment on the second line, controlled by [`PlotOptions::timestamp`].

use std::fmt::{self, Write};

use crate::clinical::CurvePoint;
use crate::error::{Error, Result};
use crate::gaussmath::{CovarianceDecomposition, HeatmapGrid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    OffsetScatter,
    EllipseOverlay,
    AccuracyCurve,
    SigmaVsError,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::OffsetScatter,
        PlotKind::EllipseOverlay,
        PlotKind::AccuracyCurve,
        PlotKind::SigmaVsError,
    ];
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlotKind::OffsetScatter => "offset_scatter",
            PlotKind::EllipseOverlay => "ellipse_overlay",
            PlotKind::AccuracyCurve => "accuracy_curve",
            PlotKind::SigmaVsError => "sigma_vs_error",
        })
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown plot kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub kind: PlotKind,
    /// Ellipse semi-axes are `scale * σ`.
    pub ellipse_scale: f64,
}

impl PlotSpec {
    pub fn new(kind: PlotKind) -> Self {
        Self { kind, ellipse_scale: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ellipse_scale > 0.0 && self.ellipse_scale.is_finite()) {
            return Err(Error::invalid(format!("ellipse scale must be positive, got {}", self.ellipse_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    /// Written as a comment when set.
    pub timestamp: Option<String>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Trims floats to 4 decimals so files stay small and stable.
fn n(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(w: f64, h: f64, opts: &PlotOptions) -> Self {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        if let Some(ts) = &opts.timestamp {
            let _ = writeln!(out, "<!-- generated {} -->", esc(ts).replace("--", "- -"));
        }
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
            n(w),
            n(h),
            n(w),
            n(h)
        );
        let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>", n(w), n(h));
        if !opts.title.is_empty() {
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
                n(w / 2.0),
                esc(&opts.title)
            );
        }
        Self { out }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str) {
        let _ = writeln!(
            self.out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"1\"/>",
            n(a.0),
            n(a.1),
            n(b.0),
            n(b.1)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            n(x),
            n(y),
            esc(s)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Data-to-canvas mapping for a framed chart.
struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    w: f64,
    h: f64,
}

impl Axes {
    fn new(x: (f64, f64), y: (f64, f64), canvas: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if (b - a).abs() < 1e-12 { (a - 1.0, b + 1.0) } else { (a, b) };
        let (x0, x1) = pad(x);
        let (y0, y1) = pad(y);
        Self {
            x0,
            x1,
            y0,
            y1,
            left: 55.0,
            top: 28.0,
            w: canvas.0 - 75.0,
            h: canvas.1 - 68.0,
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.h
    }

    fn draw(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.w, self.top + self.h);
        let _ = writeln!(
            svg.out,
            "<rect class=\"frame\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
            n(l),
            n(t),
            n(self.w),
            n(self.h)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            svg.line((self.px(xv), b), (self.px(xv), b + 4.0), "black");
            svg.text(self.px(xv), b + 15.0, "middle", &n(xv));
            svg.line((l - 4.0, self.py(yv)), (l, self.py(yv)), "black");
            svg.text(l - 6.0, self.py(yv) + 3.0, "end", &n(yv));
        }
        svg.text((l + r) / 2.0, b + 32.0, "middle", xlabel);
        let _ = writeln!(
            svg.out,
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" transform=\"rotate(-90 14 {})\">{}</text>",
            n((t + b) / 2.0),
            n((t + b) / 2.0),
            esc(ylabel)
        );
    }
}

fn extent(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((a, b)) => Some((a.min(v), b.max(v))),
    })
}

fn legend(svg: &mut Svg, x: f64, y: f64, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 13.0 * i as f64;
        let _ = writeln!(svg.out, "<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"{}\"/>", n(x), n(yy - 7.0), color(i));
        svg.text(x + 12.0, yy, "start", name);
    }
}

/// Prediction offsets (pred − gt) per landmark, symmetric axes through 0.
pub fn offset_scatter(series: &[(String, Vec<Point>)], opts: &PlotOptions) -> Result<String> {
    let r = extent(series.iter().flat_map(|(_, pts)| pts.iter().flat_map(|p| [p.x.abs(), p.y.abs()])))
        .ok_or_else(|| Error::UndefinedInput("no offsets to plot".into()))?
        .1
        .max(1e-6);
    let mut svg = Svg::new(460.0, 460.0, opts);
    let ax = Axes::new((-r, r), (-r, r), (460.0, 460.0));
    ax.draw(&mut svg, "dx (px)", "dy (px)");
    svg.line((ax.px(-r), ax.py(0.0)), (ax.px(r), ax.py(0.0)), "#bbbbbb");
    svg.line((ax.px(0.0), ax.py(-r)), (ax.px(0.0), ax.py(r)), "#bbbbbb");
    for (i, (_, pts)) in series.iter().enumerate() {
        for p in pts.iter().filter(|p| p.is_finite()) {
            // Image y points down; flip so the scatter reads like the image.
            let _ = writeln!(
                svg.out,
                "<circle class=\"offset\" cx=\"{}\" cy=\"{}\" r=\"1.8\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                n(ax.px(p.x)),
                n(ax.py(-p.y)),
                color(i)
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|(s, _)| s.as_str()).collect();
    legend(&mut svg, ax.left + 8.0, ax.top + 14.0, &names);
    Ok(svg.finish())
}

/// One ellipse per landmark in image coordinates, optionally over the image.
pub fn ellipse_overlay(
    image: Option<&HeatmapGrid>,
    landmarks: &[(Point, CovarianceDecomposition)],
    spec: &PlotSpec,
    opts: &PlotOptions,
) -> Result<String> {
    spec.validate()?;
    let (w, h) = match image {
        Some(img) => (img.width as f64, img.height as f64),
        None => {
            let e = extent(landmarks.iter().flat_map(|(p, d)| {
                let r = spec.ellipse_scale * d.sigma_maj;
                [p.x + r, p.y + r]
            }))
            .ok_or_else(|| Error::UndefinedInput("no landmarks to plot".into()))?;
            (e.1.ceil().max(1.0), e.1.ceil().max(1.0))
        }
    };
    let scale = (480.0 / w.max(h)).max(1.0);
    let mut svg = Svg::new(w * scale, h * scale, opts);
    let _ = writeln!(svg.out, "<g transform=\"scale({})\">", n(scale));
    if let Some(img) = image {
        let max = img.max_value().max(1e-12);
        for y in 0..img.height {
            for x in 0..img.width {
                let g = (255.0 * (img.get(x, y) / max).clamp(0.0, 1.0)).round() as u8;
                // Pixel centers sit on integer coordinates.
                let _ = writeln!(
                    svg.out,
                    "<rect x=\"{}\" y=\"{}\" width=\"1\" height=\"1\" fill=\"#{g:02x}{g:02x}{g:02x}\"/>",
                    n(x as f64 - 0.5),
                    n(y as f64 - 0.5)
                );
            }
        }
    }
    for (i, (p, d)) in landmarks.iter().enumerate() {
        let _ = writeln!(
            svg.out,
            "<ellipse class=\"landmark\" data-landmark=\"{i}\" cx=\"{}\" cy=\"{}\" rx=\"{}\" ry=\"{}\" transform=\"rotate({} {} {})\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>",
            n(p.x),
            n(p.y),
            n(spec.ellipse_scale * d.sigma_maj),
            n(spec.ellipse_scale * d.sigma_min),
            n(d.theta_deg()),
            n(p.x),
            n(p.y),
            color(i),
            n(1.5 / scale)
        );
        let _ = writeln!(
            svg.out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>",
            n(p.x),
            n(p.y),
            n(2.0 / scale),
            color(i)
        );
    }
    svg.out.push_str("</g>\n");
    Ok(svg.finish())
}

/// Accuracy over the most certain fraction of images, one line per series.
pub fn accuracy_curve(series: &[(String, Vec<CurvePoint>)], opts: &PlotOptions) -> Result<String> {
    let (lo, _) = extent(series.iter().flat_map(|(_, c)| c.iter().map(|p| p.accuracy_percent)))
        .ok_or_else(|| Error::UndefinedInput("no curve points to plot".into()))?;
    let mut svg = Svg::new(520.0, 380.0, opts);
    let ax = Axes::new((0.0, 1.0), ((lo - 5.0).clamp(0.0, 95.0).floor(), 100.0), (520.0, 380.0));
    ax.draw(&mut svg, "fraction of images (by entropy)", "accuracy (%)");
    for (i, (_, c)) in series.iter().enumerate() {
        let pts: Vec<String> = c.iter().map(|p| format!("{},{}", n(ax.px(p.fraction)), n(ax.py(p.accuracy_percent)))).collect();
        let _ = writeln!(
            svg.out,
            "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            pts.join(" "),
            color(i)
        );
    }
    let names: Vec<&str> = series.iter().map(|(s, _)| s.as_str()).collect();
    legend(&mut svg, ax.left + ax.w - 110.0, ax.top + ax.h - 13.0 * names.len() as f64, &names);
    Ok(svg.finish())
}

/// Predicted uncertainty (e.g. `sqrt(σmaj σmin)`) against point error.
pub fn sigma_vs_error(series: &[(String, Vec<(f64, f64)>)], xlabel: &str, opts: &PlotOptions) -> Result<String> {
    let xs = extent(series.iter().flat_map(|(_, v)| v.iter().map(|p| p.0)))
        .ok_or_else(|| Error::UndefinedInput("no points to plot".into()))?;
    let ys = extent(series.iter().flat_map(|(_, v)| v.iter().map(|p| p.1))).unwrap_or((0.0, 1.0));
    let mut svg = Svg::new(480.0, 400.0, opts);
    let ax = Axes::new((0.0_f64.min(xs.0), xs.1), (0.0_f64.min(ys.0), ys.1), (480.0, 400.0));
    ax.draw(&mut svg, xlabel, "point error (px)");
    for (i, (_, v)) in series.iter().enumerate() {
        for &(x, y) in v.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(
                svg.out,
                "<circle class=\"point\" cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                n(ax.px(x)),
                n(ax.py(y)),
                color(i)
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|(s, _)| s.as_str()).collect();
    legend(&mut svg, ax.left + 8.0, ax.top + 14.0, &names);
    Ok(svg.finish())
}
