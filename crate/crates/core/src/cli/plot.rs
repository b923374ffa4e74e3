//! Static figures written as SVG and PNG from one shape list. The PNG is a
//! raster of the same shapes without the text labels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

type Color = [u8; 3];

const BLACK: Color = [20, 20, 20];
const GREY: Color = [150, 150, 150];
const RED: Color = [214, 39, 40];
const BLUE: Color = [31, 119, 180];
const WHITE: Color = [255, 255, 255];

#[derive(Debug, Clone)]
enum Shape {
    Rect { x: f64, y: f64, w: f64, h: f64, fill: Option<Color>, stroke: Option<Color> },
    Line { points: Vec<(f64, f64)>, color: Color, dashed: bool },
    Dot { x: f64, y: f64, r: f64, color: Color },
    Text { x: f64, y: f64, size: f64, text: String, middle: bool },
    /// Marks the start of a named group, e.g. one heatmap.
    Group(String),
    EndGroup,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub width: u32,
    pub height: u32,
    shapes: Vec<Shape>,
}

fn hex(c: Color) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    fn new(width: u32, height: u32) -> Self {
        let mut f = Figure { width, height, shapes: Vec::new() };
        f.rect(0.0, 0.0, width as f64, height as f64, Some(WHITE), None);
        f
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: Option<Color>, stroke: Option<Color>) {
        self.shapes.push(Shape::Rect { x, y, w, h, fill, stroke });
    }

    fn line(&mut self, points: Vec<(f64, f64)>, color: Color, dashed: bool) {
        self.shapes.push(Shape::Line { points, color, dashed });
    }

    fn text(&mut self, x: f64, y: f64, size: f64, text: impl Into<String>, middle: bool) {
        self.shapes.push(Shape::Text { x, y, size, text: text.into(), middle });
    }

    /// Number of groups with the given class, e.g. `heatmap`.
    pub fn count_groups(&self, class: &str) -> usize {
        self.shapes
            .iter()
            .filter(|s| matches!(s, Shape::Group(c) if c == class))
            .count()
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
            w = self.width,
            h = self.height
        );
        for shape in &self.shapes {
            match shape {
                Shape::Rect { x, y, w, h, fill, stroke } => {
                    let fill = fill.map_or("none".to_string(), hex);
                    let stroke = stroke.map_or(String::new(), |c| format!(r#" stroke="{}""#, hex(c)));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{stroke}/>"#
                    );
                }
                Shape::Line { points, color, dashed } => {
                    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                        pts.join(" "),
                        hex(*color)
                    );
                }
                Shape::Dot { x, y, r, color } => {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{}"/>"#, hex(*color));
                }
                Shape::Text { x, y, size, text, middle } => {
                    let anchor = if *middle { r#" text-anchor="middle""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}"{anchor}>{}</text>"#,
                        escape(text)
                    );
                }
                Shape::Group(class) => {
                    let _ = writeln!(s, r#"<g class="{class}">"#);
                }
                Shape::EndGroup => s.push_str("</g>\n"),
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_png(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(WHITE));
        for shape in &self.shapes {
            match shape {
                Shape::Rect { x, y, w, h, fill, stroke } => {
                    let (x0, y0) = (x.round() as i32, y.round() as i32);
                    let (pw, ph) = ((x + w).round() as i32 - x0, (y + h).round() as i32 - y0);
                    if pw <= 0 || ph <= 0 {
                        continue;
                    }
                    let r = Rect::at(x0, y0).of_size(pw as u32, ph as u32);
                    if let Some(c) = fill {
                        draw_filled_rect_mut(&mut img, r, Rgb(*c));
                    }
                    if let Some(c) = stroke {
                        imageproc::drawing::draw_hollow_rect_mut(&mut img, r, Rgb(*c));
                    }
                }
                Shape::Line { points, color, .. } => {
                    for w in points.windows(2) {
                        let (a, b) = (w[0], w[1]);
                        draw_line_segment_mut(&mut img, (a.0 as f32, a.1 as f32), (b.0 as f32, b.1 as f32), Rgb(*color));
                    }
                }
                Shape::Dot { x, y, r, color } => {
                    draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), *r as i32, Rgb(*color));
                }
                Shape::Text { .. } | Shape::Group(_) | Shape::EndGroup => {}
            }
        }
        img
    }

    /// Writes `<stem>.svg` and `<stem>.png`.
    pub fn save(&self, stem: &Path) -> Result<Vec<PathBuf>> {
        if let Some(parent) = stem.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let svg = stem.with_extension("svg");
        fs::write(&svg, self.to_svg()).map_err(|e| Error::io(&svg, e))?;
        let png = stem.with_extension("png");
        self.to_png()
            .save(&png)
            .map_err(|e| Error::io(&png, std::io::Error::other(e)))?;
        Ok(vec![svg, png])
    }
}

/// Maps `v` in [0, 1] onto a dark-blue → yellow ramp.
fn ramp(v: f64) -> Color {
    const STOPS: [Color; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (STOPS[i][k] as f64 * (1.0 - f) + STOPS[i + 1][k] as f64 * f).round() as u8;
    }
    c
}

struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

fn axes(fig: &mut Figure, frame: &Frame, x_range: (f64, f64), y_range: (f64, f64), x_ticks: &[(f64, String)]) {
    fig.rect(frame.x, frame.y, frame.w, frame.h, None, Some(BLACK));
    let (y0, y1) = y_range;
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let py = frame.y + frame.h * (1.0 - k as f64 / 4.0);
        fig.line(vec![(frame.x - 4.0, py), (frame.x, py)], BLACK, false);
        fig.text(frame.x - 6.0, py + 4.0, 10.0, format!("{v:.2}"), false);
        if let Some(Shape::Text { x, text, .. }) = fig.shapes.last_mut() {
            *x -= 6.0 * text.len() as f64;
        }
    }
    let (x0, x1) = x_range;
    for (v, label) in x_ticks {
        let px = frame.x + frame.w * (v - x0) / (x1 - x0).max(f64::MIN_POSITIVE);
        fig.line(vec![(px, frame.y + frame.h), (px, frame.y + frame.h + 4.0)], BLACK, false);
        fig.text(px, frame.y + frame.h + 16.0, 10.0, label.clone(), true);
    }
}

fn series_points(frame: &Frame, values: &[f64], xs: &[f64], x_range: (f64, f64), y_range: (f64, f64)) -> Vec<(f64, f64)> {
    let sx = frame.w / (x_range.1 - x_range.0).max(f64::MIN_POSITIVE);
    let sy = frame.h / (y_range.1 - y_range.0).max(f64::MIN_POSITIVE);
    xs.iter()
        .zip(values)
        .map(|(&x, &v)| (frame.x + (x - x_range.0) * sx, frame.y + frame.h - (v - y_range.0) * sy))
        .collect()
}

/// Ground truth against prediction for both feet of one window.
pub fn estimation_figure(
    title: &str,
    truth: [ArrayView1<'_, f32>; 2],
    pred: [ArrayView1<'_, f32>; 2],
    rate_hz: f64,
) -> Figure {
    let (w, h) = (760u32, 520u32);
    let mut fig = Figure::new(w, h);
    fig.text(w as f64 / 2.0, 22.0, 14.0, title, true);
    let t = truth[0].len();
    let xs: Vec<f64> = (0..t).map(|i| i as f64 / rate_hz).collect();
    let x_range = (0.0, xs.last().copied().unwrap_or(0.0).max(1.0 / rate_hz));
    let ticks: Vec<(f64, String)> = (0..=4)
        .map(|k| {
            let v = x_range.1 * k as f64 / 4.0;
            (v, format!("{v:.2}s"))
        })
        .collect();
    for (k, foot) in ["Left foot", "Right foot"].iter().enumerate() {
        let frame = Frame { x: 70.0, y: 50.0 + k as f64 * 235.0, w: 650.0, h: 180.0 };
        let gt: Vec<f64> = truth[k].iter().map(|&v| f64::from(v)).collect();
        let pr: Vec<f64> = pred[k].iter().map(|&v| f64::from(v)).collect();
        let top = gt.iter().chain(&pr).fold(1.0f64, |m, &v| m.max(v));
        let y_range = (0.0, top);
        fig.shapes.push(Shape::Group("foot".into()));
        axes(&mut fig, &frame, x_range, y_range, &ticks);
        fig.text(frame.x + 8.0, frame.y + 16.0, 12.0, *foot, false);
        for (values, color, dashed) in [(&gt, BLACK, false), (&pr, RED, true)] {
            fig.shapes.push(Shape::Group("series".into()));
            fig.line(series_points(&frame, values, &xs, x_range, y_range), color, dashed);
            fig.shapes.push(Shape::EndGroup);
        }
        fig.shapes.push(Shape::EndGroup);
    }
    let ly = h as f64 - 14.0;
    fig.line(vec![(250.0, ly - 4.0), (280.0, ly - 4.0)], BLACK, false);
    fig.text(286.0, ly, 11.0, "ground truth", false);
    fig.line(vec![(400.0, ly - 4.0), (430.0, ly - 4.0)], RED, true);
    fig.text(436.0, ly, 11.0, "prediction", false);
    fig
}

/// One row of heatmaps, e.g. one model's maps at one tap.
pub struct HeatmapRow {
    pub label: String,
    pub maps: Vec<(String, Array2<f64>)>,
}

/// A grid of batch-by-batch maps. Each map is scaled to its own range.
pub fn heatmap_grid(title: &str, rows: &[HeatmapRow]) -> Figure {
    let cell = 96.0;
    let gap = 14.0;
    let left = 110.0;
    let top = 50.0;
    let cols = rows.iter().map(|r| r.maps.len()).max().unwrap_or(0).max(1);
    let w = (left + cols as f64 * (cell + gap) + gap) as u32;
    let h = (top + rows.len() as f64 * (cell + 2.0 * gap) + gap) as u32;
    let mut fig = Figure::new(w.max(300), h.max(120));
    fig.text(fig.width as f64 / 2.0, 22.0, 14.0, title, true);
    for (r, row) in rows.iter().enumerate() {
        let y = top + r as f64 * (cell + 2.0 * gap);
        fig.text(8.0, y + cell / 2.0, 12.0, row.label.clone(), false);
        for (c, (name, map)) in row.maps.iter().enumerate() {
            let x = left + c as f64 * (cell + gap);
            let (lo, hi) = map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            let (n, m) = map.dim();
            let (cw, ch) = (cell / m.max(1) as f64, cell / n.max(1) as f64);
            fig.shapes.push(Shape::Group("heatmap".into()));
            for ((i, j), &v) in map.indexed_iter() {
                fig.rect(x + j as f64 * cw, y + i as f64 * ch, cw, ch, Some(ramp((v - lo) / span)), None);
            }
            fig.rect(x, y, cell, cell, None, Some(GREY));
            fig.text(x + cell / 2.0, y + cell + 12.0, 10.0, name.clone(), true);
            fig.shapes.push(Shape::EndGroup);
        }
    }
    fig
}

/// Metric against a swept hyperparameter; points are spaced evenly in order.
pub fn sensitivity_figure(parameter: &str, metric: &str, points: &[(f64, f64)]) -> Figure {
    let (w, h) = (560u32, 360u32);
    let mut fig = Figure::new(w, h);
    fig.text(w as f64 / 2.0, 22.0, 14.0, format!("{metric} vs {parameter}"), true);
    let frame = Frame { x: 80.0, y: 45.0, w: 440.0, h: 250.0 };
    let n = points.len();
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pad = if hi > lo { 0.1 * (hi - lo) } else { 0.5 };
    let (lo, hi) = if n == 0 { (0.0, 1.0) } else { (lo - pad, hi + pad) };
    let x_range = (-0.5, n as f64 - 0.5);
    let ticks: Vec<(f64, String)> = points.iter().enumerate().map(|(i, p)| (i as f64, format!("{}", p.0))).collect();
    axes(&mut fig, &frame, x_range, (lo, hi), &ticks);
    fig.text(frame.x + frame.w / 2.0, h as f64 - 12.0, 12.0, parameter, true);
    let pts = series_points(&frame, &ys, &xs, x_range, (lo, hi));
    fig.line(pts.clone(), BLUE, false);
    for (x, y) in pts {
        fig.shapes.push(Shape::Group("point".into()));
        fig.shapes.push(Shape::Dot { x, y, r: 4.0, color: BLUE });
        fig.shapes.push(Shape::EndGroup);
    }
    fig
}
