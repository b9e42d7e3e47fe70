//! SVG figures: top-view overlay, per-axis time series and position error.

use std::fmt::Write;

use rangefuse_core::geom::Vec3;
use rangefuse_core::odom::TrajectoryPoint;
use rangefuse_core::sensor::GroundTruthPose;
use rangefuse_core::train::ape;

use crate::error::Result;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const DASHES: [&str; 3] = ["", "6,3", "2,2"];
const GT_COLOR: &str = "#000000";

/// One labelled estimate.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [TrajectoryPoint],
}

#[derive(Debug, Clone, Copy)]
struct Style {
    color: &'static str,
    dash: &'static str,
    width: f64,
}

fn style(i: usize) -> Style {
    Style { color: COLORS[i % COLORS.len()], dash: DASHES[(i / COLORS.len()) % DASHES.len()], width: 1.5 }
}

const GT_STYLE: Style = Style { color: GT_COLOR, dash: "4,2", width: 2.0 };

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy)]
struct Range2 {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Range2 {
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut r = Range2 { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            r.x0 = r.x0.min(x);
            r.x1 = r.x1.max(x);
            r.y0 = r.y0.min(y);
            r.y1 = r.y1.max(y);
        }
        if !r.x0.is_finite() {
            return Range2 { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        let pad = |a: f64, b: f64| {
            let m = ((b - a) * 0.05).max(1e-3);
            (a - m, b + m)
        };
        (r.x0, r.x1) = pad(r.x0, r.x1);
        (r.y0, r.y1) = pad(r.y0, r.y1);
        r
    }

    /// Widens the shorter side so x and y share one scale in `rect`.
    fn equal_aspect(mut self, rect: Rect) -> Self {
        let sx = (self.x1 - self.x0) / rect.w;
        let sy = (self.y1 - self.y0) / rect.h;
        if sx > sy {
            let extra = (sx * rect.h - (self.y1 - self.y0)) / 2.0;
            self.y0 -= extra;
            self.y1 += extra;
        } else {
            let extra = (sy * rect.w - (self.x1 - self.x0)) / 2.0;
            self.x0 -= extra;
            self.x1 += extra;
        }
        self
    }
}

struct Panel {
    rect: Rect,
    range: Range2,
}

impl Panel {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let r = &self.range;
        let px = self.rect.x + (x - r.x0) / (r.x1 - r.x0) * self.rect.w;
        let py = self.rect.y + self.rect.h - (y - r.y0) / (r.y1 - r.y0) * self.rect.h;
        (px, py)
    }

    fn frame(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let Rect { x, y, w, h } = self.rect;
        let _ = writeln!(svg, r##"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#, x + w / 2.0, y - 6.0, esc(title));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#, x + w / 2.0, y + h + 30.0, esc(xlabel));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            x - 40.0,
            y + h / 2.0,
            x - 40.0,
            y + h / 2.0,
            esc(ylabel)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let vx = self.range.x0 + f * (self.range.x1 - self.range.x0);
            let vy = self.range.y0 + f * (self.range.y1 - self.range.y0);
            let (px, _) = self.map(vx, self.range.y0);
            let (_, py) = self.map(self.range.x0, vy);
            let _ = writeln!(svg, r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#444"/>"##, y + h, y + h + 4.0);
            let _ = writeln!(svg, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#, y + h + 15.0, tick(vx));
            let _ = writeln!(svg, r##"<line x1="{:.1}" y1="{py:.1}" x2="{x:.1}" y2="{py:.1}" stroke="#444"/>"##, x - 4.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#, x - 6.0, py + 3.0, tick(vy));
        }
    }

    fn polyline(&self, svg: &mut String, pts: impl Iterator<Item = (f64, f64)>, s: Style) {
        let mut d = String::new();
        for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let (px, py) = self.map(x, y);
            let _ = write!(d, "{px:.2},{py:.2} ");
        }
        let dash = if s.dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{}""#, s.dash) };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"{dash}/>"#, d.trim_end(), s.color, s.width);
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn legend(svg: &mut String, x: f64, y: f64, entries: &[(&str, Style)]) {
    for (i, (label, s)) in entries.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let dash = if s.dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{}""#, s.dash) };
        let _ = writeln!(svg, r#"<line x1="{x:.1}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="{}" stroke-width="{}"{dash}/>"#, x + 24.0, s.color, s.width);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#, x + 30.0, yy + 4.0, esc(label));
    }
}

fn entries<'a>(series: &[Series<'a>], gt: bool) -> Vec<(&'a str, Style)> {
    let mut e: Vec<(&str, Style)> = series.iter().enumerate().map(|(i, s)| (s.label, style(i))).collect();
    if gt {
        e.insert(0, ("ground truth", GT_STYLE));
    }
    e
}

/// Top view of every estimate over the ground truth, with anchors as squares.
pub fn overlay_svg(series: &[Series], gt: &[GroundTruthPose], anchors: &[Vec3]) -> String {
    let rect = Rect { x: 70.0, y: 40.0, w: 560.0, h: 560.0 };
    let xy = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| (p.pose.trans.x, p.pose.trans.y)))
        .chain(gt.iter().map(|g| (g.pose.trans.x, g.pose.trans.y)))
        .chain(anchors.iter().map(|a| (a.x, a.y)));
    let panel = Panel { rect, range: Range2::of(xy).equal_aspect(rect) };
    let mut svg = String::new();
    panel.frame(&mut svg, "Trajectory (top view)", "x [m]", "y [m]");
    if !gt.is_empty() {
        panel.polyline(&mut svg, gt.iter().map(|g| (g.pose.trans.x, g.pose.trans.y)), GT_STYLE);
    }
    for (i, s) in series.iter().enumerate() {
        panel.polyline(&mut svg, s.points.iter().map(|p| (p.pose.trans.x, p.pose.trans.y)), style(i));
    }
    for a in anchors {
        let (px, py) = panel.map(a.x, a.y);
        let _ = writeln!(svg, r##"<rect class="anchor" x="{:.2}" y="{:.2}" width="8" height="8" fill="#555"/>"##, px - 4.0, py - 4.0);
    }
    let mut e = entries(series, !gt.is_empty());
    if !anchors.is_empty() {
        e.push(("anchors", Style { color: "#555", dash: "", width: 6.0 }));
    }
    legend(&mut svg, 650.0, 60.0, &e);
    document(820.0, 640.0, &svg)
}

/// x, y and z against time, one panel each.
pub fn per_axis_svg(series: &[Series], gt: &[GroundTruthPose]) -> String {
    let mut svg = String::new();
    let names = ["x [m]", "y [m]", "z [m]"];
    for (axis, name) in names.iter().enumerate() {
        let get = |v: Vec3| v.to_array()[axis];
        let rect = Rect { x: 70.0, y: 40.0 + 200.0 * axis as f64, w: 600.0, h: 150.0 };
        let pts = series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| (p.t, get(p.pose.trans))))
            .chain(gt.iter().map(|g| (g.t, get(g.pose.trans))));
        let panel = Panel { rect, range: Range2::of(pts) };
        panel.frame(&mut svg, &format!("{} axis", &name[..1]), "t [s]", name);
        if !gt.is_empty() {
            panel.polyline(&mut svg, gt.iter().map(|g| (g.t, get(g.pose.trans))), GT_STYLE);
        }
        for (i, s) in series.iter().enumerate() {
            panel.polyline(&mut svg, s.points.iter().map(|p| (p.t, get(p.pose.trans))), style(i));
        }
    }
    legend(&mut svg, 690.0, 60.0, &entries(series, !gt.is_empty()));
    document(860.0, 640.0, &svg)
}

/// Position error of each estimate against the associated ground truth.
pub fn error_svg(series: &[Series], gt: &[GroundTruthPose], uwb_rate: f64) -> Result<String> {
    let mut errs = Vec::new();
    for s in series {
        let a = ape(s.points, gt, uwb_rate)?;
        errs.push(a.errors.iter().map(|e| (e.t, e.err_xyz)).collect::<Vec<_>>());
    }
    let rect = Rect { x: 70.0, y: 40.0, w: 600.0, h: 300.0 };
    let mut range = Range2::of(errs.iter().flatten().copied());
    range.y0 = 0.0;
    let panel = Panel { rect, range };
    let mut svg = String::new();
    panel.frame(&mut svg, "Position error", "t [s]", "error [m]");
    for (i, e) in errs.iter().enumerate() {
        panel.polyline(&mut svg, e.iter().copied(), style(i));
    }
    legend(&mut svg, 690.0, 60.0, &entries(series, false));
    Ok(document(860.0, 400.0, &svg))
}

/// All figures as `(file name, svg)`; the error series needs ground truth.
pub fn render(series: &[Series], gt: &[GroundTruthPose], anchors: &[Vec3], uwb_rate: f64) -> Result<Vec<(&'static str, String)>> {
    let mut out = vec![("trajectory.svg", overlay_svg(series, gt, anchors)), ("axes.svg", per_axis_svg(series, gt))];
    if !gt.is_empty() && !series.is_empty() {
        out.push(("error.svg", error_svg(series, gt, uwb_rate)?));
    }
    Ok(out)
}
