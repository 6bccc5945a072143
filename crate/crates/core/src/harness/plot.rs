//! Rate-distortion plots: mIoU vs BPP and FID vs BPP as self-contained SVG
//! files, one polyline per method plus a vertical marker at the corpus mean
//! SSM rate (the floor our total rate cannot go below).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Result, SpicError};
use crate::harness::sweep::SweepRow;

/// Which column a plot draws on the y axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MIou,
    Fid,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::MIou => "mIoU",
            Metric::Fid => "FID",
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            Metric::MIou => "miou_vs_bpp.svg",
            Metric::Fid => "fid_vs_bpp.svg",
        }
    }

    fn value(self, r: &SweepRow) -> f64 {
        match self {
            Metric::MIou => r.miou,
            Metric::Fid => r.fid_batch,
        }
    }
}

/// Maps data coordinates to pixel coordinates. Exposed so the placement of
/// every drawn element can be verified against the data it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotLayout {
    pub width: f64,
    pub height: f64,
    pub margin_left: f64,
    pub margin_right: f64,
    pub margin_top: f64,
    pub margin_bottom: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl PlotLayout {
    /// Axis ranges cover the data with 5% padding; a degenerate range is
    /// widened so a single point still sits strictly inside the axes.
    pub fn from_data(xs: &[f64], ys: &[f64]) -> Self {
        let (x_min, x_max) = padded_range(xs);
        let (y_min, y_max) = padded_range(ys);
        Self {
            width: 640.0,
            height: 420.0,
            margin_left: 70.0,
            margin_right: 20.0,
            margin_top: 40.0,
            margin_bottom: 50.0,
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn x_px(&self, x: f64) -> f64 {
        let span = self.x_max - self.x_min;
        self.margin_left + (x - self.x_min) / span * (self.width - self.margin_left - self.margin_right)
    }

    /// SVG y grows downward; data y grows upward.
    pub fn y_px(&self, y: f64) -> f64 {
        let span = self.y_max - self.y_min;
        self.height - self.margin_bottom
            - (y - self.y_min) / span * (self.height - self.margin_top - self.margin_bottom)
    }

    pub fn covers(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }
}

fn padded_range(vs: &[f64]) -> (f64, f64) {
    let min = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pad = if span > 0.0 {
        span * 0.05
    } else {
        0.5 * min.abs().max(1.0)
    };
    (min - pad, max + pad)
}

fn method_color(method: &str) -> &'static str {
    match method {
        "spic" => "#b5179e",
        "dct-full" => "#2d6a4f",
        "bpg-full" => "#b8860b",
        _ => "#555555",
    }
}

/// One curve: per-quality group means, sorted by rate.
struct Curve {
    method: String,
    points: Vec<(f64, f64)>,
}

fn curves(rows: &[SweepRow], metric: Metric) -> Vec<Curve> {
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    // Draw ours last so its markers sit on top of baseline curves.
    if let Some(i) = methods.iter().position(|m| m == "spic") {
        let m = methods.remove(i);
        methods.push(m);
    }

    let mut out = Vec::new();
    for method in methods {
        let mut qualities: Vec<u8> = rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.quality)
            .collect();
        qualities.sort_unstable();
        qualities.dedup();
        let mut points = Vec::new();
        for q in qualities {
            let vals: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method && r.quality == q)
                .map(|r| (r.bpp_total, metric.value(r)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            points.push((
                vals.iter().map(|v| v.0).sum::<f64>() / n,
                vals.iter().map(|v| v.1).sum::<f64>() / n,
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !points.is_empty() {
            out.push(Curve { method, points });
        }
    }
    out
}

/// Mean SSM rate over our rows; the marker position. None when the CSV has
/// no rows of ours.
pub fn mean_ssm_bpp(rows: &[SweepRow]) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == "spic")
        .map(|r| r.bpp_ssm)
        .collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Renders one rate-distortion plot. Returns the SVG text and the layout it
/// was drawn with.
pub fn plot_svg(rows: &[SweepRow], metric: Metric) -> Result<(String, PlotLayout)> {
    if rows.is_empty() {
        return Err(SpicError::InvalidMetricInput("no rows to plot".into()));
    }
    let curves = curves(rows, metric);
    if curves.is_empty() {
        return Err(SpicError::InvalidMetricInput(format!(
            "no finite {} values to plot",
            metric.label()
        )));
    }
    let marker = mean_ssm_bpp(rows);
    let mut xs: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
    if let Some(m) = marker {
        xs.push(m);
    }
    let ys: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)).collect();
    let l = PlotLayout::from_data(&xs, &ys);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        l.width, l.height, l.width, l.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // Axes with 5 labeled ticks per side.
    let (x0, y0) = (l.margin_left, l.height - l.margin_bottom);
    let (x1, y1) = (l.width - l.margin_right, l.margin_top);
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for t in ticks(l.x_min, l.x_max, 5) {
        let px = l.x_px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{t:.3}</text>"#,
            y0 + 18.0
        );
    }
    for t in ticks(l.y_min, l.y_max, 5) {
        let py = l.y_px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{t:.3}</text>"#,
            x0 - 7.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">bits per pixel</text>"#,
        (x0 + x1) / 2.0,
        l.height - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        metric.label()
    );

    // SSM rate floor: dashed vertical line at the corpus mean.
    if let Some(m) = marker {
        let px = l.x_px(m);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{y1:.2}" stroke="#444444" stroke-dasharray="5,4"/>"##
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" fill="#444444">SSM rate {m:.3} bpp</text>"##,
            px + 5.0,
            y1 + 12.0
        );
    }

    for (ci, c) in curves.iter().enumerate() {
        let color = method_color(&c.method);
        if c.points.len() > 1 {
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", l.x_px(x), l.y_px(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &c.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                l.x_px(x),
                l.y_px(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{color}" text-anchor="end">{}</text>"#,
            x1 - 6.0,
            y1 + 14.0 * (ci as f64 + 1.0),
            c.method
        );
    }

    s.push_str("</svg>\n");
    Ok((s, l))
}

/// Reads sweep rows back from a CSV file; an empty table is an error.
pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| SpicError::InvalidMetricInput(format!("csv {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: SweepRow =
            rec.map_err(|e| SpicError::InvalidMetricInput(format!("csv {}: {e}", path.display())))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SpicError::InvalidMetricInput(format!(
            "csv {} has no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Renders both rate-distortion plots from a sweep CSV into `out_dir` and
/// returns the written paths.
pub fn emit_plots(csv: &Path, out_dir: &Path) -> Result<[PathBuf; 2]> {
    let rows = read_rows(csv)?;
    std::fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for metric in [Metric::MIou, Metric::Fid] {
        let (svg, _) = plot_svg(&rows, metric)?;
        let path = out_dir.join(metric.file_name());
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok([out.remove(0), out.remove(0)])
}
