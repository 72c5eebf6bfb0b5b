//! SVG plots for a stored run. Output is plain text with fixed number
//! formatting, so identical records render to identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fdd_core::pipeline::{Extraction, RunRecord};
use fdd_core::time::format_timestamp;
use fdd_core::NOISE;

const W: f64 = 900.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const NOISE_COLOR: &str = "#999999";
const UNDEFINED_COLOR: &str = "#cccccc";

fn cluster_color(id: i64) -> &'static str {
    if id == NOISE {
        NOISE_COLOR
    } else {
        PALETTE[id as usize % PALETTE.len()]
    }
}

/// Linear map from data space to the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    width: f64,
    height: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64), height: f64) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self {
            x: widen(x),
            y: widen(y),
            width: W,
            height,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        self.height - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - TOP - BOTTOM)
    }

    fn open(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-size="13">{}</text>"#, LEFT, escape(title));
        s
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (x0, x1) = (self.px(self.x.0), self.px(self.x.1));
        let (y0, y1) = (self.py(self.y.0), self.py(self.y.1));
        let _ = writeln!(
            out,
            r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * f64::from(i) / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                y + 4.0,
                tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            self.height - 8.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Reachability bars in cluster order. Undefined values are drawn at 1.1x
/// the largest finite value as outlined grey bars.
pub fn reachability_svg(record: &RunRecord, extraction: Option<&Extraction>) -> String {
    let r = &record.optics;
    let max = r.max_finite_reachability().unwrap_or(record.eps);
    let cap = max * 1.1;
    let fr = Frame::new((0.0, r.len() as f64), (0.0, cap), H);
    let mut s = fr.open("Reachability plot");
    fr.axes(&mut s, "cluster order", "reachability distance");
    let bar = (fr.px(1.0) - fr.px(0.0)).max(0.2);
    for (pos, &row) in r.ordering.iter().enumerate() {
        let x = fr.px(pos as f64);
        match r.reachability[pos] {
            Some(v) => {
                let color = extraction.map_or(PALETTE[0], |e| cluster_color(e.cluster_id[row]));
                let y = fr.py(v);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"/>"#,
                    fr.py(0.0) - y
                );
            }
            None => {
                let y = fr.py(cap);
                let _ = writeln!(
                    s,
                    r#"<rect class="undefined" x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{UNDEFINED_COLOR}" stroke="black" stroke-width="0.3"/>"#,
                    fr.py(0.0) - y
                );
            }
        }
    }
    if let Some(t) = extraction.and_then(|e| e.threshold) {
        let y = fr.py(t.min(cap));
        let _ = writeln!(
            s,
            r#"<line class="threshold" x1="{:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="red" stroke-dasharray="6 3"/>"#,
            fr.px(0.0),
            fr.px(r.len() as f64)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" fill="red">threshold {}</text>"#, fr.px(0.0) + 4.0, y - 4.0, tick(t));
    }
    s.push_str("</svg>\n");
    s
}

pub fn kdist_svg(record: &RunRecord) -> String {
    let curve = &record.kdist.curve;
    let (_, hi) = finite_range(curve.iter().copied());
    let fr = Frame::new((0.0, curve.len().saturating_sub(1) as f64), (0.0, hi.max(record.eps)), H);
    let mut s = fr.open(&format!("{}-distance graph", record.kdist.k));
    fr.axes(&mut s, "points sorted by distance", &format!("distance to neighbour {}", record.kdist.k));
    let mut d = String::new();
    for (i, v) in curve.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, fr.px(i as f64), fr.py(*v));
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}"/>"#, d.trim_end(), PALETTE[0]);
    let y = fr.py(record.eps);
    let _ = writeln!(
        s,
        r#"<line class="eps" x1="{:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="red" stroke-dasharray="6 3"/>"#,
        fr.px(fr.x.0),
        fr.px(fr.x.1)
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" fill="red">eps {}</text>"#, fr.px(fr.x.0) + 4.0, y - 4.0, tick(record.eps));
    s.push_str("</svg>\n");
    s
}

pub fn scree_svg(record: &RunRecord) -> String {
    let ev = &record.scree.curve;
    let (_, hi) = finite_range(ev.iter().copied());
    let fr = Frame::new((1.0, ev.len().max(2) as f64), (0.0, hi), H);
    let mut s = fr.open("Scree plot");
    fr.axes(&mut s, "component", "eigenvalue");
    let mut d = String::new();
    for (i, v) in ev.iter().enumerate() {
        let (x, y) = (fr.px(i as f64 + 1.0), fr.py(*v));
        let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, PALETTE[0]);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">PC{}</text>"#, fr.py(0.0) + 14.0, i + 1);
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}"/>"#, d.trim_end(), PALETTE[0]);
    let x = fr.px(record.scree.k as f64 + 0.5);
    let _ = writeln!(
        s,
        r#"<line class="selected" x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="red" stroke-dasharray="6 3"/>"#,
        fr.py(fr.y.0),
        fr.py(fr.y.1)
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" fill="red">k = {}</text>"#, x + 4.0, fr.py(fr.y.1) + 12.0, record.scree.k);
    s.push_str("</svg>\n");
    s
}

/// First two principal component scores, coloured by cluster.
pub fn pca_scatter_svg(record: &RunRecord, extraction: Option<&Extraction>) -> String {
    let k = record.pca.n_components().min(2);
    let scores = record.pca.project(&record.analysis, k).ok();
    let point = |i: usize| -> (f64, f64) {
        match &scores {
            Some(m) if k == 2 => (m.row(i)[0], m.row(i)[1]),
            Some(m) if k == 1 => (m.row(i)[0], 0.0),
            _ => (0.0, 0.0),
        }
    };
    let m = record.analysis.rows();
    let xs = finite_range((0..m).map(|i| point(i).0));
    let ys = finite_range((0..m).map(|i| point(i).1));
    let fr = Frame::new(xs, ys, 600.0);
    let mut s = fr.open("PC1 x PC2");
    fr.axes(&mut s, "PC1", "PC2");
    let ids = extraction
        .map(|e| e.cluster_id.clone())
        .unwrap_or_else(|| record.kmeans.cluster_ids());
    for (i, id) in ids.iter().enumerate().take(m) {
        let (x, y) = point(i);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.7"/>"#,
            fr.px(x),
            fr.py(y),
            cluster_color(*id)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One strip per analysis channel in original units, with fault intervals
/// drawn as shaded boxes.
pub fn timeseries_svg(record: &RunRecord, extraction: Option<&Extraction>) -> String {
    let ts = record.timestamps();
    let raw = record.scaler.inverse_transform(&record.analysis).ok();
    let names = &record.analysis.column_names;
    let strip = 90.0;
    let height = TOP + BOTTOM + strip * names.len().max(1) as f64;
    let t_range = (
        ts.first().copied().unwrap_or(0) as f64,
        ts.last().copied().unwrap_or(1) as f64,
    );
    let fr = Frame::new(t_range, (0.0, 1.0), height);
    let mut s = fr.open("Analysis channels and flagged intervals");
    let plot_h = height - TOP - BOTTOM;
    if let Some(e) = extraction {
        for iv in &e.intervals {
            let (x0, x1) = (fr.px(iv.start as f64), fr.px(iv.end as f64));
            let _ = writeln!(
                s,
                r#"<rect class="fault" x="{x0:.2}" y="{TOP:.1}" width="{:.2}" height="{plot_h:.1}" fill="red" fill-opacity="0.15"/>"#,
                (x1 - x0).max(1.0)
            );
        }
    }
    if let Some(raw) = raw {
        for (j, name) in names.iter().enumerate() {
            let top = TOP + strip * j as f64;
            let (lo, hi) = finite_range((0..raw.rows()).map(|i| raw.row(i)[j]));
            let span = if hi > lo { hi - lo } else { 1.0 };
            let y = |v: f64| top + strip - 8.0 - (v - lo) / span * (strip - 16.0);
            let mut d = String::new();
            let mut prev: Option<i64> = None;
            for i in 0..raw.rows() {
                // break the line across gaps left by filtering
                let jump = prev.map_or(true, |p| ts[i] - p > 2 * i64::from(record.cadence_s));
                let _ = write!(d, "{}{:.2},{:.2} ", if jump { "M" } else { "L" }, fr.px(ts[i] as f64), y(raw.row(i)[j]));
                prev = Some(ts[i]);
            }
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}" stroke-width="0.8"/>"#, d.trim_end(), PALETTE[j % PALETTE.len()]);
            let _ = writeln!(s, r#"<text x="4" y="{:.1}">{}</text>"#, top + 14.0, escape(name));
        }
    }
    if let (Some(&first), Some(&last)) = (ts.first(), ts.last()) {
        let y = height - 12.0;
        let _ = writeln!(s, r#"<text x="{LEFT:.1}" y="{y:.1}">{}</text>"#, format_timestamp(first));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#,
            W - RIGHT,
            format_timestamp(last)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub const REPORT_FILES: [&str; 5] = ["reachability.svg", "kdist.svg", "scree.svg", "pca_scatter.svg", "timeseries.svg"];

/// Writes all five plots into `dir` and returns their paths. Clusters and
/// intervals come from `extraction` when given.
pub fn write_report(record: &RunRecord, ex: Option<&Extraction>, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let plots = [
        reachability_svg(record, ex),
        kdist_svg(record),
        scree_svg(record),
        pca_scatter_svg(record, ex),
        timeseries_svg(record, ex),
    ];
    let mut paths = Vec::new();
    for (name, body) in REPORT_FILES.iter().zip(plots) {
        let p = dir.join(name);
        fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}
