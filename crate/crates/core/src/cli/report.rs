use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dynamics::{csv_err, format_value, CheckpointSeries, LineFit, MetricKind, PhaseSegmentation};
use crate::error::{Error, Result};

/// Segmentation of one series as written by the `phases` analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub label: String,
    pub boundaries: Vec<usize>,
    /// First checkpoint of each segment after the first.
    pub boundary_checkpoints: Vec<String>,
    /// Midpoint in log10(tokens) between the checkpoints around each boundary.
    pub boundary_log10_tokens: Vec<f64>,
    pub fits: Vec<LineFit>,
    pub sse: f64,
}

impl PhaseRecord {
    pub fn new(series: &CheckpointSeries, seg: PhaseSegmentation) -> Self {
        let x = series.log_tokens();
        Self {
            label: series.label.clone(),
            boundary_checkpoints: seg
                .boundaries
                .iter()
                .map(|&b| series.points[b].checkpoint_id.clone())
                .collect(),
            boundary_log10_tokens: seg.boundaries.iter().map(|&b| 0.5 * (x[b - 1] + x[b])).collect(),
            boundaries: seg.boundaries,
            fits: seg.fits,
            sse: seg.sse,
        }
    }
}

fn sorted_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(prefix) && name.ends_with(suffix) {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// `series_*.csv` files in `dir`, sorted by name.
pub fn series_files(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_files(dir, "series_", ".csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub labels: Vec<String>,
}

const PALETTE: [&str; 8] = [
    "#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Joins every series in `dir` on training tokens into `combined.csv` and
/// draws them into `report.svg`, one polyline per series. Phase boundaries
/// from `phases_*.json` are drawn as vertical lines.
pub fn render_report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(Error::MissingData(format!(
            "results directory {} does not exist",
            dir.display()
        )));
    }
    let series = series_files(dir)?
        .iter()
        .map(CheckpointSeries::read_csv)
        .collect::<Result<Vec<_>>>()?;
    if series.is_empty() {
        return Err(Error::MissingData(format!(
            "no series files in {}",
            dir.display()
        )));
    }
    for kind in [MetricKind::EncodingMeanR, MetricKind::ProbingMeanR, MetricKind::BenchmarkAccuracy] {
        if !series.iter().any(|s| s.kind == kind) {
            warn!("no {} series in {}; column omitted", kind.as_str(), dir.display());
        }
    }
    let phases = sorted_files(dir, "phases_", ".json")?
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<PhaseRecord>(&text).map_err(|e| Error::format(p, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let combined = dir.join("combined.csv");
    write_combined(&combined, &series)?;
    let svg = dir.join("report.svg");
    fs::write(&svg, render_svg(&series, &phases)).map_err(|e| Error::io(&svg, e))?;
    Ok(Report {
        files: vec![combined, svg],
        labels: series.iter().map(|s| s.label.clone()).collect(),
    })
}

fn write_combined(path: &Path, series: &[CheckpointSeries]) -> Result<()> {
    let tokens: BTreeSet<u64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.training_tokens))
        .collect();
    let lookup: Vec<BTreeMap<u64, f64>> = series
        .iter()
        .map(|s| s.points.iter().map(|p| (p.training_tokens, p.value)).collect())
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["training_tokens".to_string()];
    header.extend(series.iter().map(|s| s.label.clone()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in tokens {
        let mut row = vec![t.to_string()];
        row.extend(lookup.iter().map(|m| m.get(&t).map_or(String::new(), |v| format_value(*v))));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn render_svg(series: &[CheckpointSeries], phases: &[PhaseRecord]) -> String {
    let (width, height) = (800.0, 420.0);
    let (left, right, top, bottom) = (60.0, 220.0, 30.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let xs: Vec<f64> = series.iter().flat_map(|s| s.log_tokens()).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let px = |x: f64| left + plot_w * (x - x_min) / (x_max - x_min);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="gray"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">log10(training tokens)</text>"#,
        left + plot_w / 2.0,
        height - 12.0
    );
    let first = x_min.ceil() as i64;
    let last = x_max.floor() as i64;
    for d in first..=last {
        let x = px(d as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{d}</text>"#,
            top + plot_h + 15.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">each series scaled to its range</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for p in phases {
        for &x in &p.boundary_log10_tokens {
            let x = px(x);
            let _ = writeln!(
                s,
                r#"<line class="phase-boundary" x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="dimgray" stroke-dasharray="4 3"/>"#,
                top + plot_h
            );
        }
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let v = ser.values();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let py = |y: f64| {
            let frac = if hi > lo { (y - lo) / (hi - lo) } else { 0.5 };
            top + plot_h * (1.0 - frac)
        };
        let pts: Vec<String> = ser
            .log_tokens()
            .iter()
            .zip(&v)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            ser.label
        );
        let ly = top + 16.0 * i as f64 + 8.0;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="12" height="4" fill="{color}"/>"#,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="10">{} [{:.3}, {:.3}]</text>"#,
            lx + 16.0,
            ser.label,
            lo,
            hi
        );
    }
    s.push_str("</svg>\n");
    s
}
