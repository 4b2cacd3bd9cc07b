//! Two-panel SVG report: loss on top, SD variation (log scale) below,
//! with a vertical marker at each detected onset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::trace::{format_row, header};
use crate::model::MATRIX_NAMES;
use crate::telemetry::MetricsRecord;

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

struct Frame {
    x0: f64,
    x1: f64,
    top: f64,
}

impl Frame {
    fn x(&self, step: f64) -> f64 {
        let span = (self.x1 - self.x0).max(1.0);
        MARGIN + (step - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64, lo: f64, hi: f64) -> f64 {
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.top + PANEL_HEIGHT - MARGIN / 2.0 - (v - lo) / span * (PANEL_HEIGHT - MARGIN)
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

fn polyline(out: &mut String, points: &[(f64, f64)], color: &str, id: &str) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
        pts.join(" ")
    );
}

/// Renders the report. `onsets` are step numbers.
pub fn render_report(records: &[MetricsRecord], onsets: [Option<u64>; 3]) -> Result<String> {
    if records.len() < 2 {
        return Err(Error::invalid("report needs at least two trace rows"));
    }
    let frame_loss = Frame {
        x0: records[0].step as f64,
        x1: records.last().expect("nonempty").step as f64,
        top: 0.0,
    };
    let frame_sd = Frame {
        top: PANEL_HEIGHT,
        ..frame_loss
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" viewBox="0 0 {WIDTH} {}">"#,
        2.0 * PANEL_HEIGHT,
        2.0 * PANEL_HEIGHT
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    out.push_str("<g id=\"loss-panel\">\n");
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="16" font-size="12">loss</text>"#);
    let (lo, hi) = range(records.iter().map(|r| r.loss)).unwrap_or((0.0, 1.0));
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.loss.is_finite())
        .map(|r| (frame_loss.x(r.step as f64), frame_loss.y(r.loss, lo, hi)))
        .collect();
    polyline(&mut out, &pts, "black", "loss");
    out.push_str("</g>\n");

    out.push_str("<g id=\"sd-panel\">\n");
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="12">log10 SD variation</text>"#,
        PANEL_HEIGHT + 16.0
    );
    let logs = |m: usize| {
        records
            .iter()
            .filter(move |r| r.matrices[m].sd_var > 0.0 && r.matrices[m].sd_var.is_finite())
            .map(move |r| (r.step as f64, r.matrices[m].sd_var.log10()))
    };
    let (lo, hi) = range((0..3).flat_map(|m| logs(m).map(|(_, v)| v))).unwrap_or((-1.0, 0.0));
    for (m, name) in MATRIX_NAMES.iter().enumerate() {
        let pts: Vec<(f64, f64)> = logs(m)
            .map(|(s, v)| (frame_sd.x(s), frame_sd.y(v, lo, hi)))
            .collect();
        polyline(&mut out, &pts, COLORS[m], &format!("sd-{name}"));
    }
    for (m, onset) in onsets.iter().enumerate() {
        if let Some(s) = onset {
            let x = frame_sd.x(*s as f64);
            let _ = writeln!(
                out,
                r#"<line class="onset" data-matrix="{}" x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="{}" stroke-dasharray="4 2"/>"#,
                MATRIX_NAMES[m],
                PANEL_HEIGHT + MARGIN / 2.0,
                2.0 * PANEL_HEIGHT - MARGIN / 2.0,
                COLORS[m]
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Path of the data file written next to a report.
pub fn data_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".data.csv");
    PathBuf::from(s)
}

/// Writes the SVG to `out` and the plotted rows to `<out>.data.csv`.
pub fn write_report(out: &Path, records: &[MetricsRecord], onsets: [Option<u64>; 3]) -> Result<()> {
    let svg = render_report(records, onsets)?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))?;
    let mut csv = header();
    csv.push('\n');
    for r in records {
        csv.push_str(&format_row(r));
        csv.push('\n');
    }
    let data = data_path(out);
    std::fs::write(&data, csv).map_err(|e| Error::io(&data, e))
}
