//! Curve and manifest writers. All output is deterministic text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::{MetricsLog, MetricsRow};
use crate::error::{PlmError, Result};

pub const CSV_HEADER: &str = "iteration,err_g1,err_g2,err_g3";

pub fn csv_string(log: &MetricsLog) -> String {
    let mut s = String::with_capacity(32 * (log.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in log.rows() {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.iteration, r.errors[0], r.errors[1], r.errors[2]
        );
    }
    s
}

pub fn write_csv(log: &MetricsLog, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, csv_string(log))?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<MetricsLog> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(PlmError::format("missing metrics CSV header"));
    }
    let mut log = MetricsLog::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(PlmError::format(format!("bad metrics row {line:?}")));
        }
        let bad = |_| PlmError::format(format!("bad metrics row {line:?}"));
        let iteration: u64 = fields[0].parse().map_err(|_| bad(()))?;
        let mut errors = [0.0; 3];
        for (e, f) in errors.iter_mut().zip(&fields[1..]) {
            *e = f.parse().map_err(|_| bad(()))?;
        }
        if log.last().is_some_and(|r| r.iteration >= iteration) {
            return Err(PlmError::format("metrics iterations must increase"));
        }
        log.push(MetricsRow { iteration, errors });
    }
    Ok(log)
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 3] = ["#1f77b4", "#ff7f0e", "#2ca02c"];

/// Maps an error rate in `[0, 1]` to an SVG y coordinate (0 at the axis bottom).
pub fn error_to_y(err: f64) -> f64 {
    let plot_h = SVG_H - TOP - BOTTOM;
    TOP + (1.0 - err.clamp(0.0, 1.0)) * plot_h
}

fn iteration_to_x(it: u64, max_it: u64) -> f64 {
    let plot_w = SVG_W - LEFT - RIGHT;
    LEFT + if max_it == 0 {
        0.0
    } else {
        it as f64 / max_it as f64 * plot_w
    }
}

/// Three polylines of error rate against iteration, with axes and a legend
/// naming each group's probability.
pub fn svg_string(log: &MetricsLog, probabilities: [f64; 3], title: &str) -> Result<String> {
    if log.is_empty() {
        return Err(PlmError::config("cannot plot an empty metrics log"));
    }
    let max_it = log.last().map(|r| r.iteration).unwrap_or(0);
    let bottom = SVG_H - BOTTOM;
    let right = SVG_W - RIGHT;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + right) / 2.0,
        escape(title)
    );
    // Axes.
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} L{LEFT:.2},{bottom:.2} L{right:.2},{bottom:.2}" fill="none" stroke="black"/>"#
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = error_to_y(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.2}</text>"##,
            LEFT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for k in 0..=4u64 {
        let it = max_it * k / 4;
        let x = iteration_to_x(it, max_it);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{it}</text>"#,
            bottom + 5.0,
            bottom + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        (LEFT + right) / 2.0,
        SVG_H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">error rate</text>"#,
        (TOP + bottom) / 2.0,
        (TOP + bottom) / 2.0
    );
    for g in 0..3 {
        let mut pts = String::with_capacity(log.len() * 16);
        for r in log.rows() {
            let _ = write!(
                pts,
                "{:.2},{:.2} ",
                iteration_to_x(r.iteration, max_it),
                error_to_y(r.errors[g])
            );
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[g],
            pts.trim_end()
        );
        let ly = TOP + 20.0 + 22.0 * g as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="3"/><text x="{:.2}" y="{:.2}">group {} (p={})</text>"#,
            right + 15.0,
            right + 40.0,
            COLORS[g],
            right + 46.0,
            ly + 4.0,
            g + 1,
            probabilities[g]
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_svg(
    log: &MetricsLog,
    probabilities: [f64; 3],
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, svg_string(log, probabilities, title)?)?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Reproducibility record for one command invocation.
///
/// Holds only run-determined content, so identical runs write identical
/// manifests; wall-clock timing goes to a separate file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_text: String,
    /// `(label, sha256)` for inputs and produced artifacts, in insertion order.
    pub checksums: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: String) -> Self {
        Self {
            command: command.to_owned(),
            config_text,
            checksums: Vec::new(),
        }
    }

    pub fn add_checksum(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        let digest = sha256_file(path)?;
        self.checksums.push((label.to_owned(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool.name = plm");
        let _ = writeln!(s, "tool.version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        s.push_str(&self.config_text);
        for (label, digest) in &self.checksums {
            let _ = writeln!(s, "sha256.{label} = {digest}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}
