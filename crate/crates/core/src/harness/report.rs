//! Run records and their serializations: CSV with 17 significant digits,
//! SVG polylines and a JSON config echo.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss_total: f64,
    pub first_term: f64,
    pub trace_term: f64,
    pub grad_norm: f64,
    pub smallest_index_of_gt: usize,
    pub eigen_gap: f64,
    /// Elapsed milliseconds; zero unless timing was requested, so that
    /// default traces are reproducible byte for byte.
    pub wall_ms: f64,
}

pub const TRACE_FIELDS: [&str; 8] = [
    "iteration",
    "loss_total",
    "first_term",
    "trace_term",
    "grad_norm",
    "smallest_index_of_gt",
    "eigen_gap",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    pub seed: u64,
    pub problem: String,
    /// Free-form echo of the run configuration.
    pub config: serde_json::Value,
}

/// Time series of one optimization run plus its event counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    /// Iterations at which the rank of the target-aligned eigenvector
    /// changed.
    pub rank_changes: Vec<usize>,
    /// Rank changes of the eigenvector the loss itself is built from.
    /// Only losses defined through the smallest eigenvector have any.
    pub switching_events: Vec<usize>,
    /// Iterations skipped because the analytic eigen-gradient was undefined.
    pub degenerate_skips: usize,
    /// Iterations skipped because the gradient was not finite.
    pub nonfinite_skips: usize,
    pub final_weights: Vec<f64>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
            rank_changes: Vec::new(),
            switching_events: Vec::new(),
            degenerate_skips: 0,
            nonfinite_skips: 0,
            final_weights: Vec::new(),
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss_total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = TRACE_FIELDS.join(",");
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.loss_total),
                fmt_f64(r.first_term),
                fmt_f64(r.trace_term),
                fmt_f64(r.grad_norm),
                r.smallest_index_of_gt,
                fmt_f64(r.eigen_gap),
                fmt_f64(r.wall_ms),
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Vec<TraceRecord>> {
        let rows = parse_csv(text, &TRACE_FIELDS)?;
        rows.iter()
            .map(|f| {
                Ok(TraceRecord {
                    iteration: parse_int(&f[0])?,
                    loss_total: parse_float(&f[1])?,
                    first_term: parse_float(&f[2])?,
                    trace_term: parse_float(&f[3])?,
                    grad_norm: parse_float(&f[4])?,
                    smallest_index_of_gt: parse_int(&f[5])?,
                    eigen_gap: parse_float(&f[6])?,
                    wall_ms: parse_float(&f[7])?,
                })
            })
            .collect()
    }

    /// Loss against iteration.
    pub fn to_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .map(|r| (r.iteration as f64, r.loss_total))
            .collect();
        svg_plot(
            &format!("{} / {} / lr {}", self.header.method, self.header.optimizer, self.header.lr),
            "iteration",
            "loss",
            &[(self.header.method.clone(), pts)],
        )
    }
}

/// One outlier setting of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub outlier_count: usize,
    pub rotation_error_deg: f64,
    pub translation_error_norm: f64,
    pub trials: usize,
    pub failures: usize,
}

pub const SWEEP_FIELDS: [&str; 5] = [
    "outlier_count",
    "rotation_error_deg",
    "translation_error_norm",
    "trials",
    "failures",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = SWEEP_FIELDS.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.outlier_count,
                fmt_f64(r.rotation_error_deg),
                fmt_f64(r.translation_error_norm),
                r.trials,
                r.failures
            );
        }
        s
    }

    pub fn from_csv(method: &str, text: &str) -> Result<Self> {
        let rows = parse_csv(text, &SWEEP_FIELDS)?
            .iter()
            .map(|f| {
                Ok(SweepRow {
                    outlier_count: parse_int(&f[0])?,
                    rotation_error_deg: parse_float(&f[1])?,
                    translation_error_norm: parse_float(&f[2])?,
                    trials: parse_int(&f[3])?,
                    failures: parse_int(&f[4])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            method: method.to_string(),
            rows,
        })
    }
}

/// Rotation error against outlier count, one line per method.
pub fn sweep_svg(results: &[SweepResult]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = results
        .iter()
        .map(|r| {
            (
                r.method.clone(),
                r.rows
                    .iter()
                    .map(|row| (row.outlier_count as f64, row.rotation_error_deg))
                    .collect(),
            )
        })
        .collect();
    svg_plot("PnP sweep", "outliers", "rotation error (deg)", &series)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn parse_float(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|e| Error::InvalidArgument(format!("bad float {s:?}: {e}")))
}

fn parse_int(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|e| Error::InvalidArgument(format!("bad integer {s:?}: {e}")))
}

fn parse_csv(text: &str, fields: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("csv"))?;
    if header != fields.join(",") {
        return Err(Error::InvalidArgument(format!("unexpected csv header {header:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<String> = l.split(',').map(str::to_string).collect();
            if f.len() != fields.len() {
                return Err(Error::InvalidArgument(format!(
                    "csv row has {} fields, expected {}",
                    f.len(),
                    fields.len()
                )));
            }
            Ok(f)
        })
        .collect()
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A minimal line chart. Non-finite points are dropped.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let finite = series
        .iter()
        .flat_map(|(_, p)| p.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in finite {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, xml_escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        xml_escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}" font-size="10">{}</text>"#, h - m + 14.0, fmt_short(x0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, w - m, h - m + 14.0, fmt_short(x1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, m - 4.0, h - m, fmt_short(y0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, m - 4.0, m + 10.0, fmt_short(y1));
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            m + 8.0,
            m + 16.0 + 14.0 * k as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_short(v: f64) -> String {
    format!("{v:.4}")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `value` as pretty JSON.
pub fn write_config_echo(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("config echo: {e}")))?;
    write_file(path, &(text + "\n"))
}

pub fn emit_trace(trace: &Trace, dir: &Path, stem: &str) -> Result<()> {
    write_file(&dir.join(format!("{stem}.csv")), &trace.to_csv())?;
    write_file(&dir.join(format!("{stem}.svg")), &trace.to_svg())?;
    write_config_echo(&dir.join(format!("{stem}.config.json")), &trace.header)
}

pub fn emit_sweep(results: &[SweepResult], dir: &Path, stem: &str) -> Result<()> {
    for r in results {
        write_file(&dir.join(format!("{stem}_{}.csv", r.method)), &r.to_csv())?;
    }
    write_file(&dir.join(format!("{stem}.svg")), &sweep_svg(results))
}
