//! CSV tables and SVG line plots of a [`SimulationReport`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::monte_carlo::{CellSummary, SimulationReport};
use crate::error::{Error, Result};

pub const METRICS: [&str; 6] = ["mean", "variance", "mse", "bias", "replications", "failures"];

fn metric(c: &CellSummary, m: &str) -> f64 {
    match m {
        "mean" => c.mean,
        "variance" => c.variance,
        "mse" => c.mse,
        "bias" => c.bias,
        "replications" => c.replications as f64,
        "failures" => c.failures as f64,
        _ => unreachable!("unknown metric {m}"),
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Writes `results.csv`, `objectives.csv`, `truth.csv`, `variance.svg` and
/// `mse.svg` into `out_dir` and returns their paths.
pub fn emit_report(report: &SimulationReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    if report.cells.is_empty() {
        return Err(Error::PreconditionViolated("report has no cells".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    write_csv(
        &path,
        &["design", "n", "metric", "value"],
        report.cells.iter().flat_map(|c| {
            METRICS
                .iter()
                .map(move |m| vec![c.design.clone(), c.n.to_string(), m.to_string(), metric(c, m).to_string()])
        }),
    )?;
    written.push(path);

    let path = dir.join("objectives.csv");
    write_csv(
        &path,
        &["design", "objective", "ratio"],
        report
            .objectives
            .iter()
            .map(|o| vec![o.design.clone(), o.objective.to_string(), o.ratio.to_string()]),
    )?;
    written.push(path);

    let path = dir.join("truth.csv");
    write_csv(
        &path,
        &["true_late", "std_error"],
        [vec![report.true_late.value.to_string(), report.true_late.std_error.to_string()]],
    )?;
    written.push(path);

    for m in ["variance", "mse"] {
        let path = dir.join(format!("{m}.svg"));
        fs::write(&path, line_plot(report, m)).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Standalone SVG with one polyline per design of `metric` against `n`.
pub fn line_plot(report: &SimulationReport, metric_name: &str) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 30.0, 50.0);
    let mut designs: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !designs.contains(&c.design.as_str()) {
            designs.push(&c.design);
        }
    }
    let pts: Vec<(f64, f64)> = report
        .cells
        .iter()
        .map(|c| (c.n as f64, metric(c, metric_name)))
        .filter(|p| p.1.is_finite())
        .collect();
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="{anchor}">{v}</text>"#,
            px(v),
            h - bottom + 16.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{v:.4e}</text>"#,
            left - 4.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">n</text>"#,
        (left + w - right) / 2.0,
        h - 12.0
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, escape(metric_name));
    for (i, d) in designs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = report
            .cells
            .iter()
            .filter(|c| c.design == *d)
            .map(|c| (c.n as f64, metric(c, metric_name)))
            .filter(|p| p.1.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{color}">{}</text>"#,
            w - right + 10.0,
            escape(d)
        );
    }
    s.push_str("</svg>\n");
    s
}
