//! CSV and standalone SVG output for sweep and latency reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{LatencyReport, LatencyRow, SweepReport, SweepRow};
use crate::error::Result;

pub const SVG_NS: &str = "http://www.w3.org/2000/svg";

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    Ok(csv::Reader::from_path(path)?.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_csv(path)
}

pub fn read_latency_csv(path: &Path) -> Result<Vec<LatencyRow>> {
    read_csv(path)
}

/// Writes `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn write_sweep(report: &SweepReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&csv_path, &report.rows)?;
    let series = group(report.rows.iter().map(|r| (r.model.as_str(), r.freq_hz, r.rmse_mean)));
    let svg = plot(&series, "frequency (Hz)", "RMSE", report.id_band);
    let svg_path = dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}

pub fn write_latency(report: &LatencyReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&csv_path, &report.rows)?;
    let series = group(report.rows.iter().map(|r| (r.model.as_str(), r.warm_start_k as f64, r.wall_time_mean_ms)));
    let svg = plot(&series, "denoising steps k", "wall time (ms)", None);
    let svg_path = dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}

fn group<'a>(points: impl Iterator<Item = (&'a str, f64, f64)>) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (m, x, y) in points {
        if !map.contains_key(m) {
            order.push(m.to_string());
        }
        map.entry(m.to_string()).or_default().push((x, y));
    }
    order
        .into_iter()
        .map(|m| {
            let mut pts = map.remove(&m).unwrap_or_default();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (m, pts)
        })
        .collect()
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn plot(series: &[(String, Vec<(f64, f64)>)], x_label: &str, y_label: &str, band: Option<[f64; 2]>) -> String {
    let pts = || series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1) = range(pts().map(|p| p.0).chain(band.into_iter().flatten()));
    let (_, y1) = range(pts().map(|p| p.1));
    let y0 = 0.0f64.min(range(pts().map(|p| p.1)).0);
    let y1 = y1 + 0.05 * (y1 - y0).max(1e-12);
    if x1 <= x0 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    let (l, r, t, b) = PAD;
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let sy = |y: f64| H - b - (y - y0) / (y1 - y0) * (H - t - b);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="{SVG_NS}" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    if let Some([lo, hi]) = band {
        let _ = writeln!(
            s,
            r##"<rect class="id-band" data-lo="{lo}" data-hi="{hi}" x="{:.2}" y="{t}" width="{:.2}" height="{}" fill="#cccccc" fill-opacity="0.5"/>"##,
            sx(lo),
            (sx(hi) - sx(lo)).max(1.0),
            H - t - b
        );
    }
    let _ = writeln!(s, r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - b, W - r, H - b);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#, H - b);
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - b + 16.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, sy(yv) + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + W - r) / 2.0, H - 10.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        (t + H - b) / 2.0,
        esc(y_label)
    );
    for (i, (model, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-model="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            esc(model),
            coords.join(" ")
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - r - 120.0, t + 14.0 * (i as f64 + 1.0), esc(model));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v)
    }
}
