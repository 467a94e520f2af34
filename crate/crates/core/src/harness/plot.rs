//! Minimal SVG rendering of the CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 150.0, 40.0, 55.0); // left, right, top, bottom
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers only.
    pub scatter: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed y = x reference line.
    pub diagonal: bool,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (l, r, t, b) = MARGIN;
        let pw = WIDTH - l - r;
        let ph = HEIGHT - t - b;
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1) = bounds(all().map(|p| p.0));
        let (mut y0, mut y1) = bounds(all().map(|p| p.1));
        if self.diagonal {
            x0 = x0.min(y0);
            y0 = x0;
            x1 = x1.max(y1);
            y1 = x1;
        }
        let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            l + pw / 2.0,
            esc(&self.title)
        );
        for x in ticks(x0, x1) {
            let px = sx(x);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{t}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##,
                t + ph
            );
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
                t + ph + 16.0
            );
        }
        for y in ticks(y0, y1) {
            let py = sy(y);
            let _ = writeln!(
                s,
                r##"<line x1="{l}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/>"##,
                l + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                l - 6.0,
                py + 4.0,
                fmt_tick(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            l + pw / 2.0,
            HEIGHT - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            t + ph / 2.0,
            t + ph / 2.0,
            esc(&self.y_label)
        );
        if self.diagonal {
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
                sx(x0),
                sy(x0),
                sx(x1),
                sy(x1)
            );
        }
        for (i, series) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|p| (sx(p.0), sy(p.1)))
                .collect();
            if series.scatter {
                for (px, py) in &pts {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{px:.2}" cy="{py:.2}" r="2" fill="{c}" fill-opacity="0.6"/>"#
                    );
                }
            } else {
                let path: Vec<String> = pts
                    .iter()
                    .map(|(px, py)| format!("{px:.2},{py:.2}"))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
                for (px, py) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{c}"/>"#);
                }
            }
            let ly = t + 14.0 + 18.0 * i as f64;
            let lx = l + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx}" y="{:.2}" width="12" height="12" fill="{c}"/>"#,
                ly - 10.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#,
                lx + 18.0,
                esc(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// A CSV body with `#` comment lines removed.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format("csv table", "missing header"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format("csv table", format!("missing column {name}")))
    }

    fn number(cell: &str) -> f64 {
        match cell {
            "inf" => f64::INFINITY,
            c => c.parse().unwrap_or(f64::NAN),
        }
    }

    /// `(x, y)` points grouped by the `group` column (or one unnamed group).
    pub fn series(
        &self,
        x: &str,
        y: &str,
        group: Option<&str>,
    ) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
        let (xi, yi) = (self.column(x)?, self.column(y)?);
        let gi = group.map(|g| self.column(g)).transpose()?;
        let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &self.rows {
            let get = |i: usize| row.get(i).map_or(f64::NAN, |c| Self::number(c));
            let key = gi.and_then(|i| row.get(i).cloned()).unwrap_or_default();
            out.entry(key).or_default().push((get(xi), get(yi)));
        }
        Ok(out)
    }
}

fn chart_for(name: &str, table: &Table) -> Result<Option<Chart>> {
    let lines = |x: &str, y: &str, group: Option<&str>| -> Result<Vec<Series>> {
        Ok(table
            .series(x, y, group)?
            .into_iter()
            .map(|(name, points)| Series {
                name: if name.is_empty() { y.to_string() } else { name },
                points,
                scatter: false,
            })
            .collect())
    };
    let chart = if name == "rmse_vs_snr.csv" {
        Chart {
            title: "RMSE vs SNR".into(),
            x_label: "SNR (dB)".into(),
            y_label: "RMSE (deg)".into(),
            series: lines("snr_db", "rmse_deg", Some("method"))?,
            diagonal: false,
        }
    } else if name == "rmse_vs_snapshots.csv" {
        Chart {
            title: "RMSE vs number of snapshots".into(),
            x_label: "snapshots".into(),
            y_label: "RMSE (deg)".into(),
            series: lines("snapshots", "rmse_deg", Some("method"))?,
            diagonal: false,
        }
    } else if let Some(m) = name
        .strip_prefix("scatter_")
        .and_then(|n| n.strip_suffix(".csv"))
    {
        let mut series = lines("true_theta", "pred_theta", None)?;
        for s in &mut series {
            s.name = m.to_string();
            s.scatter = true;
        }
        Chart {
            title: format!("Predicted vs true theta ({m})"),
            x_label: "true theta (deg)".into(),
            y_label: "predicted theta (deg)".into(),
            series,
            diagonal: true,
        }
    } else if name.starts_with("learning_curve") && name.ends_with(".csv") {
        let mut series = lines("epoch", "val_loss", None)?;
        series.extend(lines("epoch", "train_loss", None)?);
        for s in &mut series {
            s.points.retain(|p| p.1.is_finite());
        }
        Chart {
            title: name.trim_end_matches(".csv").replace('_', " "),
            x_label: "epoch".into(),
            y_label: "loss".into(),
            series,
            diagonal: false,
        }
    } else {
        return Ok(None);
    };
    Ok(Some(chart))
}

/// Render an SVG next to every recognised CSV in `dir`. Returns the files written.
pub fn plot_directory(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut written = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let table = Table::parse(&text).map_err(|e| e.at_path(&path))?;
        if let Some(chart) = chart_for(&name, &table).map_err(|e| e.at_path(&path))? {
            let out = path.with_extension("svg");
            std::fs::write(&out, chart.to_svg()).map_err(|e| Error::io(&out, e))?;
            written.push(out);
        }
    }
    Ok(written)
}
