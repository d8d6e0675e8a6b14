//! Self-contained SVG charts for the CSVs the other commands emit.
//!
//! Hand-written paths, no plotting framework. Each kind checks the csv
//! header for the columns it needs and reports a schema mismatch otherwise;
//! nothing is written unless rendering succeeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{io_at, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Msd,
    Activation,
    Trajectory,
    Density,
}

#[derive(Debug)]
pub struct Csv {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    fn col(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, kind: &str, name: &str) -> Result<usize, CliError> {
        self.col(name).ok_or_else(|| {
            CliError::Validation(format!(
                "{kind} plot needs a \"{name}\" column; csv has [{}]",
                self.names.join(", ")
            ))
        })
    }
}

pub fn load_csv(path: &Path) -> Result<Csv, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Csv, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty csv: no header row".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (k, line) in lines {
        let mut row = Vec::with_capacity(names.len());
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|e| {
                CliError::Validation(format!("csv line {}: {e} in {field:?}", k + 1))
            })?;
            if !value.is_finite() {
                return Err(CliError::Validation(format!(
                    "csv line {}: non-finite value {field:?}",
                    k + 1
                )));
            }
            row.push(value);
        }
        if row.len() != names.len() {
            return Err(CliError::Validation(format!(
                "csv line {}: {} fields, header declares {}",
                k + 1,
                row.len(),
                names.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(
            "empty csv body: header but no data rows".into(),
        ));
    }
    Ok(Csv { names, rows })
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

pub fn render(kind: Kind, csv: &Csv) -> Result<String, CliError> {
    match kind {
        Kind::Msd => {
            let t = csv.require("msd", "t")?;
            let cols: Vec<usize> = (0..csv.names.len())
                .filter(|&k| {
                    k != t && (csv.names[k] == "msd" || csv.names[k].ends_with("_msd"))
                })
                .collect();
            if cols.is_empty() {
                return Err(CliError::Validation(format!(
                    "msd plot needs an \"msd\" (or *_msd) column; csv has [{}]",
                    csv.names.join(", ")
                )));
            }
            let series = cols
                .into_iter()
                .map(|c| Series {
                    label: csv.names[c].clone(),
                    points: csv.rows.iter().map(|r| (r[t], r[c])).collect(),
                })
                .collect();
            Ok(chart("t", "msd", series, None, false))
        }
        Kind::Activation => {
            let t = csv.require("activation", "t")?;
            let a = csv.require("activation", "activation")?;
            // Staircase: the fraction holds its value until the next step.
            let mut points = Vec::with_capacity(2 * csv.rows.len());
            for (k, row) in csv.rows.iter().enumerate() {
                points.push((row[t], row[a]));
                if let Some(next) = csv.rows.get(k + 1) {
                    points.push((next[t], row[a]));
                }
            }
            let series = vec![Series {
                label: "activation".into(),
                points,
            }];
            Ok(chart("t", "activation", series, Some((0.0, 1.0)), false))
        }
        Kind::Trajectory => {
            csv.require("trajectory", "t")?;
            let p = csv.require("trajectory", "particle")?;
            let x = csv.require("trajectory", "x")?;
            let y = csv.require("trajectory", "y")?;
            let mut groups: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
            for row in &csv.rows {
                groups
                    .entry(row[p].round() as i64)
                    .or_default()
                    .push((row[x], row[y]));
            }
            let series = groups
                .into_iter()
                .map(|(id, points)| Series {
                    label: format!("particle {id}"),
                    points,
                })
                .collect();
            Ok(chart("x", "y", series, None, true))
        }
        Kind::Density => {
            let a = csv.require("density", "a")?;
            let rho = csv.require("density", "rho")?;
            let series = if let Some(p) = csv.col("particle") {
                let mut groups: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
                for row in &csv.rows {
                    groups
                        .entry(row[p].round() as i64)
                        .or_default()
                        .push((row[a], row[rho]));
                }
                groups
                    .into_iter()
                    .map(|(id, points)| Series {
                        label: format!("particle {id}"),
                        points,
                    })
                    .collect()
            } else {
                vec![Series {
                    label: "rho".into(),
                    points: csv.rows.iter().map(|r| (r[a], r[rho])).collect(),
                }]
            };
            Ok(chart("a", "rho", series, None, false))
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 75.0;
const TOP: f64 = 20.0;
const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 440.0;

fn chart(
    x_label: &str,
    y_label: &str,
    series: Vec<Series>,
    y_fixed: Option<(f64, f64)>,
    equal_axes: bool,
) -> String {
    let (mut xlo, mut xhi) = data_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (mut ylo, mut yhi) = match y_fixed {
        Some((lo, hi)) => (lo, hi),
        None => data_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    pad(&mut xlo, &mut xhi, 0.04);
    if y_fixed.is_none() {
        pad(&mut ylo, &mut yhi, 0.04);
    }
    if equal_axes {
        // Match data-per-pixel on both axes so shapes keep their aspect.
        let scale = ((xhi - xlo) / PLOT_W).max((yhi - ylo) / PLOT_H);
        let (cx, cy) = ((xlo + xhi) / 2.0, (ylo + yhi) / 2.0);
        xlo = cx - scale * PLOT_W / 2.0;
        xhi = cx + scale * PLOT_W / 2.0;
        ylo = cy - scale * PLOT_H / 2.0;
        yhi = cy + scale * PLOT_H / 2.0;
    }
    let px = |x: f64| LEFT + (x - xlo) / (xhi - xlo) * PLOT_W;
    let py = |y: f64| TOP + PLOT_H - (y - ylo) / (yhi - ylo) * PLOT_H;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <g font-family=\"Helvetica, Arial, sans-serif\" font-size=\"12\" fill=\"#222\">\n"
    );

    // Grid and tick labels.
    for t in nice_ticks(xlo, xhi, 6) {
        let gx = px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{gx:.2}\" y1=\"{TOP}\" x2=\"{gx:.2}\" y2=\"{:.2}\" stroke=\"#e0e0e0\"/>",
            TOP + PLOT_H
        );
        let _ = writeln!(
            svg,
            "<text x=\"{gx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + PLOT_H + 18.0,
            tick_label(t)
        );
    }
    for t in nice_ticks(ylo, yhi, 6) {
        let gy = py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#e0e0e0\"/>",
            LEFT + PLOT_W
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 8.0,
            gy + 4.0,
            tick_label(t)
        );
    }

    // Axes on top of the grid.
    let _ = writeln!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{y2:.2}\" stroke=\"#333\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{y2:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#333\"/>",
        y2 = TOP + PLOT_H,
        x2 = LEFT + PLOT_W
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        LEFT + PLOT_W / 2.0,
        TOP + PLOT_H + 38.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {0:.2})\">{1}</text>",
        TOP + PLOT_H / 2.0,
        esc(y_label)
    );

    // Data.
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(*y));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            pts.trim_end()
        );
        if s.points.len() <= 32 {
            for (x, y) in &s.points {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>",
                    px(*x),
                    py(*y)
                );
            }
        }
    }

    // Legend, top right inside the plot area.
    let label_w = series
        .iter()
        .map(|s| s.label.len())
        .max()
        .unwrap_or(0) as f64
        * 7.2
        + 40.0;
    let legend_x = LEFT + PLOT_W - label_w - 10.0;
    let legend_h = series.len() as f64 * 18.0 + 10.0;
    let _ = writeln!(
        svg,
        "<rect x=\"{legend_x:.2}\" y=\"{:.2}\" width=\"{label_w:.2}\" height=\"{legend_h:.2}\" \
         fill=\"white\" fill-opacity=\"0.85\" stroke=\"#ccc\"/>",
        TOP + 10.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let row_y = TOP + 24.0 + k as f64 * 18.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{row_y:.2}\" x2=\"{:.2}\" y2=\"{row_y:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            legend_x + 6.0,
            legend_x + 26.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            legend_x + 32.0,
            row_y + 4.0,
            esc(&s.label)
        );
    }

    svg.push_str("</g>\n</svg>\n");
    svg
}

fn data_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // parse_csv rejects non-finite fields and empty bodies, so the fold
    // always saw at least one value.
    (lo, hi)
}

fn pad(lo: &mut f64, hi: &mut f64, frac: f64) {
    if *hi > *lo {
        let d = (*hi - *lo) * frac;
        *lo -= d;
        *hi += d;
    } else {
        let d = lo.abs().max(1.0) * 0.5;
        *lo -= d;
        *hi += d;
    }
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm <= 1.0 {
            1.0
        } else if norm <= 2.0 {
            2.0
        } else if norm <= 5.0 {
            5.0
        } else {
            10.0
        };
    let start = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let t = start + k as f64 * step;
        if t > hi + step * 1e-9 || k > 40 {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

fn tick_label(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{x:.2e}");
    }
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
