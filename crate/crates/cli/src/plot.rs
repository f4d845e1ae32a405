//! Minimal SVG line and heat-map plots drawn from the written CSV files.

use std::fmt::Write as _;
use std::path::Path;

use crate::output::read_table;

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 170.0;
const MARGIN: f64 = 36.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub faint: bool,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5 - 0.05 * lo.abs(), hi + 0.5 + 0.05 * hi.abs());
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grid of line panels, `cols` per row.
pub fn line_panels(title: &str, panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1).min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols);
    let w = cols as f64 * (PANEL_W + MARGIN) + MARGIN;
    let h = rows as f64 * (PANEL_H + MARGIN) + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-size="14">{}</text>"#, MARGIN, escape(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = MARGIN + (i % cols) as f64 * (PANEL_W + MARGIN);
        let oy = 2.0 * MARGIN + (i / cols) as f64 * (PANEL_H + MARGIN);
        let (x0, x1) = finite_range(p.series.iter().flat_map(|s| s.x.iter().cloned()));
        let (y0, y1) = finite_range(p.series.iter().flat_map(|s| s.y.iter().cloned()));
        let _ = writeln!(s, r##"<rect x="{ox:.1}" y="{oy:.1}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#888"/>"##);
        let _ = writeln!(s, r#"<text x="{ox:.1}" y="{:.1}">{}</text>"#, oy - 4.0, escape(&p.title));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ox - 2.0, oy + 8.0, short(y1));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ox - 2.0, oy + PANEL_H, short(y0));
        let _ = writeln!(s, r#"<text x="{ox:.1}" y="{:.1}">{}</text>"#, oy + PANEL_H + 11.0, short(x0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ox + PANEL_W, oy + PANEL_H + 11.0, short(x1));
        let mut named = 0;
        for (k, ser) in p.series.iter().enumerate() {
            let color = if ser.faint { "#999" } else { COLORS[k % COLORS.len()] };
            let pts: Vec<String> = ser
                .x
                .iter()
                .zip(&ser.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", ox + (x - x0) / (x1 - x0) * PANEL_W, oy + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H))
                .collect();
            let (width, opacity) = if ser.faint { (0.6, 0.5) } else { (1.4, 1.0) };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}" points="{}"/>"#,
                pts.join(" ")
            );
            if !ser.faint && !ser.name.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
                    ox + PANEL_W - 4.0,
                    oy + 12.0 + 11.0 * named as f64,
                    escape(&ser.name)
                );
                named += 1;
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn short(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e4 || x.abs() < 1e-2) {
        format!("{x:.2e}")
    } else {
        format!("{x:.3}")
    }
}

/// Heat map of `values[row][col]` in `[0, 1]`.
pub fn heat_map(title: &str, row_labels: &[String], values: &[Vec<f64>]) -> String {
    let cols = values.first().map_or(0, Vec::len).max(1);
    let label_w = 110.0;
    let cell_h = 16.0;
    let plot_w = 600.0;
    let cell_w = plot_w / cols as f64;
    let h = 2.0 * MARGIN + cell_h * row_labels.len() as f64 + 20.0;
    let w = label_w + plot_w + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="18" font-size="14">{}</text>"#, escape(title));
    for (r, label) in row_labels.iter().enumerate() {
        let y = 2.0 * MARGIN + r as f64 * cell_h;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN + label_w - 4.0, y + 11.0, escape(label));
        for (c, v) in values[r].iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = MARGIN + label_w + c as f64 * cell_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.1}" width="{:.2}" height="{cell_h}" fill="rgb(255,{shade},{shade})"/>"#,
                cell_w + 0.05
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">step 1 .. {cols}; white = 0, red = all members</text>"#,
        MARGIN + label_w,
        h - 8.0
    );
    s.push_str("</svg>\n");
    s
}

type PlotResult = Result<(), Box<dyn std::error::Error>>;

/// Panels of mean with mean +- std bands from `mean_spread.csv`.
pub fn plot_mean_spread(csv: &Path, svg: &Path, title: &str) -> PlotResult {
    let t = read_table(csv, false)?;
    let x = t.column("time").or_else(|| t.column(&t.header[0])).unwrap_or_default();
    let mut panels = Vec::new();
    for name in t.header.iter().filter_map(|h| h.strip_prefix("mean_")) {
        let mean = t.column(&format!("mean_{name}")).unwrap_or_default();
        let std = t.column(&format!("std_{name}")).unwrap_or_default();
        let band = |sign: f64| Series {
            name: String::new(),
            x: x.clone(),
            y: mean.iter().zip(&std).map(|(m, s)| m + sign * s).collect(),
            faint: true,
        };
        panels.push(Panel {
            title: name.to_string(),
            series: vec![
                band(1.0),
                band(-1.0),
                Series {
                    name: "mean".into(),
                    x: x.clone(),
                    y: mean,
                    faint: false,
                },
            ],
        });
    }
    std::fs::write(svg, line_panels(title, &panels, 3))?;
    Ok(())
}

pub fn plot_violations(csv: &Path, svg: &Path, title: &str) -> PlotResult {
    let t = read_table(csv, true)?;
    let values: Vec<Vec<f64>> = t.rows.iter().map(|r| r[1..].to_vec()).collect();
    std::fs::write(svg, heat_map(title, &t.labels, &values))?;
    Ok(())
}

/// One panel per parameter, one faint line per member across iterations.
pub fn plot_evolution(csv: &Path, svg: &Path, title: &str) -> PlotResult {
    let t = read_table(csv, false)?;
    let it = t.column("iteration").ok_or("missing iteration column")?;
    let member = t.column("member").ok_or("missing member column")?;
    let n = member.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
    let mut panels = Vec::new();
    for name in t.header.iter().skip(2) {
        let col = t.column(name).unwrap_or_default();
        let series = (0..n)
            .map(|m| {
                let idx: Vec<usize> = (0..col.len()).filter(|&i| member[i] as usize == m).collect();
                Series {
                    name: String::new(),
                    x: idx.iter().map(|&i| it[i]).collect(),
                    y: idx.iter().map(|&i| col[i]).collect(),
                    faint: true,
                }
            })
            .collect();
        panels.push(Panel {
            title: name.clone(),
            series,
        });
    }
    std::fs::write(svg, line_panels(title, &panels, 3))?;
    Ok(())
}

/// Velocity against depth for every non-depth column of `profile.csv`.
pub fn plot_profile(csv: &Path, svg: &Path, title: &str) -> PlotResult {
    let t = read_table(csv, false)?;
    let z = t.column("z").ok_or("missing z column")?;
    let series = t
        .header
        .iter()
        .skip(1)
        .map(|name| Series {
            name: name.clone(),
            x: z.clone(),
            y: t.column(name).unwrap_or_default(),
            faint: false,
        })
        .collect();
    std::fs::write(
        svg,
        line_panels(
            title,
            &[Panel {
                title: "shear velocity against depth".into(),
                series,
            }],
            1,
        ),
    )?;
    Ok(())
}
