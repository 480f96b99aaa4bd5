//! Minimal self-contained SVG line plots, rendered from CSV text only.

use std::fmt::Write;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 220.0;
const LEFT: f64 = 75.0;
const RIGHT: f64 = 20.0;
const TITLE: f64 = 36.0;
const GAP: f64 = 40.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// A line; `None` points break it.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
}

/// One panel of a CSV plot: a y-axis label and the columns drawn on it.
pub struct PanelSpec<'a> {
    pub y_label: &'a str,
    pub columns: &'a [&'a str],
}

/// Plots `columns` of `csv_text` against `x_col`, one panel per spec.
/// Empty or non-numeric cells leave gaps.
pub fn plot_csv(csv_text: &str, title: &str, x_col: &str, panels: &[PanelSpec]) -> Result<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().context("reading CSV header")?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("CSV has no column {name:?}"))
    };
    let xi = col(x_col)?;
    let mut idx = Vec::new();
    for p in panels {
        idx.push(
            p.columns
                .iter()
                .map(|c| col(c))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .context("reading CSV")?;
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let out: Vec<Panel> = panels
        .iter()
        .zip(&idx)
        .map(|(p, cols)| Panel {
            y_label: p.y_label.to_string(),
            series: p
                .columns
                .iter()
                .zip(cols)
                .map(|(name, &ci)| Series {
                    label: name.to_string(),
                    points: rows
                        .iter()
                        .map(|r| Some((num(&r[xi])?, num(&r[ci])?)))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    if out.is_empty() {
        bail!("no panels to plot");
    }
    Ok(render(title, x_col, &out))
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = TITLE + panels.len() as f64 * (PANEL_HEIGHT + GAP) + 10.0;
    let all_x = panels
        .iter()
        .flat_map(|p| p.series.iter())
        .flat_map(|s| s.points.iter().flatten().map(|p| p.0));
    let (x0, x1) = range(all_x);
    let pw = WIDTH - LEFT - RIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (pi, panel) in panels.iter().enumerate() {
        let top = TITLE + pi as f64 * (PANEL_HEIGHT + GAP);
        let (y0, y1) = range(
            panel
                .series
                .iter()
                .flat_map(|s| s.points.iter().flatten().map(|p| p.1)),
        );
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{top}" width="{pw}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                top,
                top + PANEL_HEIGHT,
                top + PANEL_HEIGHT + 14.0,
                label(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 5.0,
                y + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            top + PANEL_HEIGHT / 2.0,
            top + PANEL_HEIGHT / 2.0,
            escape(&panel.y_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            top + PANEL_HEIGHT + 30.0,
            escape(x_label)
        );
        for (si, s) in panel.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let mut run: Vec<String> = Vec::new();
            let flush = |run: &mut Vec<String>, svg: &mut String| {
                if run.len() > 1 {
                    let _ = writeln!(
                        svg,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{}"/>"#,
                        run.join(" ")
                    );
                } else if run.len() == 1 {
                    let (x, y) = run[0].split_once(',').unwrap_or(("0", "0"));
                    let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="1.5" fill="{color}"/>"#);
                }
                run.clear();
            };
            for p in &s.points {
                match p {
                    Some((x, y)) => run.push(format!("{:.2},{:.2}", sx(*x), sy(*y))),
                    None => flush(&mut run, &mut svg),
                }
            }
            flush(&mut run, &mut svg);
            let ly = top + 14.0 + si as f64 * 14.0;
            let lx = LEFT + pw - 150.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                lx + 22.0,
                ly,
                escape(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(label(0.30000000000000004), "0.3");
    }

    #[test]
    fn gaps_split_polylines() {
        let csv = "t,a\n0,1\n1,\n2,3\n3,4\n";
        let svg = plot_csv(
            csv,
            "x",
            "t",
            &[PanelSpec {
                y_label: "a",
                columns: &["a"],
            }],
        )
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn unknown_column_is_an_error() {
        assert!(plot_csv(
            "t,a\n0,1\n",
            "x",
            "t",
            &[PanelSpec {
                y_label: "b",
                columns: &["b"]
            }]
        )
        .is_err());
    }
}
