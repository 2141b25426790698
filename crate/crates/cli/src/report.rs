// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static HTML summary with inline SVG charts built from run outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sentinel_core::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Header plus rows of optional numbers; non-numeric cells become `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "empty file".into(),
            })?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(|c| c.parse().ok()).collect())
            .collect();
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn pairs(&self, x: usize, y: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.get(x).copied()??, r.get(y).copied()??)))
            .collect()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (l, r, t, b) = MARGIN;
    let (x0, x1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let sy = |y: f64| H - b - (y - y0) / (y1 - y0) * (H - t - b);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, esc(title));
    let _ = writeln!(
        svg,
        "<line x1=\"{l}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{0}\" stroke=\"black\"/>",
        H - b,
        W - r
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            sx(xv),
            H - b + 15.0,
            fmt_tick(xv),
            l - 5.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 10.0, esc(x_label));
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        let ly = t + 5.0 + 15.0 * k as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - r - 120.0,
            W - r - 105.0,
            ly + 9.0,
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grid heatmap of `(x, y, value)` cells.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, cells: &[(f64, f64, f64)]) -> String {
    let (l, r, t, b) = MARGIN;
    let mut xs: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut ys: Vec<f64> = cells.iter().map(|c| c.1).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let (v0, v1) = range(cells.iter().map(|c| c.2));
    let cw = (W - l - r) / xs.len().max(1) as f64;
    let ch = (H - t - b) / ys.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, esc(title));
    for &(x, y, v) in cells {
        let i = xs.iter().position(|&a| a == x).unwrap_or(0);
        let j = ys.iter().position(|&a| a == y).unwrap_or(0);
        let f = (v - v0) / (v1 - v0);
        let (red, blue) = ((255.0 * f).round() as u8, (255.0 * (1.0 - f)).round() as u8);
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"rgb({red},80,{blue})\"><title>{}</title></rect>",
            l + i as f64 * cw,
            H - b - (j + 1) as f64 * ch,
            cw,
            ch,
            fmt_tick(v)
        );
    }
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", l + (i as f64 + 0.5) * cw, H - b + 15.0, fmt_tick(*x));
    }
    for (j, y) in ys.iter().enumerate() {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", l - 5.0, H - b - (j as f64 + 0.5) * ch + 4.0, fmt_tick(*y));
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 10.0, esc(x_label));
    let _ = writeln!(svg, "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {0})\" text-anchor=\"middle\">{}</text>", H / 2.0, esc(y_label));
    svg.push_str("</svg>\n");
    svg
}

fn figures_for(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut figs = Vec::new();
    let tag = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let curve = dir.join("curve.csv");
    if curve.is_file() {
        let t = Table::read(&curve)?;
        let x = t.column("threshold").unwrap_or(0);
        let metrics: Vec<(String, Vec<(f64, f64)>)> = ["recall", "precision", "f1", "accuracy"]
            .iter()
            .filter_map(|m| t.column(m).map(|c| (m.to_string(), t.pairs(x, c))))
            .collect();
        figs.push((format!("{tag}_scores.svg"), line_chart(&format!("{tag}: scores by threshold"), "threshold", &metrics)));
        if let Some(c) = t.column("median_reaction_s") {
            let s = vec![("median reaction (s)".to_string(), t.pairs(x, c))];
            figs.push((format!("{tag}_reaction.svg"), line_chart(&format!("{tag}: reaction time by threshold"), "threshold", &s)));
        }
    }
    let trials = dir.join("trials.csv");
    if trials.is_file() {
        let t = Table::read(&trials)?;
        if let Some(c) = t.column("objective") {
            let mut best = f64::INFINITY;
            let pts: Vec<(f64, f64)> = t
                .rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.get(c).copied().flatten().map(|v| {
                    best = best.min(v);
                    (i as f64, best)
                }))
                .collect();
            let raw = t.pairs(0, c);
            figs.push((
                format!("{tag}_trials.svg"),
                line_chart(&format!("{tag}: objective by trial"), "trial", &[("objective".into(), raw), ("best so far".into(), pts)]),
            ));
        }
    }
    let mut pd_files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().is_some_and(|n| {
                let n = n.to_string_lossy();
                n.starts_with("pd_") && n.ends_with(".csv")
            })
        })
        .collect();
    pd_files.sort();
    for p in pd_files {
        let t = Table::read(&p)?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = format!("{tag}_{stem}.svg");
        match t.header.len() {
            2 => figs.push((name, line_chart(&format!("partial dependence: {}", t.header[0]), &t.header[0], &[("objective".into(), t.pairs(0, 1))]))),
            3 => {
                let cells: Vec<(f64, f64, f64)> = t
                    .rows
                    .iter()
                    .filter_map(|r| Some((r.first().copied()??, r.get(1).copied()??, r.get(2).copied()??)))
                    .collect();
                figs.push((name, heatmap(&format!("partial dependence: {} x {}", t.header[0], t.header[1]), &t.header[0], &t.header[1], &cells)));
            }
            _ => log::warn!("ignoring {}", p.display()),
        }
    }
    Ok(figs)
}

/// Collects figures from each input run directory into `out/report.html`.
pub fn render(inputs: &[PathBuf], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>sentinel report</title></head><body>\n<h1>sentinel report</h1>\n",
    );
    let mut total = 0;
    for dir in inputs {
        if !dir.is_dir() {
            return Err(Error::ConfigInvalid(format!("input {} is not a directory", dir.display())));
        }
        let figs = figures_for(dir)?;
        if figs.is_empty() {
            log::warn!("no sweep, trial or partial-dependence files in {}", dir.display());
            continue;
        }
        let _ = writeln!(html, "<h2>{}</h2>", esc(&dir.display().to_string()));
        for (name, svg) in figs {
            fs::write(out.join(&name), &svg)?;
            html.push_str(&svg);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::ConfigInvalid("no renderable inputs found".into()));
    }
    html.push_str("</body></html>\n");
    fs::write(out.join("report.html"), html)?;
    log::info!("rendered {total} figures");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_series() {
        let svg = line_chart("t", "x", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_cells() {
        let cells: Vec<_> = (0..3).flat_map(|i| (0..2).map(move |j| (i as f64, j as f64, (i + j) as f64))).collect();
        let svg = heatmap("h", "x", "y", &cells);
        assert_eq!(svg.matches("<rect").count(), 6);
    }

    #[test]
    fn table_parses_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "threshold,recall\n0.1,\n0.2,0.5\n").unwrap();
        let t = Table::read(&p).unwrap();
        assert_eq!(t.rows[0], vec![Some(0.1), None]);
        assert_eq!(t.pairs(0, 1), vec![(0.2, 0.5)]);
    }
}
