//! CSV and self-contained SVG writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::PhasePortrait;
use crate::floquet::{CellClass, StabilityGrid};
use crate::ode::Trajectory;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// 12 significant digits, locale-free and stable across platforms.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `t,x,vx[,y,vy][,labels…]`; the state layout is `[q…, v…]`.
pub fn trajectory_header(dim: usize, labels: &[String]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for axis in &AXES[..dim] {
        h.push(axis.to_string());
        h.push(format!("v{axis}"));
    }
    h.extend(labels.iter().cloned());
    h
}

pub fn trajectory_csv(traj: &Trajectory, labels: &[String], invariants: &[Vec<f64>]) -> String {
    let dim = traj.width() / 2;
    let mut out = trajectory_header(dim, labels).join(",");
    out.push('\n');
    for (k, (t, y)) in traj.times().iter().zip(traj.states()).enumerate() {
        let mut row = vec![fmt_num(*t)];
        for i in 0..dim {
            row.push(fmt_num(y[i]));
            row.push(fmt_num(y[dim + i]));
        }
        if let Some(inv) = invariants.get(k) {
            row.extend(inv.iter().map(|v| fmt_num(*v)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Named equal-length columns as CSV.
pub fn columns_csv(names: &[&str], columns: &[&[f64]]) -> String {
    let mut out = names.join(",");
    out.push('\n');
    let n = columns.first().map_or(0, |c| c.len());
    for k in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_num(c[k])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ExportError> {
    fs::write(path, contents).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })
}

pub fn export_csv(traj: &Trajectory, labels: &[String], invariants: &[Vec<f64>], path: &Path) -> Result<(), ExportError> {
    write_file(path, &trajectory_csv(traj, labels, invariants))
}

/// Header and numeric rows of a CSV produced by this module.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(ExportError::Malformed { line: 1, reason: "empty file".into() })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ExportError::Malformed { line: i + 2, reason: e.to_string() })?;
            if row.len() != header.len() {
                return Err(ExportError::Malformed {
                    line: i + 2,
                    reason: format!("{} fields, header has {}", row.len(), header.len()),
                });
            }
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Read { path: path.to_path_buf(), source })?;
    parse_csv(&text)
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, W / 2.0, escape(title));
    s
}

/// Axes frame with tick labels at the ends of each range.
fn svg_axes(s: &mut String, xlabel: &str, ylabel: &str, range: Option<[f64; 4]>) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, W / 2.0, H - 15.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    if let Some([u0, u1, v0, v1]) = range {
        let tick = |x: f64| format!("{x:.3e}");
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="start" font-family="sans-serif" font-size="10">{}</text>"#, y0 + 15.0, tick(u0));
        let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#, y0 + 15.0, tick(u1));
        let _ = writeln!(s, r#"<text x="{}" y="{y0}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#, x0 - 4.0, tick(v0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#, x0 - 4.0, y1 + 10.0, tick(v1));
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let d = lo.abs().max(1.0) * 0.5;
        (lo - d, hi + d)
    }
}

/// Phase portrait as a polyline, or axes with "no data" when empty.
pub fn portrait_svg(portrait: &PhasePortrait, title: &str) -> String {
    let axis = AXES.get(portrait.coordinate).copied().unwrap_or("u");
    let mut s = svg_open(title);
    match portrait.bounds {
        None => {
            svg_axes(&mut s, axis, &format!("d{axis}/dt"), None);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="18" fill="gray">no data</text>"#, W / 2.0, H / 2.0);
        }
        Some(b) => {
            let (u0, u1) = padded(b.u_min, b.u_max);
            let (v0, v1) = padded(b.du_min, b.du_max);
            svg_axes(&mut s, axis, &format!("d{axis}/dt"), Some([u0, u1, v0, v1]));
            let sx = (W - 2.0 * MARGIN) / (u1 - u0);
            let sy = (H - 2.0 * MARGIN) / (v1 - v0);
            let pts: Vec<String> = portrait
                .points
                .iter()
                .map(|(u, v)| format!("{:.2},{:.2}", MARGIN + (u - u0) * sx, H - MARGIN - (v - v0) * sy))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#, pts.join(" "));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn cell_color(c: CellClass) -> &'static str {
    match c {
        CellClass::BoundedOscillatory => "#4c9a5a",
        CellClass::Marginal => "#e0c341",
        CellClass::Unstable => "#c0392b",
        CellClass::OutOfDomain => "#d0d0d0",
        CellClass::Failed => "#000000",
    }
}

/// Stability grid as colored cells, `a` across and `q` upward.
pub fn grid_svg(grid: &StabilityGrid, title: &str) -> String {
    let mut s = svg_open(title);
    let (na, nq) = (grid.a_axis.count, grid.q_axis.count);
    let range = (na > 0 && nq > 0).then_some([grid.a_axis.min, grid.a_axis.max, grid.q_axis.min, grid.q_axis.max]);
    svg_axes(&mut s, &grid.a_axis.name, &grid.q_axis.name, range);
    if range.is_none() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="18" fill="gray">no data</text>"#, W / 2.0, H / 2.0);
    } else {
        let cw = (W - 2.0 * MARGIN) / na as f64;
        let ch = (H - 2.0 * MARGIN) / nq as f64;
        for i in 0..na {
            for j in 0..nq {
                let cell = grid.cell(i, j);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>a={} q={} {:?}</title></rect>"#,
                    MARGIN + i as f64 * cw,
                    H - MARGIN - (j + 1) as f64 * ch,
                    cw,
                    ch,
                    cell_color(cell.class),
                    cell.a,
                    cell.q,
                    cell.class
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes an SVG document.
pub fn export_svg(svg: &str, path: &Path) -> Result<(), ExportError> {
    write_file(path, svg)
}
