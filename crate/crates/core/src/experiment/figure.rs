//! Standalone SVG plots of sampler trajectories and per-step violations.

use std::fmt::Write as _;
use std::path::Path;

use super::config::FigureKind;
use crate::error::{Error, Result};
use crate::samplers::SampleRecord;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !(f.x1 > f.x0) {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if !(f.y1 > f.y0) {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD),
            H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD),
        )
    }
}

fn header(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#).unwrap();
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    writeln!(
        out,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{xlabel} [{:.3}, {:.3}]  {ylabel} [{:.3e}, {:.3e}]</text>"#,
        H - 12.0,
        f.x0,
        f.x1,
        f.y0,
        f.y1
    )
    .unwrap();
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, data: Option<&[f64]>) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let data_attr = data
        .map(|d| {
            let vals: Vec<String> = d.iter().map(|v| format!("{v:?}")).collect();
            format!(r#" data-values="{}""#, vals.join(" "))
        })
        .unwrap_or_default();
    writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-opacity="0.7"{data_attr}/>"#,
        coords.join(" ")
    )
    .unwrap();
}

/// Trajectories in the plane, one polyline per record through all `N + 1`
/// states, with the terminal state marked.
pub fn render_trajectories(records: &[SampleRecord], title: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to plot".into()));
    }
    if let Some(r) = records.iter().find(|r| r.x0.len() != 2) {
        return Err(Error::Config(format!("trajectory plot needs 2-D states, got {}", r.x0.len())));
    }
    let f = Frame::fit(records.iter().flat_map(|r| r.states.iter().map(|s| (s[0], s[1]))));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "x", "y");
    for (i, r) in records.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = r.states.iter().map(|s| f.px(s[0], s[1])).collect();
        polyline(&mut out, &pts, color, None);
        let (cx, cy) = f.px(r.x1[0], r.x1[1]);
        writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="{color}"/>"#).unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Clean-constraint violation after every step against `t_{k+1}`; the raw
/// values ride along in each polyline's `data-values` attribute.
pub fn render_violation_curve(records: &[SampleRecord], title: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to plot".into()));
    }
    let n = records[0].per_step_violation.len();
    let tk = |k: usize| (k + 1) as f64 / n as f64;
    let f = Frame::fit(
        records
            .iter()
            .flat_map(|r| r.per_step_violation.iter().enumerate().map(move |(k, v)| (tk(k), *v)))
            .chain([(0.0, 0.0)]),
    );
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "t", "max violation");
    for (i, r) in records.iter().enumerate() {
        let pts: Vec<(f64, f64)> = r.per_step_violation.iter().enumerate().map(|(k, v)| f.px(tk(k), *v)).collect();
        polyline(&mut out, &pts, PALETTE[i % PALETTE.len()], Some(&r.per_step_violation));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_figure(records: &[SampleRecord], kind: FigureKind, path: &Path) -> Result<()> {
    let title = path.file_stem().and_then(|s| s.to_str()).unwrap_or("figure");
    let svg = match kind {
        FigureKind::Trajectory2d => render_trajectories(records, title)?,
        FigureKind::ViolationCurve => render_violation_curve(records, title)?,
    };
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn record(states: Vec<Vec<f64>>, viol: Vec<f64>) -> SampleRecord {
        SampleRecord {
            index: 0,
            x0: states[0].clone(),
            x1: states.last().unwrap().clone(),
            projection_moves: vec![0.0; viol.len()],
            per_step_violation: viol,
            states,
            final_violation: 0.0,
            feasible: true,
            refine_iterations: 0,
            wall_time: Duration::ZERO,
        }
    }

    fn attr<'a>(svg: &'a str, name: &str) -> Vec<&'a str> {
        let key = format!("{name}=\"");
        svg.match_indices(&key)
            .map(|(i, _)| {
                let rest = &svg[i + key.len()..];
                &rest[..rest.find('"').unwrap()]
            })
            .collect()
    }

    #[test]
    fn three_step_trajectory_has_four_vertices() {
        let r = record(vec![vec![0.0, 0.0], vec![0.5, 0.1], vec![1.0, 0.3], vec![1.2, 1.0]], vec![0.0; 3]);
        let svg = render_trajectories(&[r], "t").unwrap();
        let lines = attr(&svg, "points");
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].split_whitespace().count(), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_or_wrong_dimension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.svg");
        assert!(emit_figure(&[], FigureKind::Trajectory2d, &p).is_err());
        assert!(!p.exists());
        let r = record(vec![vec![0.0; 3], vec![1.0; 3]], vec![0.0]);
        assert!(matches!(emit_figure(&[r], FigureKind::Trajectory2d, &p), Err(Error::Config(_))));
        assert!(!p.exists());
    }

    #[test]
    fn violation_curve_carries_the_data() {
        let v = vec![0.3, 0.0, 1e-9, 0.25];
        let r = record(vec![vec![0.0]; 5], v.clone());
        let svg = render_violation_curve(&[r], "v").unwrap();
        let data = attr(&svg, "data-values");
        let parsed: Vec<f64> = data[0].split_whitespace().map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, v);
    }
}
