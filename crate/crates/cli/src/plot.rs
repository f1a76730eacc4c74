//! Static SVG plot of a closed-loop run: states on top, inputs below.

use std::fmt::Write as _;
use std::path::Path;

use mpc_core::controller::{MpcConfig, Trajectory};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot plot an empty trajectory")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Panel<'a> {
    title: &'a str,
    top: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel<'_> {
    fn px(&self, k: f64) -> f64 {
        MARGIN + k / self.x_max * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + PANEL_HEIGHT - (y - self.y_min) / (self.y_max - self.y_min) * PANEL_HEIGHT
    }

    fn frame(&self, svg: &mut String) {
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            MARGIN,
            self.top,
            WIDTH - 2.0 * MARGIN,
            PANEL_HEIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="14" font-family="sans-serif">{}</text>"#,
            MARGIN,
            self.top - 8.0,
            self.title
        );
        for (v, label) in [(self.y_min, self.y_min), (self.y_max, self.y_max)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">{:.3}</text>"#,
                MARGIN - 6.0,
                self.py(v) + 4.0,
                label
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">k = {}</text>"#,
            WIDTH - MARGIN,
            self.top + PANEL_HEIGHT + 16.0,
            self.x_max
        );
    }

    fn polyline(&self, svg: &mut String, points: &[(f64, f64)], color: &str, label: &str) {
        let pts: Vec<String> = points
            .iter()
            .map(|&(k, y)| format!("{:.2},{:.2}", self.px(k), self.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{label}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
    }

    fn bound(&self, svg: &mut String, y: f64, color: &str) {
        let _ = writeln!(
            svg,
            r#"<line class="bound" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#,
            MARGIN,
            self.py(y),
            WIDTH - MARGIN,
            self.py(y)
        );
    }
}

fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn finite_bounds(bounds: &[(Option<f64>, Option<f64>)]) -> Vec<(usize, f64)> {
    bounds
        .iter()
        .enumerate()
        .flat_map(|(i, (lo, hi))| [lo, hi].into_iter().flatten().map(move |&b| (i, b)))
        .filter(|(_, b)| b.is_finite())
        .collect()
}

/// Renders the plot; bounds come from the axis-aligned rows of the sets.
pub fn render_svg(traj: &Trajectory, cfg: &MpcConfig) -> Result<String, PlotError> {
    if traj.states.is_empty() {
        return Err(PlotError::Empty);
    }
    let n = traj.states[0].len();
    let m = cfg.u_set.dim();
    let x_max = (traj.states.len() - 1).max(1) as f64;
    let x_bounds = finite_bounds(&cfg.x_set.axis_bounds());
    let u_bounds = finite_bounds(&cfg.u_set.axis_bounds());

    let (y_min, y_max) = range(
        traj.states
            .iter()
            .flat_map(|x| x.iter())
            .chain(x_bounds.iter().map(|(_, b)| b)),
    );
    let states = Panel {
        title: "states",
        top: 40.0,
        x_max,
        y_min,
        y_max,
    };
    let (y_min, y_max) = range(
        traj.inputs
            .iter()
            .flat_map(|u| u.iter())
            .chain(u_bounds.iter().map(|(_, b)| b)),
    );
    let inputs = Panel {
        title: "inputs",
        top: 40.0 + PANEL_HEIGHT + 60.0,
        x_max,
        y_min,
        y_max,
    };

    let height = inputs.top + PANEL_HEIGHT + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    states.frame(&mut svg);
    inputs.frame(&mut svg);

    for i in 0..n {
        let pts: Vec<(f64, f64)> = traj.states.iter().enumerate().map(|(k, x)| (k as f64, x[i])).collect();
        let pts = if pts.len() == 1 { vec![pts[0], pts[0]] } else { pts };
        states.polyline(&mut svg, &pts, COLORS[i % COLORS.len()], &format!("x{}", i + 1));
    }
    for &(i, b) in &x_bounds {
        states.bound(&mut svg, b, COLORS[i % COLORS.len()]);
    }
    for j in 0..m {
        // zero-order hold: u_k acts over [k, k + 1)
        let mut pts = Vec::with_capacity(2 * traj.inputs.len());
        for (k, u) in traj.inputs.iter().enumerate() {
            pts.push((k as f64, u[j]));
            pts.push(((k + 1) as f64, u[j]));
        }
        if !pts.is_empty() {
            inputs.polyline(&mut svg, &pts, COLORS[(n + j) % COLORS.len()], &format!("u{}", j + 1));
        }
    }
    for &(j, b) in &u_bounds {
        inputs.bound(&mut svg, b, COLORS[(n + j) % COLORS.len()]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(traj: &Trajectory, cfg: &MpcConfig, path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(traj, cfg)?;
    std::fs::write(path, svg).map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })
}
