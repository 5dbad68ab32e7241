//! Minimal SVG line charts of a comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{bounds_for_sample, Comparison, EvalError};
use crate::model::ControlInput;
use crate::simulate::Trajectory;

/// Output file names, outputs first and then inputs.
pub const PLOT_FILES: [&str; 7] = [
    "y1_dry_matter.svg",
    "y2_co2.svg",
    "y3_temperature.svg",
    "y4_humidity.svg",
    "u1_co2_supply.svg",
    "u2_ventilation.svg",
    "u3_heating.svg",
];

const TITLES: [(&str, &str); 7] = [
    ("Dry matter", "y1 [g/m²]"),
    ("Indoor CO₂", "y2 [ppm·10³]"),
    ("Indoor temperature", "y3 [°C]"),
    ("Relative humidity", "y4 [%]"),
    ("CO₂ supply", "u1 [mg/(m²·s)]"),
    ("Ventilation", "u2 [mm/s]"),
    ("Heating", "u3 [W/m²]"),
];

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Write one SVG per output and input with all controllers overlaid. An
/// empty comparison writes nothing and logs a notice.
pub fn emit_plots(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if cmp.trajectories.is_empty() || cmp.trajectories.iter().all(|t| t.steps() == 0) {
        log::warn!("comparison has no trajectories; no plots written");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let names: Vec<&str> = cmp.report.controllers.iter().map(|c| c.name.as_str()).collect();
    let mut written = Vec::with_capacity(PLOT_FILES.len());
    for (i, file) in PLOT_FILES.iter().enumerate() {
        let mut chart = Chart::new(TITLES[i].0, TITLES[i].1);
        let reference = &cmp.trajectories[0];
        match i {
            1 => chart.hline(cmp.report.co2_max),
            2 => chart.band = temperature_band(reference, cmp.report.co2_max, cmp.report.humidity_max),
            3 => chart.hline(cmp.report.humidity_max),
            4..=6 => {
                chart.hline(ControlInput::MIN.0[i - 4]);
                chart.hline(ControlInput::MAX.0[i - 4]);
            }
            _ => {}
        }
        for (name, traj) in names.iter().zip(&cmp.trajectories) {
            let points = if i < 4 { output_series(traj, i) } else { input_series(traj, i - 4) };
            chart.series.push((name.to_string(), points));
        }
        let path = dir.join(file);
        std::fs::write(&path, chart.render())?;
        written.push(path);
    }
    Ok(written)
}

fn hours(traj: &Trajectory, k: usize) -> f64 {
    (traj.times[k] - traj.times[0]) / 3600.0
}

fn output_series(traj: &Trajectory, i: usize) -> Vec<(f64, f64)> {
    (0..traj.measurements.len()).map(|k| (hours(traj, k), traj.measurements[k].0[i])).collect()
}

/// Zero-order-hold staircase of input channel `c`.
fn input_series(traj: &Trajectory, c: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(2 * traj.inputs.len());
    for (k, u) in traj.inputs.iter().enumerate() {
        pts.push((hours(traj, k), u.0[c]));
        pts.push((hours(traj, k + 1), u.0[c]));
    }
    pts
}

/// Lower and upper edge of the temperature band at each sample, as a
/// staircase.
fn temperature_band(traj: &Trajectory, co2_max: f64, humidity_max: f64) -> Vec<(f64, f64, f64)> {
    let mut band = Vec::new();
    for k in 0..traj.steps() {
        if let Some(b) = bounds_for_sample(traj, k, co2_max, humidity_max) {
            band.push((hours(traj, k), b.min[2], b.max[2]));
            band.push((hours(traj, k + 1), b.min[2], b.max[2]));
        }
    }
    band
}

struct Chart {
    title: String,
    y_label: String,
    series: Vec<(String, Vec<(f64, f64)>)>,
    hlines: Vec<f64>,
    band: Vec<(f64, f64, f64)>,
}

impl Chart {
    fn new(title: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            hlines: Vec::new(),
            band: Vec::new(),
        }
    }

    fn hline(&mut self, y: f64) {
        self.hlines.push(y);
    }

    fn extent(&self) -> (f64, f64, f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (_, pts) in &self.series {
            for (x, y) in pts {
                if x.is_finite() && y.is_finite() {
                    x0 = x0.min(*x);
                    x1 = x1.max(*x);
                    y0 = y0.min(*y);
                    y1 = y1.max(*y);
                }
            }
        }
        for y in &self.hlines {
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
        for (_, lo, hi) in &self.band {
            y0 = y0.min(*lo);
            y1 = y1.max(*hi);
        }
        if !(x1 > x0) {
            x1 = x0 + 1.0;
        }
        if !(y1 > y0) {
            let pad = y0.abs().max(1.0) * 0.05;
            y0 -= pad;
            y1 += pad;
        }
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad, y1 + pad)
    }

    fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.extent();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        if !self.band.is_empty() {
            let mut d = String::new();
            for (i, (x, _, hi)) in self.band.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(*x), sy(*hi));
            }
            for (x, lo, _) in self.band.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*lo));
            }
            let _ = writeln!(s, r##"<path d="{}Z" fill="#bbbbbb" fill-opacity="0.5" stroke="none"/>"##, d);
        }

        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                s,
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#e5e5e5\"/>",
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                label(t)
            );
        }
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                label(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time [h]</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for y in &self.hlines {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black" stroke-dasharray="6,4"/>"#,
                sy(*y),
                LEFT + pw
            );
        }

        for (i, (name, pts)) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for (x, y) in pts {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(*x), sy(*y));
                pen_down = true;
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.trim_end()
            );
            let ly = TOP + 16.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0 && span.is_finite()) {
        return vec![lo];
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
