use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use photogeo_core::fusion::{Decision, FusionStep};

use crate::error::CliError;
use crate::run::read_jsonl;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

/// Linear or base-10 logarithmic value axis.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: &[f64], log: bool) -> Axis {
        let v: Vec<f64> = values
            .iter()
            .copied()
            .filter(|x| x.is_finite() && (!log || *x > 0.0))
            .map(|x| if log { x.log10() } else { x })
            .collect();
        let (mut lo, mut hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil().max(lo + 1.0);
        } else {
            lo = lo.min(0.0);
            if hi <= lo {
                hi = lo + 1.0;
            }
            hi *= 1.05;
        }
        Axis { lo, hi, log }
    }

    fn y(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite()
            .then(|| TOP + (HEIGHT - TOP - BOTTOM) * (1.0 - (v - self.lo) / (self.hi - self.lo)))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i64..=self.hi as i64)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            (0..=4)
                .map(|k| {
                    let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn x_of(i: usize, n: usize) -> f64 {
    let span = WIDTH - LEFT - RIGHT;
    if n <= 1 {
        LEFT + span / 2.0
    } else {
        LEFT + span * i as f64 / (n - 1) as f64
    }
}

fn frame(svg: &mut String, title: &str, axis: &Axis, n: usize, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#,
        WIDTH / 2.0
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
    );
    for (v, label) in axis.ticks() {
        if let Some(y) = axis.y(v) {
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                x0 - 4.0,
                y + 4.0
            );
        }
    }
    for i in 0..n {
        let x = x_of(i, n);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{i}</text>"#,
            y1 + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">fusion step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn polyline(svg: &mut String, axis: &Axis, values: &[Option<f64>], color: &str, class: &str) {
    let n = values.len();
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.and_then(|v| axis.y(v)).map(|y| format!("{:.2},{y:.2}", x_of(i, n))))
        .collect();
    if !pts.is_empty() {
        let _ = writeln!(
            svg,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
}

fn legend(svg: &mut String, entries: &[(&str, &str)]) {
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 14.0 * k as f64;
        let x = WIDTH - RIGHT - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            x + 18.0,
            x + 22.0,
            y + 4.0
        );
    }
}

/// Pose error and covariance eigenvalue sum against the fusion step.
pub fn convergence_svg(steps: &[FusionStep]) -> String {
    let err: Vec<Option<f64>> = steps.iter().map(|s| s.error_t).collect();
    let eig: Vec<Option<f64>> = steps.iter().map(|s| s.eigen_sum).collect();
    let all: Vec<f64> = err.iter().chain(&eig).flatten().copied().collect();
    let axis = Axis::fit(&all, true);
    let mut svg = String::new();
    frame(
        &mut svg,
        "Fused alignment error and uncertainty",
        &axis,
        steps.len(),
        "value (log scale)",
    );
    polyline(&mut svg, &axis, &err, "#1f77b4", "error");
    polyline(&mut svg, &axis, &eig, "#d62728", "eigen-sum");
    legend(
        &mut svg,
        &[
            ("translation error [m]", "#1f77b4"),
            ("covariance eigenvalue sum", "#d62728"),
        ],
    );
    svg.push_str("</svg>\n");
    svg
}

/// Evidence statistic against its chi-square bound, one marker per decision.
pub fn evidence_svg(steps: &[FusionStep]) -> String {
    let stat: Vec<Option<f64>> = steps.iter().map(|s| s.threshold.map(|_| s.statistic)).collect();
    let thr: Vec<Option<f64>> = steps.iter().map(|s| s.threshold).collect();
    let all: Vec<f64> = stat.iter().chain(&thr).flatten().copied().collect();
    let axis = Axis::fit(&all, true);
    let mut svg = String::new();
    frame(
        &mut svg,
        "Visual evidence test",
        &axis,
        steps.len(),
        "chi-square statistic (log scale)",
    );
    polyline(&mut svg, &axis, &thr, "#7f7f7f", "threshold");
    polyline(&mut svg, &axis, &stat, "#2ca02c", "statistic");
    let bottom = HEIGHT - BOTTOM;
    for (i, s) in steps.iter().enumerate() {
        let x = x_of(i, steps.len());
        let y = stat[i].and_then(|v| axis.y(v)).unwrap_or(bottom);
        let (class, shape) = match s.decision {
            Decision::Accepted => (
                "accepted",
                format!(r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#2ca02c"/>"##),
            ),
            Decision::Rejected => (
                "rejected",
                format!(
                    r##"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="#d62728" stroke-width="2"/>"##,
                    x - 5.0,
                    y - 5.0,
                    x + 5.0,
                    y + 5.0,
                    x - 5.0,
                    y + 5.0,
                    x + 5.0,
                    y - 5.0
                ),
            ),
            Decision::Seed => (
                "seed",
                format!(
                    r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="#1f77b4"/>"##,
                    x - 4.0,
                    y - 4.0
                ),
            ),
            Decision::Discarded | Decision::Failed => (
                "dropped",
                format!(
                    r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="none" stroke="#7f7f7f"/>"##,
                    x - 4.0,
                    y - 4.0
                ),
            ),
        };
        let _ = writeln!(
            svg,
            r#"<g class="marker {class}" data-step="{i}" data-pair="{}">{shape}</g>"#,
            s.pair_index
        );
    }
    legend(
        &mut svg,
        &[("chi-square 95% bound", "#7f7f7f"), ("evidence statistic", "#2ca02c")],
    );
    svg.push_str("</svg>\n");
    svg
}

/// Renders a fusion trace (JSON lines of fusion steps) into
/// `<stem>_convergence.svg` and `<stem>_evidence.svg` inside `out_dir`.
/// Nothing is written when the log is empty or malformed.
pub fn plot_trace(log: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let steps: Vec<FusionStep> = read_jsonl(log)?;
    if steps.is_empty() {
        return Err(CliError::Runtime(format!("{}: empty fusion log", log.display())));
    }
    let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    fs::create_dir_all(out_dir)?;
    let a = out_dir.join(format!("{stem}_convergence.svg"));
    let b = out_dir.join(format!("{stem}_evidence.svg"));
    fs::write(&a, convergence_svg(&steps))?;
    fs::write(&b, evidence_svg(&steps))?;
    Ok((a, b))
}
