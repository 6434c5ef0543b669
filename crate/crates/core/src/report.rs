//! KPI tables, trace CSVs and static SVG plots.
//!
//! Every writer formats numbers with Rust's shortest round-trip `Display`,
//! so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::KpiRow;
use crate::scenario::Trace;

pub const KPI_HEADER: [&str; 5] = ["controller", "iae", "mo", "ts", "cev"];

pub const TRACE_HEADER: [&str; 14] = [
    "t", "r", "y", "e", "u", "kp", "ki", "kff", "f", "t_gt", "x1", "x2", "l_data", "l_phys",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_kpi_csv(rows: &[KpiRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(KPI_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.controller.clone(),
            r.iae.to_string(),
            r.mo.to_string(),
            r.ts.to_string(),
            r.cev.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width table in the layout of the paper's comparison table.
pub fn kpi_table(rows: &[KpiRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>12} {:>9} {:>12} {:>10}",
        "Controller", "IAE [C*s]", "MO [C]", "Ts [s]", "CEV"
    );
    let _ = writeln!(s, "{}", "-".repeat(59));
    for r in rows {
        let ts = match r.ts {
            crate::metrics::Settling::After(t) => format!("{t:.0}"),
            crate::metrics::Settling::NotSettled => "not settled".into(),
        };
        let _ = writeln!(
            s,
            "{:<12} {:>12.1} {:>9.2} {:>12} {:>10.4}",
            r.controller, r.iae, r.mo, ts, r.cev
        );
    }
    s
}

pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| Error::csv(path, e))?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            r.r.to_string(),
            r.y.to_string(),
            r.e.to_string(),
            r.u.to_string(),
            r.gains.kp.to_string(),
            r.gains.ki.to_string(),
            r.gains.kff.to_string(),
            r.f.to_string(),
            r.t_gt.to_string(),
            r.x1.to_string(),
            r.x2.to_string(),
            opt(r.l_data),
            opt(r.l_phys),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-step learner diagnostics: losses, weighted physics term and the
/// parameter norm. Only meaningful for traces of an online learner.
pub fn write_diagnostics_csv(trace: &Trace, mu: f64, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t", "l_data", "l_phys", "mu_l_phys", "param_norm"])
        .map_err(|e| Error::csv(path, e))?;
    for (k, r) in trace.records.iter().enumerate() {
        w.write_record([
            r.t.to_string(),
            opt(r.l_data),
            opt(r.l_phys),
            opt(r.l_phys.map(|v| mu * v)),
            opt(trace.diagnostics.get(k).copied()),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line in a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub ylabel: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];
const WIDTH: f64 = 820.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 45.0;

fn bounds(panel: &Panel) -> Option<(f64, f64, f64, f64)> {
    let mut it = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let &(x0, y0) = it.next()?;
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (x0, x0, y0, y0);
    for &(x, y) in it {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    let pad = if y_hi > y_lo { 0.05 * (y_hi - y_lo) } else { 0.5_f64.max(y_lo.abs() * 0.01) };
    Some((x_lo, x_hi, y_lo - pad, y_hi + pad))
}

/// Stacked line plots sharing the x axis. Self-contained SVG.
pub fn svg_plot(title: &str, xlabel: &str, panels: &[Panel]) -> String {
    let height = MARGIN_T + panels.len() as f64 * (PANEL_H + GAP) + 10.0;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (p, panel) in panels.iter().enumerate() {
        let top = MARGIN_T + p as f64 * (PANEL_H + GAP);
        let Some((x_lo, x_hi, y_lo, y_hi)) = bounds(panel) else {
            continue;
        };
        let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| top + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H;
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#333"/>"##
        );
        for i in 0..=4 {
            let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
            let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                sy(fy),
                MARGIN_L + plot_w,
                sy(fy),
                MARGIN_L - 6.0,
                sy(fy) + 4.0,
                tick(fy)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(fx),
                top + PANEL_H + 16.0,
                tick(fx)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
            top + PANEL_H / 2.0,
            top + PANEL_H / 2.0,
            escape(&panel.ylabel)
        );
        for (k, series) in panel.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for &(x, y) in &series.points {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
                pen_down = true;
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.3"/>"#,
                d.trim_end()
            );
            let ly = top + 14.0 + 16.0 * k as f64;
            let lx = MARGIN_L + plot_w + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{}" y="{:.2}">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                lx + 24.0,
                ly,
                escape(&series.label)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        height - 4.0,
        escape(xlabel)
    );
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series(trace: &Trace, label: &str, f: impl Fn(&crate::scenario::TraceRecord) -> f64) -> Series {
    Series {
        label: label.to_string(),
        points: trace.records.iter().map(|r| (r.t, f(r))).collect(),
    }
}

pub fn temperature_plot(trace: &Trace) -> String {
    svg_plot(
        &format!("{}: outlet temperature ({})", trace.controller, trace.scenario),
        "time [s]",
        &[Panel {
            ylabel: "temperature [C]".into(),
            series: vec![series(trace, "y", |r| r.y), series(trace, "setpoint", |r| r.r)],
        }],
    )
}

pub fn control_plot(trace: &Trace) -> String {
    svg_plot(
        &format!("{}: spray flow ({})", trace.controller, trace.scenario),
        "time [s]",
        &[
            Panel {
                ylabel: "u [kg/s]".into(),
                series: vec![series(trace, "u", |r| r.u), series(trace, "leak", |r| r.f)],
            },
            Panel {
                ylabel: "T_gt [C]".into(),
                series: vec![series(trace, "T_gt", |r| r.t_gt)],
            },
        ],
    )
}

pub fn gains_plot(trace: &Trace) -> String {
    let panel = |label: &str, f: fn(&crate::scenario::TraceRecord) -> f64| Panel {
        ylabel: label.to_string(),
        series: vec![series(trace, label, f)],
    };
    svg_plot(
        &format!("{}: gain evolution ({})", trace.controller, trace.scenario),
        "time [s]",
        &[
            panel("kp", |r| r.gains.kp),
            panel("ki", |r| r.gains.ki),
            panel("kff", |r| r.gains.kff),
        ],
    )
}

/// All controllers' outlet temperatures in one figure.
pub fn overlay_plot(traces: &[Trace]) -> String {
    let mut s: Vec<Series> = traces.iter().map(|t| series(t, &t.controller, |r| r.y)).collect();
    if let Some(t) = traces.first() {
        s.push(series(t, "setpoint", |r| r.r));
    }
    let scenario = traces.first().map(|t| t.scenario.as_str()).unwrap_or("");
    svg_plot(
        &format!("outlet temperature comparison ({scenario})"),
        "time [s]",
        &[Panel {
            ylabel: "temperature [C]".into(),
            series: s,
        }],
    )
}

fn write(path: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// KPI CSV and table plus three SVG plots per trace and one overlay.
/// Returns the files written, in write order.
pub fn render_report(rows: &[KpiRow], traces: &[Trace], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let csv_path = dir.join("kpis.csv");
    write_kpi_csv(rows, &csv_path)?;
    out.push(csv_path);
    write(dir.join("kpis.txt"), &kpi_table(rows), &mut out)?;
    if traces.is_empty() {
        log::warn!("no traces to plot; wrote the KPI table only");
        return Ok(out);
    }
    for t in traces {
        let stem = &t.controller;
        write(dir.join(format!("{stem}_temperature.svg")), &temperature_plot(t), &mut out)?;
        write(dir.join(format!("{stem}_control.svg")), &control_plot(t), &mut out)?;
        write(dir.join(format!("{stem}_gains.svg")), &gains_plot(t), &mut out)?;
    }
    write(dir.join("comparison_temperature.svg"), &overlay_plot(traces), &mut out)?;
    Ok(out)
}
