//! Benchmark KPIs over closed-loop traces.
//!
//! All four work on sampled series with a uniform step. The slice-level
//! functions are the definitions; the trace-level wrappers pick the
//! evaluation window and the disturbance time.

use std::fmt;

use crate::config::MetricsConfig;
use crate::error::{Error, Result};
use crate::scenario::Trace;

/// Left Riemann sum of |e|.
pub fn iae(e: &[f64], dt: f64) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(e.iter().map(|v| v.abs()).sum::<f64>() * dt)
}

/// Integral of e^2, same quadrature as [`iae`].
pub fn ise(e: &[f64], dt: f64) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>() * dt
}

/// max over samples of max(0, y - r).
pub fn max_overshoot(y: &[f64], r: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(y.iter().zip(r).map(|(y, r)| (y - r).max(0.0)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Settling {
    After(f64),
    NotSettled,
}

impl Settling {
    /// Not-settled sorts after every finite time.
    pub fn as_f64(&self) -> f64 {
        match self {
            Settling::After(t) => *t,
            Settling::NotSettled => f64::INFINITY,
        }
    }

    pub fn is_settled(&self) -> bool {
        matches!(self, Settling::After(_))
    }
}

impl fmt::Display for Settling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Settling::After(t) => write!(f, "{t}"),
            Settling::NotSettled => f.write_str("not_settled"),
        }
    }
}

/// Time from `t_d` after which |e| stays within `band` up to the end of the
/// samples. A trace whose last sample is outside the band never settled.
pub fn settling_time(t: &[f64], e: &[f64], band: f64, t_d: f64) -> Result<Settling> {
    if t.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if t_d < t[0] || t_d > *t.last().unwrap() {
        return Err(Error::InvalidInput(format!(
            "disturbance time {t_d} outside trace [{}, {}]",
            t[0],
            t.last().unwrap()
        )));
    }
    let start = t.partition_point(|v| *v < t_d);
    let mut settle = t_d;
    for k in (start..t.len()).rev() {
        if e[k].abs() > band {
            if k + 1 == t.len() {
                return Ok(Settling::NotSettled);
            }
            settle = t[k + 1];
            break;
        }
    }
    Ok(Settling::After(settle - t_d))
}

/// Population variance. Deviations are taken from the first sample before
/// the two-pass sum, so a constant signal gives exactly zero.
pub fn control_effort_variance(u: &[f64]) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::TraceTooShort {
            needed: 2,
            got: u.len(),
        });
    }
    let n = u.len() as f64;
    let d: Vec<f64> = u.iter().map(|v| v - u[0]).collect();
    let mean = d.iter().sum::<f64>() / n;
    Ok(d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpiRow {
    pub controller: String,
    pub iae: f64,
    pub mo: f64,
    pub ts: Settling,
    pub cev: f64,
}

/// Index range of samples with start <= t < end.
fn window(trace: &Trace, cfg: &MetricsConfig) -> std::ops::Range<usize> {
    let t: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
    let lo = cfg.window_start.map_or(0, |s| t.partition_point(|v| *v < s));
    let hi = cfg.window_end.map_or(t.len(), |s| t.partition_point(|v| *v < s));
    lo..hi.max(lo)
}

pub fn kpi_row(trace: &Trace, cfg: &MetricsConfig) -> Result<KpiRow> {
    if trace.records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let w = window(trace, cfg);
    let recs = &trace.records[w];
    let e: Vec<f64> = recs.iter().map(|r| r.e).collect();
    let y: Vec<f64> = recs.iter().map(|r| r.y).collect();
    let r: Vec<f64> = recs.iter().map(|r| r.r).collect();
    let u: Vec<f64> = recs.iter().map(|r| r.u).collect();
    let t_all: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
    let e_all: Vec<f64> = trace.records.iter().map(|r| r.e).collect();
    Ok(KpiRow {
        controller: trace.controller.clone(),
        iae: iae(&e, trace.dt)?,
        mo: max_overshoot(&y, &r)?,
        ts: settling_time(&t_all, &e_all, cfg.band, trace.disturbance_time)?,
        cev: control_effort_variance(&u)?,
    })
}
