//! Lumped superheater / desuperheater model.
//!
//! Two states: `x1` is the superheater outlet temperature (the controlled
//! output) and `x2` the desuperheater outlet. Spray water `u` and the
//! uncommanded leak `f` enter the desuperheater balance only as `u + f`.

use crate::config::PlantConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub x1: f64,
    pub x2: f64,
}

impl PlantState {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn y(&self) -> f64 {
        self.x1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// Exogenous inputs for one control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceFrame {
    /// fuel mass flow, kg/s
    pub d1: f64,
    /// steam mass flow, kg/s
    pub d2: f64,
    /// ambient-temperature rate, °C/s
    pub d3: f64,
    /// DSH inlet temperature, °C
    pub d4: f64,
    /// spray water temperature, °C
    pub d5: f64,
    /// DSH inlet temperature rate, °C/s
    pub d6: f64,
    /// DSH outlet mass flow, kg/s
    pub d7: f64,
    pub m_in_dsh_bar: f64,
    pub t_gt: f64,
}

impl DisturbanceFrame {
    /// Outlet flow from the mass balance d7 = d2 + u + f.
    pub fn with_outlet_flow(mut self, u: f64, f: f64) -> Self {
        self.d7 = self.d2 + u + f;
        self
    }

    pub fn check(&self) -> Result<()> {
        let fields = [
            self.d1,
            self.d2,
            self.d3,
            self.d4,
            self.d5,
            self.d6,
            self.d7,
            self.m_in_dsh_bar,
            self.t_gt,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite disturbance".into()));
        }
        if self.d2 <= 0.0 || self.d7 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "flows must be positive (d2 = {}, d7 = {})",
                self.d2, self.d7
            )));
        }
        if self.d4 <= self.d5 {
            return Err(Error::InvalidInput(format!(
                "DSH inlet {} not hotter than spray water {}",
                self.d4, self.d5
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub leak_flow: f64,
    pub onset_time: f64,
    pub max_leak: f64,
}

impl FaultSpec {
    pub fn none() -> Self {
        Self {
            leak_flow: 0.0,
            onset_time: 0.0,
            max_leak: 1.0,
        }
    }

    pub fn new(leak_flow: f64, onset_time: f64, max_leak: f64) -> Result<Self> {
        if !(0.0..=max_leak).contains(&leak_flow) {
            return Err(Error::OutOfRange {
                name: "leak_flow",
                value: leak_flow,
                lo: 0.0,
                hi: max_leak,
            });
        }
        Ok(Self {
            leak_flow,
            onset_time,
            max_leak,
        })
    }

    pub fn flow_at(&self, t: f64) -> f64 {
        if self.leak_flow > 0.0 && t >= self.onset_time {
            self.leak_flow
        } else {
            0.0
        }
    }

    pub fn is_active(&self) -> bool {
        self.leak_flow > 0.0
    }
}

fn finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ModelBlowup { term, value })
    }
}

/// Right-hand sides of the two energy balances, °C/s.
///
/// `d.d7` is used as given; callers that want the mass balance build the
/// frame with [`DisturbanceFrame::with_outlet_flow`].
pub fn plant_derivatives(
    s: PlantState,
    u: f64,
    d: &DisturbanceFrame,
    c: &PlantConstants,
    f: f64,
) -> Result<(f64, f64)> {
    let heat = finite("K1*d1", c.k1 * d.d1)?;
    let dx1 = finite("dx1/dt", c.k2 * (heat + d.d7 * (s.x2 - s.x1) - d.d3))?;
    let w = u + f;
    let dx2 = finite(
        "dx2/dt",
        c.k3 * ((d.d2 + w) * (d.d4 - s.x2) - w * (d.d4 - d.d5) + d.m_in_dsh_bar * d.d6),
    )?;
    Ok((dx1, dx2))
}

/// Fixed point of the model for constant inputs with d6 = 0.
pub fn steady_state(u: f64, d: &DisturbanceFrame, c: &PlantConstants, f: f64) -> Result<PlantState> {
    let through = d.d2 + u + f;
    if through.abs() < 1e-12 {
        return Err(Error::DivisionByZero("d2 + u + f"));
    }
    if d.d7.abs() < 1e-12 {
        return Err(Error::DivisionByZero("d7"));
    }
    let x2 = d.d4 - (u + f) * (d.d4 - d.d5) / through;
    let x1 = x2 + (c.k1 * d.d1 - d.d3) / d.d7;
    Ok(PlantState { x1, x2 })
}

/// Integrator settings plus the constants: everything needed to advance the
/// state by one control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub constants: PlantConstants,
    pub max_substep: f64,
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Plant {
    pub fn new(constants: PlantConstants) -> Self {
        Self {
            constants,
            max_substep: 0.25,
            temp_min: 0.0,
            temp_max: 700.0,
        }
    }

    fn guard(&self, s: PlantState) -> Result<PlantState> {
        for (name, v) in [("x1", s.x1), ("x2", s.x2)] {
            if !v.is_finite() {
                return Err(Error::ModelBlowup { term: name, value: v });
            }
            if v < self.temp_min || v > self.temp_max {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    lo: self.temp_min,
                    hi: self.temp_max,
                });
            }
        }
        Ok(s)
    }

    /// Classic RK4 with `ceil(dt / max_substep)` equal substeps. Inputs are
    /// held constant over the interval.
    pub fn step(&self, s: PlantState, u: f64, d: &DisturbanceFrame, f: f64, dt: f64) -> Result<PlantState> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let n = (dt / self.max_substep).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let c = &self.constants;
        let rhs = |x1: f64, x2: f64| plant_derivatives(PlantState { x1, x2 }, u, d, c, f);
        let mut x = s;
        for _ in 0..n {
            let (a1, b1) = rhs(x.x1, x.x2)?;
            let (a2, b2) = rhs(x.x1 + 0.5 * h * a1, x.x2 + 0.5 * h * b1)?;
            let (a3, b3) = rhs(x.x1 + 0.5 * h * a2, x.x2 + 0.5 * h * b2)?;
            let (a4, b4) = rhs(x.x1 + h * a3, x.x2 + h * b3)?;
            x = self.guard(PlantState {
                x1: x.x1 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
                x2: x.x2 + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
            })?;
        }
        Ok(x)
    }
}

/// Maps the exhaust temperature (and the spray it sees) to a full frame.
///
/// d4 follows T_gt through an affine map; d6 is the first difference of d4
/// across control intervals, so the caller passes the previous d4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d5: f64,
    pub t_gt_nominal: f64,
    pub dsh_inlet_offset: f64,
    pub dsh_inlet_slope: f64,
}

impl DisturbanceModel {
    pub fn from_config(p: &PlantConfig) -> Self {
        Self {
            d1: p.fuel_flow,
            d2: p.steam_flow,
            d3: p.ambient_rate,
            d5: p.spray_temp,
            t_gt_nominal: p.t_gt_nominal,
            dsh_inlet_offset: p.dsh_inlet_offset,
            dsh_inlet_slope: p.dsh_inlet_slope,
        }
    }

    pub fn d4(&self, t_gt: f64) -> f64 {
        self.t_gt_nominal - self.dsh_inlet_offset + self.dsh_inlet_slope * (t_gt - self.t_gt_nominal)
    }

    /// Frame with d7 = d2 + u + f. `d4_prev` of `None` means d6 = 0.
    pub fn frame(&self, t_gt: f64, d4_prev: Option<f64>, u: f64, f: f64) -> DisturbanceFrame {
        let d4 = self.d4(t_gt);
        DisturbanceFrame {
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
            d4,
            d5: self.d5,
            d6: d4_prev.map_or(0.0, |p| d4 - p),
            d7: self.d2 + u + f,
            m_in_dsh_bar: self.d2,
            t_gt,
        }
    }
}

/// Outcome of deriving K1..K3 from the calibration targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub constants: PlantConstants,
    pub nominal: DisturbanceFrame,
    pub target_outlet: f64,
    pub target_spray: f64,
    /// Steady state at the targets with the calibrated constants.
    pub check: PlantState,
    /// Outlet temperature range reachable with the DSH over the u limits.
    pub dsh_range: (f64, f64),
}

impl Calibration {
    pub fn residual(&self) -> f64 {
        (self.check.x1 - self.target_outlet).abs()
    }
}

/// K3 = 1/(tau_dsh d2), K2 = 1/(tau_sh d7), K1 from the outlet target.
/// Explicit k1/k2/k3 in the config override the derived values.
pub fn calibrate(p: &PlantConfig, u_limits: (f64, f64)) -> Result<Calibration> {
    let dm = DisturbanceModel::from_config(p);
    let u = p.target_spray;
    let nominal = dm.frame(p.t_gt_nominal, None, u, 0.0);
    nominal.check()?;
    let (u_lo, u_hi) = u_limits;
    let ceiling = nominal.d4;
    let floor = nominal.d4 - u_hi * (nominal.d4 - nominal.d5) / (nominal.d2 + u_hi);
    if !(u_lo..=u_hi).contains(&u) {
        return Err(Error::Infeasible {
            reason: format!("target spray {u} outside the actuator range"),
            lo: u_lo,
            hi: u_hi,
        });
    }
    if p.target_outlet >= ceiling {
        return Err(Error::Infeasible {
            reason: format!(
                "target outlet {} at or above the no-spray ceiling {ceiling}",
                p.target_outlet
            ),
            lo: floor,
            hi: ceiling,
        });
    }
    if p.fuel_flow.abs() < 1e-12 {
        return Err(Error::DivisionByZero("fuel_flow"));
    }
    let x2 = nominal.d4 - u * (nominal.d4 - nominal.d5) / (nominal.d2 + u);
    let k1 = p
        .k1
        .unwrap_or((nominal.d7 * (p.target_outlet - x2) + nominal.d3) / nominal.d1);
    let k2 = p.k2.unwrap_or(1.0 / (p.tau_sh * nominal.d7));
    let k3 = p.k3.unwrap_or(1.0 / (p.tau_dsh * nominal.d2));
    if !(k2 > 0.0 && k3 > 0.0 && k1.is_finite()) {
        return Err(Error::Config(format!(
            "calibrated constants invalid: K1 = {k1}, K2 = {k2}, K3 = {k3}"
        )));
    }
    let constants = PlantConstants { k1, k2, k3 };
    let check = steady_state(u, &nominal, &constants, 0.0)?;
    Ok(Calibration {
        constants,
        nominal,
        target_outlet: p.target_outlet,
        target_spray: u,
        check,
        dsh_range: (floor, ceiling),
    })
}

/// Spray flow whose steady state puts x1 at `target` for the given frame
/// (d6 ignored). Bisection on the monotone steady-state map.
pub fn equilibrium_spray(
    target: f64,
    dm: &DisturbanceModel,
    c: &PlantConstants,
    t_gt: f64,
    f: f64,
    u_limits: (f64, f64),
) -> Result<f64> {
    let y_at = |u: f64| -> Result<f64> {
        let d = dm.frame(t_gt, None, u, f);
        Ok(steady_state(u, &d, c, f)?.x1)
    };
    let (mut lo, mut hi) = u_limits;
    let (y_lo, y_hi) = (y_at(lo)?, y_at(hi)?);
    if !(y_hi <= target && target <= y_lo) {
        return Err(Error::Infeasible {
            reason: format!("setpoint {target} not reachable at T_gt = {t_gt}"),
            lo: y_hi,
            hi: y_lo,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if y_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
