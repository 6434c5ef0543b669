//! PI-plus-feedforward spray law with saturation and conditional anti-windup.
//!
//! `compute_control` is literal on the error it is handed. The plant-facing
//! wiring (sign flip, feedback scale) lives in [`ControlLaw::controller_error`]
//! so that tuners, tests and the loop all share one convention.

use crate::config::ControlConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVector {
    pub kp: f64,
    pub ki: f64,
    pub kff: f64,
}

impl GainVector {
    pub fn new(kp: f64, ki: f64, kff: f64) -> Self {
        Self { kp, ki, kff }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.kp, self.ki, self.kff]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.kp.is_finite() && self.ki.is_finite() && self.kff.is_finite()
    }
}

/// Axis-aligned bounds on the three gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBox {
    pub kp: [f64; 2],
    pub ki: [f64; 2],
    pub kff: [f64; 2],
}

impl GainBox {
    pub fn bounds(&self) -> [[f64; 2]; 3] {
        [self.kp, self.ki, self.kff]
    }

    /// NaN components land on the lower bound.
    pub fn clamp(&self, g: GainVector) -> GainVector {
        let b = self.bounds();
        let a = g.to_array();
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = if a[i].is_nan() { b[i][0] } else { a[i].clamp(b[i][0], b[i][1]) };
        }
        GainVector::from_array(out)
    }

    /// Per-component 1 if the raw value lies strictly inside its interval,
    /// else 0. This is the derivative of `clamp` almost everywhere.
    pub fn clamp_mask(&self, raw: [f64; 3]) -> [f64; 3] {
        let b = self.bounds();
        let mut m = [0.0; 3];
        for i in 0..3 {
            if raw[i] > b[i][0] && raw[i] < b[i][1] {
                m[i] = 1.0;
            }
        }
        m
    }

    pub fn contains(&self, g: GainVector) -> bool {
        let b = self.bounds();
        g.to_array()
            .iter()
            .zip(b.iter())
            .all(|(v, r)| *v >= r[0] && *v <= r[1])
    }

    pub fn center(&self) -> GainVector {
        let b = self.bounds();
        GainVector::new(
            0.5 * (b[0][0] + b[0][1]),
            0.5 * (b[1][0] + b[1][1]),
            0.5 * (b[2][0] + b[2][1]),
        )
    }

    pub fn lower(&self) -> GainVector {
        GainVector::new(self.kp[0], self.ki[0], self.kff[0])
    }

    /// Map to the unit cube.
    pub fn to_unit(&self, g: GainVector) -> [f64; 3] {
        let b = self.bounds();
        let a = g.to_array();
        let mut z = [0.0; 3];
        for i in 0..3 {
            let w = b[i][1] - b[i][0];
            z[i] = if w > 0.0 { (a[i] - b[i][0]) / w } else { 0.0 };
        }
        z
    }

    /// Inverse of [`to_unit`](Self::to_unit), clamped; NaN maps to the lower bound.
    pub fn from_unit(&self, z: [f64; 3]) -> GainVector {
        let b = self.bounds();
        let mut a = [0.0; 3];
        for i in 0..3 {
            let t = if z[i].is_nan() { 0.0 } else { z[i].clamp(0.0, 1.0) };
            a[i] = b[i][0] + t * (b[i][1] - b[i][0]);
        }
        GainVector::from_array(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    /// Accumulated controller error, error-seconds.
    pub integral: f64,
    pub last_u_unsat: f64,
    pub last_u_sat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLaw {
    pub u_min: f64,
    pub u_max: f64,
    pub integral_clamp: f64,
    pub integral_time_base: f64,
    pub ff_reference: f64,
    pub error_sign: f64,
    pub feedback_scale: f64,
}

impl Default for ControlLaw {
    fn default() -> Self {
        Self::from_config(&ControlConfig::default())
    }
}

impl ControlLaw {
    pub fn from_config(c: &ControlConfig) -> Self {
        Self {
            u_min: c.u_min,
            u_max: c.u_max,
            integral_clamp: c.integral_clamp,
            integral_time_base: c.integral_time_base,
            ff_reference: c.ff_reference,
            error_sign: c.error_sign,
            feedback_scale: c.feedback_scale,
        }
    }

    /// Unit wiring: no sign flip, no scaling, unit time base. Handy for
    /// exercising the law on its own.
    pub fn literal() -> Self {
        Self {
            error_sign: 1.0,
            feedback_scale: 1.0,
            integral_time_base: 1.0,
            integral_clamp: 50.0,
            ..Self::default()
        }
    }

    /// Error as the feedback terms see it. Spray cools, so a cold outlet
    /// (r - y > 0) must reduce u; the default sign is therefore negative.
    pub fn controller_error(&self, r: f64, y: f64) -> f64 {
        self.error_sign * self.feedback_scale * (r - y)
    }

    pub fn ff_deviation(&self, t_gt: f64) -> f64 {
        t_gt - self.ff_reference
    }

    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    pub fn is_saturated(&self, u_unsat: f64) -> bool {
        !(u_unsat > self.u_min && u_unsat < self.u_max)
    }

    /// Pre-saturation output for a given integral.
    pub fn unsaturated(&self, g: GainVector, e: f64, integral: f64, t_gt: f64) -> f64 {
        g.kp * e + g.ki / self.integral_time_base * integral + g.kff * self.ff_deviation(t_gt)
    }

    /// d(u_unsat)/d(kp, ki, kff).
    pub fn gain_sensitivity(&self, e: f64, integral: f64, t_gt: f64) -> [f64; 3] {
        [e, integral / self.integral_time_base, self.ff_deviation(t_gt)]
    }

    /// Integral that makes u_unsat equal `u0` at controller error `e`.
    pub fn bumpless_integral(&self, g: GainVector, u0: f64, e: f64, t_gt: f64) -> f64 {
        if g.ki.abs() < 1e-12 {
            return 0.0;
        }
        let need = (u0 - g.kp * e - g.kff * self.ff_deviation(t_gt)) * self.integral_time_base / g.ki;
        need.clamp(-self.integral_clamp, self.integral_clamp)
    }

    pub fn initial_state(&self, g: GainVector, u0: f64, e: f64, t_gt: f64) -> ControllerState {
        let integral = self.bumpless_integral(g, u0, e, t_gt);
        let u = self.unsaturated(g, e, integral, t_gt);
        ControllerState {
            integral,
            last_u_unsat: u,
            last_u_sat: self.saturate(u),
        }
    }

    /// One control interval. The output uses the integral accumulated so far;
    /// the integral then advances by `e dt` unless the actuator is saturated
    /// in the direction the error pushes.
    pub fn compute_control(
        &self,
        g: GainVector,
        e: f64,
        cs: ControllerState,
        t_gt: f64,
        dt: f64,
    ) -> (f64, ControllerState) {
        let u_unsat = self.unsaturated(g, e, cs.integral, t_gt);
        let u = self.saturate(u_unsat);
        let winding_up = (u_unsat >= self.u_max && e > 0.0) || (u_unsat <= self.u_min && e < 0.0);
        let mut integral = cs.integral;
        if !winding_up {
            integral += e * dt;
        }
        integral = integral.clamp(-self.integral_clamp, self.integral_clamp);
        (
            u,
            ControllerState {
                integral,
                last_u_unsat: u_unsat,
                last_u_sat: u,
            },
        )
    }
}

/// The fixed-gain baseline: the same law with gains that never move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPi {
    gains: GainVector,
}

impl FixedPi {
    pub fn new(gains: GainVector) -> Self {
        Self { gains }
    }

    pub fn gains_at(&self, _t: f64) -> GainVector {
        self.gains
    }
}

pub fn fixed_pi_controller() -> FixedPi {
    FixedPi::new(GainVector::new(1.2, 105.0, 0.0))
}
