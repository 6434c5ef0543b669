//! Online physics-informed gain tuner.
//!
//! A tanh MLP maps the current (e, y, T_gt) to the three gains. After every
//! control interval it takes one plain gradient step on
//!
//!   L = L_data + mu * L_phys
//!
//! where L_data is half the squared next-step tracking error and L_phys half
//! the squared mismatch between measured state rates and the nominal
//! (leak-free) model evaluated with the network's spray command. Gradients
//! run loss -> u -> gains -> network parameters.
//!
//! The next-step error depends on the parameters only through u. Its
//! sensitivity is taken from the nominal steady-state gain dy/du, which
//! keeps the data term local to the interval that was just observed.

use std::collections::VecDeque;

use crate::config::{InputScalingConfig, LabConfig};
use crate::control::{ControlLaw, GainBox, GainVector};
use crate::error::{Error, Result};
use crate::neural::{gd_step_params, Activation, Mlp, MlpTape};
use crate::plant::{plant_derivatives, DisturbanceFrame, DisturbanceModel, PlantConstants, PlantState};
use crate::scenario::{GainPolicy, Observation, Rig, StepLosses, StepOutcome};
use crate::seed::component_rng;

/// Affine maps of raw signals onto roughly [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputScaling {
    pub error_span: f64,
    pub outlet: [f64; 2],
    pub t_gt: [f64; 2],
    pub spray: [f64; 2],
}

impl InputScaling {
    pub fn from_config(c: &InputScalingConfig) -> Self {
        Self {
            error_span: c.error_span,
            outlet: c.outlet_range,
            t_gt: c.t_gt_range,
            spray: c.spray_range,
        }
    }

    fn unit(v: f64, r: [f64; 2]) -> f64 {
        2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0
    }

    pub fn error(&self, e: f64) -> f64 {
        e / self.error_span
    }

    pub fn outlet(&self, y: f64) -> f64 {
        Self::unit(y, self.outlet)
    }

    pub fn exhaust(&self, t: f64) -> f64 {
        Self::unit(t, self.t_gt)
    }

    pub fn spray(&self, u: f64) -> f64 {
        Self::unit(u, self.spray)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLossBreakdown {
    pub data_loss: f64,
    pub physics_loss: f64,
    pub mu: f64,
    pub total: f64,
}

impl PinnLossBreakdown {
    pub fn new(data_loss: f64, physics_loss: f64, mu: f64) -> Self {
        Self {
            data_loss,
            physics_loss,
            mu,
            total: data_loss + mu * physics_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Half the squared tracking error.
pub fn data_loss(e: f64) -> f64 {
    0.5 * e * e
}

/// Half the squared rate residual, summed over both states.
pub fn physics_loss(measured: (f64, f64), model: (f64, f64)) -> f64 {
    let r1 = measured.0 - model.0;
    let r2 = measured.1 - model.1;
    0.5 * (r1 * r1 + r2 * r2)
}

/// Everything the update needs about one finished interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnContext {
    pub e: f64,
    pub y: f64,
    pub t_gt: f64,
    pub r: f64,
    pub controller_error: f64,
    pub integral: f64,
    pub u_applied: f64,
    pub y_next: f64,
    pub before: PlantState,
    pub after: PlantState,
    pub measured_rate: (f64, f64),
    pub d4: f64,
    pub d6: f64,
}

impl PinnContext {
    pub fn from_outcome(o: &StepOutcome, measured_rate: (f64, f64)) -> Self {
        Self {
            e: o.obs.e,
            y: o.obs.y,
            t_gt: o.obs.t_gt,
            r: o.obs.r,
            controller_error: o.controller_error,
            integral: o.integral,
            u_applied: o.u,
            y_next: o.after.x1,
            before: o.before,
            after: o.after,
            measured_rate,
            d4: o.d4,
            d6: o.d6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnSettings {
    pub hidden: Vec<usize>,
    pub mu: f64,
    pub learning_rate: f64,
    pub rate_scale: f64,
    pub smooth_rates: bool,
    pub output_scale: [f64; 3],
    pub head_init_scale: f64,
}

impl PinnSettings {
    pub fn from_config(cfg: &LabConfig) -> Self {
        let p = &cfg.pinn;
        Self {
            hidden: p.hidden.clone(),
            mu: p.mu,
            learning_rate: p.learning_rate,
            rate_scale: p.rate_scale,
            smooth_rates: p.smooth_rates,
            output_scale: p.output_scale,
            head_init_scale: p.head_init_scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PinnTuner {
    pub net: Mlp,
    pub settings: PinnSettings,
    pub gain_box: GainBox,
    pub scaling: InputScaling,
    pub law: ControlLaw,
    pub constants: PlantConstants,
    pub dm: DisturbanceModel,
    /// updates skipped because the loss or the step went non-finite
    pub skipped: usize,
    rates: VecDeque<(f64, f64)>,
}

impl PinnTuner {
    /// Warm-started network: small random hidden weights, final bias set so
    /// the gains equal the baseline at the nominal operating point (zero
    /// error, outlet at setpoint, exhaust at the feedforward reference).
    pub fn new(cfg: &LabConfig, rig: &Rig, seed: u64) -> Self {
        let settings = PinnSettings::from_config(cfg);
        let mut sizes = vec![3];
        sizes.extend(&settings.hidden);
        sizes.push(3);
        let mut rng = component_rng(seed, "pinn.init");
        let mut net = Mlp::random(&sizes, Activation::Tanh, &mut rng);
        let head = net.layers.last().unwrap().clone();
        for w in net.params.block_mut(head.w) {
            *w *= settings.head_init_scale;
        }
        let base = rig.baseline.to_array();
        let b = net.params.block_mut(head.b);
        for i in 0..3 {
            b[i] = base[i] / settings.output_scale[i];
        }
        let mut tuner = Self::with_network(net, settings, cfg, rig);
        let x = tuner.features(0.0, cfg.scenario.setpoint, cfg.control.ff_reference);
        let raw = tuner.net.predict(&x).expect("input width matches");
        let b = tuner.net.params.block_mut(head.b);
        for i in 0..3 {
            b[i] += base[i] / tuner.settings.output_scale[i] - raw[i];
        }
        tuner
    }

    pub fn with_network(net: Mlp, settings: PinnSettings, cfg: &LabConfig, rig: &Rig) -> Self {
        Self {
            net,
            settings,
            gain_box: rig.gain_box,
            scaling: InputScaling::from_config(&cfg.lstm.scaling),
            law: rig.law,
            constants: rig.plant.constants,
            dm: rig.dm,
            skipped: 0,
            rates: VecDeque::with_capacity(3),
        }
    }

    pub fn features(&self, e: f64, y: f64, t_gt: f64) -> [f64; 3] {
        [
            self.scaling.error(e),
            self.scaling.outlet(y),
            self.scaling.exhaust(t_gt),
        ]
    }

    fn raw(&self, e: f64, y: f64, t_gt: f64) -> Result<(Vec<f64>, MlpTape)> {
        self.net.forward(&self.features(e, y, t_gt))
    }

    fn scaled(&self, raw: &[f64]) -> [f64; 3] {
        let s = self.settings.output_scale;
        [s[0] * raw[0], s[1] * raw[1], s[2] * raw[2]]
    }

    /// Gains for the current state, clamped into the box.
    pub fn pinn_forward(&self, e: f64, y: f64, t_gt: f64) -> Result<GainVector> {
        let (raw, _) = self.raw(e, y, t_gt)?;
        Ok(self.gain_box.clamp(GainVector::from_array(self.scaled(&raw))))
    }

    /// dy_ss/du of the nominal model at spray `u`.
    pub fn steady_gain(&self, d: &DisturbanceFrame, u: f64) -> f64 {
        let m = d.d2 + u;
        let dx2 = -(d.d4 - d.d5) * d.d2 / (m * m);
        dx2 - (self.constants.k1 * d.d1 - d.d3) / (m * m)
    }

    fn nominal_frame(&self, ctx: &PinnContext, u: f64) -> DisturbanceFrame {
        let mut d = self.dm.frame(ctx.t_gt, None, u, 0.0);
        d.d4 = ctx.d4;
        d.d6 = ctx.d6;
        d
    }

    /// Interval-averaged nominal model rates at spray `u` and their
    /// derivatives with respect to `u`.
    fn model_rates(&self, ctx: &PinnContext, u: f64) -> Result<([f64; 2], [f64; 2])> {
        let d = self.nominal_frame(ctx, u);
        let c = &self.constants;
        let (a1, a2) = plant_derivatives(ctx.before, u, &d, c, 0.0)?;
        let (b1, b2) = plant_derivatives(ctx.after, u, &d, c, 0.0)?;
        let f = [0.5 * (a1 + b1), 0.5 * (a2 + b2)];
        let mean_x1 = 0.5 * (ctx.before.x1 + ctx.after.x1);
        let mean_x2 = 0.5 * (ctx.before.x2 + ctx.after.x2);
        let df = [c.k2 * (mean_x2 - mean_x1), c.k3 * (d.d5 - mean_x2)];
        Ok((f, df))
    }

    /// Loss and dL/d(raw network output) at the current parameters.
    fn loss_and_output_grad(&self, ctx: &PinnContext, raw: &[f64]) -> Result<(PinnLossBreakdown, [f64; 3])> {
        let scaled = self.scaled(raw);
        let gains = self.gain_box.clamp(GainVector::from_array(scaled));
        let mask = self.gain_box.clamp_mask(scaled);
        let law = &self.law;
        let u_unsat = law.unsaturated(gains, ctx.controller_error, ctx.integral, ctx.t_gt);
        let u_sat = law.saturate(u_unsat);
        let sat_pass = if law.is_saturated(u_unsat) { 0.0 } else { 1.0 };

        let d_applied = self.nominal_frame(ctx, ctx.u_applied);
        let g = self.steady_gain(&d_applied, ctx.u_applied);
        let y_pred = ctx.y_next + g * (u_sat - ctx.u_applied);
        let e_pred = ctx.r - y_pred;
        let l_data = data_loss(e_pred);
        let dl_data_du = -e_pred * g * sat_pass;

        let (f, df) = self.model_rates(ctx, u_unsat)?;
        let rs = self.settings.rate_scale;
        let r1 = (ctx.measured_rate.0 - f[0]) / rs;
        let r2 = (ctx.measured_rate.1 - f[1]) / rs;
        let l_phys = 0.5 * (r1 * r1 + r2 * r2);
        let dl_phys_du = -(r1 * df[0] + r2 * df[1]) / rs;

        let mu = self.settings.mu;
        let breakdown = PinnLossBreakdown::new(l_data, l_phys, mu);
        let du = dl_data_du + mu * dl_phys_du;
        let sens = law.gain_sensitivity(ctx.controller_error, ctx.integral, ctx.t_gt);
        let s = self.settings.output_scale;
        let mut grad = [0.0; 3];
        for i in 0..3 {
            grad[i] = du * sens[i] * mask[i] * s[i];
        }
        Ok((breakdown, grad))
    }

    /// Loss at the current parameters, no gradient.
    pub fn loss(&self, ctx: &PinnContext) -> Result<PinnLossBreakdown> {
        let (raw, _) = self.raw(ctx.e, ctx.y, ctx.t_gt)?;
        Ok(self.loss_and_output_grad(ctx, &raw)?.0)
    }

    /// Fills `net.params.grads` with dL/dtheta and returns the loss.
    pub fn gradient(&mut self, ctx: &PinnContext) -> Result<PinnLossBreakdown> {
        let (raw, tape) = self.raw(ctx.e, ctx.y, ctx.t_gt)?;
        let (breakdown, dy) = self.loss_and_output_grad(ctx, &raw)?;
        self.net.params.zero_grads();
        self.net.backward(&tape, &dy)?;
        Ok(breakdown)
    }

    /// One gradient-descent step. A non-finite loss or step leaves the
    /// parameters untouched.
    pub fn online_update(&mut self, ctx: &PinnContext) -> Result<PinnLossBreakdown> {
        let breakdown = match self.gradient(ctx) {
            Ok(b) => b,
            Err(e) if e.is_numerical() => {
                self.skipped += 1;
                log::warn!("pinn update skipped: {e}");
                return Ok(PinnLossBreakdown::new(f64::NAN, f64::NAN, self.settings.mu));
            }
            Err(e) => return Err(e),
        };
        if !breakdown.is_finite() || self.net.params.grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("pinn update skipped: non-finite loss {}", breakdown.total);
            return Ok(breakdown);
        }
        let backup = self.net.params.values.clone();
        gd_step_params(&mut self.net.params, self.settings.learning_rate)?;
        if !self.net.params.all_finite() {
            self.skipped += 1;
            self.net.params.values_mut().copy_from_slice(&backup);
        }
        Ok(breakdown)
    }

    /// Backward-difference state rates, optionally averaged over the last
    /// three intervals.
    pub fn measured_rate(&mut self, before: PlantState, after: PlantState, dt: f64) -> (f64, f64) {
        let raw = ((after.x1 - before.x1) / dt, (after.x2 - before.x2) / dt);
        if !self.settings.smooth_rates {
            return raw;
        }
        if self.rates.len() == 3 {
            self.rates.pop_front();
        }
        self.rates.push_back(raw);
        let n = self.rates.len() as f64;
        let (s1, s2) = self.rates.iter().fold((0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1));
        (s1 / n, s2 / n)
    }

    pub fn snapshot_kind(&self) -> String {
        let sizes: Vec<String> = self.net.sizes().iter().map(|s| s.to_string()).collect();
        format!("pinn mlp {}", sizes.join("-"))
    }
}

/// The tuner wired into the closed loop.
#[derive(Debug, Clone)]
pub struct PinnController {
    pub tuner: PinnTuner,
    initial: Mlp,
    label: String,
}

impl PinnController {
    pub fn new(tuner: PinnTuner) -> Self {
        Self {
            initial: tuner.net.clone(),
            tuner,
            label: "pinn".into(),
        }
    }
}

impl GainPolicy for PinnController {
    fn name(&self) -> &str {
        &self.label
    }

    /// Every run starts from the warm-start parameters.
    fn reset(&mut self) {
        self.tuner.net = self.initial.clone();
        self.tuner.skipped = 0;
        self.tuner.rates.clear();
    }

    fn gains(&mut self, obs: &Observation) -> Result<GainVector> {
        let g = self.tuner.pinn_forward(obs.e, obs.y, obs.t_gt)?;
        if !g.is_finite() {
            return Err(Error::ModelBlowup {
                term: "pinn gains",
                value: f64::NAN,
            });
        }
        Ok(g)
    }

    fn after_step(&mut self, o: &StepOutcome) -> Result<Option<StepLosses>> {
        let rate = self.tuner.measured_rate(o.before, o.after, o.dt);
        let ctx = PinnContext::from_outcome(o, rate);
        let b = self.tuner.online_update(&ctx)?;
        Ok(Some(StepLosses {
            l_data: b.data_loss,
            l_phys: b.physics_loss,
            param_norm: self.tuner.net.params.l2_norm(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (LabConfig, Rig) {
        let cfg = LabConfig::default();
        let rig = Rig::from_config(&cfg).unwrap();
        (cfg, rig)
    }

    fn small(cfg: &mut LabConfig) {
        cfg.pinn.hidden = vec![6, 5];
    }

    #[test]
    fn data_loss_examples() {
        assert_eq!(data_loss(0.0), 0.0);
        assert_eq!(data_loss(2.0), 2.0);
        assert_eq!(data_loss(-3.0), 4.5);
    }

    #[test]
    fn physics_loss_is_quadratic() {
        assert_eq!(physics_loss((0.1, -0.2), (0.1, -0.2)), 0.0);
        let a = physics_loss((0.3, 0.1), (0.1, 0.2));
        let b = physics_loss((0.5, 0.0), (0.1, 0.2));
        assert!((b - 4.0 * a).abs() < 1e-15);
    }

    #[test]
    fn warm_start_reproduces_baseline() {
        let (mut cfg, _) = setup();
        small(&mut cfg);
        let rig = Rig::from_config(&cfg).unwrap();
        let t = PinnTuner::new(&cfg, &rig, 9);
        let g = t.pinn_forward(0.0, cfg.scenario.setpoint, cfg.control.ff_reference).unwrap();
        assert!((g.kp - 1.2).abs() < 1e-9);
        assert!((g.ki - 105.0).abs() < 1e-9);
        assert!(g.kff.abs() < 1e-9);
    }

    #[test]
    fn zero_network_clamps_to_floor() {
        let (mut cfg, rig) = setup();
        small(&mut cfg);
        let net = Mlp::zeros(&[3, 6, 5, 3], Activation::Tanh);
        let t = PinnTuner::with_network(net, PinnSettings::from_config(&cfg), &cfg, &rig);
        let g = t.pinn_forward(1.0, 515.0, 530.0).unwrap();
        // kp and ki sit on their floors; zero is already inside the kff range
        assert_eq!((g.kp, g.ki), (rig.gain_box.kp[0], rig.gain_box.ki[0]));
        assert_eq!(g.kff, 0.0);
    }

    #[test]
    fn steady_gain_matches_finite_difference() {
        let (cfg, rig) = setup();
        let t = PinnTuner::new(&cfg, &rig, 1);
        let d = rig.dm.frame(545.0, None, 0.9, 0.0);
        let ss = |u: f64| {
            let d = rig.dm.frame(545.0, None, u, 0.0);
            crate::plant::steady_state(u, &d, &rig.plant.constants, 0.0).unwrap().x1
        };
        let h = 1e-6;
        let fd = (ss(0.9 + h) - ss(0.9 - h)) / (2.0 * h);
        assert!((t.steady_gain(&d, 0.9) - fd).abs() < 1e-6);
    }
}
