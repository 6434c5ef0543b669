//! Central finite-difference checks of analytic gradients, reported per
//! parameter block so a broken layer is named rather than just detected.

use std::fmt;

use crate::config::LabConfig;
use crate::error::Result;
use crate::neural::{Block, LstmNet};
use crate::pinn::{PinnContext, PinnTuner};
use crate::scenario::Rig;
use crate::seed::component_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-6,
            abs: 1e-8,
        }
    }
}

impl Tolerance {
    /// An entry passes when either the relative or the absolute error is
    /// within bounds.
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let abs = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        abs <= self.abs || (scale > 0.0 && abs / scale <= self.rel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// flat index of the worst entry by absolute error
    pub worst: usize,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub suite: String,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(BlockCheck::passed)
    }

    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !b.passed())
            .map(|b| b.name.as_str())
            .collect()
    }

    pub fn entries(&self) -> usize {
        self.blocks.iter().map(|b| b.entries).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{} {:<16} {:>6} entries  max_abs {:.3e}  max_rel {:.3e}  {}",
                self.suite,
                b.name,
                b.entries,
                b.max_abs_err,
                b.max_rel_err,
                if b.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} {}",
            self.suite,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares `analytic` against central differences of `loss` at `values`.
/// `loss` receives a full parameter vector.
pub fn check_gradients<F>(
    suite: &str,
    blocks: &[Block],
    values: &[f64],
    analytic: &[f64],
    tol: Tolerance,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(values.len(), analytic.len());
    let mut theta = values.to_vec();
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut check = BlockCheck {
            name: b.name.clone(),
            entries: b.len(),
            failures: 0,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            worst: b.offset,
        };
        for i in b.range() {
            let orig = theta[i];
            theta[i] = orig + tol.step;
            let lp = loss(&theta);
            theta[i] = orig - tol.step;
            let lm = loss(&theta);
            theta[i] = orig;
            let numeric = (lp - lm) / (2.0 * tol.step);
            let a = analytic[i];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            if abs > check.max_abs_err {
                check.max_abs_err = abs;
                check.worst = i;
            }
            if abs > tol.abs {
                check.max_rel_err = check.max_rel_err.max(rel);
            }
            if !tol.accepts(a, numeric) {
                check.failures += 1;
            }
        }
        out.push(check);
    }
    GradCheckReport {
        suite: suite.to_string(),
        blocks: out,
    }
}

/// The PINN loss at one fixed closed-loop interval. Gains sit inside the
/// box so the clamp is smooth at the check point; `saturated` pushes the
/// unsaturated spray command above the actuator limit.
#[derive(Debug, Clone)]
pub struct PinnCase {
    pub tuner: PinnTuner,
    pub ctx: PinnContext,
}

impl PinnCase {
    pub fn fixed(cfg: &LabConfig, seed: u64, saturated: bool) -> Result<Self> {
        let mut cfg = cfg.clone();
        // a larger head than the warm start so every layer carries gradient
        cfg.pinn.head_init_scale = 0.1;
        let rig = Rig::from_config(&cfg)?;
        let tuner = PinnTuner::new(&cfg, &rig, seed);

        let r = cfg.scenario.setpoint;
        let t_gt = 0.5 * (cfg.scenario.t_gt_start + cfg.scenario.t_gt_end);
        let (u_eq, eq) = rig.equilibrium(r, t_gt, 0.0)?;
        let before = crate::plant::PlantState::new(eq.x1 + 0.8, eq.x2 + 0.5);
        let y = before.x1;
        let controller_error = rig.law.controller_error(r, y);
        let gains = tuner.pinn_forward(r - y, y, t_gt)?;
        // integral that lands the command at u_eq, or well past the limit
        let target = if saturated { rig.law.u_max + 0.7 } else { u_eq };
        let integral = (target - gains.kp * controller_error - gains.kff * rig.law.ff_deviation(t_gt))
            * rig.law.integral_time_base
            / gains.ki;
        let u_unsat = rig.law.unsaturated(gains, controller_error, integral, t_gt);
        let u = rig.law.saturate(u_unsat);
        let leak = 0.3;
        let d = rig.dm.frame(t_gt, None, u, leak);
        let dt = cfg.scenario.dt;
        let after = rig.plant.step(before, u, &d, leak, dt)?;
        let ctx = PinnContext {
            e: r - y,
            y,
            t_gt,
            r,
            controller_error,
            integral,
            u_applied: u,
            y_next: after.x1,
            before,
            after,
            measured_rate: ((after.x1 - before.x1) / dt, (after.x2 - before.x2) / dt),
            d4: d.d4,
            d6: d.d6,
        };
        Ok(Self { tuner, ctx })
    }

    pub fn analytic(&mut self) -> Result<Vec<f64>> {
        self.tuner.gradient(&self.ctx)?;
        Ok(self.tuner.net.params.grads.clone())
    }

    pub fn check(&self, suite: &str, analytic: &[f64], tol: Tolerance) -> GradCheckReport {
        let mut t = self.tuner.clone();
        let ctx = self.ctx;
        let blocks = self.tuner.net.params.blocks.clone();
        check_gradients(suite, &blocks, &self.tuner.net.params.values, analytic, tol, |theta| {
            t.net.params.values_mut().copy_from_slice(theta);
            t.loss(&ctx).map(|b| b.total).unwrap_or(f64::NAN)
        })
    }
}

/// Half squared error of the LSTM readout against a fixed target after a
/// short window, with dropout off.
#[derive(Debug, Clone)]
pub struct LstmCase {
    pub net: LstmNet,
    pub window: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl LstmCase {
    pub fn fixed(cfg: &LabConfig, seed: u64, steps: usize) -> Self {
        use rand::Rng;
        let mut rng = component_rng(seed, "gradcheck.lstm");
        let inputs = crate::lstm_tuner::CHANNELS;
        let outputs = crate::lstm_tuner::OUTPUTS;
        let net = LstmNet::random(inputs, &cfg.lstm.hidden, outputs, 0.0, &mut rng);
        let window = (0..steps)
            .map(|_| (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let target = (0..outputs).map(|_| rng.random_range(0.0..1.0)).collect();
        Self { net, window, target }
    }

    fn loss_of(net: &LstmNet, window: &[Vec<f64>], target: &[f64]) -> f64 {
        match net.predict(window) {
            Ok(y) => 0.5 * y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            Err(_) => f64::NAN,
        }
    }

    pub fn analytic(&mut self) -> Result<Vec<f64>> {
        let (y, tape) = self.net.forward(&self.window)?;
        let dy: Vec<f64> = y.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        self.net.params.zero_grads();
        self.net.backward(&tape, &dy)?;
        Ok(self.net.params.grads.clone())
    }

    pub fn check(&self, suite: &str, analytic: &[f64], tol: Tolerance) -> GradCheckReport {
        let mut net = self.net.clone();
        let blocks = self.net.params.blocks.clone();
        check_gradients(suite, &blocks, &self.net.params.values, analytic, tol, |theta| {
            net.params.values_mut().copy_from_slice(theta);
            Self::loss_of(&net, &self.window, &self.target)
        })
    }
}

/// Every suite the repository relies on: the PINN chain in the linear and
/// saturated regions and LSTM BPTT over a short window.
pub fn run_all(cfg: &LabConfig, seed: u64) -> Result<Vec<GradCheckReport>> {
    let tol = Tolerance::default();
    let mut out = Vec::new();
    for (name, saturated) in [("pinn", false), ("pinn-saturated", true)] {
        let mut case = PinnCase::fixed(cfg, seed, saturated)?;
        let g = case.analytic()?;
        out.push(case.check(name, &g, tol));
    }
    let mut case = LstmCase::fixed(cfg, seed, 3);
    let g = case.analytic()?;
    out.push(case.check("lstm-bptt", &g, tol));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ParamSet;

    fn quad_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.add_block("a", 1, 2);
        p.add_block("b", 1, 1);
        p.values_mut().copy_from_slice(&[0.5, -1.5, 2.0]);
        p
    }

    // L = a0^2 + a0 a1 + sin(b)
    fn loss(v: &[f64]) -> f64 {
        v[0] * v[0] + v[0] * v[1] + v[2].sin()
    }

    #[test]
    fn exact_gradient_passes() {
        let p = quad_params();
        let v = &p.values;
        let g = [2.0 * v[0] + v[1], v[0], v[2].cos()];
        let r = check_gradients("quad", &p.blocks, v, &g, Tolerance::default(), loss);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn wrong_block_is_named() {
        let p = quad_params();
        let v = &p.values;
        let g = [2.0 * v[0] + v[1], v[0], 1.001 * v[2].cos()];
        let r = check_gradients("quad", &p.blocks, v, &g, Tolerance::default(), loss);
        assert!(!r.passed());
        assert_eq!(r.failing_blocks(), vec!["b"]);
    }

    #[test]
    fn tolerance_has_absolute_floor() {
        let t = Tolerance::default();
        assert!(t.accepts(1e-12, 5e-9));
        assert!(t.accepts(1.0, 1.0 + 5e-7));
        assert!(!t.accepts(1.0, 1.0 + 5e-6));
    }

    #[test]
    fn pinn_chain_matches_finite_differences() {
        let cfg = LabConfig::default();
        for saturated in [false, true] {
            let mut case = PinnCase::fixed(&cfg, 7, saturated).unwrap();
            let u = case.tuner.law.unsaturated(
                case.tuner.pinn_forward(case.ctx.e, case.ctx.y, case.ctx.t_gt).unwrap(),
                case.ctx.controller_error,
                case.ctx.integral,
                case.ctx.t_gt,
            );
            assert_eq!(case.tuner.law.is_saturated(u), saturated);
            let g = case.analytic().unwrap();
            assert!(g.iter().any(|v| v.abs() > 1e-6));
            let r = case.check("pinn", &g, Tolerance::default());
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        let mut case = LstmCase::fixed(&LabConfig::default(), 7, 2);
        let g = case.analytic().unwrap();
        let r = case.check("lstm", &g, Tolerance::default());
        assert!(r.passed(), "{r}");
        assert_eq!(r.blocks.len(), 6);
    }

    #[test]
    fn corrupted_backward_names_the_layer() {
        let mut case = LstmCase::fixed(&LabConfig::default(), 7, 2);
        let mut g = case.analytic().unwrap();
        let blk = case.net.params.blocks[case.net.layers[1].w].clone();
        for v in &mut g[blk.range()] {
            *v *= 1.01;
        }
        let r = case.check("lstm", &g, Tolerance::default());
        assert_eq!(r.failing_blocks(), vec!["lstm1.w"]);
    }
}
