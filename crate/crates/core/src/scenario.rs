//! Closed-loop experiments.
//!
//! A [`ScenarioSpec`] fixes the exogenous story (setpoint, exhaust
//! temperature, leak, sensor noise). A [`GainPolicy`] supplies gains each
//! interval; the shared spray law, plant and logging are identical for every
//! policy so that runs are comparable.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::config::{LabConfig, ScenarioConfig};
use crate::control::{ControlLaw, ControllerState, GainBox, GainVector};
use crate::error::{Error, Result};
use crate::metrics::{kpi_row, KpiRow};
use crate::config::MetricsConfig;
use crate::plant::{calibrate, equilibrium_spray, steady_state, Calibration, DisturbanceModel, FaultSpec, Plant, PlantState};
use crate::seed::component_rng;

/// Piecewise-linear schedule through (t, value) knots, held flat outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    knots: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Self { knots: vec![(0.0, v)] }
    }

    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidInput("schedule needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::InvalidInput("schedule knots must be time-ordered".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidInput("schedule knots must be finite".into()));
        }
        Ok(Self { knots })
    }

    /// Flat at `a` until `start`, linear to `b` over `len` seconds, then flat.
    pub fn ramp(a: f64, b: f64, start: f64, len: f64) -> Self {
        if len <= 0.0 {
            return Self {
                knots: vec![(0.0, a), (start, a), (start, b)],
            };
        }
        Self {
            knots: vec![(0.0, a), (start, a), (start + len, b)],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let i = k.partition_point(|(tk, _)| *tk <= t);
        if i >= k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        if t1 == t0 {
            return v1;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn is_constant(&self) -> bool {
        self.knots.iter().all(|(_, v)| *v == self.knots[0].1)
    }

    /// First knot time at which the value starts to move, if any.
    pub fn first_change(&self) -> Option<f64> {
        self.knots
            .windows(2)
            .find(|w| w[1].1 != w[0].1)
            .map(|w| w[0].0)
    }

    /// The same schedule seen from `t0`: `shifted(t0).value_at(t) == value_at(t0 + t)`.
    pub fn shifted(&self, t0: f64) -> Self {
        let mut knots = vec![(0.0, self.value_at(t0))];
        knots.extend(self.knots.iter().filter(|(t, _)| *t > t0).map(|(t, v)| (t - t0, *v)));
        Self { knots }
    }

    pub fn range(&self) -> (f64, f64) {
        self.knots
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub setpoint: Schedule,
    pub t_gt: Schedule,
    /// Gas-turbine load in MW, informational.
    pub load: Schedule,
    pub fault: FaultSpec,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub const T_GT_RANGE: (f64, f64) = (530.0, 580.0);

impl ScenarioSpec {
    /// Load ramp followed by an unmeasured spray-valve leak.
    pub fn load_ramp_with_leak(c: &ScenarioConfig, seed: u64) -> Result<Self> {
        let span = c.t_gt_end - c.t_gt_start;
        let mw = span / c.degc_per_mw;
        let ramp_len = mw.abs() / c.load_ramp_rate * 60.0;
        let spec = Self {
            name: "paper".into(),
            duration: c.duration,
            dt: c.dt,
            setpoint: Schedule::constant(c.setpoint),
            t_gt: Schedule::ramp(c.t_gt_start, c.t_gt_end, c.ramp_start, ramp_len),
            load: Schedule::ramp(c.initial_load, c.initial_load + mw, c.ramp_start, ramp_len),
            fault: FaultSpec::new(c.leak_flow, c.leak_onset, c.leak_max)?,
            noise_sigma: c.noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// No ramp, no leak: pure regulation.
    pub fn null(c: &ScenarioConfig, seed: u64) -> Result<Self> {
        let spec = Self {
            name: "null".into(),
            duration: c.duration,
            dt: c.dt,
            setpoint: Schedule::constant(c.setpoint),
            t_gt: Schedule::constant(c.t_gt_start),
            load: Schedule::constant(c.initial_load),
            fault: FaultSpec::none(),
            noise_sigma: c.noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.dt > 0.0 && self.dt <= self.duration) {
            return Err(Error::InvalidInput(format!(
                "scenario {}: need 0 < dt <= duration",
                self.name
            )));
        }
        let (lo, hi) = self.t_gt.range();
        if lo < T_GT_RANGE.0 || hi > T_GT_RANGE.1 {
            return Err(Error::OutOfRange {
                name: "t_gt",
                value: if lo < T_GT_RANGE.0 { lo } else { hi },
                lo: T_GT_RANGE.0,
                hi: T_GT_RANGE.1,
            });
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidInput("noise sigma must be non-negative".into()));
        }
        FaultSpec::new(self.fault.leak_flow, self.fault.onset_time, self.fault.max_leak)?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Reference time for settling: the earliest of the first exhaust or
    /// setpoint movement and the leak onset, else the start.
    pub fn disturbance_time(&self) -> f64 {
        let onset = (self.fault.is_active() && self.fault.onset_time < self.duration).then_some(self.fault.onset_time);
        [self.t_gt.first_change(), self.setpoint.first_change(), onset]
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
            .unwrap_or(0.0)
            .min(self.duration - self.dt)
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_active() && self.fault.onset_time < self.duration
    }

    pub fn from_file(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, seed)
    }

    pub fn from_toml_str(text: &str, seed: u64) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sched = |k: Vec<[f64; 2]>| Schedule::new(k.into_iter().map(|[t, v]| (t, v)).collect());
        let spec = Self {
            name: f.name,
            duration: f.duration,
            dt: f.dt,
            setpoint: sched(f.setpoint)?,
            t_gt: sched(f.t_gt)?,
            load: match f.load {
                Some(k) => sched(k)?,
                None => Schedule::constant(0.0),
            },
            fault: FaultSpec::new(f.leak_flow, f.leak_onset, f.leak_max)?,
            noise_sigma: f.noise_sigma,
            seed: f.seed.unwrap_or(seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// On-disk form of a custom scenario.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    duration: f64,
    #[serde(default = "one")]
    dt: f64,
    setpoint: Vec<[f64; 2]>,
    t_gt: Vec<[f64; 2]>,
    #[serde(default)]
    load: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    leak_flow: f64,
    #[serde(default)]
    leak_onset: f64,
    #[serde(default = "one")]
    leak_max: f64,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default)]
    seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

/// One control interval of a run. `y`, `x1`, `x2` are true plant values at
/// the start of the interval; `e = r - y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub e: f64,
    pub u: f64,
    pub gains: GainVector,
    pub f: f64,
    pub t_gt: f64,
    pub x1: f64,
    pub x2: f64,
    /// controller integral that entered this interval's output
    pub integral: f64,
    pub l_data: Option<f64>,
    pub l_phys: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub controller: String,
    pub scenario: String,
    pub dt: f64,
    pub disturbance_time: f64,
    pub fault_onset: Option<f64>,
    pub records: Vec<TraceRecord>,
    /// Per-interval auxiliary series (for example a parameter norm).
    pub diagnostics: Vec<f64>,
}

impl Trace {
    pub fn column(&self, f: impl Fn(&TraceRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }
}

/// What a policy sees before choosing gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub r: f64,
    /// measured outlet temperature
    pub y: f64,
    /// r - y on the measured value
    pub e: f64,
    pub t_gt: f64,
    pub u_prev: f64,
}

/// Everything about a completed interval that an online learner may use.
/// The leak is deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub dt: f64,
    pub gains: GainVector,
    pub controller_error: f64,
    /// integral that entered this interval's control output
    pub integral: f64,
    pub u: f64,
    pub u_unsat: f64,
    /// measured states at the start and end of the interval
    pub before: PlantState,
    pub after: PlantState,
    pub d4: f64,
    pub d6: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub l_data: f64,
    pub l_phys: f64,
    pub param_norm: f64,
}

pub trait GainPolicy {
    fn name(&self) -> &str;

    /// Called once before the first interval.
    fn reset(&mut self) {}

    fn gains(&mut self, obs: &Observation) -> Result<GainVector>;

    /// Called after the plant advanced. Learners update here.
    fn after_step(&mut self, _outcome: &StepOutcome) -> Result<Option<StepLosses>> {
        Ok(None)
    }
}

/// Fixed-gain policy.
#[derive(Debug, Clone)]
pub struct FixedGains {
    pub label: String,
    pub gains: GainVector,
}

impl FixedGains {
    pub fn new(label: impl Into<String>, gains: GainVector) -> Self {
        Self {
            label: label.into(),
            gains,
        }
    }
}

impl GainPolicy for FixedGains {
    fn name(&self) -> &str {
        &self.label
    }

    fn gains(&mut self, _obs: &Observation) -> Result<GainVector> {
        Ok(self.gains)
    }
}

/// Calibrated plant plus the shared control law: the parts every run uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub plant: Plant,
    pub dm: DisturbanceModel,
    pub law: ControlLaw,
    pub gain_box: GainBox,
    pub baseline: GainVector,
    pub calibration: Calibration,
}

impl Rig {
    pub fn from_config(cfg: &LabConfig) -> Result<Self> {
        cfg.validate()?;
        let law = ControlLaw::from_config(&cfg.control);
        let calibration = calibrate(&cfg.plant, (law.u_min, law.u_max))?;
        let plant = Plant {
            constants: calibration.constants,
            max_substep: cfg.plant.max_substep,
            temp_min: cfg.plant.temp_min,
            temp_max: cfg.plant.temp_max,
        };
        Ok(Self {
            plant,
            dm: DisturbanceModel::from_config(&cfg.plant),
            law,
            gain_box: cfg.gain_box(),
            baseline: cfg.baseline_gains(),
            calibration,
        })
    }

    pub fn u_limits(&self) -> (f64, f64) {
        (self.law.u_min, self.law.u_max)
    }

    /// Equilibrium spray and state for holding `r` at the given exhaust
    /// temperature and leak.
    pub fn equilibrium(&self, r: f64, t_gt: f64, f: f64) -> Result<(f64, PlantState)> {
        let u = equilibrium_spray(r, &self.dm, &self.plant.constants, t_gt, f, self.u_limits())?;
        let frame = self.dm.frame(t_gt, None, u, f);
        Ok((u, steady_state(u, &frame, &self.plant.constants, f)?))
    }
}

/// Initial conditions for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub state: PlantState,
    pub u0: f64,
    /// `None` means bumpless with the first gains.
    pub integral: Option<f64>,
}

/// A run that stopped early: the records up to the failure plus the cause.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Trace,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} on {} failed after {} intervals: {}",
            self.partial.controller,
            self.partial.scenario,
            self.partial.records.len(),
            self.error
        )
    }
}

/// Sensor noise for every interval including the final measurement.
fn noise_series(spec: &ScenarioSpec) -> Vec<f64> {
    let n = spec.steps() + 1;
    if spec.noise_sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = component_rng(spec.seed, "scenario.noise");
    let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

pub fn run_scenario(spec: &ScenarioSpec, rig: &Rig, policy: &mut dyn GainPolicy) -> std::result::Result<Trace, Box<RunFailure>> {
    let init = match initial_equilibrium(spec, rig) {
        Ok(i) => i,
        Err(error) => {
            return Err(Box::new(RunFailure {
                partial: empty_trace(spec, policy.name()),
                error,
            }))
        }
    };
    run_from(spec, rig, policy, init)
}

pub fn initial_equilibrium(spec: &ScenarioSpec, rig: &Rig) -> Result<InitialCondition> {
    let r0 = spec.setpoint.value_at(0.0);
    let t_gt0 = spec.t_gt.value_at(0.0);
    let (u0, state) = rig.equilibrium(r0, t_gt0, spec.fault.flow_at(0.0))?;
    Ok(InitialCondition {
        state,
        u0,
        integral: None,
    })
}

fn empty_trace(spec: &ScenarioSpec, name: &str) -> Trace {
    Trace {
        controller: name.to_string(),
        scenario: spec.name.clone(),
        dt: spec.dt,
        disturbance_time: spec.disturbance_time(),
        fault_onset: spec.is_faulted().then_some(spec.fault.onset_time),
        records: Vec::with_capacity(spec.steps()),
        diagnostics: Vec::new(),
    }
}

/// The 1 s loop: sample disturbances, ask for gains, apply the law, advance
/// the plant, let the policy learn, log.
pub fn run_from(
    spec: &ScenarioSpec,
    rig: &Rig,
    policy: &mut dyn GainPolicy,
    init: InitialCondition,
) -> std::result::Result<Trace, Box<RunFailure>> {
    let mut trace = empty_trace(spec, policy.name());
    let noise = noise_series(spec);
    let dt = spec.dt;
    let mut x = init.state;
    let mut cs = ControllerState::default();
    let mut u_prev = init.u0;
    let mut d4_prev: Option<f64> = None;
    policy.reset();
    let fail = |trace: Trace, error: Error| Err(Box::new(RunFailure { partial: trace, error }));
    for k in 0..spec.steps() {
        let t = k as f64 * dt;
        let r = spec.setpoint.value_at(t);
        let t_gt = spec.t_gt.value_at(t);
        let y_meas = x.x1 + noise[k];
        let obs = Observation {
            t,
            r,
            y: y_meas,
            e: r - y_meas,
            t_gt,
            u_prev,
        };
        let gains = match policy.gains(&obs) {
            Ok(g) => g,
            Err(e) => return fail(trace, e),
        };
        let eps = rig.law.controller_error(r, y_meas);
        if k == 0 {
            cs = rig.law.initial_state(gains, init.u0, eps, t_gt);
            if let Some(i) = init.integral {
                cs.integral = i;
            }
        }
        let integral = cs.integral;
        let (u, next_cs) = rig.law.compute_control(gains, eps, cs, t_gt, dt);
        let f = spec.fault.flow_at(t);
        let d4 = rig.dm.d4(t_gt);
        let frame = rig.dm.frame(t_gt, d4_prev, u, f);
        let frame = crate::plant::DisturbanceFrame {
            d6: frame.d6 / dt,
            ..frame
        };
        let x_next = match rig.plant.step(x, u, &frame, f, dt) {
            Ok(s) => s,
            Err(e) => return fail(trace, e),
        };
        let outcome = StepOutcome {
            obs,
            dt,
            gains,
            controller_error: eps,
            integral,
            u,
            u_unsat: next_cs.last_u_unsat,
            before: PlantState::new(y_meas, x.x2),
            after: PlantState::new(x_next.x1 + noise[k + 1], x_next.x2),
            d4,
            d6: frame.d6,
        };
        let losses = match policy.after_step(&outcome) {
            Ok(l) => l,
            Err(e) => return fail(trace, e),
        };
        trace.records.push(TraceRecord {
            t,
            r,
            y: x.x1,
            e: r - x.x1,
            u,
            gains,
            f,
            t_gt,
            x1: x.x1,
            x2: x.x2,
            integral,
            l_data: losses.map(|l| l.l_data),
            l_phys: losses.map(|l| l.l_phys),
        });
        if let Some(l) = losses {
            trace.diagnostics.push(l.param_norm);
        }
        x = x_next;
        cs = next_cs;
        u_prev = u;
        d4_prev = Some(d4);
    }
    Ok(trace)
}

/// Traces and KPI rows for a set of policies on one scenario. A failing
/// policy contributes its partial trace and an error entry; the others still
/// run.
#[derive(Debug)]
pub struct Comparison {
    pub traces: Vec<Trace>,
    pub kpis: Vec<KpiRow>,
    pub failures: Vec<(String, Error)>,
}

pub fn run_comparison(
    spec: &ScenarioSpec,
    rig: &Rig,
    policies: &mut [Box<dyn GainPolicy>],
    metrics: &MetricsConfig,
) -> Comparison {
    let mut out = Comparison {
        traces: Vec::new(),
        kpis: Vec::new(),
        failures: Vec::new(),
    };
    for p in policies.iter_mut() {
        match run_scenario(spec, rig, p.as_mut()) {
            Ok(trace) => {
                match kpi_row(&trace, metrics) {
                    Ok(row) => out.kpis.push(row),
                    Err(e) => out.failures.push((trace.controller.clone(), e)),
                }
                out.traces.push(trace);
            }
            Err(f) => {
                log::warn!("{f}");
                let f = *f;
                out.failures.push((f.partial.controller.clone(), f.error));
                out.traces.push(f.partial);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_schedule_shape() {
        let s = Schedule::ramp(530.0, 560.0, 600.0, 300.0);
        assert_eq!(s.value_at(0.0), 530.0);
        assert_eq!(s.value_at(600.0), 530.0);
        assert_eq!(s.value_at(750.0), 545.0);
        assert_eq!(s.value_at(900.0), 560.0);
        assert_eq!(s.value_at(3000.0), 560.0);
        assert_eq!(s.first_change(), Some(600.0));
        let w = s.shifted(700.0);
        for t in [0.0, 50.0, 100.0, 150.0, 200.0, 1000.0] {
            assert_eq!(w.value_at(t), s.value_at(700.0 + t));
        }
    }

    #[test]
    fn shifted_keeps_steps() {
        let s = Schedule::new(vec![(0.0, 515.0), (100.0, 515.0), (100.0, 520.0)]).unwrap();
        let w = s.shifted(50.0);
        assert_eq!(w.value_at(49.0), 515.0);
        assert_eq!(w.value_at(50.0), 520.0);
    }

    #[test]
    fn paper_profile_matches_its_description() {
        let c = ScenarioConfig::default();
        let s = ScenarioSpec::load_ramp_with_leak(&c, 1).unwrap();
        assert_eq!(s.duration, 3600.0);
        assert_eq!(s.t_gt.value_at(0.0), 530.0);
        assert_eq!(s.t_gt.value_at(900.0), 560.0);
        assert_eq!(s.t_gt.value_at(2000.0), 560.0);
        assert_eq!(s.load.value_at(900.0) - s.load.value_at(0.0), 30.0);
        assert_eq!(s.fault.flow_at(999.0), 0.0);
        assert_eq!(s.fault.flow_at(1000.0), 0.5);
        for t in [0.0, 1234.0, 3599.0] {
            assert_eq!(s.setpoint.value_at(t), 515.0);
        }
        assert_eq!(s.disturbance_time(), 600.0);
    }

    #[test]
    fn null_profile_is_quiet() {
        let s = ScenarioSpec::null(&ScenarioConfig::default(), 1).unwrap();
        assert!(s.t_gt.is_constant() && s.setpoint.is_constant());
        assert!(!s.is_faulted());
    }

    #[test]
    fn exhaust_outside_envelope_is_rejected() {
        let c = ScenarioConfig {
            t_gt_end: 600.0,
            ..ScenarioConfig::default()
        };
        assert!(ScenarioSpec::load_ramp_with_leak(&c, 1).is_err());
    }

    #[test]
    fn custom_file_parses() {
        let text = r#"
name = "step"
duration = 100
setpoint = [[0, 515], [50, 517]]
t_gt = [[0, 540]]
leak_flow = 0.2
leak_onset = 60
"#;
        let s = ScenarioSpec::from_toml_str(text, 3).unwrap();
        assert_eq!(s.setpoint.value_at(75.0), 517.0);
        assert_eq!(s.fault.flow_at(70.0), 0.2);
        assert_eq!(s.seed, 3);
    }
}
