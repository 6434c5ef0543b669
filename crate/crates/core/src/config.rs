//! Declarative lab configuration.
//!
//! One TOML file with a section per subsystem. Every key has a default, so an
//! empty file (or no file) yields the reference profile. Units are SI unless
//! the key name says otherwise (temperatures in °C, flows in kg/s, times in s).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{GainBox, GainVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    /// Root seed; every stochastic component derives its own stream from it.
    pub seed: u64,
    pub plant: PlantConfig,
    pub control: ControlConfig,
    pub lstm: LstmConfig,
    pub pinn: PinnConfig,
    pub scenario: ScenarioConfig,
    pub metrics: MetricsConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_515,
            plant: PlantConfig::default(),
            control: ControlConfig::default(),
            lstm: LstmConfig::default(),
            pinn: PinnConfig::default(),
            scenario: ScenarioConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl LabConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        let c = &self.control;
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(p.tau_dsh > 0.0 && p.tau_sh > 0.0, "plant time constants must be positive")?;
        check(p.steam_flow > 0.0, "plant.steam_flow must be positive")?;
        check(p.max_substep > 0.0, "plant.max_substep must be positive")?;
        check(p.temp_min < p.temp_max, "plant.temp_min must be below plant.temp_max")?;
        check(c.u_min < c.u_max, "control.u_min must be below control.u_max")?;
        check(c.integral_clamp > 0.0, "control.integral_clamp must be positive")?;
        check(c.integral_time_base > 0.0, "control.integral_time_base must be positive")?;
        check(c.error_sign == 1.0 || c.error_sign == -1.0, "control.error_sign must be +1 or -1")?;
        check(c.feedback_scale > 0.0, "control.feedback_scale must be positive")?;
        for (lo, hi, name) in [
            (c.kp_range[0], c.kp_range[1], "kp_range"),
            (c.ki_range[0], c.ki_range[1], "ki_range"),
            (c.kff_range[0], c.kff_range[1], "kff_range"),
        ] {
            check(lo <= hi, &format!("control.{name} must be ordered"))?;
        }
        check(self.lstm.window >= 1, "lstm.window must be at least 1")?;
        check(self.lstm.hidden.len() == 2, "lstm.hidden must list two layer sizes")?;
        check(
            (0.0..1.0).contains(&self.lstm.dropout),
            "lstm.dropout must lie in [0, 1)",
        )?;
        let split_sum: f64 = self.lstm.split.iter().sum();
        check((split_sum - 1.0).abs() < 1e-9, "lstm.split must sum to 1")?;
        check(self.lstm.segment_len >= self.lstm.window as f64, "lstm.segment_len shorter than window")?;
        check(self.lstm.batch_size >= 1, "lstm.batch_size must be at least 1")?;
        check(self.lstm.window_stride >= 1, "lstm.window_stride must be at least 1")?;
        check(self.lstm.base_run_len >= self.lstm.segment_len, "lstm.base_run_len shorter than a segment")?;
        check(self.lstm.setpoint_span >= 0.0, "lstm.setpoint_span must be non-negative")?;
        check(
            self.lstm.spray_margin > 0.0 && self.lstm.spray_margin <= 1.0,
            "lstm.spray_margin must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.lstm.explore_fraction),
            "lstm.explore_fraction must lie in [0, 1]",
        )?;
        check(!self.pinn.hidden.is_empty(), "pinn.hidden must not be empty")?;
        check(self.pinn.mu >= 0.0, "pinn.mu must be non-negative")?;
        check(self.pinn.rate_scale > 0.0, "pinn.rate_scale must be positive")?;
        let s = &self.scenario;
        check(s.dt > 0.0 && s.duration > 0.0, "scenario duration and dt must be positive")?;
        check(
            (0.0..=s.leak_max).contains(&s.leak_flow),
            "scenario.leak_flow must lie in [0, leak_max]",
        )?;
        check(s.noise_sigma >= 0.0, "scenario.noise_sigma must be non-negative")?;
        check(self.metrics.band > 0.0, "metrics.band must be positive")?;
        Ok(())
    }

    pub fn gain_box(&self) -> GainBox {
        GainBox {
            kp: self.control.kp_range,
            ki: self.control.ki_range,
            kff: self.control.kff_range,
        }
    }

    pub fn baseline_gains(&self) -> GainVector {
        let [kp, ki, kff] = self.control.baseline;
        GainVector { kp, ki, kff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub profile: String,
    /// Desuperheater settling time constant used to derive K3.
    pub tau_dsh: f64,
    /// Superheater settling time constant used to derive K2.
    pub tau_sh: f64,
    /// Nominal steam mass flow d2.
    pub steam_flow: f64,
    /// Spray water temperature d5.
    pub spray_temp: f64,
    /// Nominal fuel flow d1. K1 is calibrated against it.
    pub fuel_flow: f64,
    /// Ambient-temperature rate d3.
    pub ambient_rate: f64,
    /// Exhaust temperature at which `dsh_inlet_offset` applies.
    pub t_gt_nominal: f64,
    /// d4 = (t_gt_nominal - offset) + slope * (T_gt - t_gt_nominal).
    pub dsh_inlet_offset: f64,
    pub dsh_inlet_slope: f64,
    /// Calibration target: outlet temperature at `target_spray`.
    pub target_outlet: f64,
    pub target_spray: f64,
    /// Calibrated constants. When absent they are derived from the targets.
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub max_substep: f64,
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            profile: "hrsg-sh-dsh-v1".into(),
            tau_dsh: 30.0,
            tau_sh: 100.0,
            steam_flow: 65.0,
            spray_temp: 150.0,
            fuel_flow: 1.0,
            ambient_rate: 0.0,
            t_gt_nominal: 530.0,
            dsh_inlet_offset: 10.0,
            dsh_inlet_slope: 0.2,
            target_outlet: 515.0,
            target_spray: 0.8,
            k1: None,
            k2: None,
            k3: None,
            max_substep: 0.25,
            temp_min: 0.0,
            temp_max: 700.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub profile: String,
    pub u_min: f64,
    pub u_max: f64,
    /// Reference exhaust temperature for the feedforward deviation regressor.
    pub ff_reference: f64,
    /// Bound on |integral| in controller error-seconds.
    pub integral_clamp: f64,
    /// The integral term is ki * integral / integral_time_base.
    pub integral_time_base: f64,
    /// Sign applied to e = r - y before it reaches the feedback terms.
    pub error_sign: f64,
    /// kg/s of spray per unit of controller error per °C of tracking error.
    pub feedback_scale: f64,
    /// Fixed-gain baseline [kp, ki, kff].
    pub baseline: [f64; 3],
    pub kp_range: [f64; 2],
    pub ki_range: [f64; 2],
    pub kff_range: [f64; 2],
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            profile: "pi-ff-v1".into(),
            u_min: 0.0,
            u_max: 2.0,
            ff_reference: 530.0,
            integral_clamp: 5000.0,
            integral_time_base: 2400.0,
            error_sign: -1.0,
            feedback_scale: 0.07,
            baseline: [1.2, 105.0, 0.0],
            kp_range: [0.0, 5.0],
            ki_range: [0.0, 300.0],
            kff_range: [-0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub profile: String,
    /// Samples per input window (N).
    pub window: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Length of a dataset segment in seconds.
    pub segment_len: f64,
    /// Step between consecutive windows taken from one segment.
    pub window_stride: usize,
    pub nm_max_iter: usize,
    /// Total simulated operating time for the pretraining dataset.
    pub dataset_hours: f64,
    /// Length of one generated fault-free base run.
    pub base_run_len: f64,
    pub split: [f64; 3],
    /// Measurement noise (°C) for the fine-tuning dataset.
    pub finetune_noise: f64,
    pub finetune_hours: f64,
    pub finetune_epochs: usize,
    /// Generated setpoints lie in [target_outlet, target_outlet + span].
    pub setpoint_span: f64,
    /// Generated exhaust temperatures stay where holding the lowest
    /// setpoint needs at most this fraction of the spray limit.
    pub spray_margin: f64,
    /// Fraction of base runs driven by a random fixed triple from the gain
    /// box instead of the baseline, to cover off-setpoint states.
    pub explore_fraction: f64,
    pub scaling: InputScalingConfig,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            profile: "lstm-50-25-v1".into(),
            window: 30,
            hidden: vec![50, 25],
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            segment_len: 300.0,
            window_stride: 10,
            nm_max_iter: 200,
            dataset_hours: 10.0,
            base_run_len: 3600.0,
            split: [0.70, 0.15, 0.15],
            finetune_noise: 0.1,
            finetune_hours: 2.0,
            finetune_epochs: 3,
            setpoint_span: 4.0,
            spray_margin: 0.95,
            explore_fraction: 0.5,
            scaling: InputScalingConfig::default(),
        }
    }
}

/// Nominal ranges mapped affinely onto [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputScalingConfig {
    pub error_span: f64,
    pub outlet_range: [f64; 2],
    pub t_gt_range: [f64; 2],
    pub spray_range: [f64; 2],
}

impl Default for InputScalingConfig {
    fn default() -> Self {
        Self {
            error_span: 15.0,
            outlet_range: [480.0, 560.0],
            t_gt_range: [530.0, 580.0],
            spray_range: [0.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnConfig {
    pub profile: String,
    pub hidden: Vec<usize>,
    /// Physics-loss weight.
    pub mu: f64,
    pub learning_rate: f64,
    /// Rate residuals are divided by this before squaring (°C/s).
    pub rate_scale: f64,
    /// Smooth measured rates with a 3-sample moving average.
    pub smooth_rates: bool,
    /// Network outputs are multiplied by these to give [kp, ki, kff].
    pub output_scale: [f64; 3],
    /// Scale of the final-layer weights at warm start.
    pub head_init_scale: f64,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            profile: "pinn-256-128-64-32-v1".into(),
            hidden: vec![256, 128, 64, 32],
            mu: 0.1,
            learning_rate: 1.3e-3,
            rate_scale: 1.0,
            smooth_rates: false,
            output_scale: [10.0, 30.0, 0.0025],
            head_init_scale: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub profile: String,
    pub duration: f64,
    pub dt: f64,
    pub setpoint: f64,
    pub t_gt_start: f64,
    pub t_gt_end: f64,
    pub ramp_start: f64,
    /// Load ramp rate in MW/min.
    pub load_ramp_rate: f64,
    /// °C of exhaust temperature per MW of load.
    pub degc_per_mw: f64,
    /// Load at the start of the scenario (informational).
    pub initial_load: f64,
    pub leak_flow: f64,
    pub leak_onset: f64,
    pub leak_max: f64,
    pub noise_sigma: f64,
    /// Sensor noise used by the robustness profile.
    pub robustness_noise_sigma: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            profile: "load-ramp-leak-v1".into(),
            duration: 3600.0,
            dt: 1.0,
            setpoint: 515.0,
            t_gt_start: 530.0,
            t_gt_end: 560.0,
            ramp_start: 600.0,
            load_ramp_rate: 6.0,
            degc_per_mw: 1.0,
            initial_load: 120.0,
            leak_flow: 0.5,
            leak_onset: 1000.0,
            leak_max: 1.0,
            noise_sigma: 0.0,
            robustness_noise_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub profile: String,
    /// Settling band half-width (°C).
    pub band: f64,
    /// Optional evaluation window [start, end) in seconds; full trace when absent.
    pub window_start: Option<f64>,
    pub window_end: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            profile: "kpi-v1".into(),
            band: 1.0,
            window_start: None,
            window_end: None,
        }
    }
}
