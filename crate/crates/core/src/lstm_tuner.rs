//! Offline LSTM gain scheduler.
//!
//! Dataset: fault-free base runs, under the fixed PI or a random fixed
//! triple, are cut into segments.
//! For each segment a Nelder-Mead search over the gain box finds the triple
//! with the smallest ISE when the segment is re-simulated from its recorded
//! start state. Windows of the re-simulated observations are paired with that
//! triple. The network maps a window to the triple in unit-cube coordinates
//! of the gain box, so all-zero parameters land on the box's lower corner.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LabConfig, LstmConfig};
use crate::control::{GainBox, GainVector};
use crate::error::{Error, Result};
use crate::metrics::ise;
use crate::nelder_mead::{minimize_unit_cube, NmOptions};
use crate::neural::{snapshot, Adam, LstmNet, ParamSet};
use crate::pinn::InputScaling;
use crate::plant::{FaultSpec, PlantState};
use crate::scenario::{
    initial_equilibrium, run_from, FixedGains, GainPolicy, InitialCondition, Observation, Rig, Schedule,
    ScenarioSpec, T_GT_RANGE,
};
use crate::seed::{component_rng, component_seed};

pub const CHANNELS: usize = 4;
pub const OUTPUTS: usize = 3;

/// One raw input sample s(t) = [e, y, T_gt, u_prev].
pub type StateSample = [f64; CHANNELS];

pub fn observation_sample(o: &Observation) -> StateSample {
    [o.e, o.y, o.t_gt, o.u_prev]
}

pub fn encode(s: &StateSample, sc: &InputScaling) -> Vec<f64> {
    vec![sc.error(s[0]), sc.outlet(s[1]), sc.exhaust(s[2]), sc.spray(s[3])]
}

/// Ring buffer of the most recent samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    cap: usize,
    buf: VecDeque<StateSample>,
}

impl StateWindow {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            buf: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, s: StateSample) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.cap
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// Oldest first.
    pub fn samples(&self) -> impl Iterator<Item = &StateSample> {
        self.buf.iter()
    }

    pub fn encoded(&self, sc: &InputScaling) -> Vec<Vec<f64>> {
        self.buf.iter().map(|s| encode(s, sc)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Network input and target, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// window x channel, scaled
    pub input: Vec<Vec<f64>>,
    /// target gains in unit-cube coordinates of the gain box
    pub target: [f64; OUTPUTS],
    pub segment: usize,
    pub faulted: bool,
}

/// One optimised segment: the observations of the re-simulation under the
/// ISE-optimal gains, plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub scenario: String,
    pub faulted: bool,
    pub split: Split,
    pub obs: Vec<StateSample>,
    pub target: GainVector,
    pub ise: f64,
    pub baseline_ise: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    /// segments dropped because no candidate produced a finite ISE
    pub skipped: usize,
}

impl Dataset {
    pub fn count(&self, split: Split) -> usize {
        self.segments.iter().filter(|s| s.split == split).count()
    }

    /// Windows ending at `window - 1 + m * stride` inside each segment.
    pub fn samples(
        &self,
        split: Split,
        window: usize,
        stride: usize,
        sc: &InputScaling,
        gain_box: &GainBox,
    ) -> Vec<TrainingSample> {
        let mut out = Vec::new();
        for seg in self.segments.iter().filter(|s| s.split == split) {
            let target = gain_box.to_unit(seg.target);
            let mut end = window;
            while end <= seg.obs.len() {
                out.push(TrainingSample {
                    input: seg.obs[end - window..end].iter().map(|s| encode(s, sc)).collect(),
                    target,
                    segment: seg.id,
                    faulted: seg.faulted,
                });
                end += stride;
            }
        }
        out
    }

    /// One row per segment step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for seg in &self.segments {
            for (k, s) in seg.obs.iter().enumerate() {
                w.serialize(SegmentRow {
                    segment: seg.id,
                    scenario: seg.scenario.clone(),
                    faulted: seg.faulted,
                    split: seg.split,
                    k,
                    e: s[0],
                    y: s[1],
                    t_gt: s[2],
                    u_prev: s[3],
                    kp: seg.target.kp,
                    ki: seg.target.ki,
                    kff: seg.target.kff,
                    ise: seg.ise,
                    baseline_ise: seg.baseline_ise,
                })
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut segments: Vec<Segment> = Vec::new();
        for row in r.deserialize() {
            let row: SegmentRow = row.map_err(|e| Error::csv(path, e))?;
            let sample = [row.e, row.y, row.t_gt, row.u_prev];
            match segments.last_mut() {
                Some(seg) if seg.id == row.segment => {
                    if row.k != seg.obs.len() {
                        return Err(Error::Parse {
                            context: path.display().to_string(),
                            message: format!("segment {} row {} out of order", row.segment, row.k),
                        });
                    }
                    seg.obs.push(sample);
                }
                _ => {
                    if row.k != 0 {
                        return Err(Error::Parse {
                            context: path.display().to_string(),
                            message: format!("segment {} does not start at k = 0", row.segment),
                        });
                    }
                    segments.push(Segment {
                        id: row.segment,
                        scenario: row.scenario,
                        faulted: row.faulted,
                        split: row.split,
                        obs: vec![sample],
                        target: GainVector::new(row.kp, row.ki, row.kff),
                        ise: row.ise,
                        baseline_ise: row.baseline_ise,
                    })
                }
            }
        }
        Ok(Self { segments, skipped: 0 })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    segment: usize,
    scenario: String,
    faulted: bool,
    split: Split,
    k: usize,
    e: f64,
    y: f64,
    t_gt: f64,
    u_prev: f64,
    kp: f64,
    ki: f64,
    kff: f64,
    ise: f64,
    baseline_ise: f64,
}

/// Fixed gains that also keep what they were shown.
struct Recorder {
    inner: FixedGains,
    seen: Vec<StateSample>,
}

impl GainPolicy for Recorder {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn gains(&mut self, obs: &Observation) -> Result<GainVector> {
        self.seen.push(observation_sample(obs));
        self.inner.gains(obs)
    }
}

/// Highest exhaust temperature at which holding `r` needs no more than
/// `margin * u_max` of spray.
pub fn feasible_t_gt_max(rig: &Rig, r: f64, margin: f64) -> Result<f64> {
    let limit = margin * rig.law.u_max;
    let ok = |t: f64| matches!(rig.equilibrium(r, t, 0.0), Ok((u, _)) if u <= limit);
    let (mut lo, mut hi) = T_GT_RANGE;
    if !ok(lo) {
        return Err(Error::Infeasible {
            reason: format!("setpoint {r} needs more than {limit} kg/s of spray even at the lowest exhaust temperature"),
            lo,
            hi,
        });
    }
    if ok(hi) {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Random fault-free operating stories: exhaust temperature holds and ramps,
/// setpoint steps. Ramp rates are 2 to 8 °C/min.
pub fn base_scenarios(cfg: &LabConfig, rig: &Rig, seed: u64, hours: f64, noise: f64, tag: &str) -> Result<Vec<ScenarioSpec>> {
    let l = &cfg.lstm;
    let r_lo = cfg.plant.target_outlet;
    let t_hi = feasible_t_gt_max(rig, r_lo, l.spray_margin)?;
    let t_lo = T_GT_RANGE.0;
    let n = ((hours * 3600.0) / l.base_run_len).ceil().max(1.0) as usize;
    let mut rng = component_rng(seed, &format!("lstm.dataset.{tag}"));
    let dur = l.base_run_len;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut tk = vec![(0.0, rng.random_range(t_lo..=t_hi))];
        let mut t = 0.0;
        while t < dur {
            let v = tk.last().unwrap().1;
            t += rng.random_range(100.0..500.0);
            tk.push((t, v));
            let target: f64 = rng.random_range(t_lo..=t_hi);
            let rate = rng.random_range(2.0..8.0) / 60.0;
            t += (target - v).abs() / rate;
            tk.push((t, target));
        }
        let mut rk = vec![(0.0, r_lo + rng.random_range(0.0..=l.setpoint_span))];
        let mut t = 0.0;
        loop {
            t += rng.random_range(300.0..900.0);
            if t >= dur {
                break;
            }
            let prev = rk.last().unwrap().1;
            rk.push((t, prev));
            rk.push((t, r_lo + rng.random_range(0.0..=l.setpoint_span)));
        }
        let spec = ScenarioSpec {
            name: format!("{tag}-{i:03}"),
            duration: dur,
            dt: cfg.scenario.dt,
            setpoint: Schedule::new(rk)?,
            t_gt: Schedule::new(tk)?,
            load: Schedule::constant(cfg.scenario.initial_load),
            fault: FaultSpec::none(),
            noise_sigma: noise,
            seed: component_seed(seed, &format!("lstm.noise.{tag}.{i}")),
        };
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

/// Result of the target-gain search on one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFit {
    pub gains: GainVector,
    pub ise: f64,
    pub baseline_ise: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Unit-cube starting points besides the baseline.
const EXTRA_STARTS: [[f64; 3]; 2] = [[0.1, 0.1, 0.5], [0.9, 0.9, 0.5]];

/// ISE of `spec` re-simulated from `init` under fixed `g`.
pub fn segment_ise(spec: &ScenarioSpec, rig: &Rig, init: InitialCondition, g: GainVector) -> f64 {
    let mut p = FixedGains::new("candidate", g);
    match run_from(spec, rig, &mut p, init) {
        Ok(tr) => ise(&tr.column(|r| r.e), tr.dt),
        Err(_) => f64::INFINITY,
    }
}

/// Searches the gain box for the ISE-optimal fixed triple on one segment.
/// Returns `None` when no candidate gives a finite ISE.
pub fn optimize_segment(
    spec: &ScenarioSpec,
    rig: &Rig,
    init: InitialCondition,
    max_iter: usize,
) -> Option<SegmentFit> {
    let gb = rig.gain_box;
    let baseline_ise = segment_ise(spec, rig, init, rig.baseline);
    let opts = NmOptions {
        max_iter,
        ..NmOptions::default()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut converged = false;
    let starts = std::iter::once(gb.to_unit(rig.baseline)).chain(EXTRA_STARTS);
    for x0 in starts {
        let r = minimize_unit_cube(
            |z| segment_ise(spec, rig, init, gb.from_unit([z[0], z[1], z[2]])),
            &x0,
            opts,
        );
        evaluations += r.evaluations;
        converged |= r.converged;
        if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
            best = Some((r.x, r.f));
        }
    }
    let (x, f) = best?;
    if !f.is_finite() {
        return None;
    }
    let mut gains = gb.from_unit([x[0], x[1], x[2]]);
    let mut ise = f;
    if baseline_ise <= ise {
        gains = rig.baseline;
        ise = baseline_ise;
    }
    // a flat objective says nothing about the gains
    if ise <= 1e-12 {
        gains = gb.center();
    }
    Some(SegmentFit {
        gains,
        ise,
        baseline_ise,
        evaluations,
        converged,
    })
}

/// Segment `j` of a finished base run as a stand-alone scenario plus the
/// recorded plant and controller state it starts from. Candidate gains
/// inherit the recorded integral, so a triple is judged together with the
/// output jump it causes when switched in mid-run.
fn segment_of(
    base: &ScenarioSpec,
    trace: &crate::scenario::Trace,
    u_init: f64,
    j: usize,
    seg_steps: usize,
) -> (ScenarioSpec, InitialCondition) {
    let k0 = j * seg_steps;
    let t0 = k0 as f64 * base.dt;
    let rec = &trace.records[k0];
    let spec = ScenarioSpec {
        name: format!("{}/{j}", base.name),
        duration: seg_steps as f64 * base.dt,
        dt: base.dt,
        setpoint: base.setpoint.shifted(t0),
        t_gt: base.t_gt.shifted(t0),
        load: base.load.shifted(t0),
        fault: FaultSpec::none(),
        noise_sigma: base.noise_sigma,
        seed: component_seed(base.seed, &format!("segment.{j}")),
    };
    let init = InitialCondition {
        state: PlantState::new(rec.x1, rec.x2),
        u0: if k0 == 0 { u_init } else { trace.records[k0 - 1].u },
        integral: Some(rec.integral),
    };
    (spec, init)
}

/// Split labels for `n` segments: shuffled, then 70/15/15 (configurable)
/// with rounding, the test split taking the remainder.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, "lstm.split"));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Cuts fault-free base runs into segments and labels each with its
/// ISE-optimal gains. Faulted scenarios are refused: training must never see
/// a leak.
pub fn generate_dataset(cfg: &LabConfig, rig: &Rig, scenarios: &[ScenarioSpec], seed: u64) -> Result<Dataset> {
    if let Some(s) = scenarios.iter().find(|s| s.is_faulted()) {
        return Err(Error::InvalidInput(format!(
            "dataset scenario {} contains a fault; only fault-free runs may be used",
            s.name
        )));
    }
    let l = &cfg.lstm;
    let mut segments = Vec::new();
    let mut skipped = 0;
    let mut explore = component_rng(seed, "lstm.explore");
    let n_explore = (l.explore_fraction * scenarios.len() as f64).round() as usize;
    for (i, base) in scenarios.iter().enumerate() {
        let seg_steps = (l.segment_len / base.dt).round() as usize;
        let init = initial_equilibrium(base, rig)?;
        // exploring runs are interleaved with baseline runs
        let explores = n_explore > 0 && (i * n_explore) / scenarios.len() != ((i + 1) * n_explore) / scenarios.len();
        let driver = if explores {
            let z: [f64; 3] = [explore.random(), explore.random(), explore.random()];
            rig.gain_box.from_unit(z)
        } else {
            rig.baseline
        };
        let mut base_policy = FixedGains::new("base", driver);
        let trace = run_from(base, rig, &mut base_policy, init).map_err(|f| f.error)?;
        let n_seg = trace.records.len() / seg_steps;
        for j in 0..n_seg {
            let (spec, init_j) = segment_of(base, &trace, init.u0, j, seg_steps);
            let Some(fit) = optimize_segment(&spec, rig, init_j, l.nm_max_iter) else {
                log::warn!("segment {} skipped: no finite ISE in the gain box", spec.name);
                skipped += 1;
                continue;
            };
            if !fit.converged {
                log::debug!("segment {}: search hit the iteration cap", spec.name);
            }
            let mut rec = Recorder {
                inner: FixedGains::new("target", fit.gains),
                seen: Vec::with_capacity(seg_steps),
            };
            run_from(&spec, rig, &mut rec, init_j).map_err(|f| f.error)?;
            segments.push(Segment {
                id: segments.len(),
                scenario: spec.name.clone(),
                faulted: spec.is_faulted(),
                split: Split::Train,
                obs: rec.seen,
                target: fit.gains,
                ise: fit.ise,
                baseline_ise: fit.baseline_ise,
            });
        }
    }
    let splits = assign_splits(segments.len(), l.split, seed);
    for (s, split) in segments.iter_mut().zip(splits) {
        s.split = split;
    }
    Ok(Dataset { segments, skipped })
}

/// Mean over samples of the squared gain error, summed over the three gains.
pub fn mse(net: &LstmNet, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for s in samples {
        let out = net.predict(&s.input)?;
        total += out.iter().zip(&s.target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(l: &LstmConfig, seed: u64) -> Self {
        Self {
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            max_epochs: l.max_epochs,
            patience: l.patience,
            seed,
        }
    }
}

/// Loss curves. `val_loss[0]` and `train_loss[0]` are measured before the
/// first update; the train curve after that is the mean minibatch loss with
/// dropout active.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Minibatch Adam on the squared gain error. Keeps the parameters of the
/// best validation epoch.
pub fn train(net: &mut LstmNet, train_set: &[TrainingSample], val_set: &[TrainingSample], opts: &TrainOptions) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.faulted) {
        return Err(Error::InvalidInput(format!(
            "segment {} is tagged as faulted; refusing to train on it",
            s.segment
        )));
    }
    let monitor = if val_set.is_empty() { train_set } else { val_set };
    let mut rng = component_rng(opts.seed, "lstm.train");
    let mut adam = Adam::new(net.params.len(), opts.learning_rate);
    let mut report = TrainReport {
        train_loss: vec![mse(net, train_set)?],
        val_loss: vec![mse(net, monitor)?],
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (report.val_loss[0], net.params.values.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut since_best = 0;
    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opts.batch_size) {
            net.params.zero_grads();
            let m = batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                let (out, tape) = net.forward_train(&s.input, &mut rng)?;
                let dy: Vec<f64> = out.iter().zip(&s.target).map(|(o, t)| 2.0 * (o - t) / m).collect();
                epoch_loss += out.iter().zip(&s.target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
                net.backward(&tape, &dy)?;
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence {
                    seed: opts.seed,
                    epoch,
                    loss: epoch_loss,
                });
            }
            adam.step_params(&mut net.params)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val = mse(net, monitor)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                seed: opts.seed,
                epoch,
                loss: val,
            });
        }
        log::info!("lstm epoch {epoch}: train {train_loss:.5} val {val:.5}");
        report.train_loss.push(train_loss);
        report.val_loss.push(val);
        if val < best.0 {
            best = (val, net.params.values.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    net.params.values_mut().copy_from_slice(&best.1);
    Ok(report)
}

/// Trained network plus everything needed to turn a window into gains.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTuner {
    pub net: LstmNet,
    pub scaling: InputScaling,
    pub gain_box: GainBox,
    pub window: usize,
}

impl LstmTuner {
    pub fn new(cfg: &LabConfig, seed: u64) -> Self {
        let l = &cfg.lstm;
        let mut rng = component_rng(seed, "lstm.init");
        Self {
            net: LstmNet::random(CHANNELS, &l.hidden, OUTPUTS, l.dropout, &mut rng),
            scaling: InputScaling::from_config(&l.scaling),
            gain_box: cfg.gain_box(),
            window: l.window,
        }
    }

    pub fn with_network(net: LstmNet, cfg: &LabConfig) -> Self {
        Self {
            net,
            scaling: InputScaling::from_config(&cfg.lstm.scaling),
            gain_box: cfg.gain_box(),
            window: cfg.lstm.window,
        }
    }

    /// Forward pass then clamp into the gain box. Deterministic.
    pub fn infer_gains(&self, w: &StateWindow) -> Result<GainVector> {
        if !w.is_full() {
            return Err(Error::TraceTooShort {
                needed: w.capacity(),
                got: w.len(),
            });
        }
        let out = self.net.predict(&w.encoded(&self.scaling))?;
        Ok(self.gain_box.from_unit([out[0], out[1], out[2]]))
    }

    pub fn samples(&self, data: &Dataset, split: Split, stride: usize) -> Vec<TrainingSample> {
        data.samples(split, self.window, stride, &self.scaling, &self.gain_box)
    }

    pub fn snapshot_kind(&self) -> String {
        let h: Vec<String> = self.net.hidden_sizes().iter().map(|v| v.to_string()).collect();
        format!("lstm {} {} {} {} {}", CHANNELS, h.join("-"), OUTPUTS, self.window, self.net.dropout)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        snapshot::save(path, &self.snapshot_kind(), &self.net.params)
    }

    /// Loads parameters saved by [`save`](Self::save); the architecture must
    /// match the configuration.
    pub fn load(path: &Path, cfg: &LabConfig) -> Result<Self> {
        let (kind, params) = snapshot::load(path)?;
        let mut t = Self::with_network(
            LstmNet::zeros(CHANNELS, &cfg.lstm.hidden, OUTPUTS, cfg.lstm.dropout),
            cfg,
        );
        if kind != t.snapshot_kind() {
            return Err(Error::ShapeMismatch {
                expected: t.snapshot_kind(),
                found: kind,
            });
        }
        t.set_params(&params)?;
        Ok(t)
    }

    pub fn set_params(&mut self, p: &ParamSet) -> Result<()> {
        self.net.params.same_layout(p)?;
        self.net.params.values_mut().copy_from_slice(&p.values);
        Ok(())
    }
}

/// Loss curves of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTraining {
    pub pretrain: TrainReport,
    pub finetune: Option<TrainReport>,
    pub test_mse: Option<f64>,
    pub val_mse: f64,
}

/// Pretrain on the clean dataset, then fine-tune on the noisy one.
pub fn train_tuner(cfg: &LabConfig, clean: &Dataset, noisy: Option<&Dataset>, seed: u64) -> Result<(LstmTuner, LstmTraining)> {
    let l = &cfg.lstm;
    let mut tuner = LstmTuner::new(cfg, seed);
    let tr = tuner.samples(clean, Split::Train, l.window_stride);
    let va = tuner.samples(clean, Split::Val, l.window_stride);
    let te = tuner.samples(clean, Split::Test, l.window_stride);
    let pretrain = train(&mut tuner.net, &tr, &va, &TrainOptions::from_config(l, seed))?;
    let finetune = match noisy {
        Some(d) if l.finetune_epochs > 0 => {
            let ftr = tuner.samples(d, Split::Train, l.window_stride);
            let fva = tuner.samples(d, Split::Val, l.window_stride);
            let opts = TrainOptions {
                max_epochs: l.finetune_epochs,
                seed: component_seed(seed, "lstm.finetune"),
                ..TrainOptions::from_config(l, seed)
            };
            Some(train(&mut tuner.net, &ftr, &fva, &opts)?)
        }
        _ => None,
    };
    let val_mse = mse(&tuner.net, if va.is_empty() { &tr } else { &va })?;
    let test_mse = if te.is_empty() { None } else { Some(mse(&tuner.net, &te)?) };
    Ok((
        tuner,
        LstmTraining {
            pretrain,
            finetune,
            test_mse,
            val_mse,
        },
    ))
}

/// Both datasets from the configuration.
pub fn build_datasets(cfg: &LabConfig, rig: &Rig, seed: u64) -> Result<(Dataset, Dataset)> {
    let l = &cfg.lstm;
    let clean_runs = base_scenarios(cfg, rig, seed, l.dataset_hours, 0.0, "pretrain")?;
    let clean = generate_dataset(cfg, rig, &clean_runs, seed)?;
    let noisy_runs = base_scenarios(cfg, rig, seed, l.finetune_hours, l.finetune_noise, "finetune")?;
    let noisy = generate_dataset(cfg, rig, &noisy_runs, component_seed(seed, "finetune"))?;
    Ok((clean, noisy))
}

/// The scheduler in the loop. Baseline gains until the window fills.
#[derive(Debug, Clone)]
pub struct LstmController {
    pub tuner: LstmTuner,
    pub warmup: GainVector,
    window: StateWindow,
    label: String,
}

impl LstmController {
    pub fn new(tuner: LstmTuner, warmup: GainVector) -> Self {
        Self {
            window: StateWindow::new(tuner.window),
            tuner,
            warmup,
            label: "lstm".into(),
        }
    }
}

impl GainPolicy for LstmController {
    fn name(&self) -> &str {
        &self.label
    }

    fn reset(&mut self) {
        self.window.clear();
    }

    fn gains(&mut self, obs: &Observation) -> Result<GainVector> {
        self.window.push(observation_sample(obs));
        if !self.window.is_full() {
            return Ok(self.warmup);
        }
        self.tuner.infer_gains(&self.window)
    }
}
