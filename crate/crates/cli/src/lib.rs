//! `hrsglab` command implementations. The binary only parses arguments and
//! maps errors to exit codes; everything here is callable from tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use hrsg_core::config::LabConfig;
use hrsg_core::gradcheck;
use hrsg_core::lstm_tuner::{build_datasets, train_tuner, Dataset, LstmController, LstmTuner};
use hrsg_core::pinn::{PinnController, PinnTuner};
use hrsg_core::plant::calibrate;
use hrsg_core::report;
use hrsg_core::scenario::{run_comparison, FixedGains, GainPolicy, Rig, ScenarioSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hrsg_core::Error),
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),
    #[error("gradient check failed in: {0}")]
    GradCheck(String),
    #[error("{0} controller run(s) failed; partial outputs written")]
    RunFailed(usize),
    #[error("rerun differs from the manifest: {0}")]
    NotReproduced(String),
    #[error("bad manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hrsg_core::Error as E;
        match self {
            CliError::Core(E::Io { .. } | E::Csv { .. }) => 1,
            CliError::Core(E::Config(_) | E::Parse { .. } | E::InvalidInput(_) | E::Infeasible { .. }) => 2,
            CliError::Manifest { .. } => 2,
            CliError::Prerequisite(_) => 3,
            CliError::Core(_) | CliError::RunFailed(_) | CliError::NotReproduced(_) => 4,
            CliError::GradCheck(_) => 5,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hrsglab", version, about = "Superheater steam-temperature control lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct Common {
    /// Lab configuration (TOML). Defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated subset of pi,lstm,pinn.
    #[arg(long, default_value = "pi,lstm,pinn")]
    pub controllers: String,
    /// paper, null, or a path to a scenario file.
    #[arg(long, default_value = "paper")]
    pub scenario: String,
    /// Trained LSTM snapshot; defaults to lstm.params in the output directory.
    #[arg(long)]
    pub lstm: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding clean.csv and noisy.csv; defaults to the output directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Derive K1..K3 from the equilibrium targets and check the steady state.
    Calibrate(Common),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(Common),
    /// Generate the clean and noisy LSTM training datasets.
    Dataset(Common),
    /// Train the LSTM tuner from a generated dataset.
    Train(TrainArgs),
    /// Run controllers on a scenario and write traces and KPIs.
    Run(RunArgs),
    /// Like run, plus the comparison table and plots.
    Compare(RunArgs),
    /// Repeat the command recorded in a manifest and verify its outputs.
    Rerun {
        manifest: PathBuf,
        /// Where to write the rerun; defaults to <manifest dir>/rerun.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Gradcheck(_) => "gradcheck",
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::Run(_) => "run",
            Command::Compare(_) => "compare",
            Command::Rerun { .. } => "rerun",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Calibrate(c) | Command::Gradcheck(c) | Command::Dataset(c) => Some(c),
            Command::Train(t) => Some(&mut t.common),
            Command::Run(r) | Command::Compare(r) => Some(&mut r.common),
            Command::Rerun { .. } => None,
        }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Command,
    pub config_path: Option<PathBuf>,
    /// The effective configuration, seed override applied.
    pub config: String,
    pub seed: u64,
    pub out: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Profile tag of every config section.
    pub profiles: BTreeMap<String, String>,
    /// SHA-256 of inputs read besides the config (file name → hex).
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output written (file name → hex).
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| hrsg_core::Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn profiles(cfg: &LabConfig) -> BTreeMap<String, String> {
    [
        ("plant", &cfg.plant.profile),
        ("control", &cfg.control.profile),
        ("lstm", &cfg.lstm.profile),
        ("pinn", &cfg.pinn.profile),
        ("scenario", &cfg.scenario.profile),
        ("metrics", &cfg.metrics.profile),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.clone()))
    .collect()
}

pub fn load_config(common: &Common) -> CliResult<LabConfig> {
    let mut cfg = match &common.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| hrsg_core::Error::io(dir, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| hrsg_core::Error::io(path, e))?;
    Ok(())
}

/// What a command produced, before the manifest is written.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
    /// Human summary printed to stdout.
    pub summary: String,
}

/// Runs a command with its config already resolved. Rerun passes the
/// manifest's config text here instead of a file.
pub fn execute(command: &Command, cfg: &LabConfig, config_path: Option<PathBuf>) -> CliResult<(Outcome, RunManifest)> {
    if let Command::Rerun { manifest, out } = command {
        return rerun(manifest, out.as_deref());
    }
    let started = now();
    let out_dir = match command {
        Command::Calibrate(c) | Command::Gradcheck(c) | Command::Dataset(c) => c.out.clone(),
        Command::Train(t) => t.common.out.clone(),
        Command::Run(r) | Command::Compare(r) => r.common.out.clone(),
        Command::Rerun { .. } => unreachable!(),
    };
    create_dir(&out_dir)?;
    let result = match command {
        Command::Calibrate(_) => cmd_calibrate(cfg, &out_dir),
        Command::Gradcheck(_) => cmd_gradcheck(cfg, &out_dir),
        Command::Dataset(_) => cmd_dataset(cfg, &out_dir),
        Command::Train(t) => cmd_train(cfg, &out_dir, t.data.as_deref().unwrap_or(&out_dir)),
        Command::Run(r) => cmd_run(cfg, &out_dir, r, false),
        Command::Compare(r) => cmd_run(cfg, &out_dir, r, true),
        Command::Rerun { .. } => unreachable!(),
    };
    // failed runs still leave a manifest for what they wrote
    let (outcome, err) = match result {
        Ok(o) => (o, None),
        Err(b) => (b.0, Some(b.1)),
    };
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.clone(),
        config_path,
        config: cfg.to_toml_string(),
        seed: cfg.seed,
        out: out_dir.clone(),
        started_unix: started,
        finished_unix: 0,
        profiles: profiles(cfg),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    for p in &outcome.inputs {
        manifest.inputs.insert(p.display().to_string(), hash_file(p)?);
    }
    for p in &outcome.outputs {
        let name = p.strip_prefix(&out_dir).unwrap_or(p).display().to_string();
        manifest.outputs.insert(name, hash_file(p)?);
    }
    manifest.finished_unix = now();
    let path = out_dir.join(format!("{}{MANIFEST_SUFFIX}", command.name()));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&path, &json)?;
    match err {
        Some(e) => Err(e),
        None => Ok((outcome, manifest)),
    }
}

type Step = std::result::Result<Outcome, Box<(Outcome, CliError)>>;

fn fail<E: Into<CliError>>(e: E) -> Box<(Outcome, CliError)> {
    Box::new((Outcome::default(), e.into()))
}

fn cmd_calibrate(cfg: &LabConfig, out: &Path) -> Step {
    let rig_law = hrsg_core::control::ControlLaw::from_config(&cfg.control);
    let cal = calibrate(&cfg.plant, (rig_law.u_min, rig_law.u_max)).map_err(fail)?;
    let mut calibrated = cfg.clone();
    calibrated.plant.k1 = Some(cal.constants.k1);
    calibrated.plant.k2 = Some(cal.constants.k2);
    calibrated.plant.k3 = Some(cal.constants.k3);
    let mut text = String::new();
    text.push_str(&format!("K1 = {}\nK2 = {}\nK3 = {}\n", cal.constants.k1, cal.constants.k2, cal.constants.k3));
    text.push_str(&format!(
        "target: y = {} C at u = {} kg/s\nsteady state: x1 = {} C, x2 = {} C, residual {:e} C\n",
        cal.target_outlet, cal.target_spray, cal.check.x1, cal.check.x2, cal.residual()
    ));
    text.push_str(&format!(
        "reachable outlet over the spray range: [{}, {}] C\n",
        cal.dsh_range.0, cal.dsh_range.1
    ));
    let report_path = out.join("calibration.txt");
    let profile_path = out.join("calibrated.toml");
    write_text(&report_path, &text).map_err(fail)?;
    write_text(&profile_path, &calibrated.to_toml_string()).map_err(fail)?;
    Ok(Outcome {
        outputs: vec![report_path, profile_path],
        inputs: vec![],
        summary: text,
    })
}

fn cmd_gradcheck(cfg: &LabConfig, out: &Path) -> Step {
    let reports = gradcheck::run_all(cfg, cfg.seed).map_err(fail)?;
    let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
    let path = out.join("gradcheck.txt");
    write_text(&path, &text).map_err(fail)?;
    let outcome = Outcome {
        outputs: vec![path],
        inputs: vec![],
        summary: text,
    };
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failing_blocks().into_iter().map(move |b| format!("{}/{b}", r.suite)))
        .collect();
    if failing.is_empty() {
        Ok(outcome)
    } else {
        Err(Box::new((outcome, CliError::GradCheck(failing.join(", ")))))
    }
}

fn cmd_dataset(cfg: &LabConfig, out: &Path) -> Step {
    let rig = Rig::from_config(cfg).map_err(fail)?;
    let (clean, noisy) = build_datasets(cfg, &rig, cfg.seed).map_err(fail)?;
    let c = out.join("clean.csv");
    let n = out.join("noisy.csv");
    clean.write_csv(&c).map_err(fail)?;
    noisy.write_csv(&n).map_err(fail)?;
    let summary = format!(
        "clean: {} segments ({} skipped), noisy: {} segments ({} skipped)\n",
        clean.segments.len(),
        clean.skipped,
        noisy.segments.len(),
        noisy.skipped
    );
    Ok(Outcome {
        outputs: vec![c, n],
        inputs: vec![],
        summary,
    })
}

fn cmd_train(cfg: &LabConfig, out: &Path, data: &Path) -> Step {
    let c = data.join("clean.csv");
    let n = data.join("noisy.csv");
    if !c.exists() {
        return Err(fail(CliError::Prerequisite(format!(
            "no dataset at {}; run `hrsglab dataset --out {}` first or pass --data DIR",
            c.display(),
            data.display()
        ))));
    }
    let clean = Dataset::read_csv(&c).map_err(fail)?;
    let noisy = if n.exists() { Some(Dataset::read_csv(&n).map_err(fail)?) } else { None };
    let (tuner, rep) = train_tuner(cfg, &clean, noisy.as_ref(), cfg.seed).map_err(fail)?;
    let params = out.join("lstm.params");
    tuner.save(&params).map_err(fail)?;
    let mut curve = String::from("phase,epoch,train_loss,val_loss\n");
    let phases = std::iter::once(("pretrain", &rep.pretrain)).chain(rep.finetune.as_ref().map(|f| ("finetune", f)));
    for (phase, r) in phases {
        for (k, v) in r.val_loss.iter().enumerate() {
            let t = if k == 0 { String::new() } else { r.train_loss[k - 1].to_string() };
            curve.push_str(&format!("{phase},{k},{t},{v}\n"));
        }
    }
    let curve_path = out.join("training.csv");
    write_text(&curve_path, &curve).map_err(fail)?;
    let mut inputs = vec![c];
    if noisy.is_some() {
        inputs.push(n);
    }
    let summary = format!(
        "pretrain best epoch {} ({} epochs), validation MSE {}, test MSE {}\n",
        rep.pretrain.best_epoch,
        rep.pretrain.train_loss.len(),
        rep.val_mse,
        rep.test_mse.map_or("n/a".to_string(), |v| v.to_string())
    );
    Ok(Outcome {
        outputs: vec![params, curve_path],
        inputs,
        summary,
    })
}

pub fn parse_controllers(list: &str) -> CliResult<Vec<String>> {
    let names: Vec<String> = list.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(hrsg_core::Error::Config("no controllers selected".into()).into());
    }
    for n in &names {
        if !["pi", "lstm", "pinn"].contains(&n.as_str()) {
            return Err(hrsg_core::Error::Config(format!("unknown controller {n:?}; expected pi, lstm or pinn")).into());
        }
    }
    Ok(names)
}

pub fn load_scenario(arg: &str, cfg: &LabConfig) -> CliResult<ScenarioSpec> {
    Ok(match arg {
        "paper" => ScenarioSpec::load_ramp_with_leak(&cfg.scenario, cfg.seed)?,
        "null" => ScenarioSpec::null(&cfg.scenario, cfg.seed)?,
        path => ScenarioSpec::from_file(Path::new(path), cfg.seed)?,
    })
}

fn cmd_run(cfg: &LabConfig, out: &Path, args: &RunArgs, plots: bool) -> Step {
    let names = parse_controllers(&args.controllers).map_err(fail)?;
    let spec = load_scenario(&args.scenario, cfg).map_err(fail)?;
    let rig = Rig::from_config(cfg).map_err(fail)?;
    let mut inputs = Vec::new();
    if !matches!(args.scenario.as_str(), "paper" | "null") {
        inputs.push(PathBuf::from(&args.scenario));
    }
    let mut policies: Vec<Box<dyn GainPolicy>> = Vec::new();
    for n in &names {
        match n.as_str() {
            "pi" => policies.push(Box::new(FixedGains::new("pi", rig.baseline))),
            "pinn" => policies.push(Box::new(PinnController::new(PinnTuner::new(cfg, &rig, cfg.seed)))),
            _ => {
                let path = args.lstm.clone().unwrap_or_else(|| out.join("lstm.params"));
                if !path.exists() {
                    return Err(fail(CliError::Prerequisite(format!(
                        "no trained LSTM snapshot at {}; run `hrsglab dataset` and `hrsglab train` with the same --out, \
                         pass --lstm PATH, or drop lstm from --controllers",
                        path.display()
                    ))));
                }
                let tuner = LstmTuner::load(&path, cfg).map_err(fail)?;
                policies.push(Box::new(LstmController::new(tuner, rig.baseline)));
                inputs.push(path);
            }
        }
    }
    let cmp = run_comparison(&spec, &rig, &mut policies, &cfg.metrics);
    let mut outcome = Outcome {
        inputs,
        ..Outcome::default()
    };
    let res: CliResult<()> = (|| {
        for t in &cmp.traces {
            let p = out.join(format!("trace_{}.csv", t.controller));
            report::write_trace_csv(t, &p)?;
            outcome.outputs.push(p);
            if t.controller == "pinn" {
                let p = out.join("pinn_diagnostics.csv");
                report::write_diagnostics_csv(t, cfg.pinn.mu, &p)?;
                outcome.outputs.push(p);
            }
        }
        if plots {
            outcome.outputs.extend(report::render_report(&cmp.kpis, &cmp.traces, out)?);
        } else {
            let p = out.join("kpis.csv");
            report::write_kpi_csv(&cmp.kpis, &p)?;
            outcome.outputs.push(p);
        }
        Ok(())
    })();
    if let Err(e) = res {
        return Err(Box::new((outcome, e)));
    }
    outcome.summary = report::kpi_table(&cmp.kpis);
    for (name, e) in &cmp.failures {
        outcome.summary.push_str(&format!("{name}: FAILED: {e}\n"));
    }
    if cmp.failures.is_empty() {
        Ok(outcome)
    } else {
        let n = cmp.failures.len();
        Err(Box::new((outcome, CliError::RunFailed(n))))
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| hrsg_core::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Re-executes a manifest's command into a fresh directory with the stored
/// config and checks every output hash recorded in the manifest.
fn rerun(manifest_path: &Path, out: Option<&Path>) -> CliResult<(Outcome, RunManifest)> {
    let m = read_manifest(manifest_path)?;
    let bad = |message: String| CliError::Manifest {
        path: manifest_path.to_path_buf(),
        message,
    };
    let cfg = LabConfig::from_toml_str(&m.config)?;
    let out_dir = match out {
        Some(p) => p.to_path_buf(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).join("rerun"),
    };
    let mut cmd = m.command.clone();
    let common = cmd.common_mut().ok_or_else(|| bad("a rerun cannot be rerun".into()))?;
    common.out = out_dir.clone();
    if let Command::Run(r) | Command::Compare(r) = &mut cmd {
        // the snapshot the original run used, not one next to the new outputs
        if r.lstm.is_none() && r.controllers.contains("lstm") {
            r.lstm = Some(m.out.join("lstm.params"));
        }
    }
    if let Command::Train(t) = &mut cmd {
        if t.data.is_none() {
            t.data = Some(m.out.clone());
        }
    }
    for (input, hash) in &m.inputs {
        let now = hash_file(Path::new(input))?;
        if &now != hash {
            return Err(CliError::NotReproduced(format!("input {input} changed since the original run")));
        }
    }
    let (mut outcome, fresh) = execute(&cmd, &cfg, m.config_path.clone())?;
    let mut lines = String::new();
    let mut differing = Vec::new();
    for (name, hash) in &m.outputs {
        let same = fresh.outputs.get(name) == Some(hash);
        lines.push_str(&format!("{name}: {}\n", if same { "identical" } else { "DIFFERS" }));
        if !same {
            differing.push(name.clone());
        }
    }
    outcome.summary = lines;
    if differing.is_empty() {
        Ok((outcome, fresh))
    } else {
        Err(CliError::NotReproduced(differing.join(", ")))
    }
}

/// Entry point shared by the binary and the tests.
pub fn run_cli(cli: Cli) -> CliResult<String> {
    let (outcome, _) = match &cli.command {
        Command::Rerun { .. } => execute(&cli.command, &LabConfig::default(), None)?,
        cmd => {
            let mut cmd = cmd.clone();
            let common = cmd.common_mut().expect("non-rerun commands carry common flags").clone();
            let cfg = load_config(&common)?;
            // the manifest records the resolved seed
            if let Some(c) = cmd.common_mut() {
                c.seed = Some(cfg.seed);
            }
            execute(&cmd, &cfg, common.config.clone())?
        }
    };
    Ok(outcome.summary)
}
