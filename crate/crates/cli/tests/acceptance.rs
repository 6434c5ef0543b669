//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any of them fails.
//!
//! The LSTM dataset comes from a cache under cargo's test scratch directory;
//! the first run generates it outside the timed section.

mod common;

use std::time::{Duration, Instant};

use clap::Parser;
use hrsg_core::config::LabConfig;
use hrsg_core::gradcheck;
use hrsg_core::lstm_tuner::{train_tuner, LstmController};
use hrsg_core::metrics::{control_effort_variance, iae, max_overshoot, settling_time, KpiRow, Settling};
use hrsg_core::pinn::{PinnController, PinnTuner};
use hrsg_core::plant::{plant_derivatives, steady_state, PlantState};
use hrsg_core::scenario::{run_comparison, FixedGains, GainPolicy, Rig, ScenarioSpec, Trace};
use hrsglab::{run_cli, Cli};

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    println!(
        "criterion {:>2} {:<28} {}  {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
}

fn row<'a>(rows: &'a [KpiRow], name: &str) -> &'a KpiRow {
    rows.iter().find(|r| r.controller == name).expect("controller row")
}

fn trace<'a>(traces: &'a [Trace], name: &str) -> &'a Trace {
    traces.iter().find(|t| t.controller == name).expect("controller trace")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn gradient_oracle(cfg: &LabConfig) -> Verdict {
    let t0 = Instant::now();
    let reports = gradcheck::run_all(cfg, cfg.seed).expect("gradient fixtures build");
    let took = t0.elapsed();
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failing_blocks().into_iter().map(move |b| format!("{}:{b}", r.suite)))
        .collect();
    let entries: usize = reports.iter().map(|r| r.entries()).sum();
    Verdict {
        id: 1,
        name: "gradient oracle",
        pass: failing.is_empty() && took < Duration::from_secs(60),
        detail: format!("{entries} entries, failing [{}], {:.1}s", failing.join(" "), took.as_secs_f64()),
    }
}

fn plant_oracle(rig: &Rig) -> Verdict {
    let t0 = Instant::now();
    let c = rig.plant.constants;
    let mut worst: f64 = 0.0;
    for (start, u, f, t_gt) in [
        (PlantState::new(515.0, 520.0), 0.0, 0.5, 530.0),
        (PlantState::new(505.0, 520.0), 1.6, 0.0, 555.0),
        (PlantState::new(520.0, 500.0), 0.3, 0.5, 545.0),
        (PlantState::new(512.0, 490.0), 2.0, 0.0, 580.0),
    ] {
        let d = rig.dm.frame(t_gt, None, u, f);
        let mut x = start;
        for _ in 0..500 {
            x = rig.plant.step(x, u, &d, f, 1.0).unwrap();
        }
        let mut e = start;
        let h = 1e-3;
        for _ in 0..500_000 {
            let (a, b) = plant_derivatives(e, u, &d, &c, f).unwrap();
            e = PlantState::new(e.x1 + h * a, e.x2 + h * b);
        }
        worst = worst.max((x.x1 - e.x1).abs()).max((x.x2 - e.x2).abs());
    }
    let mut worst_ss: f64 = 0.0;
    for (u, f, t_gt) in [(0.8, 0.0, 530.0), (1.4, 0.0, 550.0), (0.9, 0.5, 560.0)] {
        let d = rig.dm.frame(t_gt, None, u, f);
        let ss = steady_state(u, &d, &c, f).unwrap();
        let mut x = PlantState::new(ss.x1 - 8.0, ss.x2 + 6.0);
        for _ in 0..20_000 {
            x = rig.plant.step(x, u, &d, f, 1.0).unwrap();
        }
        worst_ss = worst_ss.max((x.x1 - ss.x1).abs()).max((x.x2 - ss.x2).abs());
    }
    let took = t0.elapsed();
    Verdict {
        id: 2,
        name: "plant oracle",
        pass: worst < 1e-3 && worst_ss < 1e-3 && took < Duration::from_secs(60),
        detail: format!(
            "RK4 vs Euler {worst:.2e} C, steady state {worst_ss:.2e} C, {:.1}s",
            took.as_secs_f64()
        ),
    }
}

fn ordering(rows: &[KpiRow], took: Duration, train_note: &str) -> Verdict {
    let (pi, lstm, pinn) = (row(rows, "pi"), row(rows, "lstm"), row(rows, "pinn"));
    let iae = pinn.iae < lstm.iae && lstm.iae < pi.iae;
    let mo = pinn.mo < lstm.mo && lstm.mo < pi.mo;
    let ts = pinn.ts.as_f64() < lstm.ts.as_f64() && lstm.ts.as_f64() < pi.ts.as_f64();
    let cev = pinn.cev < pi.cev && pi.cev < lstm.cev;
    let fast = took < Duration::from_secs(300);
    let mark = |ok: bool| if ok { "ok" } else { "VIOLATED" };
    Verdict {
        id: 3,
        name: "KPI ordering",
        pass: iae && mo && ts && cev && fast,
        detail: format!(
            "IAE {:.1}/{:.1}/{:.1} {}; MO {:.3}/{:.3}/{:.3} {}; Ts {}/{}/{} {}; CEV {:.4}/{:.4}/{:.4} {} \
             (pinn/lstm/pi); train+runs {:.0}s {}; {train_note}",
            pinn.iae,
            lstm.iae,
            pi.iae,
            mark(iae),
            pinn.mo,
            lstm.mo,
            pi.mo,
            mark(mo),
            pinn.ts,
            lstm.ts,
            pi.ts,
            mark(ts),
            pinn.cev,
            lstm.cev,
            pi.cev,
            mark(cev),
            took.as_secs_f64(),
            mark(fast)
        ),
    }
}

fn headline_ratio(rows: &[KpiRow]) -> Verdict {
    let ratio = row(rows, "pinn").iae / row(rows, "lstm").iae;
    Verdict {
        id: 4,
        name: "IAE ratio pinn/lstm",
        pass: ratio <= 0.6,
        detail: format!("{ratio:.3} (limit 0.6)"),
    }
}

fn overshoot_scale(rows: &[KpiRow]) -> Verdict {
    let (pi, pinn) = (row(rows, "pi").mo, row(rows, "pinn").mo);
    Verdict {
        id: 5,
        name: "overshoot scale",
        pass: pinn < 2.0 && pi > 2.0 * pinn,
        detail: format!("MO pinn {pinn:.3} (< 2), MO pi {pi:.3} vs 2*pinn {:.3}", 2.0 * pinn),
    }
}

fn fault_signature(t: &Trace, mu: f64) -> Verdict {
    let onset = t.fault_onset.expect("faulted scenario");
    let series: Vec<(f64, f64)> = t.records.iter().map(|r| (r.t, mu * r.l_phys.unwrap_or(f64::NAN))).collect();
    let pick = |a: f64, b: f64| -> Vec<f64> { series.iter().filter(|(s, _)| *s >= a && *s < b).map(|(_, v)| *v).collect() };
    let before = pick(0.0, onset);
    let pre_max = before.iter().copied().fold(0.0, f64::max);
    let pre_mean = mean(&before);
    let spike = pick(onset, onset + 60.0).into_iter().fold(0.0, f64::max);
    let end = t.records.last().unwrap().t + t.dt;
    let early = mean(&pick(onset, onset + 300.0));
    let late = mean(&pick(end - 600.0, end));
    let quiet = pre_max < 1e-4;
    let rises = spike >= 10.0 * pre_max;
    let falls = late < early;
    Verdict {
        id: 6,
        name: "fault signature",
        pass: quiet && rises && falls,
        detail: format!(
            "pre-onset max {pre_max:.2e} mean {pre_mean:.2e} (< 1e-4); peak within 60 s {spike:.2e} ({:.0}x); \
             mean first 300 s {early:.2e} vs last 600 s {late:.2e}",
            spike / pre_max.max(f64::MIN_POSITIVE)
        ),
    }
}

fn steady_offset(t: &Trace) -> f64 {
    let end = t.records.last().unwrap().t + t.dt;
    let tail: Vec<f64> = t.records.iter().filter(|r| r.t >= end - 600.0).map(|r| r.e.abs()).collect();
    mean(&tail)
}

fn lstm_degradation(traces: &[Trace]) -> Verdict {
    let lstm = steady_offset(trace(traces, "lstm"));
    let pinn = steady_offset(trace(traces, "pinn"));
    Verdict {
        id: 7,
        name: "LSTM post-fault offset",
        pass: lstm >= 2.0 * pinn,
        detail: format!("mean |e| over the last 600 s: lstm {lstm:.2e}, pinn {pinn:.2e} ({:.1}x)", lstm / pinn),
    }
}

fn saturation(traces: &[Trace], rig: &Rig) -> Verdict {
    let outside = traces
        .iter()
        .flat_map(|t| &t.records)
        .filter(|r| !(0.0..=2.0).contains(&r.u))
        .count();
    let law = &rig.law;
    let mut bounded = true;
    let mut frozen = true;
    for eps in [40.0, -40.0] {
        let mut cs = law.initial_state(rig.baseline, 0.8, 0.0, 530.0);
        let mut prev: Option<f64> = None;
        for _ in 0..60 {
            let (u, next) = law.compute_control(rig.baseline, eps, cs, 530.0, 1.0);
            bounded &= next.integral.abs() <= law.integral_clamp && (0.0..=2.0).contains(&u);
            if let Some(p) = prev {
                frozen &= next.integral == p;
            }
            if law.is_saturated(next.last_u_unsat) {
                prev = Some(next.integral);
            }
            cs = next;
        }
    }
    Verdict {
        id: 8,
        name: "saturation and anti-windup",
        pass: outside == 0 && bounded && frozen,
        detail: format!("{outside} samples outside [0, 2]; 60 s forced saturation: bounded {bounded}, integral frozen {frozen}"),
    }
}

fn determinism(lstm_params: &std::path::Path) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let cli = Cli::parse_from([
        "hrsglab",
        "compare",
        "--out",
        out.to_str().unwrap(),
        "--lstm",
        lstm_params.to_str().unwrap(),
    ]);
    let first = run_cli(cli);
    let manifest = out.join("compare.manifest.json");
    let again = run_cli(Cli::parse_from(["hrsglab", "rerun", manifest.to_str().unwrap()]));
    let a = std::fs::read(out.join("kpis.csv"));
    let b = std::fs::read(out.join("rerun").join("kpis.csv"));
    let same = matches!((&a, &b), (Ok(a), Ok(b)) if a == b);
    Verdict {
        id: 9,
        name: "rerun determinism",
        pass: first.is_ok() && again.is_ok() && same,
        detail: format!(
            "compare {}, rerun {}, kpis.csv byte-identical {same}",
            first.as_ref().map_or_else(|e| e.to_string(), |_| "ok".into()),
            again.as_ref().map_or_else(|e| e.to_string(), |_| "ok".into())
        ),
    }
}

fn metric_examples() -> Verdict {
    let mut bad = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    check("iae zero", iae(&[0.0; 10], 1.0).unwrap() == 0.0);
    check("iae rectangle", iae(&[1.0; 10], 1.0).unwrap() == 10.0);
    let s: Vec<f64> = (0..100).map(|k| (2.0 * std::f64::consts::PI * k as f64 / 100.0).sin()).collect();
    let coarse = iae(&s, 1.0).unwrap();
    let n = 200_000;
    let h = 100.0 / n as f64;
    let fine: f64 = (0..n).map(|k| (2.0 * std::f64::consts::PI * (k as f64 + 0.5) * h / 100.0).sin().abs() * h).sum();
    check("iae sine", (coarse - fine).abs() / fine < 0.02);
    check("mo below", max_overshoot(&[514.0, 515.0], &[515.0, 515.0]).unwrap() == 0.0);
    check("mo peak", max_overshoot(&[515.0, 524.0, 516.0], &[515.0; 3]).unwrap() == 9.0);
    let t: Vec<f64> = (0..200).map(|k| k as f64).collect();
    check(
        "ts inside",
        settling_time(&t, &vec![0.5; 200], 1.0, 20.0).unwrap() == Settling::After(0.0),
    );
    let step: Vec<f64> = t.iter().map(|v| if *v < 70.0 { 2.0 } else { 0.0 }).collect();
    check("ts step", settling_time(&t, &step, 1.0, 20.0).unwrap() == Settling::After(50.0));
    let mut tail = vec![0.0; 200];
    tail[199] = 1.5;
    check("ts unsettled", settling_time(&t, &tail, 1.0, 20.0).unwrap() == Settling::NotSettled);
    check("cev constant", control_effort_variance(&[0.7; 20]).unwrap() == 0.0);
    check("cev alternating", control_effort_variance(&[0.0, 2.0, 0.0, 2.0]).unwrap() == 1.0);
    Verdict {
        id: 10,
        name: "metric examples",
        pass: bad.is_empty(),
        detail: format!("10 examples, failing [{}]", bad.join(", ")),
    }
}

fn main() {
    let cfg = LabConfig::default();
    let rig = Rig::from_config(&cfg).expect("default config builds");
    let mut verdicts = vec![gradient_oracle(&cfg), plant_oracle(&rig)];
    for v in &verdicts {
        report(v);
    }

    let data_dir = common::cached_dataset(&cfg);
    let t0 = Instant::now();
    let (clean, noisy) = common::load(&data_dir);
    let (tuner, training) = train_tuner(&cfg, &clean, Some(&noisy), cfg.seed).expect("training");
    let spec = ScenarioSpec::load_ramp_with_leak(&cfg.scenario, cfg.seed).unwrap();
    let mut policies: Vec<Box<dyn GainPolicy>> = vec![
        Box::new(FixedGains::new("pi", rig.baseline)),
        Box::new(LstmController::new(tuner.clone(), rig.baseline)),
        Box::new(PinnController::new(PinnTuner::new(&cfg, &rig, cfg.seed))),
    ];
    let cmp = run_comparison(&spec, &rig, &mut policies, &cfg.metrics);
    let took = t0.elapsed();
    assert!(cmp.failures.is_empty(), "closed-loop failures: {:?}", cmp.failures);
    let held_out = training.test_mse.unwrap_or(f64::NAN);
    let train_note = format!(
        "val MSE {:.4}, held-out MSE {:.4} ({})",
        training.val_mse,
        held_out,
        if held_out <= 3.0 * training.val_mse { "within 3x val" } else { "ABOVE 3x val" }
    );

    let scratch = tempfile::tempdir().unwrap();
    let params = scratch.path().join("lstm.params");
    tuner.save(&params).unwrap();

    let rest = [
        ordering(&cmp.kpis, took, &train_note),
        headline_ratio(&cmp.kpis),
        overshoot_scale(&cmp.kpis),
        fault_signature(trace(&cmp.traces, "pinn"), cfg.pinn.mu),
        lstm_degradation(&cmp.traces),
        saturation(&cmp.traces, &rig),
        determinism(&params),
        metric_examples(),
    ];
    for v in &rest {
        report(v);
    }
    verdicts.extend(rest);

    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!("; failing {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
