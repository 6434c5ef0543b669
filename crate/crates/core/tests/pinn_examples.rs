//! Worked examples for the online physics-informed tuner.

use hrsg_core::config::LabConfig;
use hrsg_core::gradcheck::PinnCase;
use hrsg_core::neural::Activation;
use hrsg_core::pinn::{physics_loss, PinnContext, PinnController, PinnTuner};
use hrsg_core::plant::{plant_derivatives, PlantState};
use hrsg_core::scenario::{run_scenario, Rig, ScenarioSpec};

fn setup() -> (LabConfig, Rig) {
    let cfg = LabConfig::default();
    let rig = Rig::from_config(&cfg).unwrap();
    (cfg, rig)
}

/// Interval that starts and ends at the steady state for the setpoint, with
/// the integral chosen so the network's gains reproduce the steady spray.
fn equilibrium_context(cfg: &LabConfig, rig: &Rig, tuner: &PinnTuner) -> PinnContext {
    let r = cfg.scenario.setpoint;
    let t_gt = cfg.scenario.t_gt_start;
    let (u_eq, eq) = rig.equilibrium(r, t_gt, 0.0).unwrap();
    let g = tuner.pinn_forward(0.0, eq.x1, t_gt).unwrap();
    let law = &rig.law;
    let integral = (u_eq - g.kff * law.ff_deviation(t_gt)) * law.integral_time_base / g.ki;
    let d = rig.dm.frame(t_gt, None, u_eq, 0.0);
    PinnContext {
        e: 0.0,
        y: eq.x1,
        t_gt,
        r,
        controller_error: 0.0,
        integral,
        u_applied: u_eq,
        y_next: eq.x1,
        before: eq,
        after: eq,
        measured_rate: (0.0, 0.0),
        d4: d.d4,
        d6: d.d6,
    }
}

#[test]
fn forward_matches_scalar_reevaluation() {
    let (cfg, rig) = setup();
    let tuner = PinnTuner::new(&cfg, &rig, 42);
    let x = tuner.features(0.0, 515.0, 530.0);
    let mut h = x.to_vec();
    for layer in &tuner.net.layers {
        let w = tuner.net.params.block(layer.w);
        let b = tuner.net.params.block(layer.b);
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let mut z = b[o];
            for i in 0..layer.in_dim {
                z += w[o * layer.in_dim + i] * h[i];
            }
            next.push(match layer.activation {
                Activation::Tanh => z.tanh(),
                Activation::Linear => z,
            });
        }
        h = next;
    }
    let s = tuner.settings.output_scale;
    let bounds = rig.gain_box.bounds();
    let want: Vec<f64> = (0..3).map(|i| (s[i] * h[i]).clamp(bounds[i][0], bounds[i][1])).collect();
    let got = tuner.pinn_forward(0.0, 515.0, 530.0).unwrap().to_array();
    for i in 0..3 {
        assert!((got[i] - want[i]).abs() <= 1e-12 * want[i].abs().max(1e-12), "{got:?} vs {want:?}");
    }
}

#[test]
fn physics_loss_examples() {
    let (_, rig) = setup();
    let c = rig.plant.constants;
    let s = PlantState::new(515.0, 512.0);
    let d = rig.dm.frame(530.0, None, 0.0, 0.5);

    let m = plant_derivatives(s, 0.7, &d, &c, 0.0).unwrap();
    assert_eq!(physics_loss(m, m), 0.0);

    let measured = plant_derivatives(s, 0.0, &d, &c, 0.5).unwrap();
    let model = plant_derivatives(s, 0.0, &d, &c, 0.0).unwrap();
    let want = 0.5 * (c.k3 * 0.5 * ((d.d4 - s.x2) - (d.d4 - d.d5))).powi(2);
    let got = physics_loss(measured, model);
    assert!(got > 0.0);
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");

    let r = (0.3, -0.2);
    let twice = (2.0 * r.0, 2.0 * r.1);
    assert!((physics_loss(twice, (0.0, 0.0)) - 4.0 * physics_loss(r, (0.0, 0.0))).abs() < 1e-15);
}

#[test]
fn at_the_loss_minimum_the_update_changes_nothing() {
    let (cfg, rig) = setup();
    let mut tuner = PinnTuner::new(&cfg, &rig, 5);
    let ctx = equilibrium_context(&cfg, &rig, &tuner);
    let before = tuner.net.params.values.clone();
    let b = tuner.online_update(&ctx).unwrap();
    assert!(b.data_loss < 1e-20 && b.physics_loss < 1e-12, "{b:?}");
    let g = tuner.net.params.grads.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(g < 1e-9, "largest gradient entry {g}");
    let moved = before
        .iter()
        .zip(&tuner.net.params.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(moved < 1e-12, "{moved}");
}

#[test]
fn zero_physics_weight_leaves_only_the_tracking_gradient() {
    let (cfg, _) = setup();
    let mut case = PinnCase::fixed(&cfg, 9, false).unwrap();
    case.tuner.settings.mu = 0.0;
    let b = case.tuner.gradient(&case.ctx).unwrap();
    assert!(b.physics_loss > 0.0, "the fixture carries a leak residual");
    assert_eq!(b.total, b.data_loss);
    let g0 = case.tuner.net.params.grads.clone();
    assert!(g0.iter().any(|v| *v != 0.0));

    // moving the measured rates only changes the physics residual
    let mut other = case.ctx;
    other.measured_rate = (other.measured_rate.0 + 0.4, other.measured_rate.1 - 0.3);
    case.tuner.gradient(&other).unwrap();
    assert_eq!(case.tuner.net.params.grads, g0);

    // central differences of the data term alone on the output bias
    let head = case.tuner.net.layers.last().unwrap().b;
    let range = case.tuner.net.params.blocks[head].range();
    for idx in range {
        let h = 1e-6;
        let mut t = case.tuner.clone();
        let v = t.net.params.values[idx];
        t.net.params.set_value(idx, v + h);
        let up = t.loss(&case.ctx).unwrap().data_loss;
        t.net.params.set_value(idx, v - h);
        let dn = t.loss(&case.ctx).unwrap().data_loss;
        let fd = (up - dn) / (2.0 * h);
        assert!((fd - g0[idx]).abs() <= 1e-6 * fd.abs().max(1e-6), "param {idx}: {fd} vs {}", g0[idx]);
    }

    case.tuner.settings.mu = 0.1;
    case.tuner.gradient(&case.ctx).unwrap();
    assert_ne!(case.tuner.net.params.grads, g0);
}

#[test]
fn leak_raises_the_physics_residual() {
    let (cfg, _) = setup();
    let case = PinnCase::fixed(&cfg, 4, false).unwrap();
    let leaky = case.tuner.loss(&case.ctx).unwrap().physics_loss;

    // same interval re-simulated without the leak
    let rig = Rig::from_config(&{
        let mut c = cfg.clone();
        c.pinn.head_init_scale = 0.1;
        c
    })
    .unwrap();
    let ctx = case.ctx;
    let d = rig.dm.frame(ctx.t_gt, None, ctx.u_applied, 0.0);
    let after = rig.plant.step(ctx.before, ctx.u_applied, &d, 0.0, 1.0).unwrap();
    let clean = PinnContext {
        after,
        y_next: after.x1,
        measured_rate: (after.x1 - ctx.before.x1, after.x2 - ctx.before.x2),
        ..ctx
    };
    let quiet = case.tuner.loss(&clean).unwrap().physics_loss;
    assert!(leaky > 1e3 * quiet.max(1e-30), "{leaky} vs {quiet}");
}

#[test]
fn regulation_at_equilibrium_stays_put() {
    let (cfg, rig) = setup();
    let spec = ScenarioSpec::null(&cfg.scenario, cfg.seed).unwrap();
    let mut ctrl = PinnController::new(PinnTuner::new(&cfg, &rig, cfg.seed));
    let trace = run_scenario(&spec, &rig, &mut ctrl).unwrap();
    let u0 = trace.records[0].u;
    for r in &trace.records {
        assert!((r.u - u0).abs() < 1e-3, "t={} u={} u0={u0}", r.t, r.u);
        assert!(r.l_data.unwrap() < 1e-6 && r.l_phys.unwrap() < 1e-6, "{r:?}");
    }
    let g = trace.records.last().unwrap().gains;
    assert!((g.kp - rig.baseline.kp).abs() < 1e-3 * rig.baseline.kp, "{g:?}");
}
