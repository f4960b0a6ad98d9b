//! End-to-end acceptance checks for the double-integrator instance and the oracle suites.
//! Each test prints one `PASS`/`FAIL` line before asserting.

mod common;

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollout_mpc::config::load_config;
use rollout_mpc::mpc::{
    rotated_stage_cost, synth_terminal, terminal_cost_residual, verify_terminal, Controller, NcsInput, NcsModel,
    NcsState, OcpStatus,
};
use rollout_mpc::network::{in_gamma, BucketParams, Schedule};
use rollout_mpc::sim::{check_log, run_closed_loop, ClosedLoopLog, DisturbanceModel};
use rollout_mpc::tube::error_containment_trial;
use rollout_mpc::Polytope;

fn report(criterion: u32, ok: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

struct ReferenceRun {
    ctrl: Controller,
    log: ClosedLoopLog,
    elapsed: Duration,
}

/// The bundled double-integrator configuration, synthesized and run once.
fn reference_run() -> &'static ReferenceRun {
    static RUN: OnceLock<ReferenceRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/double_integrator.json")).unwrap();
        let ctrl = cfg.controller().unwrap();
        let mut dist = cfg.disturbance_model(None).unwrap();
        let log = run_closed_loop(&ctrl, &cfg.run, &mut dist).unwrap();
        ReferenceRun { ctrl, log, elapsed: start.elapsed() }
    })
}

const SWEEP_SEEDS: u64 = 20;

struct Sweep {
    logs: Vec<ClosedLoopLog>,
    elapsed: Duration,
}

/// Uniform-disturbance runs for seeds `0..20`, run concurrently.
fn seed_sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let ctrl = di_controller();
        let logs = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..SWEEP_SEEDS)
                .map(|seed| {
                    let ctrl = &ctrl;
                    scope.spawn(move || {
                        let mut dist = DisturbanceModel::uniform(ctrl.model.w_p_set.clone(), seed);
                        run_closed_loop(ctrl, &di_run_config(100), &mut dist).unwrap()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        Sweep { logs, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_01_reference_run() {
    let run = reference_run();
    let ctrl = &run.ctrl;
    let report_ = check_log(&run.log, &ctrl.model, &ctrl.tube, ctrl.hold);
    let bits: Vec<usize> = run.log.records.iter().map(|r| usize::from(r.gamma)).collect();
    let window_min = bits.windows(5).map(|w| w.iter().sum::<usize>()).min().unwrap_or(0);
    let violations = run
        .log
        .records
        .iter()
        .filter(|r| {
            !ctrl.model.x_p_set.contains(&r.x.x_p, 1e-9)
                || !ctrl.model.u_p_set.contains(r.applied_input(), 1e-9)
                || !ctrl.model.u_p_set.contains(&r.x.u_s, 1e-9)
        })
        .count();
    let ok = run.log.len() == 100
        && run.log.all_feasible()
        && violations == 0
        && window_min >= 1
        && report_.passed()
        && run.elapsed <= Duration::from_secs(60);
    report(
        1,
        ok,
        &format!(
            "{} steps, feasible {}, {violations} constraint violations, min transmissions per 5-step window {window_min}, {:.2} s",
            run.log.len(),
            run.log.all_feasible(),
            run.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_tube_convergence() {
    let run = reference_run();
    let omega = &run.ctrl.tube.omega_p;
    let tail = &run.log.records[run.log.len() - 20..];
    let worst = tail.iter().map(|r| omega.max_violation(&r.x.x_p)).fold(f64::NEG_INFINITY, f64::max);
    report(2, worst <= 1e-7, &format!("largest facet violation of x_p in Ω_p over the last 20 steps {worst:.3e} (tol 1e-7)"));
}

#[test]
fn criterion_03_error_containment() {
    let ctrl = di_controller();
    let model = &ctrl.model;
    let omega_vertices = ctrl.tube.omega_p.vertices();
    let w_vertices = model.w_p_set.vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut violations = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let e0 = &omega_vertices[rng.random_range(0..omega_vertices.len())];
        let ws: Vec<DVector<f64>> = (0..5).map(|_| w_vertices[rng.random_range(0..w_vertices.len())].clone()).collect();
        if !error_containment_trial(&ctrl.tube, &model.a, &model.b, e0, &ws, 1e-9) {
            violations += 1;
        }
    }
    report(3, violations == 0, &format!("{violations} of {trials} vertex trajectories left Ω_p × KΩ_p (tol 1e-9)"));
}

#[test]
fn criterion_04_schedule_set_oracle() {
    let start = Instant::now();
    let (mut cases, mut mismatches) = (0usize, 0usize);
    for n in 0..=10 {
        for hold in 1..=6 {
            for s in 0..hold {
                for bits in all_bitstrings(n) {
                    cases += 1;
                    if in_gamma(&Schedule::new(bits.clone()), hold, s) != gamma_definition(&bits, hold, s) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        mismatches == 0 && elapsed <= Duration::from_secs(5),
        &format!("{mismatches} mismatches in {cases} cases, {:.3} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_05_brute_force_equivalence() {
    let ctrl = di_controller();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut matched, mut worst, mut disagreements) = (0, 0.0f64, 0);
    while matched < 50 {
        let (x, xbar, s, k) = random_instance(&mut rng, &ctrl);
        let sol = ctrl.solve_ocp(&x, &xbar, s, k, false).unwrap();
        match (sol.status, brute_force_value(&ctrl, &x, &xbar, s, k, false)) {
            (OcpStatus::Optimal, Some((v, _))) => {
                worst = worst.max((sol.value - v).abs());
                matched += 1;
            }
            (OcpStatus::Infeasible, None) => {}
            _ => {
                disagreements += 1;
                matched += 1;
            }
        }
    }
    report(
        5,
        disagreements == 0 && worst <= 1e-6,
        &format!("50 feasible instances, largest value gap {worst:.3e} (tol 1e-6), {disagreements} status disagreements"),
    );
}

#[test]
fn criterion_06_recursive_feasibility_sweep() {
    let sweep = seed_sweep();
    let steps: usize = sweep.logs.iter().map(ClosedLoopLog::len).sum();
    let feasible: usize = sweep.logs.iter().flat_map(|l| &l.records).filter(|r| r.feasible).count();
    let ok = steps == 100 * SWEEP_SEEDS as usize && feasible == steps && sweep.elapsed <= Duration::from_secs(20 * 60);
    report(
        6,
        ok,
        &format!("{feasible}/{steps} steps feasible over {SWEEP_SEEDS} seeds, {:.2} s", sweep.elapsed.as_secs_f64()),
    );
}

fn random_weight_model(rng: &mut ChaCha8Rng) -> NcsModel {
    let m = rng.random_range(1..=3);
    let ls = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let lg = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let s = &ls * ls.transpose() + DMatrix::identity(m, m) * 1e-6;
    let r = &s + &lg * lg.transpose();
    let lq = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    NcsModel::new(
        DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)),
        DMatrix::from_fn(2, m, |_, _| rng.random_range(-1.0..1.0)),
        Polytope::symmetric_box(&[10.0, 10.0]).unwrap(),
        Polytope::symmetric_box(&vec![10.0; m]).unwrap(),
        Polytope::symmetric_box(&[0.1, 0.1]).unwrap(),
        BucketParams::new(1, 3, 10).unwrap(),
        &lq * lq.transpose() + DMatrix::identity(2, 2) * 1e-3,
        r,
        s,
    )
    .unwrap()
}

#[test]
fn criterion_07_rotated_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = f64::INFINITY;
    let samples = 10_000;
    let mut model = random_weight_model(&mut rng);
    for i in 0..samples {
        if i % 100 == 0 {
            model = random_weight_model(&mut rng);
        }
        let m = model.input_dim();
        let x = NcsState::new(
            DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0)),
            DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0)),
            rng.random_range(0..=10),
        );
        let u = NcsInput::new(DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0)), rng.random_bool(0.5));
        worst = worst.min(rotated_stage_cost(&x, &u, &model));
    }
    report(7, worst >= -1e-12, &format!("smallest rotated stage cost over {samples} samples {worst:.3e} (tol −1e-12)"));
}

#[test]
fn criterion_08_terminal_ingredients() {
    let reference = di_controller();
    let mut passed = usize::from(verify_terminal(&reference.terminal, &reference.model, &reference.tightened));
    let mut worst_residual = terminal_cost_residual(&reference.terminal, &reference.model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let plants = 20;
    for _ in 0..plants {
        let (model, tightened) = random_terminal_plant(&mut rng);
        if let Ok(ti) = synth_terminal(&model, &tightened) {
            if verify_terminal(&ti, &model, &tightened) {
                passed += 1;
            }
            worst_residual = worst_residual.min(terminal_cost_residual(&ti, &model).unwrap());
        }
    }
    report(
        8,
        passed == plants + 1 && worst_residual >= -1e-9,
        &format!(
            "{passed}/{} plants verified, smallest terminal-cost residual eigenvalue {worst_residual:.3e}",
            plants + 1
        ),
    );
}

fn random_polygon(rng: &mut ChaCha8Rng, center: P2, radius: f64) -> Vec<P2> {
    let k = rng.random_range(3..9);
    (0..k)
        .map(|_| {
            let (a, s) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.3..1.0));
            [center[0] + radius * s * a.cos(), center[1] + radius * s * a.sin()]
        })
        .collect()
}

fn polytope(points: &[P2]) -> Polytope {
    let v: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_vec(p.to_vec())).collect();
    Polytope::from_vertices(2, &v).unwrap()
}

#[test]
fn criterion_09_geometry_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let instances = 200;
    let (mut mink, mut pont, mut subset, mut roundtrip) = (0, 0, 0, 0);
    for _ in 0..instances {
        let (center, ra, rb) = ([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], rng.random_range(0.5..3.0), rng.random_range(0.1..1.5));
        let a = random_polygon(&mut rng, center, ra);
        let b = random_polygon(&mut rng, [0.0, 0.0], rb);
        let (pa, pb) = (polytope(&a), polytope(&b));
        let (ha, hb) = (gift_wrap(&a), gift_wrap(&b));

        let sums: Vec<P2> = a.iter().flat_map(|p| b.iter().map(move |q| [p[0] + q[0], p[1] + q[1]])).collect();
        if same_points(&p2_vertices(&pa.minkowski_sum(&pb).unwrap()), &gift_wrap(&sums), 1e-8) {
            mink += 1;
        }

        let diff = pa.pontryagin_diff(&pb).unwrap();
        let planes: Vec<(P2, f64)> = edges(&ha)
            .into_iter()
            .map(|(n, h)| (n, h - hb.iter().map(|v| n[0] * v[0] + n[1] * v[1]).fold(f64::MIN, f64::max)))
            .collect();
        let expected = halfplane_vertices(&planes);
        let agrees = if expected.is_empty() { diff.is_empty() } else { same_points(&p2_vertices(&diff), &expected, 1e-7) };
        if agrees {
            pont += 1;
        }
        if diff.is_empty() || diff.minkowski_sum(&pb).unwrap().is_subset_of(&pa, 1e-8) {
            roundtrip += 1;
        }

        let inside = ha.iter().all(|v| in_polygon(&hb, *v, 1e-9));
        if pa.is_subset_of(&pb, 1e-9) == inside {
            subset += 1;
        }
    }
    report(
        9,
        [mink, pont, subset, roundtrip].iter().all(|&c| c == instances),
        &format!(
            "agreement over {instances} instances: Minkowski {mink}, Pontryagin {pont}, subset {subset}, (P⊖Q)⊕Q ⊆ P {roundtrip}"
        ),
    );
}

#[test]
fn criterion_10_token_accounting() {
    let run = reference_run();
    let sweep = seed_sweep();
    let bucket = run.ctrl.model.bucket;
    let logs: Vec<&ClosedLoopLog> = std::iter::once(&run.log).chain(&sweep.logs).collect();
    let failures: Vec<String> = logs.iter().filter_map(|log| audit_tokens(log, &bucket).err()).collect();
    let max_spent = logs
        .iter()
        .map(|log| bucket.c as usize * log.records.iter().filter(|r| r.gamma).count())
        .max()
        .unwrap();
    report(
        10,
        failures.is_empty(),
        &format!(
            "{} logs audited, {} failures, most tokens spent {max_spent} of budget {}{}",
            logs.len(),
            failures.len(),
            10 + 100 * bucket.g,
            failures.first().map(|f| format!(" ({f})")).unwrap_or_default()
        ),
    );
}
