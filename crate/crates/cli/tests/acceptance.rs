//! End-to-end acceptance suite. Each test prints a single pass/fail line
//! (visible with `--nocapture`) and exercises one contract of the
//! toolkit against an independent oracle or a stored calibration fixture.

use pathorder_core::measures::{stochastic_leq, w2, EmpiricalMeasure};
use pathorder_core::orderlab::{
    drift_gap_probe, necessity_from_spec, psi, run_preservation_trial, TrialReport,
};
use pathorder_core::rng::CounterRng;
use pathorder_core::scenario::{build_spec, load_scenario, ScenarioSpec};
use pathorder_core::segments::PathSegment;
use pathorder_core::simulate::run;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> String {
    root().join("fixtures").join(name).to_string_lossy().into_owned()
}

fn report(name: &str, f: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(e) => {
            println!("acceptance {name}: FAIL");
            resume_unwind(e);
        }
    }
}

// ---------------------------------------------------------------------
// 1. Transport and dominance against brute force.
// ---------------------------------------------------------------------

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let n = mu.len();
    let mut best = f64::INFINITY;
    for p in permutations(n) {
        let total: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let d = mu.atoms()[i].sup_dist(&nu.atoms()[j]).unwrap();
                d * d
            })
            .sum();
        best = best.min(total);
    }
    (best / n as f64).sqrt()
}

fn brute_dominance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> bool {
    let n = mu.len();
    permutations(n).into_iter().any(|p| {
        p.iter()
            .enumerate()
            .all(|(i, &j)| mu.atoms()[i].leq(&nu.atoms()[j]).unwrap())
    })
}

#[test]
fn transport_oracles() {
    report("transport-oracles", || {
        let rng = CounterRng::new(7).child(0xACC1);
        for inst in 0..200u64 {
            let irng = rng.child(inst);
            let n = 2 + irng.index(0, 6); // 2..=7 atoms
            let cloud = |tag: u64| -> EmpiricalMeasure {
                let crng = irng.child(tag);
                let atoms = (0..n)
                    .map(|k| {
                        let data: Vec<f64> = (0..3)
                            .map(|c| crng.child(k as u64).uniform_in(c, -2.0, 2.0))
                            .collect();
                        PathSegment::new(1, data).unwrap()
                    })
                    .collect();
                EmpiricalMeasure::new(atoms).unwrap()
            };
            let mu = cloud(1);
            // Mix of arbitrary clouds and deliberately ordered ones so
            // both dominance outcomes appear.
            let nu = if inst % 3 == 0 {
                let atoms = mu
                    .atoms()
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let rows: Vec<Vec<f64>> = a
                            .to_rows()
                            .iter()
                            .map(|r| {
                                r.iter()
                                    .map(|&v| v + irng.child(9).uniform_in(k as u64, 0.0, 1.0))
                                    .collect()
                            })
                            .collect();
                        PathSegment::from_rows(&rows).unwrap()
                    })
                    .collect();
                EmpiricalMeasure::new(atoms).unwrap()
            } else {
                cloud(2)
            };
            let fast = w2(&mu, &nu).unwrap();
            let slow = brute_w2(&mu, &nu);
            assert!((fast - slow).abs() < 1e-12, "instance {inst}: {fast} vs {slow}");
            let witness = stochastic_leq(&mu, &nu).unwrap();
            assert_eq!(witness.holds, brute_dominance(&mu, &nu), "instance {inst}");
        }
    });
}

// ---------------------------------------------------------------------
// 2. Smoothed positive part against a quadrature oracle.
// ---------------------------------------------------------------------

fn psi_dd(n: f64, s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 / n {
        0.0
    } else if s <= 0.5 / n {
        4.0 * n * n * s
    } else {
        -4.0 * n * n * (s - 1.0 / n)
    }
}

/// Simpson integration split at the curvature breakpoints; exact for the
/// piecewise-quadratic first derivative up to round-off.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        acc += f(a + k as f64 * h) * if k % 2 == 0 { 2.0 } else { 4.0 };
    }
    acc * h / 3.0
}

fn quad_psi(n: f64, s: f64) -> (f64, f64) {
    let cuts = [0.0, 0.5 / n, 1.0 / n];
    let d1 = |x: f64| -> f64 {
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1].min(x));
            if hi > lo {
                acc += simpson(&|u| psi_dd(n, u), lo, hi, 64);
            }
        }
        acc
    };
    let mut val = 0.0;
    let mut marks: Vec<f64> = cuts.iter().copied().filter(|&c| c < s).collect();
    marks.push(s.max(0.0));
    for w in marks.windows(2) {
        if w[1] > w[0] {
            val += simpson(&|u| d1(u), w[0], w[1], 64);
        }
    }
    (val, d1(s.max(0.0)))
}

#[test]
fn psi_suite() {
    report("psi-suite", || {
        let rng = CounterRng::new(13).child(0xF1);
        for n in [1u32, 2, 10, 100] {
            let nf = n as f64;
            // Exact junction identities.
            let (v, _, _) = psi(n, 1.0 / nf);
            assert!((v - 0.5 / nf).abs() < 1e-12);
            for s in [1.0 / nf, 0.3 + 1.0 / nf, 2.0] {
                assert!((psi(n, s).0 - (s - 0.5 / nf)).abs() < 1e-12);
            }
            for k in 0..10_000u64 {
                let s = rng.child(n as u64).uniform_in(k, -2.0, 2.0);
                let (v, d1, d2) = psi(n, s);
                let sp = s.max(0.0);
                assert!(v >= 0.0 && v <= sp + 1e-15);
                assert!(sp - v <= 0.5 / nf + 1e-15);
                assert!((0.0..=1.0).contains(&d1));
                assert!(psi(n + 1, s).0 >= v - 1e-15, "monotone in n at s={s}");
                if s <= 0.0 || s >= 1.0 / nf {
                    assert_eq!(d2, 0.0);
                }
                if k < 200 {
                    let (qv, qd1) = quad_psi(nf, s);
                    assert!((v - qv).abs() < 1e-8, "n={n} s={s}: {v} vs {qv}");
                    assert!((d1 - qd1).abs() < 1e-8);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------
// 3. Deterministic convergence of the Euler scheme.
// ---------------------------------------------------------------------

fn deterministic_spec(b: &str, dt: f64, t_end: f64, r0: f64, n: usize) -> ScenarioSpec {
    let text = format!(
        r#"
[grid]
t0 = 0.0
T = {t_end}
dt = {dt}
r0 = {r0}

[dims]
d = 1
m = 1

[models]
b = ["{b}"]
bbar = ["{b}"]
sigma = [["0"]]
sigmabar = [["0"]]

[initial]
type = "builtin"
name = "constant_pair"
left = [1.0]
right = [1.0]

[sim]
N = {n}
seed = 1
replications = 1
"#
    );
    build_spec(toml::from_str(&text).unwrap(), "inline").unwrap()
}

#[test]
fn deterministic_convergence() {
    report("deterministic-convergence", || {
        // Linear decay: endpoint error vs e^{-1} halves with dt.
        let mut errors = Vec::new();
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let spec = deterministic_spec("-x[1](0)", dt, 1.0, dt, 1);
            let cloud =
                run(&spec.grid, (&spec.models.0, &spec.models.1), &spec.initial, &spec.sim)
                    .unwrap();
            let last = spec.grid.total_cols() - 1;
            errors.push((cloud.x[0].value(0, last) - (-1.0f64).exp()).abs());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
        }

        // Delay equation with unit constant history: x(t) = 1 - t on the
        // first delay interval by the method of steps.
        let dt = 1e-3;
        let spec = deterministic_spec("-x[1](-0.25)", dt, 0.25, 0.25, 1);
        let cloud =
            run(&spec.grid, (&spec.models.0, &spec.models.1), &spec.initial, &spec.sim).unwrap();
        for step in 0..=spec.grid.steps {
            let t = step as f64 * dt;
            let got = cloud.x[0].value(0, spec.grid.lag_steps + step);
            assert!((got - (1.0 - t)).abs() <= 5.0 * dt, "t={t}: {got}");
        }

        // Mean-field drift: the cloud mean follows dm/dt = m.
        let spec = deterministic_spec("E[x[1](0)]", 1e-3, 1.0, 1e-3, 8);
        let cloud =
            run(&spec.grid, (&spec.models.0, &spec.models.1), &spec.initial, &spec.sim).unwrap();
        let last = spec.grid.total_cols() - 1;
        let mean: f64 =
            cloud.x.iter().map(|t| t.value(0, last)).sum::<f64>() / cloud.n_particles() as f64;
        assert!((mean - 1.0f64.exp()).abs() < 5e-3, "mean {mean}");
    });
}

// ---------------------------------------------------------------------
// 4 & 5. Conforming and violating scenarios.
// ---------------------------------------------------------------------

fn s_plus_trial() -> &'static TrialReport {
    static CELL: OnceLock<TrialReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = load_scenario(&fixture("s_plus.toml")).unwrap();
        run_preservation_trial(&spec).unwrap()
    })
}

#[test]
fn conforming_scenario_preserves_order() {
    report("conforming-scenario", || {
        let calib: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(fixture("s_plus_p95.json")).unwrap(),
        )
        .unwrap();
        let threshold = calib["p95_threshold"].as_f64().unwrap();
        let coarse = s_plus_trial();
        assert!(coarse.p95_stat <= threshold, "p95 {} vs {threshold}", coarse.p95_stat);

        let mut file = load_scenario(&fixture("s_plus.toml")).unwrap().file;
        file.grid.dt /= 4.0;
        let fine_spec = build_spec(file, "s_plus.toml").unwrap();
        let fine = run_preservation_trial(&fine_spec).unwrap();
        assert!(
            fine.p95_stat <= 0.7 * coarse.p95_stat,
            "refinement: {} vs {}",
            fine.p95_stat,
            coarse.p95_stat
        );
    });
}

#[test]
fn violating_scenario_breaks_order() {
    report("violating-scenario", || {
        let spec = load_scenario(&fixture("s_minus.toml")).unwrap();
        let trial = run_preservation_trial(&spec).unwrap();
        assert!(trial.violating_fraction >= 0.5, "{}", trial.violating_fraction);
        assert!(
            trial.median_stat >= 10.0 * s_plus_trial().median_stat,
            "{} vs {}",
            trial.median_stat,
            s_plus_trial().median_stat
        );

        // The randomized checker flags the broken diffusion structure and
        // passes the conforming pair.
        use pathorder_core::conditions::{check_diffusion_structure, ViolationKind};
        let viols = check_diffusion_structure(
            &spec.models.0.diffusion,
            &spec.models.1.diffusion,
            &spec.grid,
            &spec.probes,
        )
        .unwrap();
        assert!(viols.iter().any(|v| v.kind == ViolationKind::SigmaStructure));

        let good = load_scenario(&fixture("s_plus.toml")).unwrap();
        use pathorder_core::conditions::check_drift_order;
        let mut clean = check_diffusion_structure(
            &good.models.0.diffusion,
            &good.models.1.diffusion,
            &good.grid,
            &good.probes,
        )
        .unwrap();
        clean.extend(
            check_drift_order(&good.models.0.drift, &good.models.1.drift, &good.grid, &good.probes)
                .unwrap(),
        );
        assert!(clean.is_empty(), "{} spurious violations", clean.len());
    });
}

// ---------------------------------------------------------------------
// 6. Necessity drift probe.
// ---------------------------------------------------------------------

#[test]
fn drift_gap_unit_offset() {
    report("drift-gap", || {
        let spec = load_scenario(&fixture("necessity.toml")).unwrap();
        let ns = necessity_from_spec(&spec).unwrap();
        let rep = drift_gap_probe(&ns, &spec.necessity.as_ref().unwrap().s_steps).unwrap();
        assert!(rep.tagged >= 9_000, "only {} tagged", rep.tagged);
        assert!((rep.direct_gap - 1.0).abs() < 1e-12);
        assert_eq!(rep.points.len(), 3);
        for p in &rep.points {
            // The 1e-9 cushion covers round-off when the Monte-Carlo
            // variance degenerates to machine precision.
            assert!(
                (p.estimate - 1.0).abs() <= 3.0 * p.std_error + 1e-9,
                "s={}: {} +- {}",
                p.s,
                p.estimate,
                p.std_error
            );
        }
    });
}

// ---------------------------------------------------------------------
// 7. Reproducibility of the CLI.
// ---------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pathorder"))
        .current_dir(root())
        .args(args)
        .output()
        .unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pathorder-acc-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn reproducibility() {
    report("reproducibility", || {
        let d1 = scratch("a");
        let d2 = scratch("b");
        for d in [&d1, &d2] {
            let out = run_cli(&[
                "order-test",
                "fixtures/smoke.toml",
                "--seed",
                "42",
                "--out",
                d.to_str().unwrap(),
            ]);
            assert!(out.status.code() == Some(0) || out.status.code() == Some(2));
        }
        for name in ["order_test.json", "psi_trace.csv"] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        // Thread count changes nothing numeric.
        let t1 = run_cli(&["--threads", "1", "order-test", "fixtures/smoke.toml"]);
        let t4 = run_cli(&["--threads", "4", "order-test", "fixtures/smoke.toml"]);
        assert_eq!(t1.stdout, t4.stdout);
        assert_eq!(t1.status.code(), t4.status.code());

        let c1 = run_cli(&["--threads", "1", "check-conditions", "fixtures/smoke.toml"]);
        let c2 = run_cli(&["--threads", "3", "check-conditions", "fixtures/smoke.toml"]);
        assert_eq!(c1.stdout, c2.stdout);
    });
}

// ---------------------------------------------------------------------
// 8. Shared-noise exactness.
// ---------------------------------------------------------------------

#[test]
fn shared_noise_exactness() {
    report("shared-noise", || {
        let mut file = load_scenario(&fixture("smoke.toml")).unwrap().file;
        // Identical pairs: collapse the initial gap to zero.
        if let pathorder_core::scenario::InitialSection::Builtin(
            pathorder_core::scenario::BuiltinInitial::OrderedUniformConstants {
                gap_low,
                gap_high,
                ..
            },
        ) = &mut file.initial
        {
            *gap_low = 0.0;
            *gap_high = 0.0;
        } else {
            panic!("smoke fixture changed shape");
        }
        let spec = build_spec(file, "smoke.toml").unwrap();
        let cloud =
            run(&spec.grid, (&spec.models.0, &spec.models.1), &spec.initial, &spec.sim).unwrap();
        for (tx, txb) in cloud.x.iter().zip(&cloud.x_bar) {
            for col in 0..spec.grid.total_cols() {
                for i in 0..spec.dim {
                    assert_eq!(
                        tx.value(i, col).to_bits(),
                        txb.value(i, col).to_bits(),
                        "bit mismatch at coord {i}, column {col}"
                    );
                }
            }
        }
    });
}
