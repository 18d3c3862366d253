//! Built-in suite of closed-form examples, one line per check.

use std::f64::consts::TAU;
use std::io::Write;

use rotvec::algebra::{ones_exp, recover_component, sum_entries, Involution, Matrix};
use rotvec::field::{jacobian_check, make_model, periodicity_check, shipped_cases, FieldBounds, FnField, ModelSpec, PeriodicField};
use rotvec::flow::{boundedness_test, integrate, rotation_estimate, Trajectory, WindowOptions};
use rotvec::leader::{leader_check, leader_distance, AffineCurve, ClosedFormCurve, LeaderOptions};
use rotvec::psi::{coefficient_a, psi_ode, psi_quadrature, residual, QuadratureSpec};
use rotvec::riccati::{boundedness_verdict, hypothesis_check, linearize, riccati_simulate, HypothesisOptions, RiccatiSystem};
use rotvec::solver::{gamma_map, solve_rotation_formula, theta_kernels_on, NormalizedField, SolveOptions};
use rotvec::tongue::{perturbation_criterion, tongue_scan, Axis, Perturbation, TongueFamily, TongueOptions};

use crate::config::Settings;
use crate::{execute, CliError, CliResult};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

fn model(spec: ModelSpec) -> Result<rotvec::field::Model, String> {
    make_model(spec).map_err(|e| e.to_string())
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn constant(omega: &[f64]) -> Result<rotvec::field::Model, String> {
    model(ModelSpec::Constant { omega: omega.to_vec() })
}

fn entry_sums() -> Check {
    let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).map_err(e)?;
    ensure(sum_entries(&m) == 10.0, || "sigma([[1,2],[3,4]]) != 10".into())?;
    ensure(sum_entries(&Matrix::zeros(3, 3)) == 0.0, || "sigma(0) != 0".into())?;
    ensure(sum_entries(&Matrix::from_diagonal(&[-1.0, 1.0])) == 0.0, || {
        "sigma(diag(-1,1)) != 0".into()
    })
}

fn involutions() -> Check {
    for q in 1..=4 {
        let v: Vec<f64> = (0..q).map(|k| 1.5 * k as f64 - 2.0).collect();
        for i in 0..=q {
            let inv = Involution::new(i, q).map_err(e)?;
            ensure(inv.apply(&inv.apply(&v)) == v, || {
                format!("I_{i},{q} applied twice moved the vector")
            })?;
        }
    }
    Ok(())
}

fn components() -> Check {
    let y = [3.0, 5.0];
    ensure(recover_component(&y, 1).map_err(e)? == 3.0, || "y_1 != 3".into())?;
    ensure(recover_component(&y, 2).map_err(e)? == 5.0, || "y_2 != 5".into())
}

fn ones_exp_at_zero() -> Check {
    for q in 1..=5 {
        ensure(ones_exp(0.0, q).map_err(e)?.max_abs_diff(&Matrix::identity(q)) == 0.0, || {
            format!("exp(0 J_{q}) != I")
        })?;
    }
    Ok(())
}

fn field_values() -> Check {
    let c = constant(&[0.5, 2.0])?;
    let mut out = [0.0; 2];
    c.eval(&[0.3, 0.9], &mut out);
    ensure(out == [0.5, 2.0], || format!("constant field gave {out:?}"))?;
    let circle = model(ModelSpec::Circle { c: 2.0, eps: 1.0 })?;
    let mut v = [0.0];
    circle.eval(&[0.25], &mut v);
    ensure(close(v[0], 3.0, 1e-14), || format!("circle f(0.25) = {}", v[0]))?;
    let mut jac = Matrix::zeros(1, 1);
    circle.jacobian(&[0.25], &mut jac);
    ensure(close(jac[(0, 0)], 0.0, 1e-12), || format!("circle df(0.25) = {}", jac[(0, 0)]))?;
    circle.jacobian(&[0.0], &mut jac);
    ensure(close(jac[(0, 0)], TAU, 1e-12), || format!("circle df(0) = {}", jac[(0, 0)]))
}

fn periodicity() -> Check {
    for case in shipped_cases() {
        let r = periodicity_check(&model(case.spec)?, 64, 1).map_err(e)?;
        ensure(r.passed, || format!("{} deviation {}", case.label, r.max_deviation))?;
    }
    let bounds = FieldBounds {
        sup_f: 1.0,
        sup_df: 1.0,
        sup_d2f: 0.0,
    };
    let linear = FnField::new(1, "linear", bounds, |x: &[f64], out: &mut [f64]| out[0] = x[0]);
    let r = periodicity_check(&linear, 8, 1).map_err(e)?;
    ensure(!r.passed && close(r.max_deviation, 1.0, 1e-12), || {
        format!("f(x) = x deviation {}", r.max_deviation)
    })?;
    let r = periodicity_check(&constant(&[0.5, 2.0])?, 8, 1).map_err(e)?;
    ensure(r.max_deviation == 0.0, || "constant field not exactly periodic".into())?;
    let r = jacobian_check(&constant(&[0.5, 2.0])?, 8, 1).map_err(e)?;
    ensure(r.max_deviation == 0.0, || "constant field Jacobian not zero".into())
}

fn flow() -> Check {
    let f = constant(&[0.5, 2.0])?;
    let tol = 1e-10;
    let traj = integrate(&f, &[0.0, 0.0], (0.0, 4.0), tol).map_err(e)?;
    let end = traj.interpolate(4.0).map_err(e)?;
    ensure(all_close(&end, &[2.0, 8.0], 1e-9), || format!("x(4) = {end:?}"))?;
    let circle = model(ModelSpec::Circle { c: 2.0, eps: 0.5 })?;
    let fwd = integrate(&circle, &[0.1], (0.0, 10.0), tol).map_err(e)?;
    let x10 = fwd.interpolate(10.0).map_err(e)?;
    let back = integrate(&circle, &x10, (-10.0, 0.0), tol).map_err(e)?;
    let x0 = back.interpolate(-10.0).map_err(e)?;
    ensure(close(x0[0], 0.1, 10.0 * tol * (1.0 + x10[0].abs())), || {
        format!("round trip ended at {}", x0[0])
    })?;
    let long = integrate(&f, &[0.0, 0.0], (0.0, 1000.0), tol).map_err(e)?;
    let lambda = rotation_estimate(&long).map_err(e)?.lambda;
    ensure(all_close(&lambda, &[0.5, 2.0], 1e-9), || format!("lambda = {lambda:?}"))
}

fn boundedness() -> Check {
    let times: Vec<f64> = (0..=20_000).map(|k| k as f64 * 0.05).collect();
    let build = |g: &dyn Fn(f64) -> f64| Trajectory::from_samples(times.clone(), times.iter().map(|t| vec![g(*t)]).collect()).map_err(e);
    let opts = WindowOptions::default();
    let exact = boundedness_test(&build(&|t| 0.5 * t)?, &[0.5], &opts).map_err(e)?;
    ensure(exact.passed && exact.d_estimate < 1e-12, || {
        format!("x = lambda t: D = {}", exact.d_estimate)
    })?;
    let wobble = boundedness_test(&build(&|t| 0.5 * t + t.sin())?, &[0.5], &opts).map_err(e)?;
    ensure(wobble.passed && close(wobble.d_estimate, 1.0, 1e-2), || {
        format!("x = lambda t + sin t: D = {}", wobble.d_estimate)
    })?;
    let wrong = boundedness_test(&build(&|t| 0.6 * t)?, &[0.5], &opts).map_err(e)?;
    ensure(!wrong.passed, || "wrong slope passed".into())
}

fn psi_constant() -> Check {
    let omega = [1.0, 2.0];
    let f = constant(&omega)?;
    let x0 = [0.0, 0.0];
    for i in 0..=2 {
        for s in [0.0, 1.3, -7.0] {
            ensure(coefficient_a(&f, &x0, &omega, i, s).map_err(e)? == 0.0, || {
                format!("A_{i} != 0 at rho = omega")
            })?;
        }
    }
    let rho = [2.0, 2.0];
    ensure(coefficient_a(&f, &x0, &rho, 0, 0.7).map_err(e)? == 1.0, || "A_0 != 1".into())?;
    ensure(coefficient_a(&f, &x0, &rho, 1, 0.7).map_err(e)? == -1.0, || "A_1 != -1".into())?;
    let grid = QuadratureSpec::for_direction(&rho);
    let times = [0.0, 1.0, 5.0, 20.0];
    for (i, slope) in [(0, 1.0), (1, -1.0), (2, 1.0)] {
        for &t in &times[1..] {
            let q = psi_quadrature(&f, &x0, &rho, i, t, grid).map_err(e)?;
            ensure(close(q, slope * t, 1e-12), || format!("Psi_{i}({t}) = {q}"))?;
        }
        let ode = psi_ode(&f, &x0, &rho, i, &times).map_err(e)?;
        for (t, v) in times.iter().zip(&ode.values) {
            ensure(close(*v, slope * t, 1e-9), || format!("psi_{i}({t}) = {v} by ODE"))?;
        }
        let zero = psi_quadrature(&f, &x0, &omega, i, 20.0, grid).map_err(e)?;
        ensure(zero == 0.0, || format!("Psi_{i} != 0 at rho = omega"))?;
    }
    Ok(())
}

fn residuals() -> Check {
    let omega = [0.5, 2.0];
    let f = constant(&omega)?;
    let r = residual(&f, &[0.0, 0.0], &omega, 200.0, 16).map_err(e)?;
    ensure(r.values.iter().flatten().all(|v| *v == 0.0), || "R_i != 0 at rho = omega".into())?;
    let rho = [1.0, 1.5];
    let r = residual(&f, &[0.0, 0.0], &rho, 200.0, 16).map_err(e)?;
    for row in &r.values {
        ensure(close(row[0], 1.0, 1e-11) && close(row[1], -1.0, 1e-11), || {
            format!("R = {row:?}, expected (1, -1)")
        })?;
    }
    Ok(())
}

fn kernels_and_gamma() -> Check {
    let omega = [1.0, 2.0];
    let f = constant(&omega)?;
    let z = [3.0, 4.0];
    for i in 1..=2 {
        let th = theta_kernels_on(&f, &z, 10.0, 2.5, i, &[-1, 1], 0.01).map_err(e)?;
        ensure(th.theta0 == 1.0 && th.theta_i == 1.0 && th.theta_under == 0.0, || {
            format!("theta for i = {i}: {th:?}")
        })?;
    }
    let g = NormalizedField::new(&f, &[0.0, 0.0], 3.0, 0.5, 0.5).map_err(e)?;
    let expected = [3.5, 4.0];
    for k in [25.0, 100.0] {
        let state = gamma_map(&g, &[3.2, 3.9], k, 2.0).map_err(e)?;
        ensure(all_close(&state.image, &expected, 1e-12), || {
            format!("Gamma at k = {k}: {:?}", state.image)
        })?;
    }
    let sol = solve_rotation_formula(&f, &[0.0, 0.0], &SolveOptions::default()).map_err(e)?;
    ensure(all_close(&sol.rho, &omega, 1e-9), || format!("rho = {:?}", sol.rho))?;
    let first = &sol.fixed_point.steps[0];
    ensure(first.residual <= 1e-12, || format!("fixed-point residual {}", first.residual))
}

fn leaders() -> Check {
    let omega = [1.0, 2.0];
    let f = constant(&omega)?;
    let x0 = [0.1, 0.2];
    let opts = LeaderOptions {
        horizon: 1000.0,
        ..LeaderOptions::default()
    };
    let exact = AffineCurve::new(&omega, &x0).map_err(e)?;
    let r = leader_check(&f, &exact, &opts).map_err(e)?;
    ensure(r.passed, || "exact trajectory is not a leader".into())?;
    ensure(r.psi_values.iter().flatten().all(|v| *v == 0.0), || {
        "psi not identically zero".into()
    })?;
    let d = leader_distance(&f, &exact, &x0, 1000.0, 1e-10, &WindowOptions::default()).map_err(e)?;
    ensure(d.passed && d.distance < 1e-8, || format!("exact distance {}", d.distance))?;

    let doubled = AffineCurve::new(&[2.0, 4.0], &[0.0, 0.0]).map_err(e)?;
    let r = leader_check(&f, &doubled, &opts).map_err(e)?;
    ensure(!r.passed && r.bullet3.iter().all(|b| !b.passed), || {
        "mu = 2 omega t passed condition 3".into()
    })?;

    let wobble = ClosedFormCurve::new(
        2,
        move |t: f64, out: &mut [f64]| {
            for j in 0..2 {
                out[j] = omega[j] * t + x0[j] + 0.3 * t.sin();
            }
        },
        move |t: f64, out: &mut [f64]| {
            for j in 0..2 {
                out[j] = omega[j] + 0.3 * t.cos();
            }
        },
    );
    let d = leader_distance(&f, &wobble, &x0, 1000.0, 1e-10, &WindowOptions::default()).map_err(e)?;
    ensure(d.passed && close(d.distance, 0.3, 1e-3), || {
        format!("bounded offset distance {}", d.distance)
    })
}

fn scalar_b(b: impl Fn(f64) -> f64 + Send + Sync + 'static, gamma: f64) -> Result<RiccatiSystem<'static>, String> {
    RiccatiSystem::new(
        1,
        gamma,
        Box::new(|_, out| out.fill(0.0)),
        Box::new(move |t, m| m[(0, 0)] = b(t)),
        Box::new(|_, h| h.iter_mut().for_each(|m| m.fill(0.0))),
    )
    .map_err(e)
}

fn riccati() -> Check {
    let zero = RiccatiSystem::zero(2);
    let traj = riccati_simulate(&zero, (-50.0, 50.0), 1e-10).map_err(e)?;
    ensure(traj.states().all(|y| y.iter().all(|v| *v == 0.0)), || "zero system moved".into())?;
    let drift = RiccatiSystem::constant(vec![0.3], Matrix::zeros(1, 1), vec![Matrix::zeros(1, 1)], 0.0).map_err(e)?;
    let traj = riccati_simulate(&drift, (-10.0, 10.0), 1e-10).map_err(e)?;
    for t in [-10.0, -3.0, 4.0, 10.0] {
        let y = traj.interpolate(t).map_err(e)?[0];
        ensure(close(y, 0.3 * t, 1e-9), || format!("y({t}) = {y}, expected {}", 0.3 * t))?;
    }
    let opts = HypothesisOptions::default();
    let h = hypothesis_check(&zero, 200.0, &opts).map_err(e)?;
    ensure(h.h1_passed, || "B = 0 failed H1".into())?;
    let h = hypothesis_check(&scalar_b(|t| 0.1 * (TAU * t).sin(), 0.1)?, 200.0, &opts).map_err(e)?;
    ensure(h.h1_passed, || "B = 0.1 sin(2 pi t) failed H1".into())?;
    let h = hypothesis_check(&scalar_b(|_| 0.1, 0.1)?, 200.0, &opts).map_err(e)?;
    ensure(!h.h1_passed, || "B = 0.1 passed H1".into())?;
    let v = boundedness_verdict(&zero, 200.0, 1e-10, &WindowOptions::default()).map_err(e)?;
    ensure(v.passed && v.sup == 0.0, || format!("zero system sup {}", v.sup))
}

fn linearization() -> Check {
    let omega = [1.0, 2.0];
    let f = constant(&omega)?;
    let x0 = [0.25, 0.5];
    let mu = AffineCurve::new(&omega, &x0).map_err(e)?;
    let lin = linearize(&f, &mu, &x0, 0.1).map_err(e)?;
    let mut a = vec![0.0; 2];
    let mut b = Matrix::zeros(2, 2);
    for s in [-30.0, 0.0, 2.0, 17.5] {
        lin.system.eval_a(s, &mut a);
        lin.system.eval_b(s, &mut b);
        ensure(a.iter().all(|v| *v == 0.0) && b.max_norm() == 0.0, || {
            format!("A or B nonzero at s = {s}")
        })?;
    }
    Ok(())
}

fn perturbations() -> Check {
    let omega = [1.0, 2.0];
    let f = constant(&omega)?;
    let x0 = [0.0, 0.0];
    let opts = WindowOptions::default();
    let v = perturbation_criterion(&f, &x0, &omega, &Perturbation::zero(2), 1000.0, &opts).map_err(e)?;
    ensure(v.locked, || "zeta = 0 not locked".into())?;
    let v = perturbation_criterion(&f, &x0, &omega, &Perturbation::constant(vec![0.1, 0.0]), 1000.0, &opts).map_err(e)?;
    ensure(!v.locked, || "constant zeta locked on a constant field".into())
}

fn tongue_row() -> Check {
    let omegas = vec![-0.5, -0.25, 0.0, 0.25, 0.5];
    let family = TongueFamily {
        template: ModelSpec::Circle { c: 0.0, eps: 0.0 },
        x0: vec![0.0],
        axis1: Axis::new("c", omegas.clone()),
        axis2: Axis::new("eps", vec![0.0]).scaled(-1.0),
    };
    let opts = TongueOptions {
        horizon: 500.0,
        targets: Some(vec![0.0]),
        ..TongueOptions::default()
    };
    let grid = tongue_scan(&family, &opts).map_err(e)?;
    for (i, om) in omegas.iter().enumerate() {
        let cell = grid.cell(i, 0);
        ensure(close(cell.rho[0], *om, 1e-9), || format!("rho = {:?} at Omega = {om}", cell.rho))?;
        ensure(cell.locked_to.is_some() == (*om == 0.0), || {
            format!("locking wrong at Omega = {om}")
        })?;
    }
    Ok(())
}

fn run_args(pairs: &[(&str, &str)], name: &str) -> (CliResult<()>, String) {
    let mut buf = Vec::new();
    let r = execute(name, Settings::from_pairs(pairs), &mut buf);
    (r, String::from_utf8_lossy(&buf).into_owned())
}

fn cli_examples() -> Check {
    let (r, text) = run_args(&[("model", "constant"), ("omega", "0.5,2")], "solve");
    r.map_err(e)?;
    ensure(text.contains("rho = (0.5, 2)"), || format!("solve printed {text:?}"))?;
    let (r, _) = run_args(&[("model", "circle"), ("c", "2"), ("eps", "0.9"), ("gamma", "0.5")], "solve");
    match r {
        Err(CliError::Compute(msg)) if msg.contains("smallness") => Ok(()),
        other => Err(format!("expected a smallness failure, got {other:?}")),
    }
}

type NamedCheck = (&'static str, fn() -> Check);

const CHECKS: &[NamedCheck] = &[
    ("entry sums", entry_sums),
    ("involutions square to the identity", involutions),
    ("component recovery", components),
    ("exp(0 J) = I", ones_exp_at_zero),
    ("field values and derivatives", field_values),
    ("periodicity and Jacobian checks", periodicity),
    ("flow integration and rotation estimate", flow),
    ("boundedness test", boundedness),
    ("psi on constant fields", psi_constant),
    ("formula residual on constant fields", residuals),
    ("theta kernels, Gamma map and solve on constant fields", kernels_and_gamma),
    ("leader trajectories on constant fields", leaders),
    ("Riccati examples", riccati),
    ("linearization along the exact solution", linearization),
    ("perturbation criterion on constant fields", perturbations),
    ("tongue scan at zero forcing", tongue_row),
    ("command-line examples", cli_examples),
];

pub fn run(out: &mut dyn Write) -> CliResult<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => writeln!(out, "ok    {name}")?,
            Err(msg) => {
                failed += 1;
                writeln!(out, "FAIL  {name}: {msg}")?;
            }
        }
    }
    writeln!(out, "{} of {} checks passed", CHECKS.len() - failed, CHECKS.len())?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Compute(format!("{failed} selftest checks failed")))
    }
}
