use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rotvec::algebra::Matrix;
use rotvec::export::fmt_short;
use rotvec::field::make_model;
use rotvec::flow::{boundedness_test, integrate, rotation_estimate, WindowOptions, MIN_HORIZON};
use rotvec::leader::{leader_check, leader_distance, AffineCurve, LeaderOptions};
use rotvec::psi::{psi_all_quadrature, psi_ode_line, PsiLine, QuadratureSpec, PSI_ODE_TOL};
use rotvec::riccati::{boundedness_verdict, hypothesis_check, random_trig_system, HypothesisOptions, RiccatiSystem};
use rotvec::solver::{solve_rotation_formula, SolveOptions};
use rotvec::tongue::{tongue_scan, TongueFamily, TongueOptions};

use crate::config::Settings;
use crate::{CliError, CliResult};

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_short(*x)).collect();
    format!("({})", parts.join(", "))
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn create(path: &str) -> CliResult<BufWriter<File>> {
    File::create(Path::new(path))
        .map(BufWriter::new)
        .map_err(|e| CliError::Compute(format!("cannot create {path}: {e}")))
}

fn write_json<T: serde::Serialize>(path: &str, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Compute(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn horizon_at_least(key: &str, horizon: f64, min: f64) -> CliResult<()> {
    if horizon < min {
        return Err(CliError::Config(format!("`{key}` must be at least {min}")));
    }
    Ok(())
}

pub fn simulate(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let m = s.model()?;
    let t0 = s.f64_or("t0", 0.0)?;
    let t1 = s.f64_or("t1", 100.0)?;
    let tol = s.positive_or("tol", 1e-10)?;
    let output = s.string("output");
    s.finish()?;
    let f = make_model(m.spec)?;
    let traj = integrate(&f, &m.x0, (t0.min(0.0), t1.max(0.0)), tol)?;
    let end = traj.interpolate(t1)?;
    writeln!(out, "model = {}", f.spec().name())?;
    writeln!(out, "x({}) = {}", fmt_short(t1), fmt_vec(&end))?;
    writeln!(out, "steps = {}", traj.len())?;
    if let Some(path) = output {
        let w = create(&path)?;
        traj.write_csv(w)?;
        writeln!(out, "trajectory written to {path}")?;
    }
    Ok(())
}

pub fn rotvec(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let m = s.model()?;
    let horizon = s.positive_or("horizon", 1e4)?;
    let tol = s.positive_or("tol", 1e-10)?;
    let output = s.string("output");
    let json = s.string("json");
    s.finish()?;
    horizon_at_least("horizon", horizon, MIN_HORIZON)?;
    let f = make_model(m.spec)?;
    let traj = integrate(&f, &m.x0, (0.0, horizon), tol)?;
    let est = rotation_estimate(&traj)?;
    let bounded = boundedness_test(&traj, &est.lambda, &WindowOptions::default())?;
    writeln!(out, "rho = {}", fmt_vec(&est.lambda))?;
    writeln!(out, "sup |x(t) - x0 - rho t| = {}", fmt_short(est.residual_sup))?;
    writeln!(
        out,
        "bounded displacement: {} (window slope {})",
        verdict(bounded.passed),
        fmt_short(bounded.slope)
    )?;
    if let Some(path) = output {
        traj.write_csv(create(&path)?)?;
    }
    if let Some(path) = json {
        write_json(&path, &serde_json::json!({ "estimate": est, "boundedness": bounded }))?;
    }
    Ok(())
}

pub fn solve(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let m = s.model()?;
    let mut opts = SolveOptions {
        gamma: s.f64("gamma")?,
        c: s.f64("norm-c")?,
        ..SolveOptions::default()
    };
    opts.beta = s.f64_or("beta", opts.beta)?;
    opts.smallness = s.positive_or("smallness", opts.smallness)?;
    opts.fixed_point.l = s.f64_or("l", opts.fixed_point.l)?;
    if let Some(k) = s.vec("k-schedule")? {
        opts.fixed_point.k_schedule = k;
    }
    opts.fixed_point.tol = s.positive_or("tol", opts.fixed_point.tol)?;
    opts.certificate_horizon = s.positive_or("certificate-horizon", opts.certificate_horizon)?;
    let output = s.string("output");
    let json = s.string("json");
    s.finish()?;
    let f = make_model(m.spec)?;
    let sol = solve_rotation_formula(&f, &m.x0, &opts)?;
    writeln!(out, "rho = {}", fmt_vec(&sol.rho))?;
    writeln!(
        out,
        "c = {}, gamma = {}, L = {} (admissible: {})",
        fmt_short(sol.c),
        fmt_short(sol.gamma),
        fmt_short(sol.l),
        sol.l_admissible
    )?;
    let last = sol.fixed_point.steps.last();
    writeln!(
        out,
        "fixed point: {} horizons, last k = {}, residual {}",
        sol.fixed_point.steps.len(),
        last.map_or("-".into(), |st| fmt_short(st.k)),
        last.map_or("-".into(), |st| fmt_short(st.residual))
    )?;
    writeln!(
        out,
        "certificate: {} (max |R_i| limit {})",
        verdict(sol.certificate_passed),
        fmt_short(sol.certificate.max_abs_limit())
    )?;
    for w in &sol.warnings {
        writeln!(out, "warning: {w}")?;
    }
    if let Some(path) = output {
        sol.write_diagnostics_csv(create(&path)?)?;
    }
    if let Some(path) = json {
        write_json(&path, &sol)?;
    }
    Ok(())
}

pub fn psi(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let m = s.model()?;
    let rho = s.vec("rho")?.ok_or_else(|| CliError::Config("missing `rho`".into()))?;
    let t_max = s.positive_or("t-max", 100.0)?;
    let dt = s.positive_or("dt", 1.0)?;
    let method = s.string("method").unwrap_or_else(|| "quadrature".into());
    let output = s.string("output");
    s.finish()?;
    if !matches!(method.as_str(), "quadrature" | "ode") {
        return Err(CliError::Config(format!("`method` must be quadrature or ode, got `{method}`")));
    }
    let f = make_model(m.spec)?;
    let n = f.spec().dim();
    let count = (t_max / dt).round() as usize;
    let times: Vec<f64> = (0..=count).map(|k| k as f64 * dt).collect();
    let line = PsiLine::plain(&f, &m.x0, &rho)?;
    let rows = if method == "ode" {
        let cols: Vec<Vec<f64>> = (0..=n)
            .map(|i| psi_ode_line(&line, i, &times, PSI_ODE_TOL))
            .collect::<Result<_, _>>()?;
        (0..times.len()).map(|k| cols.iter().map(|c| c[k]).collect()).collect()
    } else {
        psi_all_quadrature(&line, &times, QuadratureSpec::for_direction(&rho))?
    };
    let mut sink: Box<dyn Write + '_> = match &output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(&mut *out),
    };
    let mut w = csv::Writer::from_writer(&mut sink);
    let mut header = vec!["t".to_string()];
    header.extend((0..=n).map(|i| format!("psi_{i}")));
    w.write_record(&header).map_err(|e| CliError::Compute(e.to_string()))?;
    for (t, row) in times.iter().zip(&rows) {
        let mut rec = vec![rotvec::export::fmt_sig(*t)];
        rec.extend(row.iter().map(|v| rotvec::export::fmt_sig(*v)));
        w.write_record(&rec).map_err(|e| CliError::Compute(e.to_string()))?;
    }
    w.flush()?;
    drop(w);
    sink.flush()?;
    drop(sink);
    if let Some(path) = output {
        writeln!(out, "psi_0..psi_{n} at {} times written to {path}", times.len())?;
    }
    Ok(())
}

fn riccati_system(s: &mut Settings) -> CliResult<RiccatiSystem<'static>> {
    let kind = s.string("system").unwrap_or_else(|| "random".into());
    let q = s.usize_or("q", 2)?;
    let gamma = s.f64_or("gamma", 0.01)?;
    let seed = s.u64_or("seed", 0)?;
    let a = s.vec("a")?;
    let b = s.vec("b")?;
    let h = s.vec("h")?;
    match kind.as_str() {
        "random" => {
            if a.is_some() || b.is_some() || h.is_some() {
                return Err(CliError::Config("`a`, `b`, `h` apply to system = constant".into()));
            }
            Ok(random_trig_system(q, gamma, seed)?)
        }
        "constant" => {
            let q = a.as_ref().map_or(q, Vec::len);
            let a = a.unwrap_or_else(|| vec![0.0; q]);
            let b = b.unwrap_or_else(|| vec![0.0; q * q]);
            let h = h.unwrap_or_else(|| vec![0.0; q * q * q]);
            if b.len() != q * q || h.len() != q * q * q {
                return Err(CliError::Config(format!(
                    "`b` needs {} entries and `h` {} for q = {q}",
                    q * q,
                    q * q * q
                )));
            }
            let to_matrix = |chunk: &[f64]| Matrix::from_rows(&chunk.chunks(q).map(|r| r.to_vec()).collect::<Vec<_>>());
            let b = to_matrix(&b)?;
            let h = h.chunks(q * q).map(to_matrix).collect::<Result<Vec<_>, _>>()?;
            Ok(RiccatiSystem::constant(a, b, h, gamma)?)
        }
        other => Err(CliError::Config(format!("`system` must be random or constant, got `{other}`"))),
    }
}

pub fn riccati(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let sys = riccati_system(&mut s)?;
    let horizon = s.positive_or("horizon", 200.0)?;
    let tol = s.positive_or("tol", 1e-10)?;
    let output = s.string("output");
    let json = s.string("json");
    s.finish()?;
    let report = hypothesis_check(&sys, horizon, &HypothesisOptions::default())?;
    let bounded = boundedness_verdict(&sys, horizon, tol, &WindowOptions::default())?;
    writeln!(out, "dimension = {}, gamma = {}", sys.dim(), fmt_short(sys.gamma()))?;
    writeln!(out, "H1: {}", verdict(report.h1_passed))?;
    for c in &report.h1_signs {
        writeln!(out, "  tau_{} = {:+}: {}", c.index, c.tau, verdict(c.passed))?;
    }
    writeln!(out, "H2: {}", verdict(report.h2_passed))?;
    writeln!(
        out,
        "simulation: {} (sup |y| = {}{})",
        verdict(bounded.passed),
        fmt_short(bounded.sup),
        if bounded.blow_up { ", blow-up" } else { "" }
    )?;
    if let Some(path) = output {
        report.write_csv(create(&path)?)?;
    }
    if let Some(path) = json {
        write_json(&path, &serde_json::json!({ "hypotheses": report, "simulation": bounded }))?;
    }
    Ok(())
}

pub fn leader(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let m = s.model()?;
    let rho = s.vec("rho")?;
    let horizon = s.positive_or("horizon", 1e4)?;
    let tol = s.positive_or("tol", 1e-10)?;
    let output = s.string("output");
    let json = s.string("json");
    s.finish()?;
    horizon_at_least("horizon", horizon, MIN_HORIZON)?;
    let f = make_model(m.spec)?;
    let rho = match rho {
        Some(r) => r,
        None => rotation_estimate(&integrate(&f, &m.x0, (0.0, horizon), tol)?)?.lambda,
    };
    let mu = AffineCurve::new(&rho, &m.x0)?;
    let opts = LeaderOptions {
        horizon,
        ..LeaderOptions::default()
    };
    let report = leader_check(&f, &mu, &opts)?;
    let dist = leader_distance(&f, &mu, &m.x0, horizon, tol, &WindowOptions::default())?;
    writeln!(out, "mu(t) = {} t + {}", fmt_vec(&rho), fmt_vec(&m.x0))?;
    writeln!(out, "condition 1 (trace integral): {}", verdict(report.bullet1.passed))?;
    for b in &report.bullet2 {
        writeln!(out, "condition 2, i = {} (tau {:+}): {}", b.index, b.tau, verdict(b.passed))?;
    }
    for b in &report.bullet3 {
        writeln!(
            out,
            "condition 3, i = {} (growth rate {}): {}",
            b.index,
            fmt_short(b.rate),
            verdict(b.passed)
        )?;
    }
    writeln!(out, "leader trajectory: {}", verdict(report.passed))?;
    writeln!(
        out,
        "distance to the flow: {} (sup {})",
        verdict(dist.passed),
        fmt_short(dist.distance)
    )?;
    if let Some(path) = output {
        report.write_csv(create(&path)?)?;
    }
    if let Some(path) = json {
        write_json(&path, &serde_json::json!({ "leader": report, "distance": dist }))?;
    }
    Ok(())
}

pub fn tongue(mut s: Settings, out: &mut dyn Write) -> CliResult<()> {
    let grid = s.string("grid");
    let n1 = s.usize_or("n1", 101)?;
    let n2 = s.usize_or("n2", 51)?;
    let defaults = TongueOptions::default();
    let opts = TongueOptions {
        horizon: s.positive_or("horizon", defaults.horizon)?,
        tol: s.positive_or("tol", defaults.tol)?,
        lock_tol: s.positive_or("lock-tol", defaults.lock_tol)?,
        targets: s.vec("targets")?,
        max_denominator: s.usize_or("max-denominator", defaults.max_denominator as usize)? as u32,
    };
    let output = s.string("output");
    let json = s.string("json");
    s.finish()?;
    let family = match grid {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
            serde_json::from_str::<TongueFamily>(&text).map_err(|e| CliError::Config(format!("grid {path}: {e}")))?
        }
        None => {
            if n1 < 2 || n2 < 2 {
                return Err(CliError::Config("`n1` and `n2` must be at least 2".into()));
            }
            TongueFamily::standard_circle(n1, n2)
        }
    };
    let result = tongue_scan(&family, &opts)?;
    let locked = result.cells.iter().filter(|c| c.locked_to.is_some()).count();
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    let (a, b) = result.shape();
    writeln!(out, "grid {a} x {b} over `{}` and `{}`", family.axis1.key, family.axis2.key)?;
    writeln!(out, "locked cells: {locked} of {}", result.cells.len())?;
    if failed > 0 {
        writeln!(out, "failed cells: {failed}")?;
    }
    if let Some(path) = output {
        result.write_csv(create(&path)?)?;
    }
    if let Some(path) = json {
        write_json(&path, &result)?;
    }
    Ok(())
}
