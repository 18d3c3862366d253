//! Leader trajectories: a curve `μ` that the flow of `g` never drifts far from.
//!
//! [`leader_check`] tests the three defining conditions on `[−T, T]`:
//!
//! 1. `∫₀ᵗ σ(dg(μ))` stays bounded;
//! 2. for each `i` there is a sign `τ_i` with `∫₀ᵗ τ_i σ(I_i dg(μ(τ_i ν)) I_i)`
//!    bounded above for `t ≥ 0`;
//! 3. the scalar equations `ψ̇_i = σ(I_i μ̇ − I_i g(μ)) + σ(I_i dg(μ) I_i) ψ_i / q`
//!    have `ψ_0 − ψ_i` bounded on all of ℝ.
//!
//! Every "bounded" is the dyadic-window slope test of [`crate::flow`].
//! Condition 2 is one-sided by design while condition 3 is two-sided, so a
//! curve can pass 2 with a sign that says nothing about `t < 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{max_norm, sum_entries, Matrix};
use crate::error::{Error, Result};
use crate::field::FlowField;
use crate::flow::{dyadic_windows, integrate_with, OdeOptions, WindowOptions, WindowStats, DEFAULT_HORIZON};
use crate::psi::{cumulative_integrals, solve_psi_system, tau_of, MIN_AVERAGING_HORIZON};

/// A `C¹` curve with its derivative in closed form.
pub trait Curve: Sync {
    fn dim(&self) -> usize;
    fn position(&self, t: f64, out: &mut [f64]);
    fn velocity(&self, t: f64, out: &mut [f64]);
}

/// `μ(t) = slope·t + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineCurve {
    pub slope: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineCurve {
    pub fn new(slope: &[f64], offset: &[f64]) -> Result<Self> {
        if slope.len() != offset.len() || slope.is_empty() {
            return Err(Error::invalid("slope and offset must have the same positive length"));
        }
        if slope.iter().chain(offset).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine curve coefficients must be finite"));
        }
        Ok(Self {
            slope: slope.to_vec(),
            offset: offset.to_vec(),
        })
    }
}

impl Curve for AffineCurve {
    fn dim(&self) -> usize {
        self.slope.len()
    }

    fn position(&self, t: f64, out: &mut [f64]) {
        for ((o, s), x) in out.iter_mut().zip(&self.slope).zip(&self.offset) {
            *o = s * t + x;
        }
    }

    fn velocity(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.slope);
    }
}

/// A curve given by a pair of closures `(μ, μ̇)`.
pub struct ClosedFormCurve<P, V> {
    dim: usize,
    position: P,
    velocity: V,
}

impl<P, V> ClosedFormCurve<P, V>
where
    P: Fn(f64, &mut [f64]) + Sync,
    V: Fn(f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, position: P, velocity: V) -> Self {
        Self { dim, position, velocity }
    }
}

impl<P, V> Curve for ClosedFormCurve<P, V>
where
    P: Fn(f64, &mut [f64]) + Sync,
    V: Fn(f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn position(&self, t: f64, out: &mut [f64]) {
        (self.position)(t, out)
    }

    fn velocity(&self, t: f64, out: &mut [f64]) {
        (self.velocity)(t, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderOptions {
    pub horizon: f64,
    /// Quadrature step for conditions 1 and 2; `None` picks
    /// `1/(64·max(1, ‖μ̇(0)‖∞))`.
    pub step: Option<f64>,
    pub ode_tol: f64,
    /// `ψ` beyond this magnitude is taken as unbounded growth.
    pub max_psi: f64,
    pub windows: WindowOptions,
}

impl Default for LeaderOptions {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            step: None,
            ode_tol: 1e-9,
            max_psi: 1e12,
            windows: WindowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBullet {
    /// Windowed sups of `|∫₀ᵗ σ(dg(μ))|` over `t ∈ [−T, T]`.
    pub windows: WindowStats,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignBullet {
    pub index: usize,
    pub tau: i8,
    /// Average of `σ(I_i dg(μ) I_i)` over `[0, T]`, which fixes `τ_i`.
    pub lambda: f64,
    /// Windowed sups of the signed integral over `t ≥ 0`.
    pub windows: WindowStats,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiBullet {
    pub index: usize,
    /// Least-squares slope of `ψ_0 − ψ_i` against `t`.
    pub rate: f64,
    /// The `ψ` integration hit `max_psi` before reaching `±T`.
    pub blow_up: bool,
    pub windows: WindowStats,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderReport {
    pub horizon: f64,
    pub bullet1: TraceBullet,
    pub bullet2: Vec<SignBullet>,
    pub bullet3: Vec<PsiBullet>,
    pub passed: bool,
    /// `ψ_0..ψ_q` at the integrator's accepted steps.
    #[serde(skip)]
    pub psi_times: Vec<f64>,
    #[serde(skip)]
    pub psi_values: Vec<Vec<f64>>,
}

impl LeaderReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `t,psi_0,…,psi_q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let q = self.psi_values.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..q).map(|i| format!("psi_{i}")));
        w.write_record(&header)?;
        for (t, v) in self.psi_times.iter().zip(&self.psi_values) {
            let mut row = vec![crate::export::fmt_sig(*t)];
            row.extend(v.iter().map(|x| crate::export::fmt_sig(*x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct CurveSample {
    mu: Vec<f64>,
    vel: Vec<f64>,
    value: Vec<f64>,
    jac: Matrix,
}

impl CurveSample {
    fn new(n: usize) -> Self {
        Self {
            mu: vec![0.0; n],
            vel: vec![0.0; n],
            value: vec![0.0; n],
            jac: Matrix::zeros(n, n),
        }
    }

    fn load<G: FlowField + ?Sized>(&mut self, g: &G, mu: &dyn Curve, t: f64) {
        mu.position(t, &mut self.mu);
        mu.velocity(t, &mut self.vel);
        g.eval_with_jacobian_at(t, &self.mu, &mut self.value, &mut self.jac);
    }

    /// `σ(I_i dg I_i)` for `i = 0..=n`, with `I_0 = I`.
    fn traces(&self, out: &mut [f64]) {
        let n = self.mu.len();
        let total = sum_entries(&self.jac);
        out[0] = total;
        for i in 0..n {
            let (mut row, mut col) = (0.0, 0.0);
            for j in 0..n {
                row += self.jac[(i, j)];
                col += self.jac[(j, i)];
            }
            out[i + 1] = total - 2.0 * (row + col) + 4.0 * self.jac[(i, i)];
        }
    }

    /// `σ(I_i(μ̇ − g))` for `i = 0..=n`.
    fn mismatches(&self, out: &mut [f64]) {
        let n = self.mu.len();
        let total: f64 = self.vel.iter().zip(&self.value).map(|(v, g)| v - g).sum();
        out[0] = total;
        for i in 0..n {
            out[i + 1] = total - 2.0 * (self.vel[i] - self.value[i]);
        }
    }
}

fn check_inputs(dim: usize, mu: &dyn Curve, horizon: f64) -> Result<()> {
    if mu.dim() != dim {
        return Err(Error::invalid(format!(
            "curve dimension {} does not match field dimension {dim}",
            mu.dim()
        )));
    }
    if !(horizon >= MIN_AVERAGING_HORIZON) || !horizon.is_finite() {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_AVERAGING_HORIZON,
        });
    }
    Ok(())
}

pub(crate) fn least_squares_rate(times: &[f64], values: &[f64]) -> f64 {
    let m = times.len() as f64;
    let mt = times.iter().sum::<f64>() / m;
    let mv = values.iter().sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in times.iter().zip(values) {
        num += (t - mt) * (v - mv);
        den += (t - mt) * (t - mt);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Tests whether `μ` is a leader trajectory of `g` on `[−T, T]`.
pub fn leader_check<G: FlowField + ?Sized>(g: &G, mu: &dyn Curve, opts: &LeaderOptions) -> Result<LeaderReport> {
    let n = g.dim();
    let horizon = opts.horizon;
    check_inputs(n, mu, horizon)?;
    let step = match opts.step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::invalid(format!("quadrature step must be positive, got {s}"))),
        None => {
            let mut v = vec![0.0; n];
            mu.velocity(0.0, &mut v);
            1.0 / (64.0 * max_norm(&v).max(1.0))
        }
    };

    let mut sample = CurveSample::new(n);
    let mut traces = |t: f64, out: &mut [f64]| {
        sample.load(g, mu, t);
        sample.traces(out);
    };
    let (t_fwd, c_fwd) = cumulative_integrals(n + 1, horizon, step, 1.0, &mut traces);
    let (t_bwd, c_bwd) = cumulative_integrals(n + 1, horizon, step, -1.0, &mut traces);

    let (times, trace): (Vec<f64>, Vec<f64>) = t_bwd
        .iter()
        .zip(&c_bwd)
        .skip(1)
        .chain(t_fwd.iter().zip(&c_fwd))
        .map(|(t, c)| (*t, c[0].abs()))
        .unzip();
    let windows = dyadic_windows(&times, &trace, &opts.windows);
    let bullet1 = TraceBullet {
        passed: windows.passed,
        windows,
    };

    let zero_band = 10.0 / horizon;
    let bullet2: Vec<SignBullet> = (1..=n)
        .map(|i| {
            let lambda = c_fwd.last().map_or(0.0, |c| c[i]) / horizon;
            let tau = tau_of(lambda, zero_band);
            // ∫₀ᵗ τ κ(τν) dν is the cumulative integral evaluated at τt.
            let (ts, cs) = if tau > 0 { (&t_fwd, &c_fwd) } else { (&t_bwd, &c_bwd) };
            let abs_t: Vec<f64> = ts.iter().map(|t| t.abs()).collect();
            let vals: Vec<f64> = cs.iter().map(|c| c[i]).collect();
            let windows = dyadic_windows(&abs_t, &vals, &opts.windows);
            SignBullet {
                index: i,
                tau,
                lambda,
                passed: windows.passed,
                windows,
            }
        })
        .collect();

    let (psi_times, psi_values, blow_up) = psi_series(g, mu, horizon, opts)?;
    let bullet3: Vec<PsiBullet> = (1..=n)
        .map(|i| {
            let diff: Vec<f64> = psi_values.iter().map(|v| v[0] - v[i]).collect();
            let abs: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
            let windows = dyadic_windows(&psi_times, &abs, &opts.windows);
            PsiBullet {
                index: i,
                rate: least_squares_rate(&psi_times, &diff),
                blow_up,
                passed: windows.passed && !blow_up,
                windows,
            }
        })
        .collect();

    let passed = bullet1.passed && bullet2.iter().all(|b| b.passed) && bullet3.iter().all(|b| b.passed);
    Ok(LeaderReport {
        horizon,
        bullet1,
        bullet2,
        bullet3,
        passed,
        psi_times,
        psi_values,
    })
}

/// Integrates the `n + 1` scalar `ψ` equations together on `[−T, T]`.
fn psi_series<G: FlowField + ?Sized>(g: &G, mu: &dyn Curve, horizon: f64, opts: &LeaderOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>, bool)> {
    let n = g.dim();
    let q = n as f64;
    let mut sample = CurveSample::new(n);
    solve_psi_system(n + 1, horizon, opts.ode_tol, opts.max_psi, |t, source, rate| {
        sample.load(g, mu, t);
        sample.traces(rate);
        sample.mismatches(source);
        for r in rate.iter_mut() {
            *r /= q;
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub horizon: f64,
    /// Empirical `sup_t ‖μ(t) − x(t)‖∞`.
    pub distance: f64,
    pub windows: WindowStats,
    pub passed: bool,
}

/// Integrates the flow from `x0 = μ(0)` on `[−T, T]` and tests
/// `‖μ(t) − x(t)‖∞` for bounded growth.
pub fn leader_distance<G: FlowField + ?Sized>(
    g: &G,
    mu: &dyn Curve,
    x0: &[f64],
    horizon: f64,
    tol: f64,
    windows: &WindowOptions,
) -> Result<DistanceReport> {
    let n = g.dim();
    check_inputs(n, mu, horizon)?;
    if x0.len() != n {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    let mut start = vec![0.0; n];
    mu.position(0.0, &mut start);
    if start.iter().zip(x0).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
        return Err(Error::invalid("the curve must start at x0"));
    }
    let traj = integrate_with(g, x0, (-horizon, horizon), &OdeOptions::with_tol(tol))?;
    let mut at = vec![0.0; n];
    let gaps: Vec<f64> = traj
        .times()
        .iter()
        .zip(traj.states())
        .map(|(t, x)| {
            mu.position(*t, &mut at);
            at.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let stats = dyadic_windows(traj.times(), &gaps, windows);
    Ok(DistanceReport {
        horizon,
        distance: stats.sup,
        passed: stats.passed,
        windows: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_model, ModelSpec};

    fn constant(omega: &[f64]) -> crate::field::Model {
        make_model(ModelSpec::Constant { omega: omega.to_vec() }).unwrap()
    }

    fn short() -> LeaderOptions {
        LeaderOptions {
            horizon: 1000.0,
            ..LeaderOptions::default()
        }
    }

    #[test]
    fn exact_solution_is_its_own_leader() {
        let f = constant(&[1.0, 2.0]);
        let mu = AffineCurve::new(&[1.0, 2.0], &[0.3, 0.1]).unwrap();
        let rep = leader_check(&f, &mu, &short()).unwrap();
        assert!(rep.passed);
        assert!(rep.psi_values.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(rep.bullet1.windows.sup, 0.0);
    }

    #[test]
    fn doubled_speed_fails_bullet_three() {
        let f = constant(&[1.0, 2.0]);
        let mu = AffineCurve::new(&[2.0, 4.0], &[0.0, 0.0]).unwrap();
        let rep = leader_check(&f, &mu, &short()).unwrap();
        assert!(!rep.passed);
        assert!(rep.bullet1.passed && rep.bullet2.iter().all(|b| b.passed));
        assert!((rep.bullet3[0].rate - 2.0).abs() < 1e-10, "{}", rep.bullet3[0].rate);
        assert!((rep.bullet3[1].rate - 4.0).abs() < 1e-10, "{}", rep.bullet3[1].rate);
        assert!(rep.bullet3.iter().all(|b| !b.passed));
    }

    #[test]
    fn circle_at_its_rotation_number() {
        let f = make_model(ModelSpec::Circle { c: 2.0, eps: 0.1 }).unwrap();
        let rho = 3.99f64.sqrt();
        let mu = AffineCurve::new(&[rho], &[0.0]).unwrap();
        let rep = leader_check(&f, &mu, &short()).unwrap();
        assert!(rep.bullet1.passed, "{:?}", rep.bullet1.windows);
        assert!(rep.bullet2[0].passed);
        assert!(rep.passed, "{:?}", rep.bullet3[0].windows);
        let far = AffineCurve::new(&[rho + 0.01], &[0.0]).unwrap();
        assert!(!leader_check(&f, &far, &short()).unwrap().passed);
    }

    #[test]
    fn distance_examples() {
        let f = constant(&[1.0, 2.0]);
        let exact = AffineCurve::new(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        let rep = leader_distance(&f, &exact, &[0.5, 0.5], 1000.0, 1e-10, &WindowOptions::default()).unwrap();
        assert!(rep.passed && rep.distance < 1e-9);

        let wobble = ClosedFormCurve::new(
            2,
            |t: f64, out: &mut [f64]| {
                out[0] = t + 0.3 * t.sin();
                out[1] = 2.0 * t + 0.3 * t.sin();
            },
            |t: f64, out: &mut [f64]| {
                out[0] = 1.0 + 0.3 * t.cos();
                out[1] = 2.0 + 0.3 * t.cos();
            },
        );
        let rep = leader_distance(&f, &wobble, &[0.0, 0.0], 1000.0, 1e-10, &WindowOptions::default()).unwrap();
        assert!(rep.passed);
        assert!((rep.distance - 0.3).abs() < 1e-3, "{}", rep.distance);
    }

    #[test]
    fn distance_requires_matching_start() {
        let f = constant(&[1.0]);
        let mu = AffineCurve::new(&[1.0], &[0.2]).unwrap();
        assert!(leader_distance(&f, &mu, &[0.0], 1000.0, 1e-10, &WindowOptions::default()).is_err());
    }

    #[test]
    fn csv_and_json() {
        let f = constant(&[1.0]);
        let mu = AffineCurve::new(&[2.0], &[0.0]).unwrap();
        let rep = leader_check(&f, &mu, &short()).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,psi_0,psi_1\n"));
        let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(json["passed"], false);
    }
}
