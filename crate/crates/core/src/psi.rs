//! The Ψ_i functionals along a straight line, their kernels and sources,
//! the formula residual, and the τ sign profile.
//!
//! Everything here reduces to integrals of the form
//! `J(t) = ∫₀ᵗ u(s) exp(G(t) − G(s)) ds` with `G' = κ`, evaluated by a
//! streaming composite-Simpson recursion in O(1) memory.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::Matrix;
use crate::error::{Error, Result};
use crate::export::fmt_sig;
use crate::field::FlowField;
use crate::flow::{solve_ode, OdeOptions};

/// Largest kernel exponent accepted before aborting.
pub const OVERFLOW_EXPONENT: f64 = 700.0;
/// Minimal horizon for residual and sign estimates.
pub const MIN_AVERAGING_HORIZON: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    /// `A_i = σ(I_i(ρ − f(sρ + x0)))`, kernel `σ(I_i df I_i)`.
    Plain,
    /// `A_i = σ(I_i(1 − Z⁻¹g(sz)))`, kernel `σ(I_i Z⁻¹ dg Z I_i)`.
    Conjugated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiMethod {
    Quadrature,
    Ode,
}

/// Quadrature resolution: the largest node spacing used on a line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub step: f64,
}

impl QuadratureSpec {
    /// Resolves oscillations of `f(sρ)` with at least 512 nodes per unit of
    /// `‖ρ‖∞ s`.
    pub fn for_direction(dir: &[f64]) -> Self {
        let speed = dir.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Self {
            step: 1.0 / (512.0 * speed),
        }
    }
}

/// Values sampled at one point of the line.
#[derive(Debug, Clone)]
pub(crate) struct LineSample {
    pub value: Vec<f64>,
    pub jac: Matrix,
    /// `A_i`, `i = 0..=n`.
    pub a: Vec<f64>,
    /// `σ(I_i S⁻¹ J S I_i) / n`, `i = 0..=n`.
    pub kappa: Vec<f64>,
    point: Vec<f64>,
    u: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl LineSample {
    pub fn new(n: usize) -> Self {
        Self {
            value: vec![0.0; n],
            jac: Matrix::zeros(n, n),
            a: vec![0.0; n + 1],
            kappa: vec![0.0; n + 1],
            point: vec![0.0; n],
            u: vec![0.0; n],
            rows: vec![0.0; n],
            cols: vec![0.0; n],
        }
    }
}

/// The straight line `s ↦ s·dir + offset` through a field, with the
/// mismatch `S⁻¹(dir − F(s, s·dir + offset))` and the conjugated kernel.
///
/// The plain form uses `S = I`, `dir = ρ`, `offset = x0`; the conjugated form
/// uses `S = diag(z)`, `dir = z`, `offset = 0`.
pub struct PsiLine<'a, F: FlowField + ?Sized> {
    field: &'a F,
    dir: Vec<f64>,
    offset: Vec<f64>,
    scale: Option<Vec<f64>>,
}

impl<'a, F: FlowField + ?Sized> PsiLine<'a, F> {
    pub fn plain(field: &'a F, x0: &[f64], rho: &[f64]) -> Result<Self> {
        let n = field.dim();
        check_len("x0", x0, n)?;
        check_len("rho", rho, n)?;
        Ok(Self {
            field,
            dir: rho.to_vec(),
            offset: x0.to_vec(),
            scale: None,
        })
    }

    pub fn conjugated(field: &'a F, z: &[f64]) -> Result<Self> {
        let n = field.dim();
        check_len("z", z, n)?;
        if z.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("conjugation point must be entrywise positive"));
        }
        Ok(Self {
            field,
            dir: z.to_vec(),
            offset: vec![0.0; n],
            scale: Some(z.to_vec()),
        })
    }

    pub fn new(field: &'a F, form: KernelForm, x0: &[f64], point: &[f64]) -> Result<Self> {
        match form {
            KernelForm::Plain => Self::plain(field, x0, point),
            KernelForm::Conjugated => Self::conjugated(field, point),
        }
    }

    pub fn dim(&self) -> usize {
        self.dir.len()
    }

    pub fn direction(&self) -> &[f64] {
        &self.dir
    }

    pub(crate) fn sample(&self, s: f64, out: &mut LineSample) {
        let n = self.dim();
        for j in 0..n {
            out.point[j] = s * self.dir[j] + self.offset[j];
        }
        self.field.eval_with_jacobian_at(s, &out.point, &mut out.value, &mut out.jac);
        let mut total = 0.0;
        for j in 0..n {
            let m = self.dir[j] - out.value[j];
            out.u[j] = match &self.scale {
                Some(z) => m / z[j],
                None => m,
            };
            total += out.u[j];
        }
        out.a[0] = total;
        for i in 0..n {
            out.a[i + 1] = total - 2.0 * out.u[i];
        }
        // σ(I_i M I_i) = σ(M) − 2 (row_i + col_i) + 4 M_ii with M = S⁻¹ J S.
        let scale = self.scale.as_deref();
        let entry = |jac: &Matrix, j: usize, k: usize| match scale {
            Some(z) => jac[(j, k)] * z[k] / z[j],
            None => jac[(j, k)],
        };
        out.rows.fill(0.0);
        out.cols.fill(0.0);
        let mut sum = 0.0;
        for j in 0..n {
            for k in 0..n {
                let e = entry(&out.jac, j, k);
                out.rows[j] += e;
                out.cols[k] += e;
                sum += e;
            }
        }
        let q = n as f64;
        out.kappa[0] = sum / q;
        for i in 0..n {
            out.kappa[i + 1] = (sum - 2.0 * (out.rows[i] + out.cols[i]) + 4.0 * entry(&out.jac, i, i)) / q;
        }
    }
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::invalid(format!("{name} has dimension {} but the field has {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} must be finite")));
    }
    Ok(())
}

/// Streaming evaluation of `J_m(t) = ∫₀ᵗ u_m(s) e^{G(t) − G(s)} ds` for several
/// sources sharing one kernel `G`.
#[derive(Debug, Clone)]
pub(crate) struct KernelStream {
    g: f64,
    g_min: f64,
    acc: Vec<f64>,
    /// Running compensation for roundoff in `acc`.
    comp: Vec<f64>,
    /// Reported in overflow errors.
    index: usize,
}

impl KernelStream {
    pub fn new(sources: usize, index: usize) -> Self {
        Self {
            g: 0.0,
            g_min: 0.0,
            acc: vec![0.0; sources],
            comp: vec![0.0; sources],
            index,
        }
    }

    /// `G` at the current end point.
    pub fn exponent(&self) -> f64 {
        self.g
    }

    pub fn value(&self, m: usize) -> f64 {
        self.acc[m] + self.comp[m]
    }

    /// Advances over one Simpson panel `[a, a + 2h]` given kernel rates and
    /// sources at the three nodes; `h` may be negative.
    #[inline]
    pub fn panel(&mut self, h: f64, r: [f64; 3], u: impl Fn(usize, usize) -> f64, t_end: f64) -> Result<()> {
        let dg = h / 3.0 * (r[0] + 4.0 * r[1] + r[2]);
        let dg_half = h / 12.0 * (5.0 * r[0] + 8.0 * r[1] - r[2]);
        let g2 = self.g + dg;
        self.g_min = self.g_min.min(self.g + dg_half).min(g2);
        if g2 - self.g_min > OVERFLOW_EXPONENT || !g2.is_finite() {
            return Err(Error::KernelOverflow {
                index: self.index,
                t: t_end,
                exponent: g2 - self.g_min,
            });
        }
        let w0 = dg.exp();
        let w1 = (dg - dg_half).exp();
        for (m, (acc, comp)) in self.acc.iter_mut().zip(&mut self.comp).enumerate() {
            let inc = h / 3.0 * (w0 * u(m, 0) + 4.0 * w1 * u(m, 1) + u(m, 2));
            let scaled = w0 * *acc;
            let sum = scaled + inc;
            *comp = w0 * *comp
                + if scaled.abs() >= inc.abs() {
                    (scaled - sum) + inc
                } else {
                    (inc - sum) + scaled
                };
            *acc = sum;
        }
        self.g = g2;
        Ok(())
    }
}

/// Number of Simpson panels and the signed half-width for `[a, b]`.
pub(crate) fn panels(a: f64, b: f64, max_step: f64) -> (usize, f64) {
    let len = b - a;
    let m = ((len.abs() / (2.0 * max_step)).ceil() as usize).max(1);
    (m, len / (2.0 * m as f64))
}

/// `Ψ_0..Ψ_n` at each of `times` (any order, any sign) by quadrature.
/// Returns one row of `n + 1` values per requested time.
pub fn psi_all_quadrature<F: FlowField + ?Sized>(line: &PsiLine<'_, F>, times: &[f64], grid: QuadratureSpec) -> Result<Vec<Vec<f64>>> {
    if !(grid.step > 0.0) || !grid.step.is_finite() {
        return Err(Error::invalid("quadrature step must be positive"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("psi times must be finite"));
    }
    let n = line.dim();
    let mut out = vec![vec![0.0; n + 1]; times.len()];
    for forward in [true, false] {
        let mut order: Vec<usize> = (0..times.len())
            .filter(|&k| if forward { times[k] > 0.0 } else { times[k] < 0.0 })
            .collect();
        order.sort_by(|&a, &b| times[a].abs().total_cmp(&times[b].abs()));
        if order.is_empty() {
            continue;
        }
        let mut streams: Vec<KernelStream> = (0..=n).map(|i| KernelStream::new(1, i)).collect();
        let mut s0 = LineSample::new(n);
        let mut s1 = LineSample::new(n);
        let mut s2 = LineSample::new(n);
        line.sample(0.0, &mut s0);
        let mut t_prev = 0.0;
        for &k in &order {
            let t = times[k];
            let (m, h) = panels(t_prev, t, grid.step);
            for p in 0..m {
                let a = t_prev + 2.0 * h * p as f64;
                line.sample(a + h, &mut s1);
                let end = if p + 1 == m { t } else { a + 2.0 * h };
                line.sample(end, &mut s2);
                for (i, stream) in streams.iter_mut().enumerate() {
                    let src = [s0.a[i], s1.a[i], s2.a[i]];
                    stream.panel(h, [s0.kappa[i], s1.kappa[i], s2.kappa[i]], |_, node| src[node], end)?;
                }
                std::mem::swap(&mut s0, &mut s2);
            }
            for (i, stream) in streams.iter().enumerate() {
                out[k][i] = stream.value(0);
            }
            t_prev = t;
        }
    }
    Ok(out)
}

/// `Ψ_i[f_{x0}](ρ, t)` by composite Simpson with the cumulative kernel.
pub fn psi_quadrature<F: FlowField + ?Sized>(field: &F, x0: &[f64], rho: &[f64], i: usize, t: f64, grid: QuadratureSpec) -> Result<f64> {
    let line = PsiLine::plain(field, x0, rho)?;
    check_index(i, line.dim())?;
    Ok(psi_all_quadrature(&line, &[t], grid)?[0][i])
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i > n {
        return Err(Error::invalid(format!("index {i} out of range 0..={n}")));
    }
    Ok(())
}

/// `A_i(ρ, s) = σ(I_{i,n}(ρ − f(sρ + x0)))`.
pub fn coefficient_a<F: FlowField + ?Sized>(field: &F, x0: &[f64], rho: &[f64], i: usize, s: f64) -> Result<f64> {
    let line = PsiLine::plain(field, x0, rho)?;
    check_index(i, line.dim())?;
    let mut sample = LineSample::new(line.dim());
    line.sample(s, &mut sample);
    Ok(sample.a[i])
}

/// Samples of one Ψ_i along a line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiCurve {
    pub index: usize,
    pub form: KernelForm,
    /// `ρ` for the plain form, `z` for the conjugated one.
    pub point: Vec<f64>,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub method: PsiMethod,
}

impl PsiCurve {
    /// CSV with header `t,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([fmt_sig(*t), fmt_sig(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Default tolerance for the scalar Ψ ODE.
pub const PSI_ODE_TOL: f64 = 1e-12;

/// Ψ_i as the solution of `ψ̇ = A_i + κ_i ψ`, `ψ(0) = 0`, on the line.
pub fn psi_ode_line<F: FlowField + ?Sized>(line: &PsiLine<'_, F>, i: usize, times: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_index(i, line.dim())?;
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("psi times must be finite"));
    }
    let lo = times.iter().fold(0.0f64, |m, t| m.min(*t));
    let hi = times.iter().fold(0.0f64, |m, t| m.max(*t));
    let mut sample = LineSample::new(line.dim());
    let traj = solve_ode(
        |s, y, dy| {
            line.sample(s, &mut sample);
            dy[0] = sample.a[i] + sample.kappa[i] * y[0];
        },
        &[0.0],
        (lo, hi),
        &OdeOptions::with_tol(tol),
    )?;
    times.iter().map(|&t| Ok(traj.interpolate(t)?[0])).collect()
}

/// Ψ_i[f_{x0}](ρ, ·) at `times` (which must include 0) by adaptive integration.
pub fn psi_ode<F: FlowField + ?Sized>(field: &F, x0: &[f64], rho: &[f64], i: usize, times: &[f64]) -> Result<PsiCurve> {
    if !times.contains(&0.0) {
        return Err(Error::invalid("psi_ode times must include 0"));
    }
    let line = PsiLine::plain(field, x0, rho)?;
    let values = psi_ode_line(&line, i, times, PSI_ODE_TOL)?;
    Ok(PsiCurve {
        index: i,
        form: KernelForm::Plain,
        point: rho.to_vec(),
        x0: x0.to_vec(),
        times: times.to_vec(),
        values,
        method: PsiMethod::Ode,
    })
}

/// Ψ_i[f_{x0}](ρ, ·) at `times` by quadrature, packaged as a curve.
pub fn psi_curve<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    rho: &[f64],
    i: usize,
    times: &[f64],
    grid: QuadratureSpec,
) -> Result<PsiCurve> {
    let line = PsiLine::plain(field, x0, rho)?;
    check_index(i, line.dim())?;
    let rows = psi_all_quadrature(&line, times, grid)?;
    Ok(PsiCurve {
        index: i,
        form: KernelForm::Plain,
        point: rho.to_vec(),
        x0: x0.to_vec(),
        times: times.to_vec(),
        values: rows.iter().map(|r| r[i]).collect(),
        method: PsiMethod::Quadrature,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rho: Vec<f64>,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `values[k][i-1] = R_i(ρ, t_k)`.
    pub values: Vec<Vec<f64>>,
    /// Constant fit of `R_i` over `t ≥ horizon / 10`.
    pub limit: Vec<f64>,
    pub limit_stderr: Vec<f64>,
}

impl ResidualReport {
    pub fn max_abs_limit(&self) -> f64 {
        self.limit.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `t,R_1,...,R_n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.rho.len()).map(|i| format!("R_{i}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut rec = vec![fmt_sig(*t)];
            rec.extend(row.iter().map(|v| fmt_sig(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `samples` logarithmically spaced points in `[1, horizon]`.
pub fn log_times(horizon: f64, samples: usize) -> Vec<f64> {
    let samples = samples.max(2);
    let top = horizon.log10();
    (0..samples).map(|k| 10f64.powf(top * k as f64 / (samples - 1) as f64)).collect()
}

/// `R_i(ρ, t) = (Ψ_0 − Ψ_i)/t` at log-spaced times up to `horizon`.
pub fn residual<F: FlowField + ?Sized>(field: &F, x0: &[f64], rho: &[f64], horizon: f64, samples: usize) -> Result<ResidualReport> {
    let line = PsiLine::plain(field, x0, rho)?;
    residual_line(&line, horizon, samples, QuadratureSpec::for_direction(rho))
}

pub fn residual_line<F: FlowField + ?Sized>(
    line: &PsiLine<'_, F>,
    horizon: f64,
    samples: usize,
    grid: QuadratureSpec,
) -> Result<ResidualReport> {
    if !(horizon >= MIN_AVERAGING_HORIZON) {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_AVERAGING_HORIZON,
        });
    }
    let n = line.dim();
    let times = log_times(horizon, samples);
    let rows = psi_all_quadrature(line, &times, grid)?;
    let values: Vec<Vec<f64>> = rows
        .iter()
        .zip(&times)
        .map(|(r, t)| (1..=n).map(|i| (r[0] - r[i]) / t).collect())
        .collect();
    let tail: Vec<&Vec<f64>> = times
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t >= horizon / 10.0)
        .map(|(_, v)| v)
        .collect();
    let m = tail.len() as f64;
    let mut limit = vec![0.0; n];
    let mut limit_stderr = vec![0.0; n];
    for i in 0..n {
        let mean = tail.iter().map(|v| v[i]).sum::<f64>() / m;
        let var = if m > 1.0 {
            tail.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        limit[i] = mean;
        limit_stderr[i] = (var / m).sqrt();
    }
    Ok(ResidualReport {
        rho: line.direction().to_vec(),
        horizon,
        times,
        values,
        limit,
        limit_stderr,
    })
}

/// Cumulative Simpson integrals of `width` integrands from 0 to `sign·T`,
/// recorded at panel ends; entry 0 is `t = 0`.
pub(crate) fn cumulative_integrals(
    width: usize,
    horizon: f64,
    step: f64,
    sign: f64,
    integrand: &mut dyn FnMut(f64, &mut [f64]),
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (m, h) = panels(0.0, sign * horizon, step);
    let mut r = [vec![0.0; width], vec![0.0; width], vec![0.0; width]];
    integrand(0.0, &mut r[0]);
    let mut acc = vec![0.0; width];
    let mut times = Vec::with_capacity(m + 1);
    let mut values = Vec::with_capacity(m + 1);
    times.push(0.0);
    values.push(acc.clone());
    for p in 0..m {
        let a = 2.0 * h * p as f64;
        integrand(a + h, &mut r[1]);
        let end = if p + 1 == m { sign * horizon } else { a + 2.0 * h };
        integrand(end, &mut r[2]);
        for k in 0..width {
            acc[k] += h / 3.0 * (r[0][k] + 4.0 * r[1][k] + r[2][k]);
        }
        times.push(end);
        values.push(acc.clone());
        r.swap(0, 2);
    }
    (times, values)
}

/// Integrates `ψ̇_k = source_k(t) + rate_k(t) ψ_k`, `ψ_k(0) = 0`, on `[−T, T]`.
/// Growth past `max_psi` stops the run and is reported as a blow-up rather
/// than an error.
pub(crate) fn solve_psi_system(
    width: usize,
    horizon: f64,
    tol: f64,
    max_psi: f64,
    mut coefficients: impl FnMut(f64, &mut [f64], &mut [f64]),
) -> Result<(Vec<f64>, Vec<Vec<f64>>, bool)> {
    let mut source = vec![0.0; width];
    let mut rate = vec![0.0; width];
    let rhs = |t: f64, psi: &[f64], out: &mut [f64]| {
        coefficients(t, &mut source, &mut rate);
        for k in 0..width {
            out[k] = source[k] + rate[k] * psi[k];
        }
    };
    let opts = OdeOptions {
        tol,
        max_state_norm: max_psi,
        ..OdeOptions::default()
    };
    let (traj, blow_up) = match solve_ode(rhs, &vec![0.0; width], (-horizon, horizon), &opts) {
        Ok(traj) => (traj, false),
        Err(Error::IntegrationFailed { partial, .. }) if partial.blow_up() => (*partial, true),
        Err(e) => return Err(e),
    };
    let values = traj.states().map(|s| s.to_vec()).collect();
    Ok((traj.times().to_vec(), values, blow_up))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignProfile {
    /// `τ_i`, `i = 1..=n`.
    pub tau: Vec<i8>,
    /// Finite-horizon averages `λ_{i,z}`.
    pub lambda: Vec<f64>,
    pub horizon: f64,
    /// Averages with `|λ| ≤ zero_band` count as zero.
    pub zero_band: f64,
}

/// `−Sign(λ)` with `Sign(0) = +1`.
pub fn tau_of(lambda: f64, zero_band: f64) -> i8 {
    if lambda >= -zero_band {
        -1
    } else {
        1
    }
}

/// Time averages of `σ(I_i Z⁻¹ dg(νz) Z I_i)` on `[0, T]` and the signs they
/// induce. Averages within `10/T` of zero are treated as zero: finite-horizon
/// averages of an exact derivative are only `O(1/T)` and would otherwise pick
/// a sign at random.
pub fn tau_signs<F: FlowField + ?Sized>(g: &F, z: &[f64], horizon: f64) -> Result<SignProfile> {
    let line = PsiLine::conjugated(g, z)?;
    tau_signs_line(&line, horizon, QuadratureSpec::for_direction(z))
}

pub fn tau_signs_line<F: FlowField + ?Sized>(line: &PsiLine<'_, F>, horizon: f64, grid: QuadratureSpec) -> Result<SignProfile> {
    if !(horizon >= MIN_AVERAGING_HORIZON) || !horizon.is_finite() {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_AVERAGING_HORIZON,
        });
    }
    let n = line.dim();
    let (m, h) = panels(0.0, horizon, grid.step);
    let mut sample = LineSample::new(n);
    let mut integral = vec![0.0; n + 1];
    let mut add = |s: f64, w: f64, sample: &mut LineSample| {
        line.sample(s, sample);
        for (acc, k) in integral.iter_mut().zip(&sample.kappa) {
            *acc += w * k;
        }
    };
    add(0.0, 1.0, &mut sample);
    for p in 0..m {
        let a = 2.0 * h * p as f64;
        add(a + h, 4.0, &mut sample);
        add(a + 2.0 * h, if p + 1 == m { 1.0 } else { 2.0 }, &mut sample);
    }
    let q = n as f64;
    let lambda: Vec<f64> = (1..=n).map(|i| integral[i] * h / 3.0 * q / horizon).collect();
    let zero_band = 10.0 / horizon;
    Ok(SignProfile {
        tau: lambda.iter().map(|l| tau_of(*l, zero_band)).collect(),
        lambda,
        horizon,
        zero_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Involution;
    use crate::field::{make_model, FieldBounds, FnField, ModelSpec, PeriodicField};

    fn constant(omega: &[f64]) -> crate::field::Model {
        make_model(ModelSpec::Constant { omega: omega.to_vec() }).unwrap()
    }

    fn circle(c: f64, eps: f64) -> crate::field::Model {
        make_model(ModelSpec::Circle { c, eps }).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let f = constant(&[1.0, 2.0]);
        for s in [-3.0, 0.0, 2.5] {
            assert_eq!(coefficient_a(&f, &[0.0, 0.0], &[1.0, 2.0], 1, s).unwrap(), 0.0);
            assert_eq!(coefficient_a(&f, &[0.0, 0.0], &[2.0, 2.0], 0, s).unwrap(), 1.0);
            assert_eq!(coefficient_a(&f, &[0.0, 0.0], &[2.0, 2.0], 1, s).unwrap(), -1.0);
        }
        assert!(coefficient_a(&f, &[0.0, 0.0], &[2.0, 2.0], 3, 0.0).is_err());
    }

    #[test]
    fn fast_kernel_sums_match_involutions() {
        let spec = ModelSpec::WinfreeType {
            omega: vec![2.0, 2.7, 3.1],
            kappa: 0.3,
        };
        let f = make_model(spec).unwrap();
        let z = [1.3, 2.1, 0.7];
        let line = PsiLine::conjugated(&f, &z).unwrap();
        let mut s = LineSample::new(3);
        line.sample(0.37, &mut s);
        for i in 0..=3 {
            let inv = Involution::new(i, 3).unwrap();
            let expect = inv.scaled_conjugated_sum(&s.jac, Some(&z)) / 3.0;
            assert!((s.kappa[i] - expect).abs() < 1e-14);
            let u: Vec<f64> = (0..3).map(|j| 1.0 - s.value[j] / z[j]).collect();
            assert!((s.a[i] - inv.signed_sum(&u)).abs() < 1e-14);
        }
    }

    #[test]
    fn conjugated_at_ones_is_plain() {
        let f = make_model(ModelSpec::TorusProduct {
            c: vec![2.0, 3.0],
            eps: vec![0.1, 0.2],
        })
        .unwrap();
        let ones = [1.0, 1.0];
        let conj = PsiLine::conjugated(&f, &ones).unwrap();
        let plain = PsiLine::plain(&f, &[0.0, 0.0], &ones).unwrap();
        let grid = QuadratureSpec { step: 0.01 };
        let a = psi_all_quadrature(&conj, &[3.0, -2.0], grid).unwrap();
        let b = psi_all_quadrature(&plain, &[3.0, -2.0], grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_field_psi_is_linear() {
        let f = constant(&[1.0, 2.0]);
        let rho = [1.5, 1.0];
        let grid = QuadratureSpec::for_direction(&rho);
        for t in [-7.0, 0.0, 3.0, 40.0] {
            for i in 0..=2 {
                let inv = Involution::new(i, 2).unwrap();
                let expect = inv.signed_sum(&[0.5, -1.0]) * t;
                let got = psi_quadrature(&f, &[0.0, 0.0], &rho, i, t, grid).unwrap();
                assert!((got - expect).abs() < 1e-12, "i={i} t={t} {got} {expect}");
            }
        }
        let curve = psi_ode(&f, &[0.0, 0.0], &rho, 1, &[0.0, 10.0, -5.0]).unwrap();
        assert!((curve.values[1] + 15.0).abs() < 1e-10);
        assert!((curve.values[2] - 7.5).abs() < 1e-10);
        assert_eq!(curve.values[0], 0.0);
    }

    #[test]
    fn psi_is_linear_in_source() {
        let f = constant(&[1.0, 2.0]);
        let x0 = [0.0, 0.0];
        let grid = QuadratureSpec { step: 0.01 };
        let base = psi_quadrature(&f, &x0, &[1.25, 2.5], 2, 9.0, grid).unwrap();
        let scaled = psi_quadrature(&f, &x0, &[1.75, 3.5], 2, 9.0, grid).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn circle_quadrature_matches_ode() {
        let f = circle(2.0, 0.1);
        let rho = [1.99750];
        let q = psi_quadrature(&f, &[0.0], &rho, 0, 50.0, QuadratureSpec::for_direction(&rho)).unwrap();
        let o = psi_ode(&f, &[0.0], &rho, 0, &[0.0, 50.0]).unwrap().values[1];
        assert!((q - o).abs() < 1e-8, "{q} vs {o}");
    }

    #[test]
    fn kernel_matches_direct_double_integral() {
        // Brute force: nested trapezoid on a fine grid.
        let f = circle(2.0, 0.4);
        let (rho, t) = (1.9, 3.0);
        let q = psi_quadrature(&f, &[0.1], &[rho], 1, t, QuadratureSpec { step: 1e-3 }).unwrap();
        let m = 6000;
        let h = t / m as f64;
        let kappa = |s: f64| {
            let mut j = Matrix::zeros(1, 1);
            f.jacobian(&[s * rho + 0.1], &mut j);
            j[(0, 0)]
        };
        let mut g = vec![0.0; m + 1];
        for k in 1..=m {
            let s = k as f64 * h;
            g[k] = g[k - 1] + 0.5 * h * (kappa(s - h) + kappa(s));
        }
        let a = |s: f64| {
            let mut v = [0.0];
            f.eval(&[s * rho + 0.1], &mut v);
            -(rho - v[0])
        };
        let mut direct = 0.0;
        for k in 0..=m {
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            direct += w * h * a(k as f64 * h) * (g[m] - g[k]).exp();
        }
        assert!((q - direct).abs() < 1e-5, "{q} vs {direct}");
    }

    #[test]
    fn overflow_is_reported() {
        let bounds = FieldBounds {
            sup_f: 1.0,
            sup_df: 50.0,
            sup_d2f: 0.0,
        };
        // Not periodic, but exercises the guard: df ≡ 50.
        let f = FnField::new(1, "steep", bounds, |x: &[f64], out: &mut [f64]| out[0] = 50.0 * x[0]);
        let r = psi_quadrature(&f, &[0.0], &[1.0], 0, 20.0, QuadratureSpec { step: 0.01 });
        assert!(matches!(r, Err(Error::KernelOverflow { index: 0, .. })), "{r:?}");
    }

    #[test]
    fn residual_examples() {
        let f = constant(&[1.0, 2.0]);
        let r = residual(&f, &[0.0, 0.0], &[1.0, 2.0], 100.0, 16).unwrap();
        assert!(r.values.iter().flatten().all(|v| v.abs() < 1e-12));
        let r = residual(&f, &[0.0, 0.0], &[1.5, 1.0], 100.0, 16).unwrap();
        for row in &r.values {
            assert!((row[0] - 1.0).abs() < 1e-12 && (row[1] + 2.0).abs() < 1e-12, "{row:?}");
        }
        assert!(residual(&f, &[0.0, 0.0], &[1.0, 2.0], 50.0, 16).is_err());

        let c = circle(2.0, 0.1);
        let rho = (4.0f64 - 0.01).sqrt();
        let r = residual(&c, &[0.0], &[rho], 1000.0, 32).unwrap();
        assert!(r.limit[0].abs() < 1e-3, "{:?}", r.limit);
    }

    #[test]
    fn tau_conventions() {
        let f = constant(&[2.0, 3.0]);
        let p = tau_signs(&f, &[2.0, 3.0], 100.0).unwrap();
        assert_eq!(p.tau, vec![-1, -1]);
        assert!(p.lambda.iter().all(|l| *l == 0.0));

        // g(x) = 3 − 0.2 x has constant derivative −0.2 < 0.
        let bounds = FieldBounds {
            sup_f: 3.0,
            sup_df: 0.2,
            sup_d2f: 0.0,
        };
        let g = FnField::new(1, "ramp", bounds, |x: &[f64], out: &mut [f64]| out[0] = 3.0 - 0.2 * x[0]);
        let p = tau_signs(&g, &[1.5], 200.0).unwrap();
        assert!((p.lambda[0] + 0.2).abs() < 1e-6);
        assert_eq!(p.tau, vec![1]);
    }

    #[test]
    fn curves_export() {
        let f = constant(&[1.0]);
        let c = psi_curve(&f, &[0.0], &[2.0], 0, &[0.0, 1.0], QuadratureSpec { step: 0.1 }).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,value\n0.00000000e0,0.00000000e0\n1.00000000e0,1.00000000e0\n"
        );
    }
}
