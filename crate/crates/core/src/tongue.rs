//! Locking under perturbation and Arnold-tongue scans.
//!
//! For `ẏ = f(y) + ζ(t)` with `ρ` the rotation vector of the unperturbed flow
//! from `x0`, define
//!
//! `Ψ_i[ζ](t) = ∫₀ᵗ exp((1/n) ∫ₛᵗ σ(I_i df(ρν + x0) I_i) dν) σ(I_i ζ(s)) ds`.
//!
//! The perturbed flow keeps the rotation vector `ρ` exactly when every
//! `Ψ_0[ζ] − Ψ_i[ζ]` stays bounded. [`perturbation_criterion`] evaluates that
//! test; [`simulated_locking`] is the brute-force counterpart.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::Matrix;
use crate::error::{Error, Result};
use crate::export::fmt_sig;
use crate::field::{make_model, FlowField, ModelSpec, PeriodicField};
use crate::flow::{dyadic_windows, integrate, rotation_estimate, WindowOptions, WindowStats};
use crate::psi::{panels, KernelStream, LineSample, PsiLine, QuadratureSpec, MIN_AVERAGING_HORIZON};

/// Horizon for [`perturbation_criterion`] in reference runs.
pub const CRITERION_HORIZON: f64 = 1e4;

/// Windows for [`perturbation_criterion`]: `Ψ[ζ]` for a slowly decaying `ζ`
/// (say `1/(1 + t²)`) settles like `1/t`, which windows starting near `t = 8`
/// mistake for growth.
pub fn criterion_windows() -> WindowOptions {
    WindowOptions {
        min_window_start: 64.0,
        ..WindowOptions::default()
    }
}

/// How the caller expects `ζ` to behave at large `|t|`. Only informational:
/// the criterion itself is what decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrability {
    Decaying,
    Bounded,
    Growing,
}

pub type Forcing = Box<dyn Fn(f64, &mut [f64]) + Send + Sync>;

pub struct Perturbation {
    pub label: String,
    pub dim: usize,
    pub tag: Integrability,
    func: Forcing,
}

impl std::fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("tag", &self.tag)
            .finish_non_exhaustive()
    }
}

impl Perturbation {
    pub fn new(label: impl Into<String>, dim: usize, tag: Integrability, func: Forcing) -> Self {
        Self {
            label: label.into(),
            dim,
            tag,
            func,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new("zero", dim, Integrability::Decaying, Box::new(|_, out| out.fill(0.0)))
    }

    pub fn constant(v: Vec<f64>) -> Self {
        let dim = v.len();
        Self::new(
            "constant",
            dim,
            Integrability::Bounded,
            Box::new(move |_, out| out.copy_from_slice(&v)),
        )
    }

    /// `v·e^{−t²}`.
    pub fn gaussian(v: Vec<f64>) -> Self {
        let dim = v.len();
        Self::new(
            "gaussian",
            dim,
            Integrability::Decaying,
            Box::new(move |t, out| {
                let w = (-t * t).exp();
                for (o, x) in out.iter_mut().zip(&v) {
                    *o = w * x;
                }
            }),
        )
    }

    /// `v / (1 + t²)`.
    pub fn lorentzian(v: Vec<f64>) -> Self {
        let dim = v.len();
        Self::new(
            "lorentzian",
            dim,
            Integrability::Decaying,
            Box::new(move |t, out| {
                let w = 1.0 / (1.0 + t * t);
                for (o, x) in out.iter_mut().zip(&v) {
                    *o = w * x;
                }
            }),
        )
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        (self.func)(t, out)
    }
}

/// `(t, y) ↦ f(y) + ζ(t)`.
pub struct PerturbedField<'a, F: PeriodicField + ?Sized> {
    pub field: &'a F,
    pub zeta: &'a Perturbation,
}

impl<F: PeriodicField + ?Sized> FlowField for PerturbedField<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_at(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.field.eval(y, out);
        let n = out.len();
        let mut z = [0.0; 8];
        if n <= z.len() {
            self.zeta.eval(t, &mut z[..n]);
            out.iter_mut().zip(&z[..n]).for_each(|(o, z)| *o += z);
        } else {
            let mut z = vec![0.0; n];
            self.zeta.eval(t, &mut z);
            out.iter_mut().zip(&z).for_each(|(o, z)| *o += z);
        }
    }

    fn jacobian_at(&self, _t: f64, y: &[f64], out: &mut Matrix) {
        self.field.jacobian(y, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationVerdict {
    pub label: String,
    pub tag: Integrability,
    pub horizon: f64,
    /// Windows of `|Ψ_0[ζ] − Ψ_i[ζ]|` over `[−T, T]`, one per `i`.
    pub windows: Vec<WindowStats>,
    pub locked: bool,
}

/// Evaluates `Ψ_0[ζ]..Ψ_n[ζ]` along `ρt + x0` on `[−T, T]` and tests every
/// `|Ψ_0[ζ] − Ψ_i[ζ]|` with the dyadic-window slope test.
pub fn perturbation_criterion<F: PeriodicField + ?Sized>(
    field: &F,
    x0: &[f64],
    rho: &[f64],
    zeta: &Perturbation,
    horizon: f64,
    windows: &WindowOptions,
) -> Result<PerturbationVerdict> {
    let n = field.dim();
    if zeta.dim != n {
        return Err(Error::invalid(format!(
            "perturbation has dimension {} but the field has {n}",
            zeta.dim
        )));
    }
    if !(horizon >= MIN_AVERAGING_HORIZON) || !horizon.is_finite() {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_AVERAGING_HORIZON,
        });
    }
    let line = PsiLine::plain(field, x0, rho)?;
    let grid = QuadratureSpec::for_direction(rho);
    let mut times = Vec::new();
    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); n];
    for sign in [-1.0, 1.0] {
        let (m, h) = panels(0.0, sign * horizon, grid.step);
        let mut streams: Vec<KernelStream> = (0..=n).map(|i| KernelStream::new(1, i)).collect();
        let mut samples = [LineSample::new(n), LineSample::new(n), LineSample::new(n)];
        let mut src = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
        let mut z = vec![0.0; n];
        let mut load = |s: f64, sample: &mut LineSample, src: &mut [f64]| {
            line.sample(s, sample);
            zeta.eval(s, &mut z);
            let total: f64 = z.iter().sum();
            src[0] = total;
            for i in 0..n {
                src[i + 1] = total - 2.0 * z[i];
            }
        };
        load(0.0, &mut samples[0], &mut src[0]);
        if sign > 0.0 {
            times.push(0.0);
            diffs.iter_mut().for_each(|d| d.push(0.0));
        }
        for p in 0..m {
            let a = 2.0 * h * p as f64;
            let end = if p + 1 == m { sign * horizon } else { a + 2.0 * h };
            load(a + h, &mut samples[1], &mut src[1]);
            load(end, &mut samples[2], &mut src[2]);
            for (i, stream) in streams.iter_mut().enumerate() {
                let u = [src[0][i], src[1][i], src[2][i]];
                let r = [samples[0].kappa[i], samples[1].kappa[i], samples[2].kappa[i]];
                stream.panel(h, r, |_, node| u[node], end)?;
            }
            times.push(end);
            let psi0 = streams[0].value(0);
            for (i, d) in diffs.iter_mut().enumerate() {
                d.push((psi0 - streams[i + 1].value(0)).abs());
            }
            samples.swap(0, 2);
            src.swap(0, 2);
        }
    }
    let stats: Vec<WindowStats> = diffs.iter().map(|d| dyadic_windows(&times, d, windows)).collect();
    Ok(PerturbationVerdict {
        label: zeta.label.clone(),
        tag: zeta.tag,
        horizon,
        locked: stats.iter().all(|w| w.passed),
        windows: stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedLocking {
    pub rho_unperturbed: Vec<f64>,
    pub rho_perturbed: Vec<f64>,
    /// `‖ρ_y − ρ_x‖∞`.
    pub gap: f64,
    pub locked: bool,
}

/// Integrates both `ẋ = f(x)` and `ẏ = f(y) + ζ(t)` from `x0` on `[0, T]` and
/// compares their tail-secant rotation estimates.
pub fn simulated_locking<F: PeriodicField + ?Sized>(
    field: &F,
    x0: &[f64],
    zeta: &Perturbation,
    horizon: f64,
    tol: f64,
    lock_tol: f64,
) -> Result<SimulatedLocking> {
    let x = integrate(field, x0, (0.0, horizon), tol)?;
    let y = integrate(&PerturbedField { field, zeta }, x0, (0.0, horizon), tol)?;
    let rho_x = rotation_estimate(&x)?.lambda;
    let rho_y = rotation_estimate(&y)?.lambda;
    let gap = rho_x.iter().zip(&rho_y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(SimulatedLocking {
        rho_unperturbed: rho_x,
        rho_perturbed: rho_y,
        gap,
        locked: gap <= lock_tol,
    })
}

/// The reference set of perturbation cases: model, base point and forcing.
pub fn shipped_perturbations() -> Vec<(ModelSpec, Vec<f64>, Perturbation)> {
    let constant = ModelSpec::Constant { omega: vec![1.0, 2.0] };
    let circle = ModelSpec::Circle { c: 2.0, eps: 0.1 };
    let torus = ModelSpec::TorusProduct {
        c: vec![2.0, 3.0],
        eps: vec![0.1, 0.1],
    };
    let mut circle_const = Perturbation::constant(vec![0.05]);
    circle_const.label = "constant-0.05".into();
    vec![
        (constant.clone(), vec![0.0, 0.0], Perturbation::zero(2)),
        (constant.clone(), vec![0.0, 0.0], Perturbation::constant(vec![0.1, -0.05])),
        (constant, vec![0.0, 0.0], Perturbation::gaussian(vec![0.3, -0.2])),
        (circle.clone(), vec![0.0], Perturbation::gaussian(vec![0.3])),
        (circle, vec![0.0], circle_const),
        (torus, vec![0.0, 0.0], Perturbation::lorentzian(vec![0.2, -0.1])),
    ]
}

/// One scanned parameter: grid values `p` are written to the model key as
/// `scale·p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Axis {
    pub fn new(key: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            key: key.into(),
            values,
            scale: 1.0,
        }
    }

    /// `count` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(key: impl Into<String>, lo: f64, hi: f64, count: usize) -> Self {
        let values = match count {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
        };
        Self::new(key, values)
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongueFamily {
    pub template: ModelSpec,
    pub x0: Vec<f64>,
    pub axis1: Axis,
    pub axis2: Axis,
}

impl TongueFamily {
    /// `ẋ = Ω − ε sin(2πx)` over `Ω ∈ [−1, 1]` and `ε ∈ [0, 1]`.
    pub fn standard_circle(omega_count: usize, eps_count: usize) -> Self {
        Self {
            template: ModelSpec::Circle { c: 0.0, eps: 0.0 },
            x0: vec![0.0],
            axis1: Axis::linspace("c", -1.0, 1.0, omega_count),
            axis2: Axis::linspace("eps", 0.0, 1.0, eps_count).scaled(-1.0),
        }
    }

    pub fn cell_spec(&self, p1: f64, p2: f64) -> Result<ModelSpec> {
        self.template
            .with_param(&self.axis1.key, self.axis1.scale * p1)?
            .with_param(&self.axis2.key, self.axis2.scale * p2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongueOptions {
    pub horizon: f64,
    pub tol: f64,
    pub lock_tol: f64,
    /// Locking values; `None` accepts any `p/q` with `q ≤ max_denominator`.
    pub targets: Option<Vec<f64>>,
    pub max_denominator: u32,
}

impl Default for TongueOptions {
    fn default() -> Self {
        Self {
            horizon: 2500.0,
            tol: 1e-9,
            lock_tol: 1e-3,
            targets: None,
            max_denominator: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongueCell {
    pub param1: f64,
    pub param2: f64,
    pub rho: Vec<f64>,
    /// Locking value per component when every component locked.
    pub locked_to: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongueGrid {
    pub family: TongueFamily,
    pub options: TongueOptions,
    /// Row-major: `cells[j * axis1.len() + i]` is `(axis1[i], axis2[j])`.
    pub cells: Vec<TongueCell>,
}

impl TongueGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.family.axis1.values.len(), self.family.axis2.values.len())
    }

    pub fn cell(&self, i: usize, j: usize) -> &TongueCell {
        &self.cells[j * self.family.axis1.values.len() + i]
    }

    /// `param1,param2,rho_1..rho_n,locked`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.family.template.dim();
        let mut header = vec!["param1".to_string(), "param2".to_string()];
        header.extend((1..=n).map(|i| format!("rho_{i}")));
        header.push("locked".into());
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![fmt_sig(c.param1), fmt_sig(c.param2)];
            if c.rho.len() == n {
                row.extend(c.rho.iter().map(|r| fmt_sig(*r)));
            } else {
                row.extend(std::iter::repeat_n("NaN".to_string(), n));
            }
            row.push(if c.locked_to.is_some() { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The locking value of `rho` within `tol`, if any.
pub fn lock_target(rho: f64, opts: &TongueOptions) -> Option<f64> {
    if !rho.is_finite() {
        return None;
    }
    match &opts.targets {
        Some(targets) => targets
            .iter()
            .copied()
            .filter(|t| (rho - t).abs() <= opts.lock_tol)
            .min_by(|a, b| (rho - a).abs().total_cmp(&(rho - b).abs())),
        None => (1..=opts.max_denominator.max(1)).find_map(|q| {
            let q = q as f64;
            let p = (rho * q).round();
            ((rho - p / q).abs() <= opts.lock_tol).then_some(p / q)
        }),
    }
}

fn scan_cell(family: &TongueFamily, p1: f64, p2: f64, opts: &TongueOptions) -> TongueCell {
    let run = || -> Result<Vec<f64>> {
        let model = make_model(family.cell_spec(p1, p2)?)?;
        let traj = integrate(&model, &family.x0, (0.0, opts.horizon), opts.tol)?;
        Ok(rotation_estimate(&traj)?.lambda)
    };
    match run() {
        Ok(rho) => {
            let locked: Option<Vec<f64>> = rho.iter().map(|r| lock_target(*r, opts)).collect();
            TongueCell {
                param1: p1,
                param2: p2,
                rho,
                locked_to: locked,
                error: None,
            }
        }
        Err(e) => TongueCell {
            param1: p1,
            param2: p2,
            rho: Vec::new(),
            locked_to: None,
            error: Some(e.to_string()),
        },
    }
}

/// Rotation estimates over the grid; cells run in parallel and land at a fixed
/// index, so the result does not depend on scheduling. Failed cells keep their
/// error message and an empty `rho`.
pub fn tongue_scan(family: &TongueFamily, opts: &TongueOptions) -> Result<TongueGrid> {
    if family.axis1.values.is_empty() || family.axis2.values.is_empty() {
        return Err(Error::invalid("both axes need at least one value"));
    }
    if family.x0.len() != family.template.dim() {
        return Err(Error::invalid("x0 dimension does not match the model"));
    }
    if !(opts.lock_tol >= 0.0) || !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    // Surface configuration mistakes before the scan rather than per cell.
    family.cell_spec(family.axis1.values[0], family.axis2.values[0])?;
    let (n1, n2) = (family.axis1.values.len(), family.axis2.values.len());
    let cells = (0..n1 * n2)
        .into_par_iter()
        .map(|k| scan_cell(family, family.axis1.values[k % n1], family.axis2.values[k / n1], opts))
        .collect();
    Ok(TongueGrid {
        family: family.clone(),
        options: opts.clone(),
        cells,
    })
}

/// `sign(Ω)·√(Ω² − ε²)` outside the tongue `|Ω| ≤ |ε|`, else 0.
pub fn circle_rotation_number(omega: f64, eps: f64) -> f64 {
    let d = omega * omega - eps * eps;
    if d <= 0.0 {
        0.0
    } else {
        omega.signum() * d.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_window() -> WindowOptions {
        WindowOptions::default()
    }

    #[test]
    fn zero_forcing_gives_zero_psi() {
        let f = make_model(ModelSpec::Constant { omega: vec![1.0, 2.0] }).unwrap();
        let v = perturbation_criterion(&f, &[0.0, 0.0], &[1.0, 2.0], &Perturbation::zero(2), 200.0, &short_window()).unwrap();
        assert!(v.locked);
        assert!(v.windows.iter().all(|w| w.sup == 0.0));
    }

    #[test]
    fn constant_forcing_drifts_linearly() {
        let f = make_model(ModelSpec::Constant { omega: vec![1.0, 2.0] }).unwrap();
        let z = Perturbation::constant(vec![0.1, 0.0]);
        let v = perturbation_criterion(&f, &[0.0, 0.0], &[1.0, 2.0], &z, 256.0, &short_window()).unwrap();
        assert!(!v.locked);
        // |Ψ_0 − Ψ_1| = 2 v_1 |t|, so the last window sup is 2·0.1·256.
        assert!((v.windows[0].sup - 51.2).abs() < 1e-9, "{}", v.windows[0].sup);
        assert!(v.windows[1].passed);
    }

    #[test]
    fn gaussian_kick_on_constant_field_locks() {
        let f = make_model(ModelSpec::Constant { omega: vec![1.0, 2.0] }).unwrap();
        let z = Perturbation::gaussian(vec![0.3, -0.2]);
        let v = perturbation_criterion(&f, &[0.0, 0.0], &[1.0, 2.0], &z, 1000.0, &short_window()).unwrap();
        assert!(v.locked);
        let sim = simulated_locking(&f, &[0.0, 0.0], &z, 1e4, 1e-10, 1e-4).unwrap();
        assert!(sim.locked && sim.gap < 1e-4, "{sim:?}");
    }

    #[test]
    fn lock_targets() {
        let opts = TongueOptions::default();
        assert_eq!(lock_target(0.3334, &opts), Some(1.0 / 3.0));
        assert_eq!(lock_target(-0.0004, &opts), Some(0.0));
        assert_eq!(lock_target(0.0625 + 0.002, &opts), None);
        let only_zero = TongueOptions {
            targets: Some(vec![0.0]),
            ..opts
        };
        assert_eq!(lock_target(0.5, &only_zero), None);
        assert_eq!(lock_target(0.0009, &only_zero), Some(0.0));
    }

    #[test]
    fn zero_coupling_row_is_the_identity() {
        let family = TongueFamily {
            axis2: Axis::new("eps", vec![0.0]),
            ..TongueFamily::standard_circle(11, 1)
        };
        let opts = TongueOptions {
            horizon: 200.0,
            targets: Some(vec![0.0]),
            ..TongueOptions::default()
        };
        let grid = tongue_scan(&family, &opts).unwrap();
        for c in &grid.cells {
            assert!((c.rho[0] - c.param1).abs() < 1e-9);
            assert_eq!(c.locked_to.is_some(), c.param1.abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn small_scan_matches_analytic_tongue() {
        let family = TongueFamily::standard_circle(21, 6);
        let opts = TongueOptions {
            horizon: 1000.0,
            targets: Some(vec![0.0]),
            ..TongueOptions::default()
        };
        let grid = tongue_scan(&family, &opts).unwrap();
        let (n1, n2) = grid.shape();
        assert_eq!(grid.cells.len(), n1 * n2);
        for c in &grid.cells {
            let exact = circle_rotation_number(c.param1, c.param2);
            if (c.param1.abs() - c.param2).abs() > 0.05 {
                assert!((c.rho[0] - exact).abs() < 2e-3, "{c:?} vs {exact}");
            }
        }
        let again = tongue_scan(&family, &opts).unwrap();
        assert_eq!(grid, again);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("param1,param2,rho_1,locked\n"));
        assert_eq!(text.lines().count(), n1 * n2 + 1);
    }

    #[test]
    fn bad_axis_key_is_a_config_error() {
        let family = TongueFamily {
            axis1: Axis::new("kappa", vec![0.1]),
            ..TongueFamily::standard_circle(3, 3)
        };
        assert!(matches!(
            tongue_scan(&family, &TongueOptions::default()),
            Err(Error::ParameterOutOfRange { .. })
        ));
    }
}
