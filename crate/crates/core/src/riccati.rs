//! Generalized Riccati equations `ẏ = 𝒜(t) + ℬ(t)y + yᵀℋ(t)y`, `y(0) = 0`,
//! where `(yᵀℋy)_i = yᵀℋ_i y`.
//!
//! Boundedness of `y` on ℝ is expected when `‖ℬ‖, ‖ℋ‖ ≤ γ` with γ small and
//! the two hypotheses below hold:
//!
//! * H1: `∫₀ᵗ σ(ℬ)` is bounded, and for each `i` some sign `τ_i` makes
//!   `τ_i ∫₀ᵗ σ(I_i ℬ(τ_i ν) I_i) dν` bounded above on `t ≥ 0`;
//! * H2: `ψ̇_i = σ(I_i 𝒜) + σ(I_i ℬ I_i) ψ_i / q` has `ψ_0 − ψ_i` bounded.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{max_norm, sum_entries, Matrix};
use crate::error::{Error, Result};
use crate::export::fmt_sig;
use crate::field::PeriodicField;
use crate::flow::{dyadic_windows, solve_ode, OdeOptions, Trajectory, WindowOptions, WindowStats};
use crate::leader::{AffineCurve, Curve, PsiBullet, TraceBullet};
use crate::psi::{cumulative_integrals, solve_psi_system, MIN_AVERAGING_HORIZON};

pub type VectorCoefficient<'a> = Box<dyn Fn(f64, &mut [f64]) + Send + Sync + 'a>;
pub type MatrixCoefficient<'a> = Box<dyn Fn(f64, &mut Matrix) + Send + Sync + 'a>;
/// Fills one `q × q` slice per component.
pub type TensorCoefficient<'a> = Box<dyn Fn(f64, &mut [Matrix]) + Send + Sync + 'a>;

/// `y` beyond this norm counts as finite-time blow-up.
pub const BLOW_UP_NORM: f64 = 1e8;

const SPOT_CHECKS: usize = 257;
const SPOT_CHECK_SPAN: f64 = 100.0;

pub struct RiccatiSystem<'a> {
    q: usize,
    gamma: f64,
    a: VectorCoefficient<'a>,
    b: MatrixCoefficient<'a>,
    h: TensorCoefficient<'a>,
}

impl std::fmt::Debug for RiccatiSystem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiccatiSystem")
            .field("q", &self.q)
            .field("gamma", &self.gamma)
            .finish_non_exhaustive()
    }
}

/// Largest induced max-norm over the slices.
pub fn tensor_norm(h: &[Matrix]) -> f64 {
    h.iter().map(Matrix::max_norm).fold(0.0, f64::max)
}

impl<'a> RiccatiSystem<'a> {
    /// Builds the system and spot-checks `max(‖ℬ(t)‖, ‖ℋ(t)‖) ≤ γ` on a grid
    /// over `[−100, 100]`.
    pub fn new(q: usize, gamma: f64, a: VectorCoefficient<'a>, b: MatrixCoefficient<'a>, h: TensorCoefficient<'a>) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("Riccati dimension must be positive"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(out_of_range(format!("gamma = {gamma} must lie in [0, 1)")));
        }
        let sys = Self { q, gamma, a, b, h };
        let mut bm = Matrix::zeros(q, q);
        let mut hm = vec![Matrix::zeros(q, q); q];
        for k in 0..SPOT_CHECKS {
            let t = -SPOT_CHECK_SPAN + 2.0 * SPOT_CHECK_SPAN * k as f64 / (SPOT_CHECKS - 1) as f64;
            (sys.b)(t, &mut bm);
            (sys.h)(t, &mut hm);
            let norm = bm.max_norm().max(tensor_norm(&hm));
            if !(norm <= gamma * (1.0 + 1e-12)) {
                return Err(out_of_range(format!(
                    "coefficient norm {norm:.6e} at t = {t} exceeds gamma = {gamma}"
                )));
            }
        }
        Ok(sys)
    }

    pub fn zero(q: usize) -> Self {
        Self {
            q,
            gamma: 0.0,
            a: Box::new(|_, out| out.fill(0.0)),
            b: Box::new(|_, out| out.fill(0.0)),
            h: Box::new(|_, out| out.iter_mut().for_each(|m| m.fill(0.0))),
        }
    }

    /// Time-independent coefficients.
    pub fn constant(a: Vec<f64>, b: Matrix, h: Vec<Matrix>, gamma: f64) -> Result<RiccatiSystem<'static>> {
        let q = a.len();
        if b.rows() != q || b.cols() != q || h.len() != q || h.iter().any(|m| m.rows() != q || m.cols() != q) {
            return Err(Error::invalid("coefficient shapes do not match the dimension of A"));
        }
        RiccatiSystem::new(
            q,
            gamma,
            Box::new(move |_, out| out.copy_from_slice(&a)),
            Box::new(move |_, out| *out = b.clone()),
            Box::new(move |_, out| out.clone_from_slice(&h)),
        )
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval_a(&self, t: f64, out: &mut [f64]) {
        (self.a)(t, out)
    }

    pub fn eval_b(&self, t: f64, out: &mut Matrix) {
        (self.b)(t, out)
    }

    pub fn eval_h(&self, t: f64, out: &mut [Matrix]) {
        (self.h)(t, out)
    }
}

fn out_of_range(reason: String) -> Error {
    Error::ParameterOutOfRange {
        model: "riccati".into(),
        reason,
    }
}

/// Integrates the system from `y(0) = 0` over `span ∋ 0`. A blow-up returns
/// the partial trajectory with [`Trajectory::blow_up`] set.
pub fn riccati_simulate(sys: &RiccatiSystem<'_>, span: (f64, f64), tol: f64) -> Result<Trajectory> {
    let q = sys.q;
    let mut a = vec![0.0; q];
    let mut b = Matrix::zeros(q, q);
    let mut h = vec![Matrix::zeros(q, q); q];
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        sys.eval_a(t, &mut a);
        sys.eval_b(t, &mut b);
        sys.eval_h(t, &mut h);
        for i in 0..q {
            let mut v = a[i];
            for j in 0..q {
                v += b[(i, j)] * y[j];
                let mut hy = 0.0;
                for k in 0..q {
                    hy += h[i][(j, k)] * y[k];
                }
                v += y[j] * hy;
            }
            out[i] = v;
        }
    };
    let opts = OdeOptions {
        tol,
        max_state_norm: BLOW_UP_NORM,
        ..OdeOptions::default()
    };
    match solve_ode(rhs, &vec![0.0; q], span, &opts) {
        Ok(traj) => Ok(traj),
        Err(Error::IntegrationFailed { partial, .. }) if partial.blow_up() => Ok(*partial),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOptions {
    /// Quadrature step for the H1 integrals.
    pub step: f64,
    pub ode_tol: f64,
    pub max_psi: f64,
    pub windows: WindowOptions,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        Self {
            step: 1.0 / 512.0,
            ode_tol: 1e-10,
            max_psi: 1e12,
            windows: WindowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignChoice {
    pub index: usize,
    pub tau: i8,
    /// One-sided sups of `±∫₀^{±t} σ(I_i ℬ I_i)` for `τ = +1` and `τ = −1`.
    pub sup_plus: f64,
    pub sup_minus: f64,
    /// Windows of the chosen orientation.
    pub windows: WindowStats,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub horizon: f64,
    pub h1_trace: TraceBullet,
    pub h1_signs: Vec<SignChoice>,
    pub h2: Vec<PsiBullet>,
    pub h1_passed: bool,
    pub h2_passed: bool,
    pub passed: bool,
    #[serde(skip)]
    pub psi_times: Vec<f64>,
    #[serde(skip)]
    pub psi_values: Vec<Vec<f64>>,
}

impl HypothesisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `t,psi_0,…,psi_q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let width = self.psi_values.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..width).map(|i| format!("psi_{i}")));
        w.write_record(&header)?;
        for (t, v) in self.psi_times.iter().zip(&self.psi_values) {
            let mut row = vec![fmt_sig(*t)];
            row.extend(v.iter().map(|x| fmt_sig(*x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `σ(I_i M I_i)` for `i = 0..=q`.
fn conjugated_sums(m: &Matrix, out: &mut [f64]) {
    let q = m.rows();
    let total = sum_entries(m);
    out[0] = total;
    for i in 0..q {
        let (mut row, mut col) = (0.0, 0.0);
        for j in 0..q {
            row += m[(i, j)];
            col += m[(j, i)];
        }
        out[i + 1] = total - 2.0 * (row + col) + 4.0 * m[(i, i)];
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon >= MIN_AVERAGING_HORIZON) || !horizon.is_finite() {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_AVERAGING_HORIZON,
        });
    }
    Ok(())
}

/// Evaluates H1 and H2 on `[−T, T]`.
///
/// `τ_i` is `−1` when both orientations pass, otherwise the orientation with
/// the smaller one-sided sup (ties go to `−1`).
pub fn hypothesis_check(sys: &RiccatiSystem<'_>, horizon: f64, opts: &HypothesisOptions) -> Result<HypothesisReport> {
    check_horizon(horizon)?;
    if !(opts.step > 0.0) {
        return Err(Error::invalid("quadrature step must be positive"));
    }
    let q = sys.q;
    let mut b = Matrix::zeros(q, q);
    let mut sums = |t: f64, out: &mut [f64]| {
        sys.eval_b(t, &mut b);
        conjugated_sums(&b, out);
    };
    let (t_fwd, c_fwd) = cumulative_integrals(q + 1, horizon, opts.step, 1.0, &mut sums);
    let (t_bwd, c_bwd) = cumulative_integrals(q + 1, horizon, opts.step, -1.0, &mut sums);

    let (times, trace): (Vec<f64>, Vec<f64>) = t_bwd
        .iter()
        .zip(&c_bwd)
        .skip(1)
        .chain(t_fwd.iter().zip(&c_fwd))
        .map(|(t, c)| (*t, c[0].abs()))
        .unzip();
    let windows = dyadic_windows(&times, &trace, &opts.windows);
    let h1_trace = TraceBullet {
        passed: windows.passed,
        windows,
    };

    let abs_times: Vec<f64> = t_fwd.clone();
    let h1_signs: Vec<SignChoice> = (1..=q)
        .map(|i| {
            let plus: Vec<f64> = c_fwd.iter().map(|c| c[i]).collect();
            let minus: Vec<f64> = c_bwd.iter().map(|c| c[i]).collect();
            let wp = dyadic_windows(&abs_times, &plus, &opts.windows);
            let wm = dyadic_windows(&abs_times, &minus, &opts.windows);
            let tau = if wm.passed {
                -1
            } else if wp.passed || wp.sup < wm.sup {
                1
            } else {
                -1
            };
            let (sup_plus, sup_minus) = (wp.sup, wm.sup);
            let windows = if tau > 0 { wp } else { wm };
            SignChoice {
                index: i,
                tau,
                sup_plus,
                sup_minus,
                passed: windows.passed,
                windows,
            }
        })
        .collect();

    let qf = q as f64;
    let mut a = vec![0.0; q];
    let mut bm = Matrix::zeros(q, q);
    let (psi_times, psi_values, blow_up) = solve_psi_system(q + 1, horizon, opts.ode_tol, opts.max_psi, |t, source, rate| {
        sys.eval_a(t, &mut a);
        sys.eval_b(t, &mut bm);
        let total: f64 = a.iter().sum();
        source[0] = total;
        for i in 0..q {
            source[i + 1] = total - 2.0 * a[i];
        }
        conjugated_sums(&bm, rate);
        for r in rate.iter_mut() {
            *r /= qf;
        }
    })?;
    let h2: Vec<PsiBullet> = (1..=q)
        .map(|i| {
            let diff: Vec<f64> = psi_values.iter().map(|v| (v[0] - v[i]).abs()).collect();
            let windows = dyadic_windows(&psi_times, &diff, &opts.windows);
            let signed: Vec<f64> = psi_values.iter().map(|v| v[0] - v[i]).collect();
            PsiBullet {
                index: i,
                rate: crate::leader::least_squares_rate(&psi_times, &signed),
                blow_up,
                passed: windows.passed && !blow_up,
                windows,
            }
        })
        .collect();

    let h1_passed = h1_trace.passed && h1_signs.iter().all(|s| s.passed);
    let h2_passed = h2.iter().all(|b| b.passed);
    Ok(HypothesisReport {
        horizon,
        h1_trace,
        h1_signs,
        h2,
        h1_passed,
        h2_passed,
        passed: h1_passed && h2_passed,
        psi_times,
        psi_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiVerdict {
    pub horizon: f64,
    /// `sup ‖y(t)‖∞` over the simulated span.
    pub sup: f64,
    pub blow_up: bool,
    pub windows: WindowStats,
    pub passed: bool,
}

/// Simulates on `[−T, T]` and tests `‖y(t)‖∞` for bounded growth. Meant to
/// be read together with a passing [`hypothesis_check`]; it is not enforced.
pub fn boundedness_verdict(sys: &RiccatiSystem<'_>, horizon: f64, tol: f64, windows: &WindowOptions) -> Result<RiccatiVerdict> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon must be positive and finite"));
    }
    let traj = riccati_simulate(sys, (-horizon, horizon), tol)?;
    let norms: Vec<f64> = traj.states().map(max_norm).collect();
    let stats = dyadic_windows(traj.times(), &norms, windows);
    let blow_up = traj.blow_up();
    Ok(RiccatiVerdict {
        horizon,
        sup: norms.iter().copied().fold(0.0, f64::max),
        blow_up,
        passed: stats.passed && !blow_up,
        windows: stats,
    })
}

/// The Riccati system for `y(s) = ε·(μ − x)(ε² s)`, where `x` solves
/// `ẋ = f(x)` from `x(0) = μ(0)`.
#[derive(Debug)]
pub struct Linearization<'a> {
    pub system: RiccatiSystem<'a>,
    pub epsilon: f64,
    /// `ℋ` is `−½ε d²f(μ)` when the field supplies second derivatives,
    /// otherwise a constant tensor at the bound `½ε‖d²f‖∞`.
    pub exact_hessian: bool,
    /// Distance `μ(ε² s)` travels per unit `s`, `ε²‖μ̇‖∞`. Coefficients vary
    /// on the time scale `1 / time_scale`, so horizons must be long in `s`.
    pub time_scale: f64,
}

/// Linearizes `ẋ = f(x)` around the affine curve `μ`. With `η = μ − x`,
/// `η̇ = μ̇ − f(μ) + df(μ)η − ½ηᵀd²f η + …`; rescaling to `y(s) = ε η(ε²s)`
/// gives `𝒜 = ε³(μ̇ − f(μ))`, `ℬ = ε² df(μ)`, `ℋ = −½ε d²f(μ)`, all at `μ(ε²s)`.
/// `ε = min(½, smallness / ‖d²f‖∞)`.
pub fn linearize<'a, F: PeriodicField + ?Sized>(field: &'a F, mu: &AffineCurve, x0: &[f64], smallness: f64) -> Result<Linearization<'a>> {
    let n = field.dim();
    if mu.dim() != n || x0.len() != n {
        return Err(Error::invalid("curve, field and initial state dimensions differ"));
    }
    if mu.offset.iter().zip(x0).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
        return Err(Error::invalid("the curve must start at x0"));
    }
    if !(smallness > 0.0) {
        return Err(Error::invalid("smallness threshold must be positive"));
    }
    let bounds = field.bounds();
    if !bounds.sup_df.is_finite() || !bounds.sup_d2f.is_finite() {
        return Err(Error::ParameterOutOfRange {
            model: field.name(),
            reason: "derivative bounds must be finite".into(),
        });
    }
    let eps = if bounds.sup_d2f > 0.0 {
        (smallness / bounds.sup_d2f).min(0.5)
    } else {
        0.5
    };
    let (e2, e3) = (eps * eps, eps * eps * eps);
    let exact_hessian = field.hessian(x0).is_some();
    let h_bound = 0.5 * eps * bounds.sup_d2f;
    let gamma = (e2 * bounds.sup_df).max(h_bound);
    if gamma >= 1.0 {
        return Err(Error::SmallnessViolated(format!(
            "linearized coefficients reach gamma = {gamma:.3e}"
        )));
    }
    if h_bound > bounds.sup_d2f {
        return Err(Error::invalid("remainder tensor exceeds the second-derivative bound"));
    }

    let slope = mu.slope.clone();
    let offset = mu.offset.clone();
    let point = move |s: f64| -> Vec<f64> { slope.iter().zip(&offset).map(|(v, x)| v * e2 * s + x).collect() };
    let pa = point.clone();
    let pb = point.clone();
    let vel = mu.slope.clone();
    let a: VectorCoefficient<'a> = Box::new(move |s, out| {
        field.eval(&pa(s), out);
        for (o, v) in out.iter_mut().zip(&vel) {
            *o = e3 * (v - *o);
        }
    });
    let b: MatrixCoefficient<'a> = Box::new(move |s, out| {
        field.jacobian(&pb(s), out);
        for j in 0..n {
            for k in 0..n {
                out[(j, k)] *= e2;
            }
        }
    });
    let h: TensorCoefficient<'a> = if exact_hessian {
        Box::new(move |s, out| {
            if let Some(hess) = field.hessian(&point(s)) {
                for (o, m) in out.iter_mut().zip(hess) {
                    for j in 0..n {
                        for k in 0..n {
                            o[(j, k)] = -0.5 * eps * m[(j, k)];
                        }
                    }
                }
            }
        })
    } else {
        let entry = h_bound / n as f64;
        Box::new(move |_, out| out.iter_mut().for_each(|m| m.fill(entry)))
    };
    let system = RiccatiSystem::new(n, gamma, a, b, h)?;
    Ok(Linearization {
        system,
        epsilon: eps,
        exact_hessian,
        time_scale: e2 * max_norm(&mu.slope),
    })
}

const A_FREQS: [f64; 2] = [1.0, 2.0];
const B_FREQS: [f64; 2] = [5.0, 7.0];
const H_FREQS: [f64; 2] = [11.0, 13.0];

/// Coefficients of `Σ_f c sin(2πft) + d cos(2πft)` per entry.
#[derive(Debug, Clone)]
struct TrigEntry {
    coeffs: Vec<(f64, f64, f64)>,
}

impl TrigEntry {
    fn random(rng: &mut ChaCha8Rng, freqs: &[f64], scale: f64) -> Self {
        Self {
            coeffs: freqs
                .iter()
                .map(|f| (*f, scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    fn bound(&self) -> f64 {
        self.coeffs.iter().map(|(_, c, d)| c.abs() + d.abs()).sum()
    }

    fn rescale(&mut self, factor: f64) {
        for (_, c, d) in &mut self.coeffs {
            *c *= factor;
            *d *= factor;
        }
    }

    fn eval(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(f, c, d)| {
                let (s, co) = (std::f64::consts::TAU * f * t).sin_cos();
                c * s + d * co
            })
            .sum()
    }
}

fn row_bound(entries: &[TrigEntry], q: usize) -> f64 {
    entries
        .chunks(q)
        .map(|row| row.iter().map(TrigEntry::bound).sum::<f64>())
        .fold(0.0, f64::max)
}

/// A seeded random system with zero-mean trigonometric coefficients:
/// `𝒜` at frequencies `{1, 2}`, `ℬ` at `{5, 7}`, `ℋ` at `{11, 13}` (cycles per
/// unit time), with `ℬ` and `ℋ` scaled so their norms are at most `γ`.
/// Zero means make both hypotheses hold by construction.
pub fn random_trig_system(q: usize, gamma: f64, seed: u64) -> Result<RiccatiSystem<'static>> {
    if q == 0 {
        return Err(Error::invalid("Riccati dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<TrigEntry> = (0..q).map(|_| TrigEntry::random(&mut rng, &A_FREQS, 1.0)).collect();
    let mut b: Vec<TrigEntry> = (0..q * q).map(|_| TrigEntry::random(&mut rng, &B_FREQS, 1.0)).collect();
    let mut h: Vec<TrigEntry> = (0..q * q * q).map(|_| TrigEntry::random(&mut rng, &H_FREQS, 1.0)).collect();
    let fb = gamma / row_bound(&b, q);
    b.iter_mut().for_each(|e| e.rescale(fb));
    let fh = gamma / row_bound(&h, q);
    h.iter_mut().for_each(|e| e.rescale(fh));
    RiccatiSystem::new(
        q,
        gamma,
        Box::new(move |t, out| {
            for (o, e) in out.iter_mut().zip(&a) {
                *o = e.eval(t);
            }
        }),
        Box::new(move |t, out| {
            for j in 0..q {
                for k in 0..q {
                    out[(j, k)] = b[j * q + k].eval(t);
                }
            }
        }),
        Box::new(move |t, out| {
            for (i, m) in out.iter_mut().enumerate() {
                for j in 0..q {
                    for k in 0..q {
                        m[(j, k)] = h[(i * q + j) * q + k].eval(t);
                    }
                }
            }
        }),
    )
}
