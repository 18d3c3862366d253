//! The rotation vector formula as a fixed-point problem.
//!
//! The field is first normalized to `g̃(z, s) = c + γ f(z + x0 − c s)`, whose
//! components exceed `1 + β`. For each horizon `k` the map Γ_k is iterated
//! (damped) to a fixed point `ρ_k`; the last one is denormalized by
//! `ρ = (ρ_k − c)/γ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{max_norm, Matrix};
use crate::error::{Error, Result};
use crate::export::fmt_sig;
use crate::field::{FlowField, PeriodicField};
use crate::psi::{self, panels, tau_of, KernelStream, LineSample, PsiLine, QuadratureSpec, ResidualReport, SignProfile};

/// `g̃(z, s) = c + γ f(z + x0 − c s)` as a time-dependent field on ℝⁿ.
#[derive(Debug, Clone)]
pub struct NormalizedField<'a, F: PeriodicField + ?Sized> {
    field: &'a F,
    x0: Vec<f64>,
    c: f64,
    gamma: f64,
    beta: f64,
}

impl<'a, F: PeriodicField + ?Sized> NormalizedField<'a, F> {
    /// Requires `γ ∈ (0, 1)`, `β > 0` and `c > 1 + β + γ‖f‖∞`.
    pub fn new(field: &'a F, x0: &[f64], c: f64, gamma: f64, beta: f64) -> Result<Self> {
        if x0.len() != field.dim() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("base point must be finite and match the field dimension"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma = {gamma} must lie in (0, 1)")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta = {beta} must be positive")));
        }
        let floor = 1.0 + beta + gamma * field.bounds().sup_f;
        if !(c > floor) || !c.is_finite() {
            return Err(Error::ParameterOutOfRange {
                model: field.name(),
                reason: format!("c = {c} must exceed 1 + beta + gamma*sup|f| = {floor}"),
            });
        }
        Ok(Self {
            field,
            x0: x0.to_vec(),
            c,
            gamma,
            beta,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Upper bound on `‖g̃‖∞`.
    pub fn sup_norm(&self) -> f64 {
        self.c + self.gamma * self.field.bounds().sup_f
    }

    /// Lower bound on every component of `g̃`.
    pub fn inf_component(&self) -> f64 {
        self.c - self.gamma * self.field.bounds().sup_f
    }

    /// Upper bound on `‖dg̃‖∞`.
    pub fn sup_jacobian(&self) -> f64 {
        self.gamma * self.field.bounds().sup_df
    }

    pub fn normalize(&self, rho: &[f64]) -> Vec<f64> {
        rho.iter().map(|r| self.c + self.gamma * r).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| (v - self.c) / self.gamma).collect()
    }

    /// Calls `body` with `z + x0 − c t`, on the stack for small dimensions.
    #[inline]
    fn with_shifted<R>(&self, t: f64, z: &[f64], body: impl FnOnce(&[f64]) -> R) -> R {
        let n = z.len();
        if n <= STACK_DIM {
            let mut buf = [0.0; STACK_DIM];
            for j in 0..n {
                buf[j] = z[j] + self.x0[j] - self.c * t;
            }
            body(&buf[..n])
        } else {
            let v: Vec<f64> = z.iter().zip(&self.x0).map(|(z, x)| z + x - self.c * t).collect();
            body(&v)
        }
    }
}

const STACK_DIM: usize = 8;

impl<F: PeriodicField + ?Sized> FlowField for NormalizedField<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_at(&self, t: f64, z: &[f64], out: &mut [f64]) {
        self.with_shifted(t, z, |p| self.field.eval(p, out));
        for v in out.iter_mut() {
            *v = self.c + self.gamma * *v;
        }
    }

    fn jacobian_at(&self, t: f64, z: &[f64], out: &mut Matrix) {
        self.with_shifted(t, z, |p| self.field.jacobian(p, out));
        scale_matrix(out, self.gamma);
    }

    fn eval_with_jacobian_at(&self, t: f64, z: &[f64], out: &mut [f64], jac: &mut Matrix) {
        self.with_shifted(t, z, |p| self.field.eval_with_jacobian(p, out, jac));
        for v in out.iter_mut() {
            *v = self.c + self.gamma * *v;
        }
        scale_matrix(jac, self.gamma);
    }
}

fn scale_matrix(m: &mut Matrix, factor: f64) {
    let (r, c) = (m.rows(), m.cols());
    for j in 0..r {
        for k in 0..c {
            m[(j, k)] *= factor;
        }
    }
}

/// Node spacing on `[0, k]` for a Γ evaluation at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub max_step: f64,
    /// Nodes per unit of `max_j |z_j − c| s`, the speed at which the
    /// underlying field is traversed.
    pub nodes_per_unit: f64,
}

impl Default for GammaGrid {
    fn default() -> Self {
        Self {
            max_step: 0.25,
            nodes_per_unit: 200.0,
        }
    }
}

impl GammaGrid {
    fn step(&self, z: &[f64], c: f64) -> f64 {
        let speed = z.iter().fold(0.0f64, |m, v| m.max((v - c).abs()));
        if speed == 0.0 {
            self.max_step
        } else {
            self.max_step.min(1.0 / (self.nodes_per_unit * speed))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaValues {
    pub theta0: f64,
    pub theta_i: f64,
    /// `θ_0^i − θ_i`.
    pub theta_under: f64,
}

/// `θ_0^i(z, k, s)` and `θ_i(z, k, s)` for `1 ≤ i ≤ n`, with the sign `τ_i`
/// taken from `tau`.
pub fn theta_kernels<F: PeriodicField + ?Sized>(
    g: &NormalizedField<'_, F>,
    z: &[f64],
    k: f64,
    s: f64,
    i: usize,
    tau: &SignProfile,
    grid: GammaGrid,
) -> Result<ThetaValues> {
    theta_kernels_on(g, z, k, s, i, &tau.tau, grid.step(z, g.c()))
}

/// As [`theta_kernels`] for any field `g`, with an explicit node spacing.
pub fn theta_kernels_on<G: FlowField + ?Sized>(g: &G, z: &[f64], k: f64, s: f64, i: usize, tau: &[i8], step: f64) -> Result<ThetaValues> {
    let n = g.dim();
    if i == 0 || i > n || tau.len() != n {
        return Err(Error::invalid(format!("theta index {i} out of range 1..={n}")));
    }
    if !(0.0 <= s && s <= k) {
        return Err(Error::invalid("theta kernels need 0 <= s <= k"));
    }
    let line = PsiLine::conjugated(g, z)?;
    let sign = f64::from(tau[i - 1]);
    let (m, h) = panels(s, k, step);
    let mut sample = LineSample::new(n);
    let (mut e0, mut ei) = (0.0, 0.0);
    let mut add = |nu: f64, w: f64, sample: &mut LineSample| {
        line.sample(sign * nu, sample);
        e0 += w * sample.kappa[0];
        ei += w * sample.kappa[i];
    };
    if k > s {
        add(s, 1.0, &mut sample);
        for p in 0..m {
            let a = s + 2.0 * h * p as f64;
            add(a + h, 4.0, &mut sample);
            add(a + 2.0 * h, if p + 1 == m { 1.0 } else { 2.0 }, &mut sample);
        }
    }
    let scale = sign * h / 3.0;
    let (e0, ei) = (scale * e0, scale * ei);
    for e in [e0, ei] {
        if e > psi::OVERFLOW_EXPONENT {
            return Err(Error::KernelOverflow {
                index: i,
                t: k,
                exponent: e,
            });
        }
    }
    let (theta0, theta_i) = (e0.exp(), ei.exp());
    Ok(ThetaValues {
        theta0,
        theta_i,
        theta_under: theta0 - theta_i,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    pub z: Vec<f64>,
    pub k: f64,
    pub image: Vec<f64>,
    /// `Θ_i / ∫θ_0^i − 1`, the integral form of the deviation `ζ_i`.
    pub zeta: Vec<f64>,
    pub tau: Vec<i8>,
    /// Largest `|exponent|` met by either θ kernel on `[0, k]`.
    pub max_kernel_exponent: f64,
    pub in_cone: bool,
}

/// `z ∈ 𝒱_L`: entries above 1 and `‖z‖∞ ≤ (L − 1)‖g‖∞`.
pub fn in_admissible_set(z: &[f64], l: f64, sup_g: f64) -> bool {
    z.iter().all(|v| *v > 1.0) && max_norm(z) <= (l - 1.0) * sup_g * (1.0 + 1e-12)
}

struct SweepOut {
    numerator: f64,
    theta_sum: f64,
    theta0_integral: f64,
    max_exponent: f64,
}

/// One pass over `[0, k]` in direction `sign` for the components `members`.
fn sweep<F: FlowField + ?Sized>(line: &PsiLine<'_, F>, k: f64, sign: f64, members: &[usize], step: f64) -> Result<Vec<SweepOut>> {
    let n = line.dim();
    let r = members.len();
    // Kernel 0 sources: 1, then g_i, then 1 + A_i/2 for each member.
    let mut k0 = KernelStream::new(1 + 2 * r, 0);
    let mut ki: Vec<KernelStream> = members.iter().map(|&i| KernelStream::new(1, i)).collect();
    let mut nodes = [LineSample::new(n), LineSample::new(n), LineSample::new(n)];
    let (m, h) = panels(0.0, k, step);
    line.sample(0.0, &mut nodes[0]);
    let (mut g0_min, mut g0_max) = (0.0f64, 0.0f64);
    let mut gi_ext = vec![(0.0f64, 0.0f64); r];
    for p in 0..m {
        let a = 2.0 * h * p as f64;
        let end = if p + 1 == m { k } else { a + 2.0 * h };
        let (head, tail) = nodes.split_at_mut(1);
        line.sample(sign * (a + h), &mut tail[0]);
        line.sample(sign * end, &mut tail[1]);
        let trio = [&head[0], &tail[0], &tail[1]];
        let rate = |i: usize| [sign * trio[0].kappa[i], sign * trio[1].kappa[i], sign * trio[2].kappa[i]];
        k0.panel(
            h,
            rate(0),
            |src, node| {
                let smp = trio[node];
                if src == 0 {
                    1.0
                } else if src <= r {
                    smp.value[members[src - 1] - 1]
                } else {
                    1.0 + 0.5 * smp.a[members[src - r - 1]]
                }
            },
            end,
        )?;
        g0_min = g0_min.min(k0.exponent());
        g0_max = g0_max.max(k0.exponent());
        for (j, stream) in ki.iter_mut().enumerate() {
            let i = members[j];
            stream.panel(h, rate(i), |_, node| trio[node].a[i], end)?;
            gi_ext[j].0 = gi_ext[j].0.min(stream.exponent());
            gi_ext[j].1 = gi_ext[j].1.max(stream.exponent());
        }
        nodes.swap(0, 2);
    }
    let g0_end = k0.exponent();
    let span0 = (g0_end - g0_min).abs().max((g0_end - g0_max).abs());
    Ok(members
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let v = |m: usize| k0.value(m);
            let gi_end = ki[j].exponent();
            let spani = (gi_end - gi_ext[j].0).abs().max((gi_end - gi_ext[j].1).abs());
            SweepOut {
                numerator: v(1 + j),
                theta_sum: v(1 + r + j) - 0.5 * ki[j].value(0),
                theta0_integral: v(0),
                max_exponent: span0.max(spani),
            }
        })
        .collect())
}

/// Smallest accepted `|Θ_i|`.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// `Γ_k(z)` with the signs `tau` held fixed.
pub fn gamma_map_with<F: PeriodicField + ?Sized>(
    g: &NormalizedField<'_, F>,
    z: &[f64],
    k: f64,
    tau: &[i8],
    l: f64,
    grid: GammaGrid,
) -> Result<GammaState> {
    let n = g.dim();
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::invalid(format!("horizon k = {k} must be at least 1")));
    }
    if tau.len() != n {
        return Err(Error::invalid("sign profile dimension mismatch"));
    }
    let line = PsiLine::conjugated(g, z)?;
    let step = grid.step(z, g.c());
    let mut image = vec![0.0; n];
    let mut zeta = vec![0.0; n];
    let mut max_exp = 0.0f64;
    for sign in [-1i8, 1] {
        let members: Vec<usize> = (1..=n).filter(|&i| tau[i - 1] == sign).collect();
        if members.is_empty() {
            continue;
        }
        let outs = sweep(&line, k, f64::from(sign), &members, step)?;
        for (&i, o) in members.iter().zip(outs) {
            if !(o.theta_sum.abs() >= DEGENERATE_DENOMINATOR) {
                return Err(Error::DegenerateDenominator {
                    index: i,
                    value: o.theta_sum,
                });
            }
            image[i - 1] = o.numerator / o.theta_sum;
            zeta[i - 1] = o.theta_sum / o.theta0_integral - 1.0;
            max_exp = max_exp.max(o.max_exponent);
        }
    }
    Ok(GammaState {
        z: z.to_vec(),
        k,
        in_cone: in_admissible_set(&image, l, g.sup_norm()),
        image,
        zeta,
        tau: tau.to_vec(),
        max_kernel_exponent: max_exp,
    })
}

/// Horizon floor for the sign averages.
pub const DEFAULT_TAU_HORIZON: f64 = 1e4;

/// Sign profile at `z` on the horizon `max(k, tau_horizon)`.
pub fn sign_profile<F: PeriodicField + ?Sized>(g: &NormalizedField<'_, F>, z: &[f64], k: f64, tau_horizon: f64) -> Result<SignProfile> {
    let line = PsiLine::conjugated(g, z)?;
    let horizon = k.max(tau_horizon).max(psi::MIN_AVERAGING_HORIZON);
    let step = GammaGrid::default().step(z, g.c());
    psi::tau_signs_line(&line, horizon, QuadratureSpec { step })
}

/// `Γ_k(z)` with the signs recomputed at `z`.
pub fn gamma_map<F: PeriodicField + ?Sized>(g: &NormalizedField<'_, F>, z: &[f64], k: f64, l: f64) -> Result<GammaState> {
    let profile = sign_profile(g, z, k, DEFAULT_TAU_HORIZON)?;
    gamma_map_with(g, z, k, &profile.tau, l, GammaGrid::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub l: f64,
    pub k_schedule: Vec<f64>,
    pub tol: f64,
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop the schedule once successive `ρ_k` agree to this.
    pub k_tol: f64,
    pub tau_horizon: f64,
    pub grid: GammaGrid,
    /// Move each scheduled `k` forward, by less than a factor of 2, to a near
    /// return time of the line on the torus.
    pub snap_to_recurrence: bool,
}

/// `25, 50, 100, …, 25·2^14`.
pub fn default_schedule() -> Vec<f64> {
    (0..15).map(|j| 25.0 * 2f64.powi(j)).collect()
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            l: 2.0,
            k_schedule: default_schedule(),
            tol: 1e-11,
            alpha: 0.5,
            max_iters: 200,
            k_tol: 1e-12,
            tau_horizon: DEFAULT_TAU_HORIZON,
            grid: GammaGrid::default(),
            snap_to_recurrence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStep {
    /// Horizon actually used.
    pub k: f64,
    pub scheduled_k: f64,
    /// `max_j dist(k (z_j − c), ℤ)` at the warm start.
    pub recurrence_defect: f64,
    /// Fixed point `ρ_k` in normalized coordinates.
    pub z: Vec<f64>,
    pub iterations: usize,
    /// `‖Γ_k(ρ_k) − ρ_k‖∞`.
    pub residual: f64,
    pub tau: Vec<i8>,
    pub lambda: Vec<f64>,
    pub zeta: Vec<f64>,
    pub max_kernel_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub rho_star: Vec<f64>,
    pub steps: Vec<KStep>,
    /// `‖Γ_k(z) − z‖∞` for every iteration across the schedule.
    pub residual_history: Vec<f64>,
    pub converged_early: bool,
}

fn torus_defect(freq: &[f64], t: f64) -> f64 {
    freq.iter().fold(0.0f64, |m, f| {
        let x = t * f;
        m.max((x - x.round()).abs())
    })
}

/// Return time of `t ↦ t·freq mod 1` within `[lo, hi)`: the multiple of the
/// fastest component's period with the smallest defect
/// `max_j dist(t freq_j, ℤ)`, earliest on ties. Returns `(t, defect)`.
pub fn recurrence_time(freq: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let fastest = freq.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    if fastest == 0.0 || !(hi > lo) {
        return (lo, torus_defect(freq, lo));
    }
    let period = 1.0 / fastest;
    let first = (lo / period).ceil() as u64;
    let last = ((hi / period).ceil() as u64).saturating_sub(1).max(first);
    let mut best = (lo, torus_defect(freq, lo));
    let mut best_at_multiple = None::<(f64, f64)>;
    for m in first..=last.min(first + 2_000_000) {
        let t = m as f64 * period;
        let d = torus_defect(freq, t);
        if best_at_multiple.is_none_or(|(_, bd)| d < bd) {
            best_at_multiple = Some((t, d));
            if d < 1e-12 {
                break;
            }
        }
    }
    if let Some((t, d)) = best_at_multiple {
        if d <= best.1 {
            best = (t, d);
        }
    }
    best
}

/// Damped iteration `z ← (1 − α) z + α Γ_k(z)` along the schedule, each `k`
/// warm-started from the previous fixed point. The very first step is taken
/// undamped.
pub fn fixed_point<F: PeriodicField + ?Sized>(
    g: &NormalizedField<'_, F>,
    z0: &[f64],
    opts: &FixedPointOptions,
) -> Result<FixedPointReport> {
    let n = g.dim();
    if z0.len() != n {
        return Err(Error::invalid("start point dimension mismatch"));
    }
    if opts.k_schedule.is_empty() || opts.k_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("k schedule must be non-empty and increasing"));
    }
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::invalid("damping alpha must lie in (0, 1]"));
    }
    if !(opts.tol > 0.0) || !(opts.l > 1.0) {
        return Err(Error::invalid("tol must be positive and L above 1"));
    }
    let sup_g = g.sup_norm();
    let mut z = z0.to_vec();
    let mut steps: Vec<KStep> = Vec::new();
    let mut history = Vec::new();
    let mut first = true;
    let mut converged_early = false;
    for &scheduled in &opts.k_schedule {
        let freq: Vec<f64> = z.iter().map(|v| v - g.c()).collect();
        let (k, defect) = if opts.snap_to_recurrence {
            recurrence_time(&freq, scheduled, 2.0 * scheduled)
        } else {
            (scheduled, torus_defect(&freq, scheduled))
        };
        let profile = sign_profile(g, &z, k, opts.tau_horizon)?;
        let mut local = Vec::new();
        let mut done = None;
        for iter in 0..opts.max_iters {
            let state = gamma_map_with(g, &z, k, &profile.tau, opts.l, opts.grid)?;
            let res = state.image.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            history.push(res);
            local.push(res);
            if !res.is_finite() {
                break;
            }
            if res <= opts.tol {
                done = Some((iter, res, state));
                break;
            }
            if !state.in_cone {
                return Err(Error::ConeViolation {
                    k,
                    reason: format!(
                        "image {:?} outside V_L (entries > 1, norm <= {})",
                        state.image,
                        (opts.l - 1.0) * sup_g
                    ),
                });
            }
            let alpha = if first { 1.0 } else { opts.alpha };
            first = false;
            for (zj, gj) in z.iter_mut().zip(&state.image) {
                *zj = (1.0 - alpha) * *zj + alpha * gj;
            }
        }
        let Some((iterations, residual, state)) = done else {
            return Err(Error::IterationFailed { k, history: local });
        };
        first = false;
        let change = steps
            .last()
            .map(|s| s.z.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        steps.push(KStep {
            k,
            scheduled_k: scheduled,
            recurrence_defect: defect,
            z: z.clone(),
            iterations,
            residual,
            tau: profile.tau.clone(),
            lambda: profile.lambda.clone(),
            zeta: state.zeta,
            max_kernel_exponent: state.max_kernel_exponent,
        });
        if change.is_some_and(|c| c <= opts.k_tol) {
            converged_early = true;
            break;
        }
    }
    Ok(FixedPointReport {
        rho_star: z,
        steps,
        residual_history: history,
        converged_early,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Defaults to `2 + β + γ‖f‖∞`.
    pub c: Option<f64>,
    /// Defaults to `min(0.5, smallness / ‖df‖∞)`.
    pub gamma: Option<f64>,
    pub beta: f64,
    /// Largest accepted `γ‖df‖∞`.
    pub smallness: f64,
    pub fixed_point: FixedPointOptions,
    pub certificate_horizon: f64,
    pub certificate_samples: usize,
    pub certificate_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            c: None,
            gamma: None,
            beta: 0.5,
            smallness: 0.1,
            fixed_point: FixedPointOptions::default(),
            certificate_horizon: 1e3,
            certificate_samples: 48,
            certificate_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSolution {
    pub rho: Vec<f64>,
    pub rho_star: Vec<f64>,
    pub c: f64,
    pub gamma: f64,
    pub beta: f64,
    pub l: f64,
    /// Whether `L` satisfies both inequalities that make 𝒱_L Γ-invariant.
    pub l_admissible: bool,
    /// `½ q L (e^{2γ‖df‖} − 1) ‖g‖∞`, the bound on `|ζ_i|` over 𝒱_L.
    pub zeta_bound: f64,
    pub fixed_point: FixedPointReport,
    pub certificate: ResidualReport,
    pub certificate_passed: bool,
    pub warnings: Vec<String>,
}

impl RotationSolution {
    /// Denormalized `ρ_k` per schedule step.
    pub fn rho_sequence(&self) -> Vec<(f64, Vec<f64>)> {
        self.fixed_point
            .steps
            .iter()
            .map(|s| (s.k, s.z.iter().map(|v| (v - self.c) / self.gamma).collect()))
            .collect()
    }

    /// CSV with header `k,iterations,residual,rho_1,...,rho_n`.
    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string(), "iterations".into(), "residual".into()];
        header.extend((1..=self.rho.len()).map(|i| format!("rho_{i}")));
        w.write_record(&header)?;
        for (step, (_, rho)) in self.fixed_point.steps.iter().zip(self.rho_sequence()) {
            let mut rec = vec![fmt_sig(step.k), step.iterations.to_string(), fmt_sig(step.residual)];
            rec.extend(rho.iter().map(|v| fmt_sig(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Both inequalities on `L`: `L > 2/(2 − a)` and `2(1 + β)/(2 + a) > 1` with
/// `a = q L (e^{2γ} − 1) ‖g‖∞`.
pub fn l_admissible(q: usize, l: f64, gamma_eff: f64, sup_g: f64, beta: f64) -> bool {
    let a = q as f64 * l * (2.0 * gamma_eff).exp_m1() * sup_g;
    a < 2.0 && l > 2.0 / (2.0 - a) && 2.0 * (1.0 + beta) / (2.0 + a) > 1.0
}

/// Resolved `(c, γ)` for a field under `opts`, with the smallness check.
pub fn normalization_parameters<F: PeriodicField + ?Sized>(field: &F, opts: &SolveOptions) -> Result<(f64, f64)> {
    let bounds = field.bounds();
    if !bounds.sup_df.is_finite() || !bounds.sup_f.is_finite() {
        return Err(Error::invalid("field bounds must be finite"));
    }
    if !(opts.smallness > 0.0) {
        return Err(Error::invalid("smallness threshold must be positive"));
    }
    let gamma = match opts.gamma {
        Some(g) => g,
        None if bounds.sup_df > 0.0 => (opts.smallness / bounds.sup_df).min(0.5),
        None => 0.5,
    };
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    if gamma * bounds.sup_df > opts.smallness * (1.0 + 1e-12) {
        return Err(Error::SmallnessViolated(format!(
            "gamma * sup|df| = {:.6} exceeds the threshold {}; lower gamma below {:.6}",
            gamma * bounds.sup_df,
            opts.smallness,
            opts.smallness / bounds.sup_df
        )));
    }
    let c = opts.c.unwrap_or(2.0 + opts.beta + gamma * bounds.sup_f);
    Ok((c, gamma))
}

/// Solves the rotation vector formula for `ẋ = f(x)`, `x(0) = x0`, and
/// certifies the result with the formula residual on the original field.
pub fn solve_rotation_formula<F: PeriodicField + ?Sized>(field: &F, x0: &[f64], opts: &SolveOptions) -> Result<RotationSolution> {
    let (c, gamma) = normalization_parameters(field, opts)?;
    let g = NormalizedField::new(field, x0, c, gamma, opts.beta)?;
    let n = field.dim();
    let z0 = vec![c; n];
    let report = fixed_point(&g, &z0, &opts.fixed_point)?;
    let rho = g.denormalize(&report.rho_star);
    let gamma_eff = g.sup_jacobian();
    let l = opts.fixed_point.l;
    let l_ok = l_admissible(n, l, gamma_eff, g.sup_norm(), opts.beta);
    let zeta_bound = 0.5 * n as f64 * l * (2.0 * gamma_eff).exp_m1() * g.sup_norm();
    let certificate = psi::residual(field, x0, &rho, opts.certificate_horizon, opts.certificate_samples)?;
    let certificate_passed = certificate.max_abs_limit() <= opts.certificate_tol;
    let mut warnings = Vec::new();
    if !certificate_passed {
        warnings.push(format!(
            "certificate residual {:.3e} exceeds {:.1e}",
            certificate.max_abs_limit(),
            opts.certificate_tol
        ));
    }
    if !l_ok {
        warnings.push(format!(
            "L = {l} does not satisfy the invariance inequalities at gamma*sup|df| = {gamma_eff:.4}"
        ));
    }
    Ok(RotationSolution {
        rho,
        rho_star: report.rho_star.clone(),
        c,
        gamma,
        beta: opts.beta,
        l,
        l_admissible: l_ok,
        zeta_bound,
        fixed_point: report,
        certificate,
        certificate_passed,
        warnings,
    })
}

/// `−Sign(λ)` helper re-exported for callers building profiles by hand.
pub fn tau_from_average(lambda: f64, horizon: f64) -> i8 {
    tau_of(lambda, 10.0 / horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_model, FieldBounds, FnField, Model, ModelSpec};

    fn constant(omega: &[f64]) -> Model {
        make_model(ModelSpec::Constant { omega: omega.to_vec() }).unwrap()
    }

    fn circle(c: f64, eps: f64) -> Model {
        make_model(ModelSpec::Circle { c, eps }).unwrap()
    }

    fn quick() -> FixedPointOptions {
        FixedPointOptions {
            k_schedule: vec![25.0, 50.0, 100.0, 200.0, 400.0],
            ..FixedPointOptions::default()
        }
    }

    #[test]
    fn normalized_field_bounds() {
        let f = circle(2.0, 0.1);
        let g = NormalizedField::new(&f, &[0.0], 3.0, 0.05, 0.5).unwrap();
        let mut out = [0.0];
        for t in [-2.0, 0.0, 1.3] {
            for z in [0.0, 0.4, 7.7] {
                g.eval_at(t, &[z], &mut out);
                assert!(out[0] > 1.0 + g.beta());
                assert!(out[0] <= g.sup_norm() + 1e-12);
            }
        }
        assert!(NormalizedField::new(&f, &[0.0], 1.5, 0.05, 0.5).is_err());
        assert!(NormalizedField::new(&f, &[0.0], 3.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn constant_field_kernels_are_trivial() {
        let f = constant(&[1.0, 2.0]);
        let g = NormalizedField::new(&f, &[0.0, 0.0], 3.0, 0.1, 0.5).unwrap();
        let z = [3.1, 3.2];
        let tau = sign_profile(&g, &z, 50.0, 100.0).unwrap();
        assert_eq!(tau.tau, vec![-1, -1]);
        let th = theta_kernels(&g, &z, 50.0, 10.0, 2, &tau, GammaGrid::default()).unwrap();
        assert_eq!((th.theta0, th.theta_i, th.theta_under), (1.0, 1.0, 0.0));
        let state = gamma_map(&g, &z, 50.0, 2.0).unwrap();
        for (img, w) in state.image.iter().zip([3.1, 3.2]) {
            assert!((img - w).abs() < 1e-13);
        }
        assert!(state.zeta.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn constant_fixed_point_in_one_step() {
        let f = constant(&[1.0, 2.0]);
        let g = NormalizedField::new(&f, &[0.0, 0.0], 3.0, 0.1, 0.5).unwrap();
        let rep = fixed_point(&g, &[3.0, 3.0], &quick()).unwrap();
        assert_eq!(rep.steps[0].iterations, 1);
        assert!((rep.rho_star[0] - 3.1).abs() < 1e-14 && (rep.rho_star[1] - 3.2).abs() < 1e-14);
        assert!(rep.converged_early);
    }

    #[test]
    fn theta_matches_refined_quadrature() {
        let f = circle(2.0, 0.1);
        let g = NormalizedField::new(&f, &[0.0], 3.0, 0.05, 0.5).unwrap();
        let z = [3.0 + 0.05 * 1.9975];
        let tau = sign_profile(&g, &z, 100.0, 100.0).unwrap();
        let coarse = theta_kernels(&g, &z, 60.0, 7.5, 1, &tau, GammaGrid::default()).unwrap();
        let fine = theta_kernels(
            &g,
            &z,
            60.0,
            7.5,
            1,
            &tau,
            GammaGrid {
                max_step: 0.01,
                nodes_per_unit: 4000.0,
            },
        )
        .unwrap();
        assert!((coarse.theta0 - fine.theta0).abs() < 1e-9, "{coarse:?} {fine:?}");
        assert!((coarse.theta_i - fine.theta_i).abs() < 1e-9);
    }

    #[test]
    fn theta_bounds_for_autonomous_fields() {
        // g = (2.5 + b sin 2πx_1, 2.7 + b cos 2πx_2) has ‖dg‖∞ = 2πb =: γ.
        let b = 0.01;
        let gamma = std::f64::consts::TAU * b;
        let bounds = FieldBounds {
            sup_f: 2.7 + b,
            sup_df: gamma,
            sup_d2f: gamma * std::f64::consts::TAU,
        };
        let g = FnField::new(2, "wobble", bounds, move |x: &[f64], out: &mut [f64]| {
            out[0] = 2.5 + b * (std::f64::consts::TAU * x[0]).sin();
            out[1] = 2.7 + b * (std::f64::consts::TAU * x[1]).cos();
        });
        let sup_g = 2.7 + b;
        for z in [[1.3, 1.7], [2.4, 1.05], [1.01, 2.6]] {
            assert!(in_admissible_set(&z, 2.0, sup_g));
            for tau in [[-1i8, -1], [1, -1], [1, 1]] {
                for (k, s) in [(40.0, 0.0), (40.0, 13.7), (250.0, 3.0)] {
                    for i in 1..=2 {
                        let th = theta_kernels_on(&g, &z, k, s, i, &tau, 0.01).unwrap();
                        assert!(th.theta_i < gamma.exp());
                        assert!(th.theta0 < gamma.exp() && th.theta0 > (-gamma).exp());
                    }
                }
            }
        }
    }

    #[test]
    fn circle_fixed_point_is_self_consistent() {
        let f = circle(2.0, 0.1);
        let g = NormalizedField::new(&f, &[0.0], 3.0, 0.05, 0.5).unwrap();
        let rep = fixed_point(&g, &[3.0], &quick()).unwrap();
        let z = &rep.rho_star;
        let state = gamma_map(&g, z, rep.steps.last().unwrap().k, 2.0).unwrap();
        assert!((state.image[0] - z[0]).abs() < 1e-6);
        assert!(in_admissible_set(z, 2.0, g.sup_norm()));
        let rho = g.denormalize(z)[0];
        assert!((rho - 3.99f64.sqrt()).abs() < 2e-3, "{rho}");
        // |ζ| stays within its bound on 𝒱_L.
        let bound = 0.5 * 2.0 * (2.0 * g.sup_jacobian()).exp_m1() * g.sup_norm();
        assert!(state.zeta[0].abs() <= bound);
    }

    #[test]
    fn rho_k_sequence_contracts() {
        let f = circle(2.0, 0.1);
        let g = NormalizedField::new(&f, &[0.0], 3.0, 0.05, 0.5).unwrap();
        let opts = FixedPointOptions {
            k_schedule: vec![100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0],
            k_tol: 0.0,
            ..FixedPointOptions::default()
        };
        let rep = fixed_point(&g, &[3.0], &opts).unwrap();
        let diffs: Vec<f64> = rep.steps.windows(2).map(|w| (w[1].z[0] - w[0].z[0]).abs()).collect();
        assert!(diffs.windows(2).all(|w| w[1] <= w[0] + 1e-13), "{diffs:?}");
        assert!(*diffs.last().unwrap() < 1e-10);
    }

    #[test]
    fn recurrence_times() {
        let (t, d) = recurrence_time(&[0.1], 95.0, 190.0);
        assert!((t - 100.0).abs() < 1e-9 && d < 1e-12);
        let (t, d) = recurrence_time(&[0.0, 0.0], 25.0, 50.0);
        assert_eq!((t, d), (25.0, 0.0));
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let (t, d) = recurrence_time(&[1.0, golden], 100.0, 200.0);
        assert!((100.0..200.0).contains(&t));
        // Best return among the multiples of 1: a Fibonacci-like denominator.
        let brute = (100..200)
            .map(|m| ((m as f64 * golden) - (m as f64 * golden).round()).abs())
            .fold(1.0, f64::min);
        assert!((d - brute).abs() < 1e-12);
    }

    #[test]
    fn smallness_violation_is_reported() {
        let f = circle(2.0, 0.9);
        let opts = SolveOptions {
            gamma: Some(0.5),
            ..SolveOptions::default()
        };
        assert!(matches!(
            solve_rotation_formula(&f, &[0.0], &opts),
            Err(Error::SmallnessViolated(_))
        ));
    }

    #[test]
    fn solve_constant_field() {
        let f = constant(&[0.5, 2.0]);
        let sol = solve_rotation_formula(&f, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert!((sol.rho[0] - 0.5).abs() < 1e-9 && (sol.rho[1] - 2.0).abs() < 1e-9);
        assert!(sol.certificate_passed);
        let mut buf = Vec::new();
        sol.write_diagnostics_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,iterations,residual,rho_1,rho_2\n"));
    }

    #[test]
    fn l_inequalities() {
        assert!(l_admissible(1, 2.0, 0.001, 3.0, 0.5));
        assert!(!l_admissible(1, 2.0, 0.1, 3.0, 0.5));
    }
}
