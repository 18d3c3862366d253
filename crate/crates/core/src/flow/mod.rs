//! Numerical flow of `ẋ = f(x)`, trajectories, and empirical rotation vectors.

mod dopri;
pub mod windows;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use dopri::{OdeOptions, StepStats};
pub use windows::{dyadic_windows, index_slope, WindowOptions, WindowStats, DEFAULT_SLOPE_TOL};

use crate::error::{Error, Result};
use crate::export::fmt_sig;
use crate::field::FlowField;
use dopri::{dense_eval, integrate_segment, Segment, DENSE_WIDTH};

/// Minimal horizon for rotation and boundedness estimates.
pub const MIN_HORIZON: f64 = 100.0;
pub const DEFAULT_HORIZON: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
struct DenseData {
    step_t0: Vec<f64>,
    step_h: Vec<f64>,
    coeffs: Vec<f64>,
}

/// Time-stamped states of a flow, with strictly increasing times.
///
/// States are lifts in ℝⁿ and are never reduced mod 1.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    dense: Option<DenseData>,
    stats: IntegratorStats,
    blow_up: bool,
}

impl Trajectory {
    /// Wraps raw samples; interpolation between them is linear.
    pub fn from_samples(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::invalid("times and states must be non-empty and of equal length"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("states must share one dimension"));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("states must be finite"));
        }
        Ok(Self {
            dim,
            times,
            states: states.concat(),
            dense: None,
            stats: IntegratorStats {
                steps: 0,
                rejected: 0,
                evaluations: 0,
                tol: 0.0,
            },
            blow_up: false,
        })
    }

    fn from_segments(backward: Option<Segment>, forward: Segment, tol: f64) -> Self {
        let dim = forward.dim;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut dense = DenseData {
            step_t0: Vec::new(),
            step_h: Vec::new(),
            coeffs: Vec::new(),
        };
        let mut stats = StepStats::default();
        let mut blow_up = forward.blow_up;
        let width = DENSE_WIDTH * dim;
        if let Some(b) = &backward {
            blow_up |= b.blow_up;
            stats.accepted += b.stats.accepted;
            stats.rejected += b.stats.rejected;
            stats.evaluations += b.stats.evaluations;
            // Skip the shared initial point; the forward segment supplies it.
            for k in (1..b.times.len()).rev() {
                times.push(b.times[k]);
                states.extend_from_slice(&b.states[k * dim..(k + 1) * dim]);
            }
            for k in (0..b.step_h.len()).rev() {
                dense.step_t0.push(b.step_t0[k]);
                dense.step_h.push(b.step_h[k]);
                dense.coeffs.extend_from_slice(&b.dense[k * width..(k + 1) * width]);
            }
        }
        stats.accepted += forward.stats.accepted;
        stats.rejected += forward.stats.rejected;
        stats.evaluations += forward.stats.evaluations;
        times.extend_from_slice(&forward.times);
        states.extend_from_slice(&forward.states);
        dense.step_t0.extend_from_slice(&forward.step_t0);
        dense.step_h.extend_from_slice(&forward.step_h);
        dense.coeffs.extend_from_slice(&forward.dense);
        Self {
            dim,
            times,
            states,
            dense: Some(dense),
            stats: IntegratorStats {
                steps: stats.accepted,
                rejected: stats.rejected,
                evaluations: stats.evaluations,
                tol,
            },
            blow_up,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn stats(&self) -> IntegratorStats {
        self.stats
    }

    /// Set when integration stopped on a state-norm or non-finite guard.
    pub fn blow_up(&self) -> bool {
        self.blow_up
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    /// Index of the sample at exactly `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|probe| probe.total_cmp(&t)).ok()
    }

    /// State at `t`, using the integrator's continuous extension when
    /// available. `t` must lie within `[t_min, t_max]`.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        if !(self.t_min()..=self.t_max()).contains(&t) {
            return Err(Error::invalid(format!(
                "t = {t} outside the trajectory span [{}, {}]",
                self.t_min(),
                self.t_max()
            )));
        }
        let k = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(k) => return Ok(self.state(k).to_vec()),
            Err(k) => k - 1,
        };
        let mut out = vec![0.0; self.dim];
        match &self.dense {
            Some(d) => {
                let width = DENSE_WIDTH * self.dim;
                dense_eval(
                    d.step_t0[k],
                    d.step_h[k],
                    &d.coeffs[k * width..(k + 1) * width],
                    self.dim,
                    t,
                    &mut out,
                );
            }
            None => {
                let (t0, t1) = (self.times[k], self.times[k + 1]);
                let w = (t - t0) / (t1 - t0);
                let (a, b) = (self.state(k), self.state(k + 1));
                for i in 0..self.dim {
                    out[i] = a[i] + w * (b[i] - a[i]);
                }
            }
        }
        Ok(out)
    }

    /// CSV with header `t,x1,...,xn`, one row per stored sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_sig(*t)];
            row.extend(self.state(k).iter().map(|v| fmt_sig(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates a general ODE over `[a, b]` with `a ≤ 0 ≤ b`, starting from `y0`
/// at `t = 0`. Failures carry the partial trajectory.
pub fn solve_ode<F>(rhs: F, y0: &[f64], span: (f64, f64), opts: &OdeOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (a, b) = span;
    if !(a <= 0.0 && 0.0 <= b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("time span [{a}, {b}] must contain 0")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    let mut rhs = rhs;
    let backward = if a < 0.0 {
        Some(integrate_segment(&mut rhs, 0.0, y0, a, opts))
    } else {
        None
    };
    let forward = integrate_segment(&mut rhs, 0.0, y0, b, opts);
    // Report the backward failure first; either way keep both halves.
    let failure = backward
        .as_ref()
        .and_then(|s| s.failure.clone().map(|f| (s.times.last().copied().unwrap_or(0.0), f)))
        .or_else(|| forward.failure.clone().map(|f| (forward.times.last().copied().unwrap_or(0.0), f)));
    let traj = Trajectory::from_segments(backward, forward, opts.tol);
    match failure {
        Some((t, reason)) => Err(Error::IntegrationFailed {
            t,
            reason,
            partial: Box::new(traj),
        }),
        None => Ok(traj),
    }
}

/// Flow of `ẋ = F(t, x)` from `x(0) = x0` over `span`.
pub fn integrate<F: FlowField + ?Sized>(field: &F, x0: &[f64], span: (f64, f64), tol: f64) -> Result<Trajectory> {
    integrate_with(field, x0, span, &OdeOptions::with_tol(tol))
}

pub fn integrate_with<F: FlowField + ?Sized>(field: &F, x0: &[f64], span: (f64, f64), opts: &OdeOptions) -> Result<Trajectory> {
    if x0.len() != field.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {} but the field has {}",
            x0.len(),
            field.dim()
        )));
    }
    solve_ode(|t, x, dx| field.eval_at(t, x, dx), x0, span, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub lambda: Vec<f64>,
    /// `sup_k ‖x(t_k) − x(0) − λ t_k‖`.
    pub residual_sup: f64,
    pub windows: WindowStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessVerdict {
    pub passed: bool,
    pub slope: f64,
    /// Empirical `sup ‖x(t) − x(0) − λt‖`, the finite-horizon estimate of D.
    pub d_estimate: f64,
    pub windows: WindowStats,
}

fn residual_norms(traj: &Trajectory, lambda: &[f64]) -> Result<Vec<f64>> {
    let x0 = traj.interpolate(0.0)?;
    Ok(traj
        .times()
        .iter()
        .zip(traj.states())
        .map(|(t, x)| {
            x.iter()
                .zip(&x0)
                .zip(lambda)
                .map(|((x, x0), l)| (x - x0 - l * t).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Dyadic-window test of `‖x(t) − x(0) − λt‖` over every stored sample.
pub fn boundedness_test(traj: &Trajectory, lambda: &[f64], opts: &WindowOptions) -> Result<BoundednessVerdict> {
    if lambda.len() != traj.dim() {
        return Err(Error::invalid("lambda dimension mismatch"));
    }
    let residual = residual_norms(traj, lambda)?;
    let windows = dyadic_windows(traj.times(), &residual, opts);
    Ok(BoundednessVerdict {
        passed: windows.passed,
        slope: windows.slope,
        d_estimate: windows.sup,
        windows,
    })
}

/// Tail-secant rotation estimate `λ = (x(T) − x(T/2)) / (T/2)`.
pub fn rotation_estimate(traj: &Trajectory) -> Result<RotationEstimate> {
    rotation_estimate_with(traj, &WindowOptions::default())
}

pub fn rotation_estimate_with(traj: &Trajectory, opts: &WindowOptions) -> Result<RotationEstimate> {
    let horizon = traj.t_max();
    if horizon < MIN_HORIZON || traj.t_min() > 0.0 {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_HORIZON,
        });
    }
    let end = traj.state(traj.len() - 1);
    let mid = traj.interpolate(horizon / 2.0)?;
    let lambda: Vec<f64> = end.iter().zip(&mid).map(|(e, m)| (e - m) / (horizon / 2.0)).collect();
    let verdict = boundedness_test(traj, &lambda, opts)?;
    Ok(RotationEstimate {
        lambda,
        residual_sup: verdict.d_estimate,
        windows: verdict.windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_model, ModelSpec};

    fn circle(c: f64, eps: f64) -> crate::field::Model {
        make_model(ModelSpec::Circle { c, eps }).unwrap()
    }

    #[test]
    fn constant_field_is_linear() {
        let m = make_model(ModelSpec::Constant { omega: vec![0.5, 2.0] }).unwrap();
        let traj = integrate(&m, &[0.0, 0.0], (0.0, 4.0), 1e-10).unwrap();
        let end = traj.state(traj.len() - 1);
        assert!((end[0] - 2.0).abs() < 1e-10 && (end[1] - 8.0).abs() < 1e-10);
    }

    #[test]
    fn forward_then_backward_returns() {
        let m = circle(2.0, 1.0);
        let tol = 1e-10;
        let fwd = integrate(&m, &[0.0], (0.0, 20.0), tol).unwrap();
        let x_end = fwd.state(fwd.len() - 1).to_vec();
        let back = integrate(&m, &x_end, (-20.0, 0.0), tol).unwrap();
        assert!(back.state(0)[0].abs() < 10.0 * tol * 100.0, "{}", back.state(0)[0]);
        assert!(back.state(0)[0].abs() < 1e-8);
    }

    #[test]
    fn two_sided_span_is_sorted_and_contains_zero() {
        let m = circle(2.0, 0.5);
        let traj = integrate(&m, &[0.3], (-10.0, 10.0), 1e-9).unwrap();
        assert!(traj.times().windows(2).all(|w| w[1] > w[0]));
        let k = traj.index_of(0.0).unwrap();
        assert_eq!(traj.state(k), &[0.3]);
        assert_eq!(traj.t_min(), -10.0);
        assert_eq!(traj.t_max(), 10.0);
    }

    #[test]
    fn interpolation_tracks_integrator_tolerance() {
        let m = make_model(ModelSpec::Constant { omega: vec![1.5] }).unwrap();
        let traj = integrate(&m, &[0.0], (-5.0, 5.0), 1e-10).unwrap();
        for t in [-4.33, -0.01, 0.7, 3.2] {
            assert!((traj.interpolate(t).unwrap()[0] - 1.5 * t).abs() < 1e-10);
        }
        assert!(traj.interpolate(5.5).is_err());
    }

    #[test]
    fn short_horizon_is_rejected() {
        let m = circle(2.0, 1.0);
        let traj = integrate(&m, &[0.0], (0.0, 50.0), 1e-8).unwrap();
        assert!(matches!(rotation_estimate(&traj), Err(Error::HorizonTooShort { .. })));
    }

    #[test]
    fn boundedness_examples() {
        let times: Vec<f64> = (0..=20000).map(|k| k as f64 * 0.5).collect();
        let lam = 0.7;
        let exact: Vec<Vec<f64>> = times.iter().map(|t| vec![lam * t]).collect();
        let traj = Trajectory::from_samples(times.clone(), exact).unwrap();
        let v = boundedness_test(&traj, &[lam], &WindowOptions::default()).unwrap();
        assert!(v.passed);
        assert!(v.d_estimate < 1e-12);

        let wobble: Vec<Vec<f64>> = times.iter().map(|t| vec![lam * t + t.sin()]).collect();
        let traj = Trajectory::from_samples(times.clone(), wobble).unwrap();
        let v = boundedness_test(&traj, &[lam], &WindowOptions::default()).unwrap();
        assert!(v.passed, "slope {}", v.slope);
        assert!((v.d_estimate - 1.0).abs() < 1e-3);

        let wrong = boundedness_test(&traj, &[lam + 0.01], &WindowOptions::default()).unwrap();
        assert!(!wrong.passed);
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = Trajectory::from_samples(vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![0.5, 2.25]]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        assert_eq!(lines.next(), Some("0.00000000e0,0.00000000e0,1.00000000e0"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn from_samples_validation() {
        assert!(Trajectory::from_samples(vec![0.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(Trajectory::from_samples(vec![0.0, 1.0], vec![vec![1.0], vec![f64::NAN]]).is_err());
        assert!(Trajectory::from_samples(vec![], vec![]).is_err());
    }
}
