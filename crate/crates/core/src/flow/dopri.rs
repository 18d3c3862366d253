//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.
//!
//! Error control is absolute: a step is accepted when the max-norm of the
//! embedded error estimate is at most `tol`. States of torus flows are lifts
//! whose magnitude carries no information, so a relative term would only
//! loosen control as `|x|` grows.

use serde::{Deserialize, Serialize};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Width of one dense-output record per state component.
pub(crate) const DENSE_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    /// Bound on the local error per accepted step (max-norm, absolute).
    pub tol: f64,
    /// Largest step magnitude.
    pub max_step: f64,
    pub max_steps: usize,
    /// Integration stops with a blow-up diagnostic once `‖y‖` exceeds this.
    pub max_state_norm: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_step: 0.25,
            max_steps: 50_000_000,
            max_state_norm: f64::INFINITY,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Output of one directional integration from `t0` toward `t1`.
#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub dim: usize,
    /// Accepted step endpoints in integration order, starting with `t0`.
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Per step: start time, signed step, then `DENSE_WIDTH * dim` coefficients.
    pub step_t0: Vec<f64>,
    pub step_h: Vec<f64>,
    pub dense: Vec<f64>,
    pub stats: StepStats,
    pub failure: Option<String>,
    pub blow_up: bool,
}

/// Evaluates a dense record at `t`.
pub(crate) fn dense_eval(t0: f64, h: f64, coeffs: &[f64], dim: usize, t: f64, out: &mut [f64]) {
    let theta = (t - t0) / h;
    let theta1 = 1.0 - theta;
    for i in 0..dim {
        let r = &coeffs[i * DENSE_WIDTH..(i + 1) * DENSE_WIDTH];
        out[i] = r[0] + theta * (r[1] + theta1 * (r[2] + theta * (r[3] + theta1 * r[4])));
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn initial_step<F>(rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, opts: &OdeOptions, span: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let d0 = norm_inf(y0).max(1.0);
    let d1 = norm_inf(f0);
    let mut h0 = if d1 < 1e-10 { 1e-3 } else { 0.01 * d0 / d1 };
    h0 = h0.min(opts.max_step).min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    rhs(t0 + dir * h0, &y1, &mut f1);
    let d2 = f1.iter().zip(f0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (opts.tol / d1.max(d2)).powf(0.2) * 0.5
    };
    (100.0 * h0).min(h1).min(opts.max_step).min(span).max(1e-12 * span)
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
pub(crate) fn integrate_segment<F>(mut rhs: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Segment
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut seg = Segment {
        dim: n,
        times: vec![t0],
        states: y0.to_vec(),
        step_t0: Vec::new(),
        step_h: Vec::new(),
        dense: Vec::new(),
        stats: StepStats::default(),
        failure: None,
        blow_up: false,
    };
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return seg;
    }
    let dir = (t1 - t0).signum();

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];

    rhs(t0, &y, &mut k1);
    seg.stats.evaluations += 1;
    let mut t = t0;
    let mut h = initial_step(&mut rhs, t0, &y, &k1, dir, opts, span);
    seg.stats.evaluations += 1;
    let mut last_rejected = false;

    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-14 * t1.abs().max(1.0) {
            break;
        }
        if seg.stats.accepted >= opts.max_steps {
            seg.failure = Some(format!("maximum number of steps ({}) reached", opts.max_steps));
            break;
        }
        let mut hs = h.min(opts.max_step);
        let last = hs >= remaining;
        if last {
            hs = remaining;
        }
        if hs < 1e-14 * t.abs().max(1.0) {
            seg.failure = Some(format!("step size underflow (h = {hs:.3e})"));
            break;
        }
        let hh = dir * hs;

        for i in 0..n {
            ytmp[i] = y[i] + hh * A21 * k1[i];
        }
        rhs(t + C2 * hh, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + hh * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * hh, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + hh * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * hh, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + hh * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * hh, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + hh * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + hh };
        rhs(t_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + hh * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t_new, &ynew, &mut k7);
        seg.stats.evaluations += 6;

        for i in 0..n {
            err[i] = hh * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let ratio = norm_inf(&err) / opts.tol;

        if !ratio.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            seg.stats.rejected += 1;
            h = hs * 0.2;
            last_rejected = true;
            if h < 1e-14 * t.abs().max(1.0) {
                seg.failure = Some("non-finite state".to_string());
                seg.blow_up = true;
                break;
            }
            continue;
        }

        if ratio <= 1.0 {
            seg.step_t0.push(t);
            seg.step_h.push(hh);
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = hh * k1[i] - ydiff;
                seg.dense.extend_from_slice(&[
                    y[i],
                    ydiff,
                    bspl,
                    ydiff - hh * k7[i] - bspl,
                    hh * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]),
                ]);
            }
            t = t_new;
            y.copy_from_slice(&ynew);
            std::mem::swap(&mut k1, &mut k7);
            seg.times.push(t);
            seg.states.extend_from_slice(&y);
            seg.stats.accepted += 1;

            if norm_inf(&y) > opts.max_state_norm {
                seg.failure = Some(format!("state norm exceeded {:.3e}", opts.max_state_norm));
                seg.blow_up = true;
                break;
            }

            let fac = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = if last_rejected { hs * fac.min(1.0) } else { hs * fac };
            last_rejected = false;
        } else {
            seg.stats.rejected += 1;
            h = hs * (0.9 * ratio.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    seg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_is_accurate() {
        let seg = integrate_segment(|_, y, dy| dy[0] = y[0], 0.0, &[1.0], 2.0, &OdeOptions::with_tol(1e-12));
        let y = *seg.states.last().unwrap();
        assert!((y - 2f64.exp()).abs() < 1e-9);
        assert!(seg.failure.is_none());
        assert_eq!(*seg.times.last().unwrap(), 2.0);
    }

    #[test]
    fn backward_direction() {
        let seg = integrate_segment(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], -3.0, &OdeOptions::with_tol(1e-12));
        let y = *seg.states.last().unwrap();
        assert!((y - 3f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_solution() {
        let seg = integrate_segment(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[0.0, 1.0],
            10.0,
            &OdeOptions {
                tol: 1e-11,
                max_step: 1.0,
                ..OdeOptions::default()
            },
        );
        let mut out = [0.0; 2];
        for k in 0..seg.step_h.len() {
            let coeffs = &seg.dense[k * 10..(k + 1) * 10];
            for frac in [0.1, 0.37, 0.5, 0.83] {
                let t = seg.step_t0[k] + frac * seg.step_h[k];
                dense_eval(seg.step_t0[k], seg.step_h[k], coeffs, 2, t, &mut out);
                assert!((out[0] - t.sin()).abs() < 1e-8, "t = {t}");
                assert!((out[1] - t.cos()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn finite_time_blow_up_is_flagged() {
        let opts = OdeOptions {
            max_state_norm: 1e8,
            ..OdeOptions::with_tol(1e-9)
        };
        let seg = integrate_segment(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, &opts);
        assert!(seg.blow_up);
        assert!(seg.failure.is_some());
        assert!(*seg.times.last().unwrap() < 1.0 + 1e-6);
    }
}
