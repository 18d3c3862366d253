//! Dyadic-window growth test: the finite-horizon stand-in for `sup_t |v(t)| < ∞`.
//!
//! For a horizon `T` and `J` windows, window `m` (ascending in time) covers
//! `|t| ∈ [T/2^{J−m}, T/2^{J−m−1}]`; everything below `T/2^J` is the initial
//! window. A quantity is judged bounded when the least-squares slope of the
//! per-window sups against `m` is at most `slope_tol`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    /// Largest accepted growth of the window sup per doubling of time.
    pub slope_tol: f64,
    /// Smallest left edge of the first window.
    pub min_window_start: f64,
}

pub const DEFAULT_SLOPE_TOL: f64 = 1e-3;

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            slope_tol: DEFAULT_SLOPE_TOL,
            min_window_start: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub horizon: f64,
    /// Left edges of the windows, ascending.
    pub starts: Vec<f64>,
    pub sups: Vec<f64>,
    pub initial_sup: f64,
    pub slope: f64,
    /// `max(initial_sup, sups...)`.
    pub sup: f64,
    pub passed: bool,
}

fn window_count(horizon: f64, min_start: f64) -> usize {
    if horizon <= min_start || min_start <= 0.0 {
        return 1;
    }
    ((horizon / min_start).log2().floor() as usize).max(1)
}

/// Least-squares slope of `ys` against `0, 1, 2, …`.
pub fn index_slope(ys: &[f64]) -> f64 {
    let m = ys.len();
    if m < 2 {
        return 0.0;
    }
    let mean_x = (m - 1) as f64 / 2.0;
    let mean_y = ys.iter().sum::<f64>() / m as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Windowed sups of `values` sampled at `times`. Samples at negative times
/// fall into the window of `|t|`, so two-sided data yields a two-sided test.
/// A window that received no samples reports NaN and fails the test.
pub fn dyadic_windows(times: &[f64], values: &[f64], opts: &WindowOptions) -> WindowStats {
    assert_eq!(times.len(), values.len());
    let horizon = times.iter().fold(0.0, |acc: f64, t| acc.max(t.abs()));
    let count = window_count(horizon, opts.min_window_start);
    let first = horizon / 2f64.powi(count as i32);
    let starts: Vec<f64> = (0..count).map(|m| first * 2f64.powi(m as i32)).collect();
    let mut sups = vec![f64::NEG_INFINITY; count];
    let mut initial_sup = f64::NEG_INFINITY;
    for (&t, &v) in times.iter().zip(values) {
        let a = t.abs();
        if a < first {
            initial_sup = initial_sup.max(v);
            continue;
        }
        let m = ((a / first).log2().floor() as usize).min(count - 1);
        sups[m] = sups[m].max(v);
        // Window edges belong to both neighbours.
        if m > 0 && a == starts[m] {
            sups[m - 1] = sups[m - 1].max(v);
        }
    }
    for s in &mut sups {
        if *s == f64::NEG_INFINITY {
            *s = f64::NAN;
        }
    }
    let slope = index_slope(&sups);
    let sup = sups.iter().fold(initial_sup, |acc, s| acc.max(*s));
    WindowStats {
        horizon,
        starts,
        passed: slope <= opts.slope_tol && sups.iter().all(|s| s.is_finite()),
        sups,
        initial_sup,
        slope,
        sup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t_max: f64, step: f64, two_sided: bool) -> Vec<f64> {
        let n = (t_max / step).round() as i64;
        let lo = if two_sided { -n } else { 0 };
        (lo..=n).map(|k| k as f64 * step).collect()
    }

    #[test]
    fn slope_of_line() {
        assert!((index_slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-15);
        assert_eq!(index_slope(&[4.0]), 0.0);
    }

    #[test]
    fn bounded_signal_passes() {
        let t = grid(1e4, 0.05, false);
        let v: Vec<f64> = t.iter().map(|t| t.sin().abs()).collect();
        let w = dyadic_windows(&t, &v, &WindowOptions::default());
        assert!(w.passed, "slope {}", w.slope);
        assert!((w.sup - 1.0).abs() < 1e-3);
        assert_eq!(w.sups.len(), 10);
    }

    #[test]
    fn drift_fails() {
        let t = grid(1e4, 0.5, true);
        let v: Vec<f64> = t.iter().map(|t| 1e-3 * t.abs()).collect();
        let w = dyadic_windows(&t, &v, &WindowOptions::default());
        assert!(!w.passed);
        assert!(w.slope > 0.5);
    }

    #[test]
    fn sup_covers_all_windows() {
        let t = grid(500.0, 0.1, true);
        let v: Vec<f64> = t.iter().map(|t| (0.3 * t).cos().abs() + 0.01 * (t * 0.01).sin()).collect();
        let w = dyadic_windows(&t, &v, &WindowOptions::default());
        let direct = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(w.sup, direct);
    }

    #[test]
    fn empty_window_fails() {
        let t = [0.0, 1000.0];
        let v = [0.0, 0.0];
        let w = dyadic_windows(&t, &v, &WindowOptions::default());
        assert!(!w.passed);
    }
}
