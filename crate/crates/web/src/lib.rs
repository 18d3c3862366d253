//! Browser demo: three small computations exposed through wasm-bindgen.
//!
//! The plain functions are ordinary Rust and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use rotvec::field::{make_model, ModelSpec};
use rotvec::flow::{integrate, rotation_estimate};
use rotvec::solver::{solve_rotation_formula, SolveOptions};
use rotvec::tongue::circle_rotation_number;
use wasm_bindgen::prelude::*;

const TOL: f64 = 1e-9;

fn flow_rotation(c: f64, eps: f64, horizon: f64) -> Result<f64, String> {
    let f = make_model(ModelSpec::Circle { c, eps }).map_err(|e| e.to_string())?;
    let traj = integrate(&f, &[0.0], (0.0, horizon), TOL).map_err(|e| e.to_string())?;
    Ok(rotation_estimate(&traj).map_err(|e| e.to_string())?.lambda[0])
}

/// `[formula, flow, exact]` rotation numbers of `ẋ = c + ε sin 2πx`.
/// The formula entry is NaN when the smallness regime rejects the field.
pub fn circle_compare_values(c: f64, eps: f64, horizon: f64) -> Result<Vec<f64>, String> {
    let f = make_model(ModelSpec::Circle { c, eps }).map_err(|e| e.to_string())?;
    let formula = solve_rotation_formula(&f, &[0.0], &SolveOptions::default())
        .map(|s| s.rho[0])
        .unwrap_or(f64::NAN);
    let flow = flow_rotation(c, eps, horizon)?;
    Ok(vec![formula, flow, circle_rotation_number(c, -eps)])
}

/// Rotation number of `ẋ = Ω − ε sin 2πx` at `count` evenly spaced `Ω` in
/// `[lo, hi]`, by integration.
pub fn staircase_values(eps: f64, lo: f64, hi: f64, count: usize, horizon: f64) -> Result<Vec<f64>, String> {
    if count < 2 {
        return Err("count must be at least 2".into());
    }
    (0..count)
        .map(|k| {
            let omega = lo + (hi - lo) * k as f64 / (count - 1) as f64;
            flow_rotation(omega, -eps, horizon)
        })
        .collect()
}

/// Rotation numbers over `Ω ∈ [−1, 1]` (columns) and `ε ∈ [0, 1]` (rows),
/// row-major with `ε = 0` first.
pub fn tongue_values(n_omega: usize, n_eps: usize, horizon: f64) -> Result<Vec<f64>, String> {
    if n_omega < 2 || n_eps < 2 {
        return Err("grid needs at least 2 points per axis".into());
    }
    let mut out = Vec::with_capacity(n_omega * n_eps);
    for j in 0..n_eps {
        let eps = j as f64 / (n_eps - 1) as f64;
        out.extend(staircase_values(eps, -1.0, 1.0, n_omega, horizon)?);
    }
    Ok(out)
}

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn circle_compare(c: f64, eps: f64, horizon: f64) -> Result<Vec<f64>, JsError> {
    js(circle_compare_values(c, eps, horizon))
}

#[wasm_bindgen]
pub fn staircase(eps: f64, lo: f64, hi: f64, count: usize, horizon: f64) -> Result<Vec<f64>, JsError> {
    js(staircase_values(eps, lo, hi, count, horizon))
}

#[wasm_bindgen]
pub fn tongue(n_omega: usize, n_eps: usize, horizon: f64) -> Result<Vec<f64>, JsError> {
    js(tongue_values(n_omega, n_eps, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_agrees_on_weak_circle() {
        let v = circle_compare_values(2.0, 0.1, 2000.0).unwrap();
        let exact = (4.0f64 - 0.01).sqrt();
        assert!((v[2] - exact).abs() < 1e-12);
        assert!((v[0] - exact).abs() < 1e-3, "{v:?}");
        assert!((v[1] - exact).abs() < 1e-3, "{v:?}");
    }

    #[test]
    fn strong_forcing_skips_formula() {
        let v = circle_compare_values(0.5, 1.0, 500.0).unwrap();
        assert!(v[0].is_nan());
        assert!(v[1].abs() < 1e-3 && v[2] == 0.0, "{v:?}");
    }

    #[test]
    fn staircase_is_monotone_and_locks() {
        let v = staircase_values(0.5, -1.0, 1.0, 21, 500.0).unwrap();
        assert!(v.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{v:?}");
        // |Ω| ≤ ε lies inside the 0:1 tongue.
        assert!(v[8..=12].iter().all(|r| r.abs() < 1e-3), "{v:?}");
    }

    #[test]
    fn tongue_layout() {
        let v = tongue_values(5, 2, 300.0).unwrap();
        assert_eq!(v.len(), 10);
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[4] - 1.0).abs() < 1e-9);
        assert!(tongue_values(1, 2, 300.0).is_err());
    }
}
