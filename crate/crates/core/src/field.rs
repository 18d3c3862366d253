//! Vector fields on ℝⁿ that are 1-periodic in every coordinate.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{max_norm, Matrix};
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Sup-norm bounds of a field and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub sup_f: f64,
    pub sup_df: f64,
    pub sup_d2f: f64,
}

/// An autonomous vector field `f: ℝⁿ → ℝⁿ` with period 1 in each coordinate.
pub trait PeriodicField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Jacobian `df(x)`. Central differences unless overridden.
    fn jacobian(&self, x: &[f64], out: &mut Matrix) {
        finite_difference_jacobian(self, x, out);
    }

    /// Second derivatives `∂²f_i/∂x_j∂x_k`, one matrix per component, when the
    /// field provides them analytically.
    fn hessian(&self, _x: &[f64]) -> Option<Vec<Matrix>> {
        None
    }

    /// `f(x)` and `df(x)` together, for fields that can share work.
    fn eval_with_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut Matrix) {
        self.eval(x, out);
        self.jacobian(x, jac);
    }

    fn bounds(&self) -> FieldBounds;

    fn name(&self) -> String;

    fn has_analytic_jacobian(&self) -> bool {
        false
    }
}

/// A possibly time-dependent field `(t, x) ↦ F(t, x)`. Every [`PeriodicField`]
/// is one, ignoring `t`.
pub trait FlowField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_at(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn jacobian_at(&self, t: f64, x: &[f64], out: &mut Matrix);

    fn eval_with_jacobian_at(&self, t: f64, x: &[f64], out: &mut [f64], jac: &mut Matrix) {
        self.eval_at(t, x, out);
        self.jacobian_at(t, x, jac);
    }
}

impl<F: PeriodicField + ?Sized> FlowField for F {
    fn dim(&self) -> usize {
        PeriodicField::dim(self)
    }

    fn eval_at(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.eval(x, out);
    }

    fn jacobian_at(&self, _t: f64, x: &[f64], out: &mut Matrix) {
        self.jacobian(x, out);
    }

    fn eval_with_jacobian_at(&self, _t: f64, x: &[f64], out: &mut [f64], jac: &mut Matrix) {
        self.eval_with_jacobian(x, out, jac);
    }
}

/// Central-difference Jacobian with step `cbrt(ε)·(1 + |x_j|)`.
pub fn finite_difference_jacobian<F: PeriodicField + ?Sized>(field: &F, x: &[f64], out: &mut Matrix) {
    let n = field.dim();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = f64::EPSILON.cbrt() * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        field.eval(&xp, &mut fp);
        xp[j] = x[j] - h;
        field.eval(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Parameters of one of the shipped models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// `f(x) = ω`.
    Constant { omega: Vec<f64> },
    /// `f(x) = c + ε sin(2πx)` on the line.
    Circle { c: f64, eps: f64 },
    /// Decoupled product of circle fields, `n ≥ 2`.
    TorusProduct { c: Vec<f64>, eps: Vec<f64> },
    /// `f_i(x) = ω_i + (κ/n) Σ_j P(x_j) R(x_i)` with `P(x) = 1 + cos 2πx`,
    /// `R(x) = −sin 2πx`.
    WinfreeType { omega: Vec<f64>, kappa: f64 },
}

pub const MODEL_NAMES: [&str; 4] = ["constant", "circle", "torus-product", "winfree-type"];

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Constant { .. } => "constant",
            ModelSpec::Circle { .. } => "circle",
            ModelSpec::TorusProduct { .. } => "torus-product",
            ModelSpec::WinfreeType { .. } => "winfree-type",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Constant { omega } => omega.len(),
            ModelSpec::Circle { .. } => 1,
            ModelSpec::TorusProduct { c, .. } => c.len(),
            ModelSpec::WinfreeType { omega, .. } => omega.len(),
        }
    }

    /// Builds a spec from a model name and named parameter vectors.
    ///
    /// Keys: `omega` (constant, winfree-type), `c` and `eps` (circle,
    /// torus-product), `kappa` (winfree-type).
    pub fn from_params(name: &str, params: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "constant" => &["omega"],
            "circle" | "torus-product" => &["c", "eps"],
            "winfree-type" => &["omega", "kappa"],
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::ParameterOutOfRange {
                model: name.to_string(),
                reason: format!("unknown parameter `{bad}` (expected one of {allowed:?})"),
            });
        }
        let get = |key: &str| -> Result<Vec<f64>> {
            params.get(key).cloned().ok_or_else(|| Error::ParameterOutOfRange {
                model: name.to_string(),
                reason: format!("missing parameter `{key}`"),
            })
        };
        let scalar = |key: &str| -> Result<f64> {
            let v = get(key)?;
            match v.as_slice() {
                [x] => Ok(*x),
                _ => Err(Error::ParameterOutOfRange {
                    model: name.to_string(),
                    reason: format!("`{key}` must be a single number"),
                }),
            }
        };
        let spec = match name {
            "constant" => ModelSpec::Constant { omega: get("omega")? },
            "circle" => ModelSpec::Circle {
                c: scalar("c")?,
                eps: scalar("eps")?,
            },
            "torus-product" => ModelSpec::TorusProduct {
                c: get("c")?,
                eps: get("eps")?,
            },
            _ => ModelSpec::WinfreeType {
                omega: get("omega")?,
                kappa: scalar("kappa")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Overwrites one scalar parameter; vector parameters take `key[index]`
    /// style names such as `c1` or `eps2` (1-based).
    pub fn with_param(&self, key: &str, value: f64) -> Result<Self> {
        let mut spec = self.clone();
        let out_of_range = |reason: String| Error::ParameterOutOfRange {
            model: self.name().to_string(),
            reason,
        };
        let (base, idx) = split_indexed_key(key);
        let slot: &mut f64 = match (&mut spec, base, idx) {
            (ModelSpec::Circle { c, .. }, "c", None) => c,
            (ModelSpec::Circle { eps, .. }, "eps", None) => eps,
            (ModelSpec::WinfreeType { kappa, .. }, "kappa", None) => kappa,
            (ModelSpec::Constant { omega }, "omega", Some(i)) | (ModelSpec::WinfreeType { omega, .. }, "omega", Some(i)) => omega
                .get_mut(i)
                .ok_or_else(|| out_of_range(format!("index in `{key}` out of range")))?,
            (ModelSpec::TorusProduct { c, .. }, "c", Some(i)) => {
                c.get_mut(i).ok_or_else(|| out_of_range(format!("index in `{key}` out of range")))?
            }
            (ModelSpec::TorusProduct { eps, .. }, "eps", Some(i)) => eps
                .get_mut(i)
                .ok_or_else(|| out_of_range(format!("index in `{key}` out of range")))?,
            _ => return Err(out_of_range(format!("no scalar parameter `{key}`"))),
        };
        *slot = value;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::ParameterOutOfRange {
                model: self.name().to_string(),
                reason: reason.to_string(),
            })
        };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            ModelSpec::Constant { omega } => {
                if omega.is_empty() {
                    return fail("omega must have at least one component");
                }
                if !finite(omega) {
                    return fail("omega must be finite");
                }
            }
            ModelSpec::Circle { c, eps } => {
                if !c.is_finite() || !eps.is_finite() {
                    return fail("c and eps must be finite");
                }
            }
            ModelSpec::TorusProduct { c, eps } => {
                if c.len() < 2 {
                    return fail("torus-product needs at least two components");
                }
                if c.len() != eps.len() {
                    return fail("c and eps must have the same length");
                }
                if !finite(c) || !finite(eps) {
                    return fail("c and eps must be finite");
                }
            }
            ModelSpec::WinfreeType { omega, kappa } => {
                if omega.is_empty() {
                    return fail("omega must have at least one component");
                }
                if !finite(omega) || !kappa.is_finite() {
                    return fail("omega and kappa must be finite");
                }
                if *kappa < 0.0 {
                    return fail("kappa must be non-negative");
                }
            }
        }
        Ok(())
    }
}

fn split_indexed_key(key: &str) -> (&str, Option<usize>) {
    let split = key.find(|c: char| c.is_ascii_digit()).unwrap_or(key.len());
    let (base, digits) = key.split_at(split);
    match digits.parse::<usize>() {
        Ok(i) if i >= 1 => (base, Some(i - 1)),
        _ => (key, None),
    }
}

/// A named model instance with its base point; the reference corpus for
/// cross-checks, all inside the small-coupling regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShippedCase {
    pub label: String,
    pub spec: ModelSpec,
    pub x0: Vec<f64>,
}

pub fn shipped_cases() -> Vec<ShippedCase> {
    let case = |label: &str, spec: ModelSpec, x0: Vec<f64>| ShippedCase {
        label: label.into(),
        spec,
        x0,
    };
    vec![
        case("constant", ModelSpec::Constant { omega: vec![1.0, 2.0] }, vec![0.0, 0.0]),
        case("circle", ModelSpec::Circle { c: 2.0, eps: 0.1 }, vec![0.0]),
        case(
            "torus-product",
            ModelSpec::TorusProduct {
                c: vec![2.0, 3.0],
                eps: vec![0.1, 0.1],
            },
            vec![0.0, 0.0],
        ),
        case(
            "winfree-type",
            ModelSpec::WinfreeType {
                omega: vec![2.0, 2.7],
                kappa: 0.05,
            },
            vec![0.1, 0.3],
        ),
    ]
}

/// One of the shipped models, ready to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
}

pub fn make_model(spec: ModelSpec) -> Result<Model> {
    spec.validate()?;
    Ok(Model { spec })
}

fn circle_terms(x: f64) -> (f64, f64) {
    (TWO_PI * x).sin_cos()
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl PeriodicField for Model {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match &self.spec {
            ModelSpec::Constant { omega } => out.copy_from_slice(omega),
            ModelSpec::Circle { c, eps } => out[0] = c + eps * circle_terms(x[0]).0,
            ModelSpec::TorusProduct { c, eps } => {
                for i in 0..c.len() {
                    out[i] = c[i] + eps[i] * circle_terms(x[i]).0;
                }
            }
            ModelSpec::WinfreeType { omega, kappa } => {
                let n = omega.len();
                let s: f64 = x.iter().map(|&xj| 1.0 + circle_terms(xj).1).sum();
                for i in 0..n {
                    out[i] = omega[i] - kappa / n as f64 * s * circle_terms(x[i]).0;
                }
            }
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        match &self.spec {
            ModelSpec::Constant { .. } => {}
            ModelSpec::Circle { eps, .. } => out[(0, 0)] = TWO_PI * eps * circle_terms(x[0]).1,
            ModelSpec::TorusProduct { eps, .. } => {
                for i in 0..eps.len() {
                    out[(i, i)] = TWO_PI * eps[i] * circle_terms(x[i]).1;
                }
            }
            ModelSpec::WinfreeType { omega, kappa } => {
                let n = omega.len();
                let k = kappa / n as f64;
                let trig: Vec<(f64, f64)> = x.iter().map(|&xj| circle_terms(xj)).collect();
                let s: f64 = trig.iter().map(|(_, cos)| 1.0 + cos).sum();
                for i in 0..n {
                    let r = -trig[i].0;
                    let dr = -TWO_PI * trig[i].1;
                    for j in 0..n {
                        let dp = -TWO_PI * trig[j].0;
                        out[(i, j)] = k * dp * r;
                    }
                    out[(i, i)] += k * s * dr;
                }
            }
        }
    }

    fn eval_with_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut Matrix) {
        match &self.spec {
            ModelSpec::Circle { c, eps } => {
                let (sin, cos) = circle_terms(x[0]);
                out[0] = c + eps * sin;
                jac[(0, 0)] = TWO_PI * eps * cos;
            }
            ModelSpec::TorusProduct { c, eps } => {
                jac.fill(0.0);
                for i in 0..c.len() {
                    let (sin, cos) = circle_terms(x[i]);
                    out[i] = c[i] + eps[i] * sin;
                    jac[(i, i)] = TWO_PI * eps[i] * cos;
                }
            }
            _ => {
                self.eval(x, out);
                self.jacobian(x, jac);
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> Option<Vec<Matrix>> {
        let n = PeriodicField::dim(self);
        let mut h = vec![Matrix::zeros(n, n); n];
        match &self.spec {
            ModelSpec::Constant { .. } => {}
            ModelSpec::Circle { eps, .. } => {
                h[0][(0, 0)] = -TWO_PI * TWO_PI * eps * circle_terms(x[0]).0;
            }
            ModelSpec::TorusProduct { eps, .. } => {
                for i in 0..n {
                    h[i][(i, i)] = -TWO_PI * TWO_PI * eps[i] * circle_terms(x[i]).0;
                }
            }
            ModelSpec::WinfreeType { kappa, .. } => {
                let k = kappa / n as f64;
                let trig: Vec<(f64, f64)> = x.iter().map(|&xj| circle_terms(xj)).collect();
                let s: f64 = trig.iter().map(|(_, cos)| 1.0 + cos).sum();
                let w2 = TWO_PI * TWO_PI;
                for (i, hi) in h.iter_mut().enumerate() {
                    let r = -trig[i].0;
                    let dr = -TWO_PI * trig[i].1;
                    let d2r = w2 * trig[i].0;
                    for j in 0..n {
                        let dp = -TWO_PI * trig[j].0;
                        let d2p = -w2 * trig[j].1;
                        hi[(j, j)] += k * d2p * r;
                        hi[(i, j)] += k * dp * dr;
                        hi[(j, i)] += k * dp * dr;
                    }
                    hi[(i, i)] += k * s * d2r;
                }
            }
        }
        Some(h)
    }

    fn bounds(&self) -> FieldBounds {
        let w2 = TWO_PI * TWO_PI;
        match &self.spec {
            ModelSpec::Constant { omega } => FieldBounds {
                sup_f: max_norm(omega),
                sup_df: 0.0,
                sup_d2f: 0.0,
            },
            ModelSpec::Circle { c, eps } => FieldBounds {
                sup_f: c.abs() + eps.abs(),
                sup_df: TWO_PI * eps.abs(),
                sup_d2f: w2 * eps.abs(),
            },
            ModelSpec::TorusProduct { c, eps } => FieldBounds {
                sup_f: c.iter().zip(eps).map(|(c, e)| c.abs() + e.abs()).fold(0.0, f64::max),
                sup_df: TWO_PI * max_norm(eps),
                sup_d2f: w2 * max_norm(eps),
            },
            ModelSpec::WinfreeType { omega, kappa } => FieldBounds {
                sup_f: max_norm(omega) + 2.0 * kappa,
                sup_df: 3.0 * TWO_PI * kappa,
                sup_d2f: 5.0 * w2 * kappa,
            },
        }
    }

    fn name(&self) -> String {
        self.spec.name().to_string()
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }
}

/// A field given by a closure; Jacobian by central differences. Used for
/// injected test fields, including deliberately non-periodic ones.
pub struct FnField<F> {
    dim: usize,
    name: String,
    func: F,
    bounds: FieldBounds,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, name: impl Into<String>, bounds: FieldBounds, func: F) -> Self {
        Self {
            dim,
            name: name.into(),
            func,
            bounds,
        }
    }
}

impl<F> PeriodicField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.func)(x, out)
    }

    fn bounds(&self) -> FieldBounds {
        self.bounds
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub max_deviation: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

pub const PERIODICITY_TOL: f64 = 1e-10;
pub const JACOBIAN_TOL: f64 = 1e-5;
pub const JACOBIAN_CHECK_STEP: f64 = 1e-6;

fn sample_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

/// Max over random points and coordinates of `‖f(x + e_j) − f(x)‖`.
pub fn periodicity_check<F: PeriodicField + ?Sized>(field: &F, sample_count: usize, seed: u64) -> Result<CheckReport> {
    if sample_count == 0 {
        return Err(Error::invalid("sample_count must be at least 1"));
    }
    let n = field.dim();
    let mut base = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for mut x in sample_points(n, sample_count, seed) {
        field.eval(&x, &mut base);
        for j in 0..n {
            x[j] += 1.0;
            field.eval(&x, &mut shifted);
            x[j] -= 1.0;
            let dev = base.iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(dev);
        }
    }
    Ok(CheckReport {
        max_deviation: worst,
        tolerance: PERIODICITY_TOL,
        samples: sample_count,
        passed: worst < PERIODICITY_TOL,
    })
}

/// Max entrywise gap between `field.jacobian` and central differences with
/// step 1e-6.
pub fn jacobian_check<F: PeriodicField + ?Sized>(field: &F, sample_count: usize, seed: u64) -> Result<CheckReport> {
    if sample_count == 0 {
        return Err(Error::invalid("sample_count must be at least 1"));
    }
    let n = field.dim();
    let mut analytic = Matrix::zeros(n, n);
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let h = JACOBIAN_CHECK_STEP;
    let mut worst: f64 = 0.0;
    for mut x in sample_points(n, sample_count, seed) {
        field.jacobian(&x, &mut analytic);
        for j in 0..n {
            let xj = x[j];
            x[j] = xj + h;
            field.eval(&x, &mut fp);
            x[j] = xj - h;
            field.eval(&x, &mut fm);
            x[j] = xj;
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                worst = worst.max((fd - analytic[(i, j)]).abs());
            }
        }
    }
    Ok(CheckReport {
        max_deviation: worst,
        tolerance: JACOBIAN_TOL,
        samples: sample_count,
        passed: worst < JACOBIAN_TOL,
    })
}

/// Sampled `sup ‖f‖` and `sup ‖df‖` over the unit cell on a uniform grid.
pub fn cell_norms<F: PeriodicField + ?Sized>(field: &F, per_axis: usize) -> (f64, f64) {
    let n = field.dim();
    let per_axis = per_axis.max(2);
    let total = per_axis.saturating_pow(n as u32).min(1 << 20);
    let mut x = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut jac = Matrix::zeros(n, n);
    let (mut sup_f, mut sup_df): (f64, f64) = (0.0, 0.0);
    for mut idx in 0..total {
        for xj in x.iter_mut() {
            *xj = (idx % per_axis) as f64 / per_axis as f64;
            idx /= per_axis;
        }
        field.eval(&x, &mut f);
        field.jacobian(&x, &mut jac);
        sup_f = sup_f.max(max_norm(&f));
        sup_df = sup_df.max(jac.max_norm());
    }
    (sup_f, sup_df)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(c: f64, eps: f64) -> Model {
        make_model(ModelSpec::Circle { c, eps }).unwrap()
    }

    fn zoo() -> Vec<Model> {
        vec![
            make_model(ModelSpec::Constant { omega: vec![0.5, 2.0] }).unwrap(),
            circle(2.0, 1.0),
            make_model(ModelSpec::TorusProduct {
                c: vec![2.0, 3.0],
                eps: vec![0.1, 0.1],
            })
            .unwrap(),
            make_model(ModelSpec::WinfreeType {
                omega: vec![1.0, 1.3, 0.8],
                kappa: 0.4,
            })
            .unwrap(),
        ]
    }

    #[test]
    fn model_examples() {
        let m = make_model(ModelSpec::Constant { omega: vec![0.5, 2.0] }).unwrap();
        let mut out = [0.0; 2];
        m.eval(&[0.3, 0.9], &mut out);
        assert_eq!(out, [0.5, 2.0]);

        let m = circle(2.0, 1.0);
        let mut out = [0.0];
        m.eval(&[0.25], &mut out);
        assert!((out[0] - 3.0).abs() < 1e-15);
        let mut j = Matrix::zeros(1, 1);
        m.jacobian(&[0.25], &mut j);
        assert!(j[(0, 0)].abs() < 1e-14);
        m.jacobian(&[0.0], &mut j);
        assert!((j[(0, 0)] - TWO_PI).abs() < 1e-14);
    }

    #[test]
    fn bad_specs_rejected() {
        let mut p = BTreeMap::new();
        assert!(matches!(ModelSpec::from_params("pendulum", &p), Err(Error::UnknownModel(_))));
        p.insert("c".into(), vec![2.0]);
        assert!(ModelSpec::from_params("circle", &p).is_err());
        p.insert("eps".into(), vec![0.5]);
        assert!(ModelSpec::from_params("circle", &p).is_ok());
        p.insert("kappa".into(), vec![0.5]);
        assert!(ModelSpec::from_params("circle", &p).is_err());
        assert!(make_model(ModelSpec::TorusProduct {
            c: vec![1.0],
            eps: vec![0.1]
        })
        .is_err());
        assert!(make_model(ModelSpec::WinfreeType {
            omega: vec![1.0],
            kappa: -1.0
        })
        .is_err());
        assert!(make_model(ModelSpec::Circle { c: f64::NAN, eps: 0.0 }).is_err());
    }

    #[test]
    fn with_param_indexing() {
        let spec = ModelSpec::TorusProduct {
            c: vec![2.0, 3.0],
            eps: vec![0.1, 0.2],
        };
        let s = spec.with_param("eps2", 0.5).unwrap();
        assert_eq!(
            s,
            ModelSpec::TorusProduct {
                c: vec![2.0, 3.0],
                eps: vec![0.1, 0.5]
            }
        );
        assert!(spec.with_param("eps3", 0.5).is_err());
        assert!(spec.with_param("kappa", 0.5).is_err());
        let c = ModelSpec::Circle { c: 1.0, eps: 0.0 }.with_param("eps", -0.3).unwrap();
        assert_eq!(c, ModelSpec::Circle { c: 1.0, eps: -0.3 });
    }

    #[test]
    fn shipped_models_pass_checks() {
        for m in zoo() {
            let p = periodicity_check(&m, 50, 7).unwrap();
            assert!(p.passed, "{} periodicity {}", m, p.max_deviation);
            let j = jacobian_check(&m, 50, 11).unwrap();
            assert!(j.passed, "{} jacobian {}", m, j.max_deviation);
        }
    }

    #[test]
    fn constant_field_is_exactly_periodic() {
        let m = &zoo()[0];
        let p = periodicity_check(m, 20, 1).unwrap();
        assert_eq!(p.max_deviation, 0.0);
        let j = jacobian_check(m, 20, 1).unwrap();
        assert_eq!(j.max_deviation, 0.0);
    }

    #[test]
    fn linear_field_fails_periodicity() {
        let bounds = FieldBounds {
            sup_f: f64::INFINITY,
            sup_df: 1.0,
            sup_d2f: 0.0,
        };
        let f = FnField::new(2, "identity", bounds, |x: &[f64], out: &mut [f64]| out.copy_from_slice(x));
        let p = periodicity_check(&f, 10, 3).unwrap();
        assert!(!p.passed);
        assert!((p.max_deviation - 1.0).abs() < 1e-12);
        assert!(periodicity_check(&f, 0, 3).is_err());
    }

    #[test]
    fn hessians_match_finite_differences() {
        let h = 1e-5;
        for m in zoo() {
            let n = PeriodicField::dim(&m);
            for x in sample_points(n, 10, 5) {
                let hess = m.hessian(&x).unwrap();
                let mut jp = Matrix::zeros(n, n);
                let mut jm = Matrix::zeros(n, n);
                for k in 0..n {
                    let mut xp = x.clone();
                    xp[k] += h;
                    let mut xm = x.clone();
                    xm[k] -= h;
                    m.jacobian(&xp, &mut jp);
                    m.jacobian(&xm, &mut jm);
                    for i in 0..n {
                        for j in 0..n {
                            let fd = (jp[(i, j)] - jm[(i, j)]) / (2.0 * h);
                            assert!((fd - hess[i][(j, k)]).abs() < 1e-5, "{m} d2f[{i}][{j},{k}]");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn declared_bounds_dominate_samples() {
        for m in zoo() {
            let b = m.bounds();
            let (sf, sdf) = cell_norms(&m, 24);
            assert!(sf <= b.sup_f + 1e-12, "{m}: {sf} > {}", b.sup_f);
            assert!(sdf <= b.sup_df + 1e-12, "{m}: {sdf} > {}", b.sup_df);
            assert!(sf.is_finite() && sdf.is_finite());
            let n = PeriodicField::dim(&m);
            for x in sample_points(n, 20, 9) {
                let hess = m.hessian(&x).unwrap();
                let worst = hess
                    .iter()
                    .map(|hi| hi.as_slice().iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                assert!(worst <= b.sup_d2f + 1e-12);
            }
        }
    }

    #[test]
    fn fallback_jacobian_is_accurate() {
        let m = circle(2.0, 0.7);
        let bounds = m.bounds();
        let fd = FnField::new(1, "circle-fd", bounds, move |x: &[f64], out: &mut [f64]| m.eval(x, out));
        let report = jacobian_check(&fd, 30, 2).unwrap();
        assert!(report.max_deviation < 1e-6);
    }
}
