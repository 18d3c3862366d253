use proptest::prelude::*;

use rotvec::algebra::{ones, ones_exp, recover_component, sum_entries, ConeMembership, Involution, Matrix};
use rotvec::field::{make_model, periodicity_check, ModelSpec};
use rotvec::flow::{dyadic_windows, WindowOptions};
use rotvec::psi::{psi_all_quadrature, psi_ode_line, PsiLine, QuadratureSpec, PSI_ODE_TOL};
use rotvec::riccati::{riccati_simulate, RiccatiSystem};
use rotvec::solver::{gamma_map, in_admissible_set, normalization_parameters, NormalizedField, SolveOptions};
use rotvec::tongue::{lock_target, TongueOptions};

fn square(q: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0..5.0f64, q * q).prop_map(move |v| {
        let rows: Vec<Vec<f64>> = v.chunks(q).map(|r| r.to_vec()).collect();
        Matrix::from_rows(&rows).unwrap()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ones_exp_is_a_semigroup(s in -1.0..1.0f64, t in -1.0..1.0f64, q in 1usize..6) {
        let lhs = ones_exp(s, q).unwrap().matmul(&ones_exp(t, q).unwrap());
        let rhs = ones_exp(s + t, q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + rhs.max_norm()));
    }

    #[test]
    fn ones_exp_matches_series(t in -0.5..0.5f64, q in 1usize..5) {
        // exp(tJ) = Σ (tJ)^k / k!
        let j = ones(q);
        let mut term = Matrix::identity(q);
        let mut sum = Matrix::identity(q);
        for k in 1..40 {
            term = term.matmul(&j);
            let scale = t / k as f64;
            let mut scaled = Matrix::zeros(q, q);
            for r in 0..q {
                for c in 0..q {
                    scaled[(r, c)] = term[(r, c)] * scale;
                    sum[(r, c)] += scaled[(r, c)];
                }
            }
            term = scaled;
        }
        prop_assert!(sum.max_abs_diff(&ones_exp(t, q).unwrap()) <= 1e-12);
    }

    #[test]
    fn recover_component_inverts_signed_sums(y in prop::collection::vec(-100.0..100.0f64, 1..8), pick in 0usize..8) {
        let i = pick % y.len() + 1;
        let got = recover_component(&y, i).unwrap();
        prop_assert!(close(got, y[i - 1], 1e-12));
    }

    #[test]
    fn conjugated_sum_matches_dense(m in square(4), i in 0usize..5) {
        let inv = Involution::new(i, 4).unwrap();
        let dense = sum_entries(&inv.conjugate(&m));
        prop_assert!(close(inv.conjugated_sum(&m), dense, 1e-12));
    }

    #[test]
    fn positive_cone_is_inside_closure(z in prop::collection::vec(-1.0..1.0f64, 1..6)) {
        let c = ConeMembership::of(&z);
        prop_assert!(!c.positive || c.nonnegative);
    }

    #[test]
    fn tongue_locking_is_monotone_in_tolerance(rho in -1.0..1.0f64, tol in 1e-5..1e-2f64, factor in 1.0..10.0f64) {
        let tight = TongueOptions { lock_tol: tol, ..TongueOptions::default() };
        let loose = TongueOptions { lock_tol: tol * factor, ..TongueOptions::default() };
        if lock_target(rho, &tight).is_some() {
            prop_assert!(lock_target(rho, &loose).is_some());
        }
    }

    #[test]
    fn window_test_separates_bounded_from_linear(amp in 0.1..10.0f64, rate in 0.01..1.0f64, phase in 0usize..8) {
        // Peaks fall on grid points so every window sees the same sup.
        let times: Vec<f64> = (0..=80_000).map(|k| k as f64 / 8.0).collect();
        let bounded: Vec<f64> = times.iter().map(|t| amp * (std::f64::consts::TAU * (t + phase as f64 / 8.0)).cos()).collect();
        let linear: Vec<f64> = times.iter().map(|t| rate * t).collect();
        let opts = WindowOptions::default();
        prop_assert!(dyadic_windows(&times, &bounded, &opts).passed);
        prop_assert!(!dyadic_windows(&times, &linear, &opts).passed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shipped_models_are_periodic(c in -3.0..3.0f64, eps in 0.0..1.0f64, w in 0.5..3.0f64, k in 0.0..0.3f64) {
        for spec in [
            ModelSpec::Circle { c, eps },
            ModelSpec::TorusProduct { c: vec![c, w], eps: vec![eps, k] },
            ModelSpec::WinfreeType { omega: vec![w, c], kappa: k },
        ] {
            let f = make_model(spec).unwrap();
            prop_assert!(periodicity_check(&f, 16, 7).unwrap().passed);
        }
    }

    #[test]
    fn psi_quadrature_agrees_with_ode(c in 1.0..3.0f64, eps in 0.0..0.5f64, drift in -0.2..0.2f64) {
        let f = make_model(ModelSpec::Circle { c, eps }).unwrap();
        let rho = [c + drift];
        let line = PsiLine::plain(&f, &[0.0], &rho).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64).collect();
        let quad = psi_all_quadrature(&line, &times, QuadratureSpec::for_direction(&rho)).unwrap();
        for i in 0..=1 {
            let ode = psi_ode_line(&line, i, &times, PSI_ODE_TOL).unwrap();
            for (q, o) in quad.iter().zip(&ode) {
                prop_assert!((q[i] - o).abs() <= 1e-8, "i = {i}: {} vs {o}", q[i]);
            }
        }
    }

    #[test]
    fn riccati_without_quadratic_term_is_linear_in_drift(
        a1 in prop::collection::vec(-1.0..1.0f64, 2),
        a2 in prop::collection::vec(-1.0..1.0f64, 2),
        b in prop::collection::vec(-0.3..0.3f64, 2),
    ) {
        let diag = Matrix::from_diagonal(&b);
        let h = vec![Matrix::zeros(2, 2); 2];
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let solve = |a: Vec<f64>| {
            let sys = RiccatiSystem::constant(a, diag.clone(), h.clone(), 0.3).unwrap();
            riccati_simulate(&sys, (-5.0, 5.0), 1e-11).unwrap()
        };
        let (y1, y2, y12) = (solve(a1), solve(a2), solve(sum));
        for t in [-5.0, -2.5, 0.0, 1.0, 5.0] {
            let (p, q, r) = (y1.interpolate(t).unwrap(), y2.interpolate(t).unwrap(), y12.interpolate(t).unwrap());
            for j in 0..2 {
                prop_assert!((p[j] + q[j] - r[j]).abs() <= 1e-6 * (1.0 + r[j].abs()));
            }
        }
    }

    #[test]
    fn gamma_map_keeps_admissible_points_in_cone(c in 1.5..3.0f64, eps in 0.0..0.2f64, u in 0.0..1.0f64) {
        let f = make_model(ModelSpec::Circle { c, eps }).unwrap();
        let (cc, gamma) = normalization_parameters(&f, &SolveOptions::default()).unwrap();
        let g = NormalizedField::new(&f, &[0.0], cc, gamma, 0.5).unwrap();
        let l = 2.0;
        let hi = (l - 1.0) * g.sup_norm();
        let z = [1.0 + 1e-6 + u * (hi - 1.0 - 2e-6)];
        prop_assume!(in_admissible_set(&z, l, g.sup_norm()));
        let state = gamma_map(&g, &z, 20.0, l).unwrap();
        prop_assert!(state.in_cone, "image {:?}", state.image);
    }
}
