//! Randomized invariants of the numerical building blocks.

use nearlin_core::densela::{frobenius_norm, matmul, matmul_blocked, spectral_norm_default, DenseMatrix};
use nearlin_core::netflow::{phi_eps, phi_eps_deriv};
use nearlin_core::risk::{empirical_risk, MarginConfig, RiskKind};
use nearlin_core::specfun::{upper_gamma, GammaArgs};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leaky_relu_is_between_identity_and_relu(eps in 0.0f64..=1.0, x in -1e3f64..1e3) {
        let y = phi_eps(eps, x);
        let relu = x.max(0.0);
        prop_assert!(y >= x.min(relu) - 1e-12 && y <= x.max(relu) + 1e-12);
        let d = phi_eps_deriv(eps, x);
        prop_assert!(d == 1.0 || (d - (1.0 - eps)).abs() < 1e-15);
    }

    #[test]
    fn gamma_recurrence(a in -0.95f64..0.0, x in 1e-3f64..30.0) {
        let g = |a: f64| upper_gamma(GammaArgs::new(a, x).unwrap()).unwrap();
        let lhs = g(a + 1.0);
        let rhs = a * g(a) + x.powf(a) * (-x).exp();
        prop_assert!(((lhs - rhs) / lhs).abs() < 1e-10, "a={} x={} lhs={} rhs={}", a, x, lhs, rhs);
    }

    #[test]
    fn blocked_product_matches_reference(a in matrix(7, 5), b in matrix(5, 9)) {
        let r = matmul(&a, &b).unwrap();
        let f = matmul_blocked(&a, &b).unwrap();
        prop_assert!(frobenius_norm(&r.sub(&f).unwrap()) <= 1e-12 * (1.0 + frobenius_norm(&r)));
    }

    #[test]
    fn spectral_norm_between_max_entry_and_frobenius(a in matrix(6, 4)) {
        let s = spectral_norm_default(&a).unwrap();
        prop_assert!(s <= frobenius_norm(&a) * (1.0 + 1e-9));
        prop_assert!(s >= a.max_abs() * (1.0 - 1e-9));
    }

    #[test]
    fn margin_risks_are_ordered(out in prop::collection::vec(-1.0f64..1.0, 1..50), gamma in 1e-3f64..1.0) {
        let y: Vec<f64> = out.iter().enumerate().map(|(i, _)| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let mc = MarginConfig::new(gamma).unwrap();
        let mis = empirical_risk(&out, &y, RiskKind::Misclass, None).unwrap();
        let ramp = empirical_risk(&out, &y, RiskKind::MarginCont, Some(mc)).unwrap();
        let hard = empirical_risk(&out, &y, RiskKind::Margin, Some(mc)).unwrap();
        prop_assert!(mis <= ramp + 1e-15 && ramp <= hard + 1e-15);
    }
}
