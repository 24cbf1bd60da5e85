use abandonq::gaussian_numerics::ln_hermite_lp_bound;
use abandonq::ssq_exact::stationary_pmf;
use abandonq::stein_certificate::*;
use abandonq::wasserstein_metrics::wp_lattice_vs_gaussian;
use abandonq::QueueParams;
use proptest::prelude::*;

// int_0^Y y^{k-1}(1+y^2)^{-3/2} dy by arbitrary-precision quadrature
const SHAPE: [(usize, f64, f64); 3] = [
    (3, 0.5, 0.03399822955964550822),
    (4, 2.0, 0.6832815729997476357),
    (5, 7.0, 21.77250569360238627),
];

#[test]
fn higher_coefficients_match_reference_integrals() {
    for (k, y, want) in SHAPE {
        // t0 with e^{-t0}/sqrt(1 - e^{-2 t0}) = y
        let t0 = 0.5 * (1.0 + 1.0 / (y * y)).ln();
        let g = g_coefficients(t0, 2.0, 6).unwrap();
        let h = ln_hermite_lp_bound(k as u32 - 1, 2.0).exp();
        let shape = g.g[k] / (t0.exp() * h);
        assert!((shape - want).abs() < 1e-11 * want, "k={k}: {shape} vs {want}");
    }
}

#[test]
fn second_coefficient_closed_form() {
    // int_0^Y y (1+y^2)^{-3/2} dy = 1 - 1/sqrt(1+Y^2) = 1 - sqrt(u)
    let t0 = 0.3;
    let g = g_coefficients(t0, 2.0, 4).unwrap();
    let u = 1.0 - (-2.0 * t0).exp();
    assert!((g.g[2] - t0.exp() * (1.0 - u.sqrt())).abs() < 1e-15);
}

#[test]
fn certificate_dominates_numeric_w2() {
    for g in [0.1, 0.01] {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-15).unwrap();
        let c = certificate_bound(&p, 2.0, None, DEFAULT_KMAX, CertLaw::Ssq(&pmf)).unwrap();
        let w = wp_lattice_vs_gaussian(&pmf, 2.0).unwrap();
        assert!(c.upper >= w.value, "gamma={g}: {} < {}", c.upper, w.value);
    }
}

#[test]
fn no_service_cancels_first_order_term() {
    let p = QueueParams::ssq(2.0, 0.0, 0.1).unwrap();
    let pmf = stationary_pmf(&p, 1e-15).unwrap();
    let c = certificate_bound(&p, 2.0, None, DEFAULT_KMAX, CertLaw::Ssq(&pmf)).unwrap();
    assert!(c.aux["term_1"].abs() <= 1e-14);
}

#[test]
fn default_t0_domain() {
    assert!(default_t0(2.0, 1.0, 2.0).is_err());
    let t = default_t0(2.0, 0.1, 2.0).unwrap();
    assert!((t - (-0.5 * (0.9f64).ln())).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coefficients_are_positive(t0 in 0.01f64..3.0, p in 1.1f64..8.0) {
        let g = g_coefficients(t0, p, 12).unwrap();
        prop_assert!(g.g.iter().all(|x| x.is_finite() && *x > 0.0));
        prop_assert!(g.tail_bound >= 0.0);
    }

    #[test]
    fn odd_even_sign_pattern(x in 0i64..200, k in 1u32..8) {
        // a_k = pref (lambda + (-1)^k D): even orders are positive
        let p = QueueParams::ssq(2.0, 1.0, 0.05).unwrap();
        let a = km_coefficients(&p, KmModel::Ssq, k, &[x]).unwrap();
        if k % 2 == 0 {
            prop_assert!(a > 0.0);
        }
    }
}
