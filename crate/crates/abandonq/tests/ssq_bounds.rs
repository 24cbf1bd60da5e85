use abandonq::ssq_bounds::*;
use abandonq::ssq_exact::*;
use abandonq::QueueParams;
use proptest::prelude::*;

#[test]
fn printed_constants_lambda2_mu1() {
    let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
    let t = constants_table(&p).unwrap();
    // C = 1: (1+C)(2+C)/(C^2+C-1) = 6 beats e
    assert!((t.c_prime - 12.0).abs() < 1e-14);
    let pi = std::f64::consts::PI;
    let e = std::f64::consts::E;
    assert!((t.d_prime - 1.0 / (2.0 + (4.0 * pi * e * e).sqrt())).abs() < 1e-15);
    assert!((t.a_env - (1.0 + 12.0 * 2f64.sqrt())).abs() < 1e-13);
    assert!((t.c2 - 2.0 * e * (2.0 * pi).sqrt()).abs() < 1e-14);
}

#[test]
fn p0_bracket_holds_on_grid() {
    for g in [0.2, 0.1, 0.05, 0.02, 0.01, 0.005] {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-14).unwrap();
        let r = p0_bounds(&p).unwrap();
        let x = prob_empty(&pmf);
        assert!(r.lower <= x && x <= r.upper, "gamma={g}: {x} not in [{}, {}]", r.lower, r.upper);
        // the bracket has a constant log width
        let w = r.upper.ln() - r.lower.ln();
        assert!((w - (t_ratio(&p))).abs() < 1e-9);
    }
}

fn t_ratio(p: &QueueParams) -> f64 {
    let t = constants_table(p).unwrap();
    (t.c_prime / t.d_prime).ln()
}

#[test]
fn mgf_envelope_holds() {
    for g in [0.1, 0.01] {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-200).unwrap();
        for th in [0.1, 0.25, 0.5, 1.0] {
            let r = mgf_envelope(&p, th).unwrap();
            let x = mgf(&pmf, th, p.fluid_center());
            // the lower envelope is tight up to a P(q = 0) sized term, so
            // allow summation round-off
            let slack = 1e-12 * x.abs();
            assert!(r.lower - slack <= x && x <= r.upper + slack, "gamma={g}, theta={th}: {x} vs [{}, {}]", r.lower, r.upper);
        }
    }
}

#[test]
fn lp_bracket_holds() {
    for g in [0.1, 0.01] {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-200).unwrap();
        for order in [1.0, 2.0, 4.0, 8.0, 16.0, 64.0] {
            let r = lp_norm_bounds(&p, order).unwrap();
            let x = moment_lp(&pmf, p.fluid_center(), order).unwrap();
            assert!(r.lower <= x && x <= r.upper, "gamma={g}, p={order}");
        }
    }
}

#[test]
fn tail_regimes_follow_delta() {
    let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
    assert_eq!(tail_regime(&p, 1.0).as_str(), "constant_dev");
    assert_eq!(tail_regime(&p, 100.0).as_str(), "large");
}

#[test]
fn tail_sandwich_where_flags_hold() {
    let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap().with_regime(1.5, 0.25, None).unwrap();
    let pmf = stationary_pmf(&p, 1e-300).unwrap();
    let mut checked = 0;
    for a in [1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0] {
        let r = tail_bounds(&p, a).unwrap();
        let x = tail_prob(&pmf, a, true).value;
        assert!(r.upper.is_finite() && r.lower.is_finite());
        if r.valid {
            assert!(r.lower <= x && x <= r.upper, "a={a}: {x} vs [{}, {}]", r.lower, r.upper);
            checked += 1;
        }
    }
    assert!(checked >= 3);
}

#[test]
fn bad_inputs_are_rejected() {
    let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
    assert!(lp_norm_bounds(&p, 0.5).is_err());
    assert!(mgf_envelope(&p, -1.0).is_err());
    assert!(wp_bounds(&p, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn brackets_are_ordered(l in 1.5f64..6.0, m in 0.2f64..1.0, g in 1e-4f64..0.2, order in 1.0f64..32.0) {
        let p = QueueParams::ssq(l, m, g).unwrap();
        let r = p0_bounds(&p).unwrap();
        prop_assert!(r.lower <= r.upper);
        let r = lp_norm_bounds(&p, order).unwrap();
        prop_assert!(r.lower <= r.upper);
        let r = mgf_envelope(&p, order / 32.0).unwrap();
        prop_assert!(r.lower <= r.upper);
    }

    #[test]
    fn tail_reports_are_finite(g in 1e-4f64..0.2, a in 0.1f64..50.0) {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let r = tail_bounds(&p, a).unwrap();
        prop_assert!(!r.upper.is_nan() && !r.lower.is_nan());
        prop_assert!(r.lower <= 1.0);
    }
}
