use abandonq::model_core::ssq_rates;
use abandonq::ssq_exact::*;
use abandonq::QueueParams;
use proptest::prelude::*;

// 40-digit values from an arbitrary-precision product-form solve
const P0_G01: f64 = 0.005845507237145876316;
const MEAN_G01: f64 = 10.05845507237145876316;
const TAIL1_G01: f64 = 0.1575596974783141166;
const L4_G01: f64 = 5.797858490411612336;
const LNMGF05_G01: f64 = 2.979432521809122348;

#[test]
fn matches_high_precision_solve() {
    let p = QueueParams::ssq(2.0, 1.0, 0.1).unwrap();
    let pmf = stationary_pmf(&p, 1e-15).unwrap();
    let c = p.fluid_center();
    assert!((prob_empty(&pmf) - P0_G01).abs() < 1e-15);
    assert!((pmf.mean() - MEAN_G01).abs() < 1e-11);
    assert!((tail_prob(&pmf, 1.0, true).value - TAIL1_G01).abs() < 1e-13);
    assert!((moment_lp(&pmf, c, 4.0).unwrap() - L4_G01).abs() < 1e-11);
    // the exponential weight needs the far tail kept
    let deep = stationary_pmf(&p, 1e-100).unwrap();
    assert!((mgf(&deep, 0.5, c) - LNMGF05_G01).abs() < 1e-11);
}

#[test]
fn identity_lambda2_mu1_gamma1() {
    let p = QueueParams::ssq(2.0, 1.0, 1.0).unwrap();
    let pmf = stationary_pmf(&p, 1e-15).unwrap();
    let e2 = 1f64.exp().powi(2);
    assert!((prob_empty(&pmf) - 2.0 / (e2 - 1.0)).abs() < 1e-12);
    assert!((pmf.mean() - 1.0 / 1f64.tanh()).abs() < 1e-12);
}

#[test]
fn mean_identity_from_balance() {
    // lambda = mu (1 - P0) + gamma E q in steady state
    for (l, m, g) in [(2.0, 1.0, 0.3), (5.0, 0.5, 0.05), (1.0, 0.0, 0.2)] {
        let p = QueueParams::ssq(l, m, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-14).unwrap();
        let rhs = m * (1.0 - prob_empty(&pmf)) + g * pmf.mean();
        assert!((rhs - l).abs() < 1e-9 * l, "{l} {m} {g}: {rhs}");
    }
}

#[test]
fn closed_form_tail_agrees_with_array() {
    let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
    let pmf = stationary_pmf(&p, 1e-15).unwrap();
    for a in [-2.0, 0.0, 1.0, 3.0, 6.0] {
        let t = p.fluid_center() + a / p.diffusion_scale();
        let closed = ln_tail_closed_form(&p, t).unwrap();
        let arr = tail_prob(&pmf, a, true).ln_value;
        assert!((closed - arr).abs() < 1e-9, "a={a}: {closed} vs {arr}");
    }
}

#[test]
fn rejects_bad_tolerance() {
    let p = QueueParams::ssq(2.0, 1.0, 0.1).unwrap();
    assert!(stationary_pmf(&p, 0.0).is_err());
    assert!(stationary_pmf(&p, 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pmf_is_normalized_and_balanced(l in 0.5f64..5.0, m in 0.0f64..3.0, g in 0.02f64..2.0) {
        let p = QueueParams::ssq(l, m, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-13).unwrap();
        prop_assert!((pmf.total_mass() - 1.0).abs() < 1e-12);
        // detailed balance across each cut, with the rates from the rate list
        for i in 0..pmf.len().min(200) - 1 {
            let up = ssq_rates(&p, i as i64).unwrap()[0].rate;
            let down = ssq_rates(&p, i as i64 + 1).unwrap()[1].rate;
            let lhs = pmf.log_probs[i] + up.ln();
            let rhs = pmf.log_probs[i + 1] + down.ln();
            prop_assert!((lhs - rhs).abs() < 1e-9, "cut {}: {} vs {}", i, lhs, rhs);
        }
    }

    #[test]
    fn tail_is_monotone(g in 0.01f64..0.5, a in -3.0f64..3.0, da in 0.0f64..2.0) {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-13).unwrap();
        prop_assert!(tail_prob(&pmf, a, true).value >= tail_prob(&pmf, a + da, true).value);
    }

    #[test]
    fn lp_norm_grows_with_p(g in 0.01f64..0.5, p1 in 1.0f64..8.0, dp in 0.0f64..8.0) {
        let p = QueueParams::ssq(2.0, 1.0, g).unwrap();
        let pmf = stationary_pmf(&p, 1e-13).unwrap();
        let c = p.fluid_center();
        prop_assert!(moment_lp(&pmf, c, p1).unwrap() <= moment_lp(&pmf, c, p1 + dp).unwrap() * (1.0 + 1e-12));
    }
}
