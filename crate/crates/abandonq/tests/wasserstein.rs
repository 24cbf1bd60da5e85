use abandonq::ssq_exact::{stationary_pmf, LatticePmf};
use abandonq::wasserstein_metrics::*;
use abandonq::QueueParams;
use proptest::prelude::*;

// W_p(q~, Z) at lambda=2, mu=1, gamma=0.5 from arbitrary-precision
// integration of |x_i - z|^p over the normal quantile cells
const W1_G05: f64 = 0.2172020789674168531;
const W2_G05: f64 = 0.3286452287465424602;
const W4_G05: f64 = 0.6104553668431783823;

#[test]
fn lattice_vs_gaussian_matches_reference() {
    let p = QueueParams::ssq(2.0, 1.0, 0.5).unwrap();
    let pmf = stationary_pmf(&p, 1e-15).unwrap();
    for (order, want) in [(1.0, W1_G05), (2.0, W2_G05), (4.0, W4_G05)] {
        let w = wp_lattice_vs_gaussian(&pmf, order).unwrap();
        assert!((w.value - want).abs() < 1e-9, "p={order}: {} vs {want}", w.value);
        assert!(w.quad_error + w.endpoint_tail < 1e-8);
    }
}

#[test]
fn point_mass_at_c_is_norm_of_shifted_normal() {
    // W_2(delta_c, N(0,1))^2 = 1 + c^2
    for c in [-1.5, 0.0, 0.7, 3.0] {
        let w = wp_atoms_vs_gaussian(&[c], &[0.0], 2.0, 1.0).unwrap();
        assert!((w.value - (1.0 + c * c).sqrt()).abs() < 1e-10);
    }
}

// Transport LP solved by successive shortest paths (Bellman-Ford from a
// super source); it never uses the ordering of the line.
fn min_cost_flow(xa: &[f64], pa: &[f64], xb: &[f64], pb: &[f64], p: f64) -> f64 {
    let (na, nb) = (xa.len(), xb.len());
    let cost = |i: usize, j: usize| (xa[i] - xb[j]).abs().powf(p);
    let mut flow = vec![vec![0.0f64; nb]; na];
    let mut supply = pa.to_vec();
    let mut demand = pb.to_vec();
    // node 0 = super source, 1..=na sources, na+1..=na+nb sinks
    let n = 1 + na + nb;
    for _round in 0..10 * (na + nb) {
        if supply.iter().sum::<f64>() < 1e-13 {
            break;
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        dist[0] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            let mut relax = |from: usize, to: usize, w: f64, dist: &mut Vec<f64>, prev: &mut Vec<usize>| {
                if dist[from] + w < dist[to] - 1e-13 {
                    dist[to] = dist[from] + w;
                    prev[to] = from;
                    changed = true;
                }
            };
            for i in 0..na {
                if supply[i] > 1e-15 {
                    relax(0, 1 + i, 0.0, &mut dist, &mut prev);
                }
                for j in 0..nb {
                    relax(1 + i, 1 + na + j, cost(i, j), &mut dist, &mut prev);
                    if flow[i][j] > 1e-15 {
                        relax(1 + na + j, 1 + i, -cost(i, j), &mut dist, &mut prev);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..nb)
            .filter(|j| demand[*j] > 1e-15)
            .min_by(|a, b| dist[1 + na + a].total_cmp(&dist[1 + na + b]))
            .unwrap();
        let mut path = vec![1 + na + sink];
        while *path.last().unwrap() != 0 {
            let v = prev[*path.last().unwrap()];
            assert!(v != usize::MAX && path.len() <= n, "broken path");
            path.push(v);
        }
        path.reverse();
        let src = path[1] - 1;
        let mut amt = supply[src].min(demand[sink]);
        for w in path[1..].windows(2) {
            if w[0] > na {
                amt = amt.min(flow[w[1] - 1][w[0] - 1 - na]);
            }
        }
        for w in path[1..].windows(2) {
            if w[0] <= na {
                flow[w[0] - 1][w[1] - 1 - na] += amt;
            } else {
                flow[w[1] - 1][w[0] - 1 - na] -= amt;
            }
        }
        supply[src] -= amt;
        demand[sink] -= amt;
    }
    let mut total = 0.0;
    for i in 0..na {
        for j in 0..nb {
            total += flow[i][j] * cost(i, j);
        }
    }
    total.powf(1.0 / p)
}

#[test]
fn lp_oracle_fixed_example() {
    let (xa, pa) = (vec![0.0, 1.0, 3.0], vec![0.5, 0.25, 0.25]);
    let (xb, pb) = (vec![0.5, 2.0], vec![0.4, 0.6]);
    let want = min_cost_flow(&xa, &pa, &xb, &pb, 2.0);
    let la: Vec<f64> = pa.iter().map(|x: &f64| x.ln()).collect();
    let lb: Vec<f64> = pb.iter().map(|x: &f64| x.ln()).collect();
    let got = wp_atoms_vs_atoms((&xa, &la), (&xb, &lb), 2.0).unwrap();
    assert!((got.value - want).abs() < 1e-12, "{} vs {want}", got.value);
}

#[test]
fn lattice_vs_lattice_self_is_zero() {
    let p = QueueParams::ssq(2.0, 1.0, 0.2).unwrap();
    let pmf = stationary_pmf(&p, 1e-14).unwrap();
    assert!(wp_lattice_vs_lattice(&pmf, &pmf, 2.0).unwrap().value < 1e-12);
    let shifted = LatticePmf::from_log_probs(pmf.log_probs.clone(), pmf.offset - 1.0, pmf.scale, 0.0);
    // a shift by one lattice step moves every atom by the scale
    let w = wp_lattice_vs_lattice(&pmf, &shifted, 3.0).unwrap().value;
    assert!((w - pmf.scale).abs() < 1e-12);
}

#[test]
fn sandwich_rejects_bad_rho() {
    assert!(tail_sandwich(1.0, 1.0, 2.0, 0.1).is_err());
    assert!(tail_sandwich(0.0, 0.5, 2.0, 0.1).is_err());
    let (lo, hi) = tail_interval(2.0, 0.3, 2.0, 0.01).unwrap();
    assert!(lo <= 0.022750131948179195 && 0.022750131948179195 <= hi);
}

fn atoms() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-3.0f64..3.0, 0.05f64..1.0), 1..5).prop_map(|v| {
        let s: f64 = v.iter().map(|x| x.1).sum();
        let mut v = v;
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        (v.iter().map(|x| x.0).collect(), v.iter().map(|x| x.1 / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_coupling_solves_the_lp((xa, pa) in atoms(), (xb, pb) in atoms(), p in 1.0f64..4.0) {
        let want = min_cost_flow(&xa, &pa, &xb, &pb, p);
        let la: Vec<f64> = pa.iter().map(|x| x.ln()).collect();
        let lb: Vec<f64> = pb.iter().map(|x| x.ln()).collect();
        let got = wp_atoms_vs_atoms((&xa, &la), (&xb, &lb), p).unwrap().value;
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want), "{} vs {}", got, want);
    }

    #[test]
    fn triangle_through_gaussian((xa, pa) in atoms(), (xb, pb) in atoms()) {
        let la: Vec<f64> = pa.iter().map(|x| x.ln()).collect();
        let lb: Vec<f64> = pb.iter().map(|x| x.ln()).collect();
        let ab = wp_atoms_vs_atoms((&xa, &la), (&xb, &lb), 2.0).unwrap().value;
        let az = wp_atoms_vs_gaussian(&xa, &la, 2.0, 1.0).unwrap();
        let bz = wp_atoms_vs_gaussian(&xb, &lb, 2.0, 1.0).unwrap();
        prop_assert!(ab <= az.value + bz.value + 1e-9);
    }

    #[test]
    fn wp_nondecreasing_in_p((xa, pa) in atoms(), p in 1.0f64..6.0, dp in 0.0f64..4.0) {
        let la: Vec<f64> = pa.iter().map(|x| x.ln()).collect();
        let a = wp_atoms_vs_gaussian(&xa, &la, p, 1.0).unwrap();
        let b = wp_atoms_vs_gaussian(&xa, &la, p + dp, 1.0).unwrap();
        prop_assert!(a.value <= b.value + a.quad_error + b.quad_error + 1e-10);
    }
}
