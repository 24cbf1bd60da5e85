use abandonq::harness::*;

fn cfg(json: &str) -> SweepConfig {
    SweepConfig::from_json(json).unwrap()
}

const SSQ: &str = r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},
  "gamma_grid":[0.2,0.1,0.05],"a_grid":[0.5,2],"p_grid":[2,4],
  "outputs":["p0","lp_norm","tail","wp"]}"#;

fn csv_of(rows: &[Row]) -> Vec<u8> {
    let mut b = Vec::new();
    emit(rows, Format::Csv, &mut b).unwrap();
    b
}

#[test]
fn row_count_and_order() {
    let c = cfg(SSQ);
    let rows = run_sweep(&c).unwrap();
    // per gamma: p0 + 2 lp + 2 tail + 2 wp
    assert_eq!(rows.len(), 3 * 7);
    assert!(rows.windows(2).all(|w| w[0].index + 1 == w[1].index));
    assert!(rows.windows(2).all(|w| w[0].gamma >= w[1].gamma));
    let text = String::from_utf8(csv_of(&rows)).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
    assert!(text.starts_with("index,model,kind,n,gamma,a,delta,d,p,theta,phi,seed,truth,"));
}

#[test]
fn exact_mode_is_byte_identical() {
    let c = cfg(SSQ);
    assert_eq!(csv_of(&run_sweep(&c).unwrap()), csv_of(&run_sweep(&c).unwrap()));
}

#[test]
fn json_round_trip() {
    let rows = run_sweep(&cfg(SSQ)).unwrap();
    let mut b = Vec::new();
    emit(&rows, Format::Json, &mut b).unwrap();
    let back: Vec<Row> = serde_json::from_slice(&b).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn single_server_jsq_matches_ssq_truths() {
    let s = run_sweep(&cfg(
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.2,0.1],"p_grid":[2],"outputs":["p0","lp_norm"]}"#,
    ))
    .unwrap();
    let j = run_sweep(&cfg(
        r#"{"model":"jsq","params":{"lambda":2,"mus":[1],"gamma":0.1},"gamma_grid":[0.2,0.1],"p_grid":[2],"outputs":["total_empty","qsum_moment"]}"#,
    ))
    .unwrap();
    let ts: Vec<_> = s.iter().map(|r| r.truth).collect();
    let tj: Vec<_> = j.iter().map(|r| r.truth).collect();
    assert_eq!(ts, tj);
}

#[test]
fn simulate_mode_is_seeded() {
    let c = cfg(
        r#"{"model":"jsq","params":{"lambda":2,"mus":[0.5,0.5],"gamma":0.5},"gamma_grid":[0.5],
            "estimator":{"kind":"simulate","horizon":2e4,"burn_in":100,"seeds":[1,2]},
            "outputs":["sum_zero_mass","total_empty"],"seed":9}"#,
    );
    let a = run_sweep(&c).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, run_sweep(&c).unwrap());
    assert!(a.iter().all(|r| r.truth_ci.is_some()));
    assert_ne!(a[0].truth, a[2].truth);
}

#[test]
fn validation_errors() {
    let bad = [
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[],"outputs":["p0"]}"#,
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1],"a_grid":[],"outputs":["tail"]}"#,
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1],"outputs":["tail"]}"#,
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1],"outputs":["ssc"],"p_grid":[2]}"#,
        r#"{"model":"jsq","params":{"lambda":2,"mus":[1,1,1,1],"gamma":0.1},"gamma_grid":[0.1],"outputs":["total_empty"]}"#,
        r#"{"model":"jsq","params":{"lambda":2,"mus":[1,1],"gamma":0.1},"gamma_grid":[0.1],"a_grid":[1],"outputs":["jsq_tail"],"phi":[[1,1]]}"#,
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[-1],"outputs":["p0"]}"#,
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1],"outputs":["p0"],"typo":1}"#,
    ];
    for b in bad {
        let e = SweepConfig::from_json(b).unwrap_err();
        assert!(e.is_validation(), "{b}: {e}");
    }
}

#[test]
fn every_kind_is_reachable() {
    let s = run_sweep(&cfg(
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1],"a_grid":[1],
            "p_grid":[2],"theta_grid":[0.5],"outputs":["p0","lp_norm","mgf_log","wp","tail","certificate"]}"#,
    ))
    .unwrap();
    let j = run_sweep(&cfg(
        r#"{"model":"jsq","params":{"lambda":2,"mus":[0.5,0.5],"gamma":0.5},"gamma_grid":[0.5],"a_grid":[1],
            "p_grid":[2],"phi":[[0.7071067811865476,0.7071067811865476]],"cap":40,
            "outputs":["ssc","sum_zero_mass","total_empty","qsum_moment","wp_jsq","jsq_tail","certificate"]}"#,
    ))
    .unwrap();
    assert_eq!(s.len() + j.len(), 13);
    assert!(s.iter().chain(&j).all(|r| r.truth.is_some()));
}

#[test]
fn phase_ratios_head_to_one() {
    let c = cfg(
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[1e-3,1e-4,1e-5],
            "delta_grid":[0,0.25],"outputs":["p0"]}"#,
    );
    let rows = phase_diagram(&c).unwrap();
    assert_eq!(rows.len(), 6);
    let last = |d: f64| rows.iter().filter(|r| r.delta == d).last().unwrap().empirical_exponent;
    assert!((last(0.0) - 1.0).abs() < 0.01);
    assert!((last(0.25) - 1.0).abs() < 0.05);
    let mut b = Vec::new();
    emit(&rows, Format::Csv, &mut b).unwrap();
    assert!(String::from_utf8(b).unwrap().starts_with("delta,d,gamma,a,normalization,"));
}

#[test]
fn errors_name_the_grid_point() {
    // p gamma/lambda >= 1 leaves the certificate without a default t0
    let c = cfg(
        r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},"gamma_grid":[0.1,1.5],"p_grid":[2],"outputs":["certificate"]}"#,
    );
    let e = run_sweep(&c).unwrap_err().to_string();
    assert!(e.contains("gamma=1.5") && e.contains("certificate"), "{e}");
}
