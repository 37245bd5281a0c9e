mod common;

use avgsplit::exact::{multinomial_measure, split_probs, UnlabeledSpace};
use avgsplit::graphs::SiteWeights;
use avgsplit::harness::*;
use std::fs;

fn cfg(shape: GraphShape) -> ExperimentConfig {
    ExperimentConfig { graph: Some(GraphSpec::new(shape)), ..ExperimentConfig::default() }
}

#[test]
fn gap_sweep_examples() {
    let mut c = cfg(GraphShape::Path { n: 4 });
    c.k = vec![1, 2, 3, 4];
    c.graphs = vec![GraphSpec::new(GraphShape::Complete { n: 4 })];
    let sweep = run_gap_sweep(&c, None).unwrap();
    assert_eq!(sweep.rows.len(), 8);
    assert_eq!(sweep.flagged().count(), 0);
    let path: Vec<&GapRow> = sweep.rows.iter().filter(|r| r.n == 4 && r.graph.starts_with("path")).collect();
    for r in &path {
        assert!((r.gap - path[0].gap).abs() <= 1e-9 * path[0].gap);
    }
    let k1 = sweep.rows.iter().find(|r| r.graph.starts_with("complete") && r.k == 1).unwrap();
    assert!((k1.gap - 2.0).abs() <= 1e-10);

    let text = r#"
        name = "disordered"
        k = [1, 2, 3]
        [graph]
        kind = "cycle"
        n = 5
        conductance = { lo = 0.5, hi = 2.0, seed = 7 }
        [weights]
        kind = "random"
        max_ratio = 4.0
        seed = 8
    "#;
    let sweep = run_gap_sweep(&ExperimentConfig::from_toml(text).unwrap(), None).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    assert!(sweep.rows.iter().all(|r| (r.gap_ratio - 1.0).abs() <= 1e-9 && !r.flagged));
}

#[test]
fn gap_sweep_skips_oversized_instances() {
    let mut c = cfg(GraphShape::Cycle { n: 40 });
    c.k = vec![1, 12];
    let sweep = run_gap_sweep(&c, None).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.skipped.len(), 1);
}

#[test]
fn cutoff_single_particle_has_no_sharp_transition() {
    let mut c = cfg(GraphShape::Cycle { n: 5 });
    c.k = vec![1];
    c.time = Some(TimeSpec::TRel { values: vec![0.0, 1.0, 2.0] });
    let p = &run_cutoff_bin(&c, None).unwrap()[0];
    assert_eq!(p.mode, CutoffMode::Exact);
    let ratio = p.exact[2] / p.exact[1];
    let e1 = (-1.0f64).exp();
    assert!((0.5 * e1..=2.0 * e1).contains(&ratio), "ratio {ratio}");
    // worst start: every pile start has 1 - mu(pile) = 1 - 1/5
    assert!((p.exact[0] - 0.8).abs() <= 1e-12);
}

#[test]
fn cutoff_rows_at_time_zero() {
    let text = r#"
        k = [3]
        [graph]
        kind = "path"
        n = 3
        [weights]
        kind = "values"
        values = [0.2, 0.3, 0.5]
        [time]
        mode = "absolute"
        values = [0.0, 0.5]
    "#;
    let c = ExperimentConfig::from_toml(text).unwrap();
    let p = &run_cutoff_bin(&c, None).unwrap()[0];
    let pi = SiteWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
    let space = UnlabeledSpace::with_cap(3, 3, 100).unwrap();
    let mu = multinomial_measure(pi.as_slice(), &space).unwrap();
    let worst = (0..3).map(|x| 1.0 - mu[space.index(&space.pile(x)).unwrap()]).fold(0.0, f64::max);
    assert!((p.exact[0] - worst).abs() <= 1e-12);
}

#[test]
fn cutoff_falls_back_to_bounds() {
    let mut c = cfg(GraphShape::Cycle { n: 12 });
    c.k = vec![40];
    c.time = Some(TimeSpec::TRel { values: vec![1.0, 3.0, 6.0] });
    let p = &run_cutoff_bin(&c, None).unwrap()[0];
    assert_eq!(p.mode, CutoffMode::Bounds);
    assert!(p.states > EXACT_MODE_MAX_STATES as u128);
    for (lo, hi) in p.lower.iter().zip(&p.upper) {
        assert!(*lo <= *hi + 1e-12 && *hi <= 1.0);
    }
    assert!(p.upper.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn avg_profile_band_and_lower_curve() {
    let mut c = cfg(GraphShape::Cycle { n: 8 });
    c.process = Process::Avg;
    c.replicas = 2000;
    c.seed = 21;
    c.time = Some(TimeSpec::TRel { values: vec![1.0, 2.0, 3.0, 4.0] });
    let p = &run_avg_profile(&c, None).unwrap()[0];
    let i = 2;
    let t = p.times[i];
    let floor = (-t / p.t_rel).exp();
    assert!(p.estimates[i].mean >= floor, "{} < {floor}", p.estimates[i].mean);
    let (_, a) = p.band(p.t_rel, 6.0 * p.t_rel);
    assert!(a <= 20.0);
    for (e, lower) in p.estimates.iter().zip(&p.lower) {
        assert!(*lower <= e.mean + 4.0 * e.stderr);
    }
}

#[test]
fn avg_profile_scaled_values_decrease_across_windows() {
    let mut c = cfg(GraphShape::Cycle { n: 8 });
    c.process = Process::Avg;
    c.k = vec![64];
    c.replicas = 1000;
    c.seed = 22;
    c.time = Some(TimeSpec::TMix { windows: vec![1.0, 2.0, 3.0] });
    let p = &run_avg_profile(&c, None).unwrap()[0];
    let scaled: Vec<f64> = p.estimates.iter().map(|e| e.mean * 8.0).collect();
    let expect: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|c| t_mix(p.t_rel, 64) + c * p.t_rel).collect();
    for (t, e) in p.times.iter().zip(&expect) {
        assert!((t - e).abs() <= 1e-12);
    }
    assert!(scaled.windows(2).all(|w| w[1] < w[0]), "{scaled:?}");
}

#[test]
fn complete_graph_crossing_at_256() {
    let mut c = cfg(GraphShape::Complete { n: 256 });
    c.replicas = 500;
    c.seed = 23;
    let r = run_complete_cdsz(&c, None).unwrap();
    assert!((r.t_cdsz - 256f64.ln() / (256.0 * 2f64.ln())).abs() <= 1e-15);
    let ratio = r.ratio().unwrap();
    assert!((0.75..=1.25).contains(&ratio), "ratio {ratio}");
}

#[test]
fn complete_graph_early_and_late_values() {
    // at n = 256 the early value sits near 1.75 and the late one near 0.41;
    // both move toward their limits as n grows
    let run = |n: usize| {
        let mut c = cfg(GraphShape::Complete { n });
        c.replicas = 500;
        c.seed = 24;
        let r = run_complete_cdsz(&c, None).unwrap();
        let p = r.profile();
        (value_at(&p, 0.5 * r.t_cdsz).unwrap(), value_at(&p, 1.5 * r.t_cdsz).unwrap())
    };
    let (e256, l256) = run(256);
    let (e1024, l1024) = run(1024);
    let (e2048, _) = run(2048);
    assert!(e256 < e1024 && e1024 < e2048, "{e256} {e1024} {e2048}");
    assert!(l1024 < l256, "{l256} {l1024}");
    assert!((2.0 - e2048).abs() <= 0.2, "early value {e2048} at n = 2048");
}

#[test]
fn complete_graph_runner_rejects_small_or_other_graphs() {
    assert!(run_complete_cdsz(&cfg(GraphShape::Complete { n: 16 }), None).is_err());
    assert!(run_complete_cdsz(&cfg(GraphShape::Cycle { n: 100 }), None).is_err());
}

#[test]
fn nash_runner_rows() {
    let mut c = cfg(GraphShape::Cycle { n: 64 });
    c.graphs = vec![
        GraphSpec::new(GraphShape::Torus { dims: vec![8, 8] }),
        GraphSpec::new(GraphShape::Complete { n: 64 }),
    ];
    let rows = run_nash(&c, None).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].finite_dimensional && (0.8..=1.2).contains(&rows[0].d_hat.unwrap()));
    assert!(rows[1].finite_dimensional && (1.6..=2.4).contains(&rows[1].d_hat.unwrap()));
    assert!(!rows[2].finite_dimensional && !rows[2].reason.is_empty());
}

#[test]
fn verify_passes_and_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_verify(&ExperimentConfig::default(), Some(dir.path())).unwrap();
    let failed: Vec<_> = report.failures().map(|c| c.check.clone()).collect();
    assert!(report.passed(), "failed: {failed:?}");
    assert_eq!(report.checks.len(), VERIFY_CHECKS.len());
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
    assert_eq!(lines.len(), VERIFY_CHECKS.len());
    for (line, name) in lines.iter().zip(VERIFY_CHECKS) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["check"], *name);
        assert!(v["residual"].as_f64().unwrap() <= v["tolerance"].as_f64().unwrap());
    }
    assert!(fs::read_dir(dir.path()).unwrap().count() >= 1);
}

#[test]
fn verify_detects_sign_error_in_edge_update() {
    let faulty = |eta: &[f64], x: usize, y: usize, pi: &SiteWeights<f64>| {
        let mut out = eta.to_vec();
        let pooled = eta[x] + eta[y];
        let (p, q) = split_probs(pi, x, y);
        out[x] = pooled * p;
        out[y] = -pooled * q;
        out
    };
    let report = run_verify_with(&ExperimentConfig::default(), None, &faulty).unwrap();
    assert!(!report.passed());
    let inter = report.checks.iter().find(|c| c.check == "intertwining").unwrap();
    assert!(!inter.passed && inter.residual > 1e-3, "{inter:?}");
    assert_eq!(report.checks.len(), VERIFY_CHECKS.len());
}

#[test]
fn profile_csv_round_trip_and_determinism() {
    let mut c = cfg(GraphShape::Cycle { n: 6 });
    c.name = "rt".into();
    c.process = Process::Avg;
    c.replicas = 200;
    c.seed = 5;
    c.k = vec![4];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_avg_profile(&c, Some(a.path())).unwrap();
    run_avg_profile(&c, Some(b.path())).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let csvs: Vec<_> = names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")).collect();
    assert!(!csvs.is_empty());
    for name in csvs {
        let x = fs::read_to_string(a.path().join(name)).unwrap();
        let y = fs::read_to_string(b.path().join(name)).unwrap();
        let body = |s: &str| s.lines().skip(1).map(str::to_string).collect::<Vec<_>>();
        assert_eq!(body(&x), body(&y), "{name:?}");
        let records = read_profile_csv(x.as_bytes()).unwrap();
        assert!(records.iter().all(|r| r.experiment == "rt" && r.k == 4));
        let mut again = Vec::new();
        write_profile_csv(&mut again, &records).unwrap();
        let again = String::from_utf8(again).unwrap();
        assert_eq!(body(&again), body(&x));
    }
}

#[test]
fn cutoff_csv_is_reparseable() {
    let mut c = cfg(GraphShape::Path { n: 3 });
    c.name = "cut".into();
    c.k = vec![2];
    let dir = tempfile::tempdir().unwrap();
    let profiles = run_cutoff_bin(&c, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("cut_k2.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap() == "t,t_over_trel,value,stderr,kind");
    let records = read_profile_csv(text.as_bytes()).unwrap();
    let exact: Vec<f64> =
        records.iter().filter(|r| r.kind == ProfileKind::ExactTv).map(|r| r.value).collect();
    assert_eq!(exact, profiles[0].exact);
    assert!(dir.path().join("cut_k2.svg").exists());
}

#[test]
fn precutoff_annotation_arithmetic() {
    let n = 5;
    let k = 100;
    let (a, b) = precutoff_exponents(n, k);
    assert!((a - 2.0 * (20f64).ln() / (100f64).ln()).abs() <= 1e-15);
    assert!((b - 2.0 * (5f64).ln() / (100f64).ln()).abs() <= 1e-15);
    let ann = annotate(n, k, 0.5, 2.0);
    let tm = t_mix(0.5, k);
    assert!((ann.pre_t_plus.unwrap() - (a * tm + 1.0)).abs() <= 1e-12);
    assert!((ann.pre_t_minus.unwrap() - (b * tm - 1.0)).abs() <= 1e-12);
    assert!(annotate(n, 25, 0.5, 2.0).pre_a.is_none());
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = cfg(GraphShape::Torus { dims: vec![3, 4] });
    c.k = vec![2, 3];
    c.time = Some(TimeSpec::Range { start: 0.1, stop: 2.0, points: 5, unit: TimeUnit::TRel, log: true });
    let text = c.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
}
