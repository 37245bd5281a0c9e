mod common;

use avgsplit::averaging::{l2_sq, lp_norm_centered, SimplexPoint};
use avgsplit::distance::*;
use avgsplit::exact::*;
use avgsplit::graphs::GraphKind;
use avgsplit::sim::Simulator;
use common::*;

fn t_rel(g: &G, pi: &W) -> f64 {
    spectral_gap(&generator_bin1(g, pi).unwrap(), pi.as_slice()).unwrap().t_rel
}

#[test]
fn heat_kernel_single_edge_and_limits() {
    let (g, pi) = uniform(GraphKind::Path(2));
    for t in [0.1, 0.5, 2.0] {
        let h = heat_kernel(&g, &pi, 0, t, 1e-12).unwrap();
        assert!((h.h[0] - (1.0 + (-t).exp())).abs() <= 1e-11);
    }
    let (g, pi) = disordered(GraphKind::Cycle(5), 1);
    let h0 = heat_kernel(&g, &pi, 2, 0.0, 1e-12).unwrap();
    for y in 0..5 {
        let want = if y == 2 { 1.0 / pi[2] } else { 0.0 };
        assert!((h0.h[y] - want).abs() <= 1e-12);
    }
    let late = heat_kernel(&g, &pi, 2, 50.0 * t_rel(&g, &pi), 1e-12).unwrap();
    assert!(late.h.iter().all(|v| (v - 1.0).abs() <= 1e-8));
}

#[test]
fn chi2_matches_enumeration_and_l2_at_k1() {
    let (_, pi) = uniform(GraphKind::Path(2));
    assert!((chi2_multinomial(&[1.0, 0.0], &pi, 3).unwrap() - 7.0).abs() <= 1e-12);
    let mut r = rng(2);
    for (_, g, pi) in suite() {
        let eta = random_simplex(g.n(), &mut r);
        let k1 = chi2_multinomial(&eta, &pi, 1).unwrap();
        assert!((k1 - l2_sq(&SimplexPoint::new(eta.clone()).unwrap(), &pi)).abs() <= 1e-12);
        for k in 1..=4 {
            let space = UnlabeledSpace::with_cap(g.n(), k, 10_000).unwrap();
            let a = multinomial_measure(&eta, &space).unwrap();
            let b = multinomial_measure(pi.as_slice(), &space).unwrap();
            let enumerated: f64 = a.iter().zip(&b).map(|(x, y)| x * x / y).sum::<f64>() - 1.0;
            let chi2 = chi2_multinomial(&eta, &pi, k).unwrap();
            assert!((enumerated - chi2).abs() <= 1e-10 * chi2.max(1.0));
            assert!(tv_multinomial_exact(&eta, &pi, k, 10_000).unwrap() <= tv_bound_multinomial(&eta, &pi, k).unwrap() + 1e-12);
        }
    }
}

#[test]
fn tv_profile_examples() {
    let (g, pi) = uniform(GraphKind::Path(2));
    let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
    for (t, d) in tv_profile_exact(&g, &pi, 2, &[2, 0], &times, 1e-12).unwrap() {
        assert!((d - 0.75 * (-t).exp()).abs() <= 1e-10);
    }
    let (g, pi) = disordered(GraphKind::Cycle(4), 3);
    let space = UnlabeledSpace::with_cap(4, 3, 1000).unwrap();
    let mu = multinomial_measure(pi.as_slice(), &space).unwrap();
    let xi0 = [1u32, 0, 2, 0];
    let prof = tv_profile_exact(&g, &pi, 3, &xi0, &times, 1e-12).unwrap();
    assert!((prof[0].1 - (1.0 - mu[space.index(&xi0).unwrap()])).abs() <= 1e-12);
    assert!(prof.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
}

#[test]
fn sandwich_on_small_instances() {
    let instances = vec![
        uniform(GraphKind::Path(2)),
        uniform(GraphKind::Path(3)),
        disordered(GraphKind::Cycle(4), 4),
        uniform(GraphKind::Complete(4)),
    ];
    for (g, pi) in &instances {
        let tr = t_rel(g, pi);
        let grid: Vec<f64> = (0..=12).map(|j| j as f64 * 0.5 * tr).collect();
        for k in 1..=6 {
            let space = UnlabeledSpace::with_cap(g.n(), k, 1000).unwrap();
            for x in 0..g.n() {
                let prof = tv_profile_exact(g, pi, k, &space.pile(x), &grid, 1e-12).unwrap();
                let eta = SimplexPoint::<f64>::dirac(g.n(), x).unwrap();
                for (t, d) in prof {
                    let w2 = nt_decomposition(g, pi, eta.as_slice(), t, 1e-12).unwrap().exact;
                    assert!(d <= tv_upper_bound_bin(k, w2) + 1e-9, "n={} k={k} t={t}", g.n());
                    let w = wilson_report(g, pi, k, eta.as_slice(), t).unwrap();
                    assert!(w.bound.max(0.0) <= d + 1e-12);
                    assert!(w.exact_bound <= d + 1e-12);
                }
            }
        }
    }
}

#[test]
fn wilson_examples() {
    let (g, pi) = disordered(GraphKind::Cycle(5), 5);
    let rep = wilson_report(&g, &pi, 7, pi.as_slice(), 0.4).unwrap();
    assert!(rep.out_mean.abs() <= 1e-12);
    assert!((rep.eq_var - 7.0).abs() <= 1e-10);
    let eta = random_simplex(5, &mut rng(5));
    let rep = wilson_report(&g, &pi, 7, &eta, 0.9).unwrap();
    assert!((rep.out_mean - rep.out_mean_semigroup).abs() <= 1e-10);
}

#[test]
fn nt_decomposition_consistency() {
    let mut r = rng(6);
    for (_, g, pi) in suite() {
        let eta = random_simplex(g.n(), &mut r);
        let zero = nt_decomposition(&g, &pi, &eta, 0.0, 1e-12).unwrap();
        let start = l2_sq(&SimplexPoint::new(eta.clone()).unwrap(), &pi);
        assert!(zero.nt_term.abs() <= 1e-12);
        assert!((zero.h_term - start).abs() <= 1e-12);
        let tr = t_rel(&g, &pi);
        let kernel = Bin2Kernel::new(&g, &pi).unwrap();
        for j in 0..=16 {
            let t = j as f64 * 0.25 * tr;
            let nt = nt_decomposition(&g, &pi, &eta, t, 1e-12).unwrap();
            assert!((nt.total() - nt.exact).abs() <= 1e-10);
            assert!(nt.exact <= (-t / tr).exp() * start + 1e-9);
            assert!(nt.exact <= kernel.max_deviation(t) + 1e-9);
            let sup = w2_sq_sup(&g, &pi, t, 1e-12).unwrap();
            assert!(nt.exact <= sup + 1e-10);
        }
    }
}

#[test]
fn monte_carlo_l2_matches_two_particle_value() {
    let (g, pi) = uniform(GraphKind::Cycle(5));
    let tr = t_rel(&g, &pi);
    let eta0 = SimplexPoint::new(vec![0.4, 0.3, 0.1, 0.1, 0.1]).unwrap();
    let sim = Simulator::new(&g, &pi).unwrap();
    let replicas = 20_000;
    let runs = avgsplit::sim::run_replicas(replicas, None, |r| {
        let opts = avgsplit::sim::SimOptions::at(tr, 7, r, avgsplit::sim::CouplingMode::FastBinomial);
        l2_sq(&sim.averaging(&eta0, &opts).unwrap()[0], &pi)
    })
    .unwrap();
    let est = Estimate::from_samples(&runs).unwrap();
    let nt = nt_decomposition(&g, &pi, eta0.as_slice(), tr, 1e-12).unwrap();
    assert!((est.mean - nt.total()).abs() <= 4.0 * est.stderr, "{} vs {}", est.mean, nt.total());
}

#[test]
fn wasserstein_lower_and_upper_envelopes() {
    let (g, pi) = uniform(GraphKind::Cycle(6));
    let tr = t_rel(&g, &pi);
    let eta0 = SimplexPoint::dirac(6, 0).unwrap();
    let sim = Simulator::new(&g, &pi).unwrap();
    let times: Vec<f64> = (1..=8).map(|j| j as f64 * 0.5 * tr).collect();
    let table = wasserstein_profile(&sim, &eta0, &times, &[1.0, 2.0], 2000, 8, None).unwrap();
    let start = l2_sq(&eta0, &pi).sqrt();
    for (t, row) in times.iter().zip(&table) {
        let h = h_eta(&g, &pi, eta0.as_slice(), *t, 1e-12).unwrap();
        for (p, est) in [1.0, 2.0].iter().zip(row) {
            let lower = lp_norm_centered(&h, pi.as_slice(), *p).unwrap();
            assert!(lower <= est.mean + 4.0 * est.stderr, "p={p} t={t}");
        }
        // L2 contraction gives E||.||_2 <= sqrt(E||.||_2^2) <= e^{-t/2t_rel} ||eta0/pi - 1||_2
        assert!(row[1].mean <= start * (-t / (2.0 * tr)).exp() + 4.0 * row[1].stderr);
        assert!(row[0].mean <= row[1].mean + 1e-12);
    }
}

#[test]
fn bin2_decay_fingerprint_on_cycles() {
    for n in 3..=8 {
        let (g, pi) = uniform(GraphKind::Cycle(n));
        let tr = t_rel(&g, &pi);
        let times: Vec<f64> = (0..=16).map(|j| tr * (2.0 + 0.5 * j as f64)).collect();
        let decay = bin2_decay(&g, &pi, &times).unwrap();
        assert!(decay.decreasing, "cycle({n})");
        assert!(decay.log_convex, "cycle({n})");
        assert!(decay.c_hat.is_finite() && decay.c_hat > 0.0);
        for (t, d) in times.iter().zip(&decay.deviations) {
            assert!(*d <= decay.c_hat * (-t / tr).exp() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn nash_examples() {
    let (g, pi) = uniform(GraphKind::Cycle(64));
    let hs = HeatSpectrum::new(&g, &pi).unwrap();
    let hi = hs.t_rel() / 4.0;
    let grid: Vec<f64> = (0..30).map(|i| 0.5 * (hi / 0.5).powf(i as f64 / 29.0)).collect();
    let fit = nash_fit(&g, &pi, &grid).unwrap();
    assert!((0.8..=1.2).contains(&fit.d_hat), "{fit:?}");
    assert!(fit.finite_dimensional());

    let (g, pi) = uniform(GraphKind::Torus(vec![8, 8]));
    match classify_nash(&g, &pi, 40).unwrap() {
        NashVerdict::FiniteDimensional(f) => assert!((1.6..=2.4).contains(&f.d_hat), "{f:?}"),
        v => panic!("torus flagged: {v:?}"),
    }
    let (g, pi) = uniform(GraphKind::Complete(64));
    assert!(!classify_nash(&g, &pi, 40).unwrap().is_finite_dimensional());
}
