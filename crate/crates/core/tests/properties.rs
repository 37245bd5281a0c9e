mod common;

use avgsplit::averaging::{edge_update, l2_drop, l2_sq, transport_norm, SimplexPoint};
use avgsplit::duality::{lambda_apply, p_bin_edge_function, standard_edge_update, sym_project, TensorFunction};
use avgsplit::exact::*;
use avgsplit::graphs::{build_graph, Conductance, GraphKind, SiteWeights};
use avgsplit::sim::{CouplingMode, SimOptions, Simulator};
use proptest::prelude::*;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|a| a / s).collect()
    })
}

fn weights(n: usize) -> impl Strategy<Value = SiteWeights<f64>> {
    simplex(n).prop_map(|v| SiteWeights::new(v).unwrap())
}

fn kind() -> impl Strategy<Value = GraphKind> {
    prop_oneof![
        (2usize..6).prop_map(GraphKind::Path),
        (3usize..6).prop_map(GraphKind::Cycle),
        (2usize..5).prop_map(GraphKind::Complete),
    ]
}

fn n_of(kind: &GraphKind) -> usize {
    match kind {
        GraphKind::Path(n) | GraphKind::Cycle(n) | GraphKind::Complete(n) => *n,
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_update_conserves_mass_and_descends(
        (eta, pi, x, y) in (2usize..7).prop_flat_map(|n| (simplex(n), weights(n), 0..n, 0..n))
    ) {
        prop_assume!(x != y);
        let e = SimplexPoint::new(eta).unwrap();
        let after = edge_update(&e, x, y, &pi).unwrap();
        let total: f64 = after.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let drop = l2_drop(&e, x, y, &pi);
        prop_assert!(drop <= 1e-15);
        prop_assert!((l2_sq(&after, &pi) - l2_sq(&e, &pi) - drop).abs() <= 1e-12);
        // a second update on the same edge is a fixed point
        let twice = edge_update(&after, x, y, &pi).unwrap();
        for (a, b) in twice.as_slice().iter().zip(after.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn transport_norm_is_monotone_in_p(
        (eta, pi) in (2usize..7).prop_flat_map(|n| (simplex(n), weights(n))),
        p in 1.0f64..2.0,
    ) {
        let e = SimplexPoint::new(eta).unwrap();
        let a = transport_norm(&e, &pi, 1.0).unwrap();
        let b = transport_norm(&e, &pi, p).unwrap();
        let c = transport_norm(&e, &pi, 2.0).unwrap();
        let inf = transport_norm(&e, &pi, f64::INFINITY).unwrap();
        prop_assert!(a <= b + 1e-12 && b <= c + 1e-12 && c <= inf + 1e-12);
    }

    #[test]
    fn enumeration_round_trips(n in 1usize..6, k in 0usize..6) {
        let space = UnlabeledSpace::with_cap(n, k, 100_000).unwrap();
        prop_assert_eq!(space.len() as u128, unlabeled_size(n, k));
        for i in 0..space.len() {
            let xi = space.config(i);
            prop_assert_eq!(xi.iter().sum::<u32>() as usize, k);
            prop_assert_eq!(space.index(xi), Some(i));
        }
    }

    #[test]
    fn labeled_encoding_round_trips(n in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
        let sp = LabeledSpace::new(n, k, 10_000).unwrap();
        let i = (seed % sp.len() as u64) as usize;
        prop_assert_eq!(sp.encode(&sp.decode(i)), i);
    }

    #[test]
    fn generator_rows_sum_to_zero_and_are_reversible(
        kind in kind(), k in 1usize..4, seed in any::<u64>()
    ) {
        let n = n_of(&kind);
        let mut r = common::rng(seed);
        let g0 = build_graph::<f64>(&kind, &Conductance::Uniform(1.0)).unwrap();
        let cs = avgsplit::graphs::random_conductances(g0.edges().len(), 0.5, 2.0, &mut r);
        let g = g0.with_conductances(&Conductance::PerEdge(cs)).unwrap();
        let pi = avgsplit::graphs::random_elliptic_weights(n, 4.0, &mut r).unwrap();
        let m = UnlabeledModel::build(&g, &pi, k, 10_000).unwrap();
        prop_assert!(m.q.row_sum_residual() <= 1e-12);
        prop_assert!(m.q.detailed_balance_residual(&m.mu).unwrap() <= 1e-10);
        for i in 0..m.q.dim() {
            for (_, v) in m.q.row(i) {
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn intertwining_holds_on_random_inputs(
        (f_seed, eta, pi) in (2usize..5).prop_flat_map(|n| (any::<u64>(), simplex(n), weights(n))),
        k in 1usize..4,
    ) {
        let n = eta.len();
        let g = build_graph::<f64>(&GraphKind::Complete(n), &Conductance::Uniform(1.0)).unwrap();
        let sp = UnlabeledSpace::with_cap(n, k, 1000).unwrap();
        let f = common::random_vec(sp.len(), &mut common::rng(f_seed));
        for e in g.edges() {
            let lhs = lambda_apply(&f, &standard_edge_update(&eta, e.x, e.y, &pi), &sp).unwrap();
            let rhs = lambda_apply(&p_bin_edge_function(&f, &sp, e.x, e.y, &pi).unwrap(), &eta, &sp).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn sym_project_is_idempotent(n in 2usize..4, k in 1usize..4, seed in any::<u64>()) {
        let len = n.pow(k as u32);
        let psi = TensorFunction::new(n, k, common::random_vec(len, &mut common::rng(seed))).unwrap();
        let (once, exact) = sym_project(&psi);
        let (twice, _) = sym_project(&once);
        prop_assert!(exact);
        prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_conserves_particles(
        kind in kind(), seed in any::<u64>(), replica in 0u64..1000, k in 1u32..12,
    ) {
        let n = n_of(&kind);
        let g = build_graph::<f64>(&kind, &Conductance::Uniform(1.0)).unwrap();
        let pi = avgsplit::graphs::uniform_weights(n).unwrap();
        let sim = Simulator::new(&g, &pi).unwrap();
        let mut xi0 = vec![0u32; n];
        xi0[0] = k;
        let opts = SimOptions { t_end: 2.0, record_times: vec![0.5, 1.0, 2.0], seed, replica_id: replica, coupling_mode: CouplingMode::FastBinomial };
        let a = sim.bin(&xi0, &opts).unwrap();
        let b = sim.bin(&xi0, &opts).unwrap();
        prop_assert_eq!(&a, &b);
        for xi in &a {
            prop_assert_eq!(xi.iter().sum::<u32>(), k);
        }
        let eta0 = SimplexPoint::dirac(n, 0).unwrap();
        let x = sim.averaging(&eta0, &opts).unwrap();
        let y = sim.averaging(&eta0, &opts).unwrap();
        let mut last = l2_sq(&eta0, &pi);
        for (u, v) in x.iter().zip(&y) {
            prop_assert_eq!(u.as_slice(), v.as_slice());
            let now = l2_sq(u, &pi);
            prop_assert!(now <= last + 1e-15);
            last = now;
        }
    }

    #[test]
    fn transient_distribution_stays_a_probability(
        kind in kind(), k in 1usize..4, t in 0.0f64..5.0,
    ) {
        let n = n_of(&kind);
        let g = build_graph::<f64>(&kind, &Conductance::Uniform(1.0)).unwrap();
        let pi = avgsplit::graphs::uniform_weights(n).unwrap();
        let m = UnlabeledModel::build(&g, &pi, k, 10_000).unwrap();
        let init = m.dirac(&m.space.pile(0)).unwrap();
        let p = transient_distribution(&m.q, &init, t, 1e-12).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
        prop_assert!(p.iter().all(|v| *v >= -1e-15));
    }
}
