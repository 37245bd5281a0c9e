#![allow(dead_code)]

use avgsplit::graphs::{
    build_graph, random_conductances, random_elliptic_weights, uniform_weights, Conductance, GraphKind, SiteWeights,
    WeightedGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type G = WeightedGraph<f64>;
pub type W = SiteWeights<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(kind: GraphKind) -> G {
    build_graph(&kind, &Conductance::Uniform(1.0)).unwrap()
}

pub fn uniform(kind: GraphKind) -> (G, W) {
    let g = unit(kind);
    let pi = uniform_weights(g.n()).unwrap();
    (g, pi)
}

/// Random conductances in [0.5, 2] and elliptic weights with ratio <= 4.
pub fn disordered(kind: GraphKind, seed: u64) -> (G, W) {
    let mut r = rng(seed);
    let shape = unit(kind.clone());
    let cs = random_conductances(shape.edges().len(), 0.5, 2.0, &mut r);
    let g = build_graph(&kind, &Conductance::PerEdge(cs)).unwrap();
    let pi = random_elliptic_weights(g.n(), 4.0, &mut r).unwrap();
    (g, pi)
}

pub fn suite() -> Vec<(&'static str, G, W)> {
    vec![
        ("edge", uniform(GraphKind::Path(2)).0, uniform(GraphKind::Path(2)).1),
        ("path4", uniform(GraphKind::Path(4)).0, uniform(GraphKind::Path(4)).1),
        ("cycle4_disordered", disordered(GraphKind::Cycle(4), 11).0, disordered(GraphKind::Cycle(4), 11).1),
        ("complete4", uniform(GraphKind::Complete(4)).0, uniform(GraphKind::Complete(4)).1),
        ("path3_disordered", disordered(GraphKind::Path(3), 5).0, disordered(GraphKind::Path(3), 5).1),
    ]
}

/// Uniform point of the simplex (Dirichlet(1, ..., 1)).
pub fn random_simplex<R: Rng>(n: usize, r: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_vec<R: Rng>(len: usize, r: &mut R) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
