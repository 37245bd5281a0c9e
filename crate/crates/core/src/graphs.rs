//! Weighted graphs and site-weights.
//!
//! Vertices are always indexed `0..n`. Builders document the map from their
//! natural coordinates to indices so that heat-kernel output can be laid back
//! onto the geometry.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Deepest Sierpinski gasket level accepted by [`build_graph`].
pub const MAX_SIERPINSKI_LEVEL: u32 = 7;

/// Undirected edge with `x < y` and conductance `c > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub x: usize,
    pub y: usize,
    pub c: T,
}

/// Connected, undirected graph with positive conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph<T> {
    n: usize,
    edges: Vec<Edge<T>>,
    // (neighbor, edge index)
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Shape of graph to build. Conductances are supplied separately.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphKind {
    /// `0 - 1 - ... - (n-1)`.
    Path(usize),
    /// Path plus the closing edge `(n-1) - 0` when `n >= 3`.
    Cycle(usize),
    /// Periodic box; index is row-major with the last coordinate fastest.
    Torus(Vec<usize>),
    Complete(usize),
    /// Level-`L` gasket approximation. Index order is lexicographic in the
    /// lattice coordinates `(a, b)` of the corner points.
    Sierpinski(u32),
    /// Largest open cluster of bond percolation in a (non-periodic) box.
    /// Surviving sites keep the relative order of their row-major box index.
    PercolationBox { dims: Vec<usize>, p_open: f64, seed: u64 },
    /// Explicit undirected edge list over vertices `0..=max index`.
    Custom(Vec<(usize, usize)>),
}

/// Conductance assignment for a built graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Conductance<T> {
    Uniform(T),
    /// One value per edge, in the builder's edge order.
    PerEdge(Vec<T>),
}

impl<T: Scalar> WeightedGraph<T> {
    /// Validates and indexes an edge list. Edges are stored with `x < y`.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one vertex".into()));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b, c) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a},{b}) out of range for n={n}")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            if !(c > T::zero()) || !c.is_finite() {
                return Err(Error::InvalidGraph(format!("conductance {c} on ({a},{b}) is not positive")));
            }
            let (x, y) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((x, y)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({x},{y})")));
            }
            out.push(Edge { x, y, c });
        }
        let mut adjacency = vec![Vec::new(); n];
        for (i, e) in out.iter().enumerate() {
            adjacency[e.x].push((e.y, i));
            adjacency[e.y].push((e.x, i));
        }
        let g = WeightedGraph { n, edges: out, adjacency };
        let components = g.component_count();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    /// `(neighbor, edge index)` pairs of `x`.
    pub fn neighbors(&self, x: usize) -> &[(usize, usize)] {
        &self.adjacency[x]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adjacency[x].len()
    }

    /// Sum of all conductances.
    pub fn total_rate(&self) -> T {
        self.edges.iter().fold(T::zero(), |acc, e| acc + e.c)
    }

    pub fn edge_index(&self, x: usize, y: usize) -> Option<usize> {
        self.adjacency.get(x)?.iter().find(|(z, _)| *z == y).map(|&(_, i)| i)
    }

    /// Replaces all conductances, keeping the topology.
    pub fn with_conductances(&self, c: &Conductance<T>) -> Result<Self> {
        let cs = resolve_conductance(c, self.edges.len())?;
        Self::from_edges(self.n, self.edges.iter().zip(cs).map(|(e, c)| (e.x, e.y, c)))
    }

    /// Sorted `(min deg, max deg, c)` triples; equal for isomorphic graphs
    /// whenever the degree-annotated edge multiset is a complete invariant.
    pub fn degree_signature(&self) -> Vec<(usize, usize, f64)> {
        let mut sig: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (self.degree(e.x), self.degree(e.y));
                (a.min(b), a.max(b), e.c.as_f64())
            })
            .collect();
        sig.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        sig
    }

    fn component_count(&self) -> usize {
        component_labels(self.n, self.edges.iter().map(|e| (e.x, e.y))).1
    }
}

fn component_labels(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let count = roots.iter().enumerate().filter(|(i, r)| *i == **r).count();
    (roots, count)
}

fn resolve_conductance<T: Scalar>(c: &Conductance<T>, m: usize) -> Result<Vec<T>> {
    match c {
        Conductance::Uniform(v) => Ok(vec![*v; m]),
        Conductance::PerEdge(v) if v.len() == m => Ok(v.clone()),
        Conductance::PerEdge(v) => Err(Error::DimensionMismatch { expected: m, got: v.len() }),
    }
}

/// Builds a graph of the requested shape and validates it.
pub fn build_graph<T: Scalar>(kind: &GraphKind, conductance: &Conductance<T>) -> Result<WeightedGraph<T>> {
    let (n, topo) = topology(kind)?;
    let cs = resolve_conductance(conductance, topo.len())?;
    WeightedGraph::from_edges(n, topo.into_iter().zip(cs).map(|((x, y), c)| (x, y, c)))
}

fn topology(kind: &GraphKind) -> Result<(usize, Vec<(usize, usize)>)> {
    let positive = |v: usize, what: &str| {
        if v == 0 {
            Err(Error::InvalidArgument(format!("{what} must be >= 1")))
        } else {
            Ok(())
        }
    };
    match kind {
        GraphKind::Path(n) => {
            positive(*n, "path length")?;
            Ok((*n, (1..*n).map(|i| (i - 1, i)).collect()))
        }
        GraphKind::Cycle(n) => {
            positive(*n, "cycle length")?;
            let mut e: Vec<_> = (1..*n).map(|i| (i - 1, i)).collect();
            if *n >= 3 {
                e.push((0, n - 1));
            }
            Ok((*n, e))
        }
        GraphKind::Torus(dims) => {
            if dims.is_empty() {
                return Err(Error::InvalidArgument("torus needs at least one dimension".into()));
            }
            for &d in dims {
                positive(d, "torus side")?;
            }
            Ok(lattice_box(dims, true))
        }
        GraphKind::Complete(n) => {
            positive(*n, "complete graph size")?;
            let e = (0..*n).flat_map(|i| (i + 1..*n).map(move |j| (i, j))).collect();
            Ok((*n, e))
        }
        GraphKind::Sierpinski(level) => sierpinski(*level),
        GraphKind::PercolationBox { dims, p_open, seed } => percolation(dims, *p_open, *seed),
        GraphKind::Custom(edges) => {
            let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
            Ok((n, edges.clone()))
        }
    }
}

/// Row-major nearest-neighbour box, last coordinate fastest.
fn lattice_box(dims: &[usize], periodic: bool) -> (usize, Vec<(usize, usize)>) {
    let n: usize = dims.iter().product();
    let strides: Vec<usize> = (0..dims.len()).map(|i| dims[i + 1..].iter().product()).collect();
    let mut set = BTreeSet::new();
    for v in 0..n {
        for (axis, &side) in dims.iter().enumerate() {
            let coord = (v / strides[axis]) % side;
            let next = if coord + 1 < side {
                Some(coord + 1)
            } else if periodic && side > 1 {
                Some(0)
            } else {
                None
            };
            if let Some(nc) = next {
                let w = v - coord * strides[axis] + nc * strides[axis];
                if w != v {
                    set.insert((v.min(w), v.max(w)));
                }
            }
        }
    }
    (n, set.into_iter().collect())
}

fn sierpinski(level: u32) -> Result<(usize, Vec<(usize, usize)>)> {
    if level > MAX_SIERPINSKI_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "sierpinski level {level} exceeds cap {MAX_SIERPINSKI_LEVEL}"
        )));
    }
    fn rec(a: u64, b: u64, side: u64, out: &mut BTreeSet<((u64, u64), (u64, u64))>) {
        if side == 1 {
            let p = [(a, b), (a + 1, b), (a, b + 1)];
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let (u, v) = (p[i].min(p[j]), p[i].max(p[j]));
                out.insert((u, v));
            }
            return;
        }
        let h = side / 2;
        rec(a, b, h, out);
        rec(a + h, b, h, out);
        rec(a, b + h, h, out);
    }
    let mut segs = BTreeSet::new();
    rec(0, 0, 1u64 << level, &mut segs);
    let mut index = BTreeMap::new();
    for (u, v) in &segs {
        index.insert(*u, 0usize);
        index.insert(*v, 0usize);
    }
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    let edges = segs.iter().map(|(u, v)| (index[u], index[v])).collect();
    Ok((index.len(), edges))
}

fn percolation(dims: &[usize], p_open: f64, seed: u64) -> Result<(usize, Vec<(usize, usize)>)> {
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument("percolation box sides must be >= 1".into()));
    }
    if !(p_open > 0.0 && p_open <= 1.0) {
        return Err(Error::InvalidArgument(format!("p_open={p_open} outside (0,1]")));
    }
    let (volume, bonds) = lattice_box(dims, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let open: Vec<(usize, usize)> = bonds.into_iter().filter(|_| rng.random::<f64>() < p_open).collect();
    let (labels, _) = component_labels(volume, open.iter().copied());
    let mut sizes = BTreeMap::<usize, usize>::new();
    for &r in &labels {
        *sizes.entry(r).or_default() += 1;
    }
    // ties resolved towards the cluster containing the smallest site
    let (root, size) = sizes
        .iter()
        .fold((0, 0), |best, (&r, &s)| if s > best.1 { (r, s) } else { best });
    if size < 2 || 2 * size < volume {
        return Err(Error::PercolationTooSmall { size, volume });
    }
    let mut remap = vec![usize::MAX; volume];
    let mut next = 0;
    for v in 0..volume {
        if labels[v] == root {
            remap[v] = next;
            next += 1;
        }
    }
    let edges = open
        .into_iter()
        .filter(|&(a, _)| labels[a] == root)
        .map(|(a, b)| (remap[a], remap[b]))
        .collect();
    Ok((size, edges))
}

/// Non-degenerate probability vector over the vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteWeights<T> {
    pi: Vec<T>,
}

impl<T: Scalar> SiteWeights<T> {
    pub fn new(pi: Vec<T>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(v) = pi.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidWeights(format!("entry {v} is not strictly positive")));
        }
        let sum = crate::scalar::compensated_sum(pi.iter().copied());
        let tol = sum_tolerance::<T>(pi.len());
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}, not 1")));
        }
        Ok(SiteWeights { pi })
    }

    /// Normalizes positive masses into site-weights.
    pub fn from_masses(masses: Vec<T>) -> Result<Self> {
        let sum = crate::scalar::compensated_sum(masses.iter().copied());
        if !(sum > T::zero()) {
            return Err(Error::InvalidWeights("masses must have positive total".into()));
        }
        Self::new(masses.into_iter().map(|m| m / sum).collect())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn min(&self) -> T {
        self.pi.iter().copied().fold(T::max_value().expect("bounded"), |a, b| a.min(b))
    }

    pub fn max(&self) -> T {
        self.pi.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }
}

impl<T> std::ops::Index<usize> for SiteWeights<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.pi[i]
    }
}

pub(crate) fn sum_tolerance<T: Scalar>(n: usize) -> T {
    T::lit(1e-12).max(T::default_epsilon() * T::count(8 * n.max(1)))
}

/// Uniform site-weights `1/n`.
pub fn uniform_weights<T: Scalar>(n: usize) -> Result<SiteWeights<T>> {
    if n == 0 {
        return Err(Error::InvalidWeights("n must be >= 1".into()));
    }
    SiteWeights::new(vec![T::one() / T::count(n); n])
}

/// `max_x pi(x) / min_y pi(y)`.
pub fn ellipticity_ratio<T: Scalar>(pi: &SiteWeights<T>) -> T {
    pi.max() / pi.min()
}

/// `m` conductances uniform in `[lo, hi]`.
pub fn random_conductances<T: Scalar, R: Rng + ?Sized>(m: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<T> {
    (0..m).map(|_| T::lit(rng.random_range(lo..=hi))).collect()
}

/// Site-weights from masses uniform in `[1, max_ratio]`, so the ellipticity
/// ratio is at most `max_ratio`.
pub fn random_elliptic_weights<T: Scalar, R: Rng + ?Sized>(n: usize, max_ratio: f64, rng: &mut R) -> Result<SiteWeights<T>> {
    if !(max_ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!("max_ratio {max_ratio} below 1")));
    }
    SiteWeights::from_masses((0..n).map(|_| T::lit(rng.random_range(1.0..=max_ratio))).collect())
}

/// Reads an edge list: one `x y c` triple per line, `#` starts a comment.
pub fn parse_edge_list<T: Scalar>(text: &str) -> Result<WeightedGraph<T>> {
    let mut edges = Vec::new();
    let mut n = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected `x y c`, got `{line}`") });
        }
        let bad = |m: String| Error::Parse { line: i + 1, msg: m };
        let x: usize = parts[0].parse().map_err(|e| bad(format!("{e}")))?;
        let y: usize = parts[1].parse().map_err(|e| bad(format!("{e}")))?;
        let c: f64 = parts[2].parse().map_err(|e| bad(format!("{e}")))?;
        n = n.max(x + 1).max(y + 1);
        edges.push((x, y, T::lit(c)));
    }
    WeightedGraph::from_edges(n.max(1), edges)
}

/// Reads site-weights: one real per line, `#` comments allowed.
pub fn parse_site_weights<T: Scalar>(text: &str) -> Result<SiteWeights<T>> {
    let mut pi = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Error::Parse { line: i + 1, msg: format!("{e}") })?;
        pi.push(T::lit(v));
    }
    SiteWeights::new(pi)
}

pub fn load_edge_list<T: Scalar>(path: &Path) -> Result<WeightedGraph<T>> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

pub fn load_site_weights<T: Scalar>(path: &Path) -> Result<SiteWeights<T>> {
    parse_site_weights(&std::fs::read_to_string(path)?)
}
