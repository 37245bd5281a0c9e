//! Event-driven Monte Carlo for the Averaging process and Binomial Splitting.
//!
//! Edge events come from a single Gillespie stream per replica: exponential
//! waiting times at the total conductance and an alias table for the edge.
//! Each replica owns a ChaCha stream selected by `(seed, replica_id)`, so
//! results do not depend on how replicas are spread over threads.

use crate::averaging::SimplexPoint;
use crate::error::{Error, Result};
use crate::graphs::{SiteWeights, WeightedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest `m` handled by inversion in [`sample_binomial`].
pub const INVERSION_MAX_M: u64 = 64;

pub type ParticleConfig = Vec<u32>;

/// Per-color occupation, `colors[z]` holding the particles that started at `z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColoredConfig {
    pub colors: Vec<ParticleConfig>,
}

impl ColoredConfig {
    /// Colors each particle of `xi` by its starting site.
    pub fn from_sites(xi: &[u32]) -> Self {
        let n = xi.len();
        let colors = (0..n)
            .map(|z| {
                let mut c = vec![0; n];
                c[z] = xi[z];
                c
            })
            .collect();
        ColoredConfig { colors }
    }

    pub fn color_blind(&self) -> ParticleConfig {
        let n = self.colors.first().map_or(0, Vec::len);
        (0..n).map(|x| self.colors.iter().map(|c| c[x]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    #[default]
    FastBinomial,
    PerParticleBernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_end: f64,
    /// Sorted, within `[0, t_end]`.
    pub record_times: Vec<f64>,
    pub seed: u64,
    pub replica_id: u64,
    pub coupling_mode: CouplingMode,
}

impl SimOptions {
    /// Records only the final state.
    pub fn at(t: f64, seed: u64, replica_id: u64, coupling_mode: CouplingMode) -> Self {
        SimOptions { t_end: t, record_times: vec![t], seed, replica_id, coupling_mode }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::NegativeTime(self.t_end));
        }
        if self.record_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("record_times must be sorted".into()));
        }
        if self.record_times.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(Error::InvalidArgument("record_times must lie in [0, t_end]".into()));
        }
        Ok(())
    }
}

/// RNG stream of one replica.
pub fn replica_rng(seed: u64, replica_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica_id);
    rng
}

/// Exact Binomial(m, p) draw: inversion for `m <= 64`, otherwise the
/// rejection sampler of `rand_distr`.
pub fn sample_binomial<R: Rng + ?Sized>(m: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || m == 0 {
        return 0;
    }
    if p >= 1.0 {
        return m;
    }
    if m > INVERSION_MAX_M {
        return Binomial::new(m, p).expect("p in (0,1)").sample(rng);
    }
    if p > 0.5 {
        return m - invert_binomial(m, 1.0 - p, rng);
    }
    invert_binomial(m, p, rng)
}

fn invert_binomial<R: Rng + ?Sized>(m: u64, p: f64, rng: &mut R) -> u64 {
    let q = 1.0 - p;
    let ratio = p / q;
    let mut pmf = q.powi(m as i32);
    let mut u: f64 = rng.random();
    for j in 0..m {
        if u < pmf {
            return j;
        }
        u -= pmf;
        pmf *= ratio * (m - j) as f64 / (j + 1) as f64;
    }
    m
}

/// Gillespie edge sampler.
#[derive(Debug, Clone)]
pub struct EventSampler {
    alias: WeightedAliasIndex<f64>,
    wait: Exp<f64>,
}

impl EventSampler {
    pub fn new(g: &WeightedGraph<f64>) -> Result<Self> {
        if g.edges().is_empty() {
            return Err(Error::InvalidGraph("event sampling needs at least one edge".into()));
        }
        let weights: Vec<f64> = g.edges().iter().map(|e| e.c).collect();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::InvalidGraph(format!("{e}")))?;
        let wait = Exp::new(g.total_rate()).map_err(|e| Error::InvalidGraph(format!("{e}")))?;
        Ok(EventSampler { alias, wait })
    }

    /// `(waiting time, edge index)`.
    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, usize) {
        let dt = self.wait.sample(rng);
        (dt, self.alias.sample(rng))
    }
}

/// One Gillespie step on `g`; builds the sampler on every call, so prefer
/// [`Simulator`] in loops.
pub fn next_event<R: Rng + ?Sized>(g: &WeightedGraph<f64>, rng: &mut R) -> Result<(f64, usize)> {
    Ok(EventSampler::new(g)?.next(rng))
}

/// Graph, weights and event sampler shared by all replicas.
#[derive(Debug, Clone)]
pub struct Simulator {
    g: WeightedGraph<f64>,
    pi: SiteWeights<f64>,
    sampler: EventSampler,
    // pi(x)/(pi(x)+pi(y)) per edge
    split: Vec<f64>,
}

impl Simulator {
    pub fn new(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>) -> Result<Self> {
        if g.n() != pi.len() {
            return Err(Error::DimensionMismatch { expected: g.n(), got: pi.len() });
        }
        let split = g.edges().iter().map(|e| pi[e.x] / (pi[e.x] + pi[e.y])).collect();
        Ok(Simulator { g: g.clone(), pi: pi.clone(), sampler: EventSampler::new(g)?, split })
    }

    pub fn graph(&self) -> &WeightedGraph<f64> {
        &self.g
    }

    pub fn weights(&self) -> &SiteWeights<f64> {
        &self.pi
    }

    /// Runs the event loop, snapshotting the state at every record time and
    /// calling `step` for each event up to `t_end`.
    fn drive<S: Clone>(
        &self,
        opts: &SimOptions,
        mut state: S,
        mut step: impl FnMut(&mut S, usize, &mut ChaCha8Rng, f64),
    ) -> Result<Vec<S>> {
        opts.validate()?;
        let mut rng = replica_rng(opts.seed, opts.replica_id);
        let mut out = Vec::with_capacity(opts.record_times.len());
        let mut next_rec = 0;
        let mut t = 0.0;
        loop {
            let (dt, e) = self.sampler.next(&mut rng);
            let t_next = t + dt;
            while next_rec < opts.record_times.len() && opts.record_times[next_rec] < t_next {
                out.push(state.clone());
                next_rec += 1;
            }
            if t_next > opts.t_end {
                break;
            }
            step(&mut state, e, &mut rng, t_next);
            t = t_next;
        }
        Ok(out)
    }

    pub fn averaging(&self, eta0: &SimplexPoint<f64>, opts: &SimOptions) -> Result<Vec<SimplexPoint<f64>>> {
        self.averaging_observed(eta0, opts, |_, _| {})
    }

    /// As [`Simulator::averaging`], calling `observe(t, state)` after every event.
    pub fn averaging_observed(
        &self,
        eta0: &SimplexPoint<f64>,
        opts: &SimOptions,
        mut observe: impl FnMut(f64, &SimplexPoint<f64>),
    ) -> Result<Vec<SimplexPoint<f64>>> {
        if eta0.len() != self.g.n() {
            return Err(Error::DimensionMismatch { expected: self.g.n(), got: eta0.len() });
        }
        let edges = self.g.edges();
        self.drive(opts, eta0.clone(), |eta, e, _, t| {
            eta.update_unchecked(edges[e].x, edges[e].y, &self.pi);
            observe(t, eta);
        })
    }

    fn redistribute<R: Rng + ?Sized>(&self, m: u32, e: usize, mode: CouplingMode, rng: &mut R) -> u32 {
        let p = self.split[e];
        match mode {
            CouplingMode::FastBinomial => sample_binomial(u64::from(m), p, rng) as u32,
            CouplingMode::PerParticleBernoulli => (0..m).filter(|_| rng.random::<f64>() < p).count() as u32,
        }
    }

    pub fn bin(&self, xi0: &[u32], opts: &SimOptions) -> Result<Vec<ParticleConfig>> {
        if xi0.len() != self.g.n() {
            return Err(Error::DimensionMismatch { expected: self.g.n(), got: xi0.len() });
        }
        let edges = self.g.edges();
        self.drive(opts, xi0.to_vec(), |xi, e, rng, _| {
            let (x, y) = (edges[e].x, edges[e].y);
            let m = xi[x] + xi[y];
            if m > 0 {
                let j = self.redistribute(m, e, opts.coupling_mode, rng);
                xi[x] = j;
                xi[y] = m - j;
            }
        })
    }

    /// Labeled particles; in fast mode a Binomial count picks a uniformly
    /// random subset of the involved particles to move to `x`.
    pub fn bin_labeled(&self, xs0: &[usize], opts: &SimOptions) -> Result<Vec<Vec<usize>>> {
        if let Some(&bad) = xs0.iter().find(|&&x| x >= self.g.n()) {
            return Err(Error::InvalidArgument(format!("particle at {bad} outside the graph")));
        }
        let edges = self.g.edges();
        let mut involved = Vec::new();
        self.drive(opts, xs0.to_vec(), |xs, e, rng, _| {
            let (x, y) = (edges[e].x, edges[e].y);
            involved.clear();
            involved.extend((0..xs.len()).filter(|&i| xs[i] == x || xs[i] == y));
            let p = self.split[e];
            match opts.coupling_mode {
                CouplingMode::PerParticleBernoulli => {
                    for &i in &involved {
                        xs[i] = if rng.random::<f64>() < p { x } else { y };
                    }
                }
                CouplingMode::FastBinomial => {
                    let m = involved.len();
                    let j = sample_binomial(m as u64, p, rng) as usize;
                    // partial Fisher-Yates: the first j entries go to x
                    for a in 0..j {
                        let b = rng.random_range(a..m);
                        involved.swap(a, b);
                    }
                    for (a, &i) in involved.iter().enumerate() {
                        xs[i] = if a < j { x } else { y };
                    }
                }
            }
        })
    }

    /// All colors share the edge stream and the per-particle draws, taken in
    /// color order, then site `x` before site `y` within a color.
    pub fn multicolored(&self, xi0: &[u32], opts: &SimOptions) -> Result<Vec<ColoredConfig>> {
        if opts.coupling_mode != CouplingMode::PerParticleBernoulli {
            return Err(Error::Coupling(
                "the multicolored process needs per_particle_bernoulli draws so that every \
                 color shares one redistribution per particle and color sums follow Bin(k) pathwise"
                    .into(),
            ));
        }
        if xi0.len() != self.g.n() {
            return Err(Error::DimensionMismatch { expected: self.g.n(), got: xi0.len() });
        }
        let edges = self.g.edges();
        self.drive(opts, ColoredConfig::from_sites(xi0), |cfg, e, rng, _| {
            let (x, y) = (edges[e].x, edges[e].y);
            let p = self.split[e];
            for c in cfg.colors.iter_mut() {
                let m = c[x] + c[y];
                let j = (0..m).filter(|_| rng.random::<f64>() < p).count() as u32;
                c[x] = j;
                c[y] = m - j;
            }
        })
    }
}

pub fn simulate_averaging(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    eta0: &SimplexPoint<f64>,
    opts: &SimOptions,
) -> Result<Vec<SimplexPoint<f64>>> {
    Simulator::new(g, pi)?.averaging(eta0, opts)
}

pub fn simulate_bin(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    xi0: &[u32],
    opts: &SimOptions,
) -> Result<Vec<ParticleConfig>> {
    Simulator::new(g, pi)?.bin(xi0, opts)
}

pub fn simulate_bin_labeled(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    xs0: &[usize],
    opts: &SimOptions,
) -> Result<Vec<Vec<usize>>> {
    Simulator::new(g, pi)?.bin_labeled(xs0, opts)
}

pub fn simulate_multicolored(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    xi0: &[u32],
    opts: &SimOptions,
) -> Result<Vec<ColoredConfig>> {
    Simulator::new(g, pi)?.multicolored(xi0, opts)
}

/// Runs `f(replica_id)` for every replica on a pool of `threads` workers
/// (all cores when `None`); output is in replica order.
pub fn run_replicas<T: Send>(
    replicas: usize,
    threads: Option<usize>,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Result<Vec<T>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..replicas as u64).into_par_iter().map(&f).collect()))
}

/// Column layout of one trajectory row after `replica,t`.
pub trait TrajectoryState {
    /// Column names for a state shaped like `self`.
    fn columns(&self) -> Vec<String>;
    fn values(&self) -> Vec<String>;
}

/// Averaging: `eta_<x>` for every vertex.
impl TrajectoryState for SimplexPoint<f64> {
    fn columns(&self) -> Vec<String> {
        (0..self.len()).map(|x| format!("eta_{x}")).collect()
    }
    fn values(&self) -> Vec<String> {
        self.as_slice().iter().map(|v| format!("{v:e}")).collect()
    }
}

/// Unlabeled Bin(k): `xi_<x>` for every vertex.
impl TrajectoryState for ParticleConfig {
    fn columns(&self) -> Vec<String> {
        (0..self.len()).map(|x| format!("xi_{x}")).collect()
    }
    fn values(&self) -> Vec<String> {
        self.iter().map(u32::to_string).collect()
    }
}

/// Labeled Bin(k): `pos_<i>` for every particle.
impl TrajectoryState for Vec<usize> {
    fn columns(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("pos_{i}")).collect()
    }
    fn values(&self) -> Vec<String> {
        self.iter().map(usize::to_string).collect()
    }
}

/// Multicolored: `c<z>_<x>`, colors outer, vertices inner.
impl TrajectoryState for ColoredConfig {
    fn columns(&self) -> Vec<String> {
        let n = self.colors.len();
        (0..n).flat_map(|z| (0..n).map(move |x| format!("c{z}_{x}"))).collect()
    }
    fn values(&self) -> Vec<String> {
        self.colors.iter().flat_map(|c| c.iter().map(u32::to_string)).collect()
    }
}

/// Writes `replica,t,state...` rows with a header, one row per record time.
/// `runs` holds `(replica_id, states)` with states aligned to `times`.
pub fn write_trajectories<W: Write, S: TrajectoryState>(w: W, times: &[f64], runs: &[(u64, Vec<S>)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = runs.iter().find_map(|(_, s)| s.first()) else {
        return Ok(());
    };
    let mut header = vec!["replica".to_string(), "t".to_string()];
    header.extend(first.columns());
    wr.write_record(&header)?;
    for (replica, states) in runs {
        for (t, s) in times.iter().zip(states) {
            let mut row = vec![replica.to_string(), format!("{t}")];
            row.extend(s.values());
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
