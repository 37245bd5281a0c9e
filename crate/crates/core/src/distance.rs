//! Distances to equilibrium: exact TV profiles, transport norms, heat
//! kernels and the bounds built from them.

use crate::averaging::{transport_norm, SimplexPoint};
use crate::error::{Error, Result};
use crate::exact::{
    generator_bin1, generator_bin_labeled, generator_product2, multinomial_measure, product_measure, spectral_gap,
    LabeledSpace, RateMatrix, Spectrum, UnlabeledModel, UnlabeledSpace, Uniformization, DEFAULT_TRANSIENT_CAP,
    DENSE_EIGEN_LIMIT,
};
use crate::graphs::{SiteWeights, WeightedGraph};
use crate::scalar::compensated_sum;
use crate::sim::{run_replicas, CouplingMode, SimOptions, Simulator};

/// Minimum number of grid points a Nash fit regresses on.
pub const NASH_MIN_POINTS: usize = 4;
/// Below this R² the heat-kernel decay is not a power law.
pub const NASH_MIN_R2: f64 = 0.95;
/// Fitted dimensions above this are treated as unbounded.
pub const NASH_MAX_DIM: f64 = 8.0;

fn check_prob(p: &[f64]) -> Result<()> {
    let s = compensated_sum(p.iter().copied());
    if (s - 1.0).abs() > 1e-8 || p.iter().any(|v| !(*v >= -1e-12)) {
        return Err(Error::InvalidWeights(format!("not a probability vector (sum {s})")));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `1/2 sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    check_prob(p)?;
    check_prob(q)?;
    Ok((0.5 * compensated_sum(p.iter().zip(q).map(|(a, b)| (a - b).abs()))).clamp(0.0, 1.0))
}

/// `h_t^x(y) = p_t(x, y) / pi(y)` for the single particle.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernel {
    pub x: usize,
    pub t: f64,
    pub h: Vec<f64>,
}

pub fn heat_kernel(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, x: usize, t: f64, tol: f64) -> Result<HeatKernel> {
    check_dim(g.n(), pi.len())?;
    if x >= g.n() {
        return Err(Error::InvalidArgument(format!("vertex {x} out of range")));
    }
    let q = generator_bin1(g, pi)?;
    let mut init = vec![0.0; g.n()];
    init[x] = 1.0;
    let p = Uniformization::new(tol).distribution(&q, &init, t)?;
    let h = p.iter().zip(pi.as_slice()).map(|(a, b)| (a / b).max(0.0)).collect();
    Ok(HeatKernel { x, t, h })
}

/// `S_t (eta / pi)` under the single-particle semigroup.
pub fn h_eta(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, eta: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    check_dim(g.n(), eta.len())?;
    check_dim(g.n(), pi.len())?;
    let q = generator_bin1(g, pi)?;
    let d: Vec<f64> = eta.iter().zip(pi.as_slice()).map(|(e, p)| e / p).collect();
    Uniformization::new(tol).function(&q, &d, t)
}

fn l2_sq_dev(eta: &[f64], pi: &SiteWeights<f64>) -> Result<f64> {
    check_dim(pi.len(), eta.len())?;
    check_prob(eta)?;
    Ok(compensated_sum(eta.iter().zip(pi.as_slice()).map(|(e, p)| p * (e / p - 1.0).powi(2))))
}

/// Chi-square distance of `Multinomial(k, eta)` from `Multinomial(k, pi)`.
pub fn chi2_multinomial(eta: &[f64], pi: &SiteWeights<f64>, k: usize) -> Result<f64> {
    let a = l2_sq_dev(eta, pi)?;
    Ok((k as f64 * a.ln_1p()).exp_m1())
}

/// `min(1, sqrt(chi2))`.
pub fn tv_bound_multinomial(eta: &[f64], pi: &SiteWeights<f64>, k: usize) -> Result<f64> {
    Ok(chi2_multinomial(eta, pi, k)?.sqrt().min(1.0))
}

/// TV between `Multinomial(k, eta)` and `Multinomial(k, pi)` by enumeration.
pub fn tv_multinomial_exact(eta: &[f64], pi: &SiteWeights<f64>, k: usize, cap: usize) -> Result<f64> {
    check_dim(pi.len(), eta.len())?;
    check_prob(eta)?;
    let space = UnlabeledSpace::with_cap(pi.len(), k, cap)?;
    let a = multinomial_measure(eta, &space)?;
    let b = multinomial_measure(pi.as_slice(), &space)?;
    tv_distance(&a, &b)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InvalidArgument("need at least two replicas".into()));
        }
        let n = xs.len() as f64;
        let mean = compensated_sum(xs.iter().copied()) / n;
        let var = compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
        Ok(Estimate { mean, stderr: (var / n).sqrt() })
    }
}

/// Mean and standard error of `||eta_t/pi - 1||_p` over Averaging replicas.
#[allow(clippy::too_many_arguments)]
pub fn wasserstein_estimate(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    eta0: &SimplexPoint<f64>,
    t: f64,
    p: f64,
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Estimate> {
    let sim = Simulator::new(g, pi)?;
    let rows = wasserstein_profile(&sim, eta0, &[t], &[p], replicas, seed, threads)?;
    Ok(rows[0][0])
}

/// Estimates at every time (outer index) and every `p` (inner index) from one
/// set of replicas.
pub fn wasserstein_profile(
    sim: &Simulator,
    eta0: &SimplexPoint<f64>,
    times: &[f64],
    ps: &[f64],
    replicas: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<Vec<Estimate>>> {
    if replicas < 2 {
        return Err(Error::InvalidArgument("need at least two replicas".into()));
    }
    if let Some(p) = ps.iter().find(|p| !(**p >= 1.0)) {
        return Err(Error::InvalidArgument(format!("p = {p} is below 1")));
    }
    let t_end = times.last().copied().unwrap_or(0.0);
    let runs = run_replicas(replicas, threads, |r| -> Result<Vec<f64>> {
        let opts = SimOptions {
            t_end,
            record_times: times.to_vec(),
            seed,
            replica_id: r,
            coupling_mode: CouplingMode::FastBinomial,
        };
        let states = sim.averaging(eta0, &opts)?;
        let mut out = Vec::with_capacity(times.len() * ps.len());
        for s in &states {
            for &p in ps {
                out.push(transport_norm(s, sim.weights(), p)?);
            }
        }
        Ok(out)
    })?;
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut table = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let mut row = Vec::with_capacity(ps.len());
        for pi_ in 0..ps.len() {
            let col: Vec<f64> = runs.iter().map(|r| r[ti * ps.len() + pi_]).collect();
            row.push(Estimate::from_samples(&col)?);
        }
        table.push(row);
    }
    Ok(table)
}

fn transient_space(n: usize, k: usize) -> Result<UnlabeledSpace> {
    UnlabeledSpace::with_cap(n, k, DEFAULT_TRANSIENT_CAP).map_err(|e| match e {
        Error::SizeLimit { count, cap } => Error::InvalidArgument(format!(
            "{count} configurations exceed the transient cap {cap}; use the bound-based profile instead"
        )),
        other => other,
    })
}

/// `TV(delta_{xi0} S_t, mu_{k,pi})` at each sorted time.
pub fn tv_profile_exact(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    k: usize,
    xi0: &[u32],
    times: &[f64],
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    check_dim(g.n(), xi0.len())?;
    if xi0.iter().map(|&v| v as usize).sum::<usize>() != k {
        return Err(Error::InvalidArgument(format!("start {xi0:?} does not hold {k} particles")));
    }
    let space = transient_space(g.n(), k)?;
    let model = UnlabeledModel::from_space(g, pi, space)?;
    let init = model.dirac(xi0)?;
    tv_profile_from(&model, &init, times, tol)
}

/// `TV(nu S_t, mu)` along `times` for an already built model.
pub fn tv_profile_from(model: &UnlabeledModel<f64>, init: &[f64], times: &[f64], tol: f64) -> Result<Vec<(f64, f64)>> {
    let path = Uniformization::new(tol).distribution_path(&model.q, init, times)?;
    times
        .iter()
        .zip(path)
        .map(|(&t, p)| Ok((t, tv_l1(&p, &model.mu))))
        .collect()
}

// no normalization check: uniformized vectors carry up to `tol` of lost mass
fn tv_l1(p: &[f64], q: &[f64]) -> f64 {
    (0.5 * compensated_sum(p.iter().zip(q).map(|(a, b)| (a - b).abs()))).clamp(0.0, 1.0)
}

/// `min(1, sqrt(e k w2_sq))`.
pub fn tv_upper_bound_bin(k: usize, w2_sq: f64) -> f64 {
    (std::f64::consts::E * k as f64 * w2_sq.max(0.0)).sqrt().min(1.0)
}

/// Wilson's statistic `F(xi) = sum_x psi(x) xi(x)` for a Multinomial start.
#[derive(Debug, Clone, PartialEq)]
pub struct WilsonReport {
    pub k: usize,
    pub t: f64,
    pub t_rel: f64,
    pub psi: Vec<f64>,
    pub eq_mean: f64,
    pub eq_var: f64,
    /// `k e^{-t/t_rel} <psi, eta/pi>_pi`.
    pub out_mean: f64,
    /// The same mean through the single-particle semigroup.
    pub out_mean_semigroup: f64,
    pub out_var: f64,
    pub a_t: f64,
    /// `max(0, 1 - 8/a_t)`.
    pub bound: f64,
    /// `max(0, 1 - 8 sigma^2 / (mean gap)^2)` from the exact moments.
    pub exact_bound: f64,
}

/// Means and variances of `F` at equilibrium and after time `t` from
/// `Multinomial(k, eta)`, with the resulting lower bounds on TV.
pub fn wilson_report(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, k: usize, eta: &[f64], t: f64) -> Result<WilsonReport> {
    const TOL: f64 = 1e-12;
    let n = g.n();
    check_dim(n, pi.len())?;
    check_dim(n, eta.len())?;
    check_prob(eta)?;
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let p = pi.as_slice();
    let q1 = generator_bin1(g, pi)?;
    let spec = spectral_gap(&q1, p)?;
    let psi = spec.psi.clone();
    let kf = k as f64;

    let s1 = compensated_sum(p.iter().zip(&psi).map(|(a, b)| a * b));
    let s2 = compensated_sum(p.iter().zip(&psi).map(|(a, b)| a * b * b));
    let eq_mean = kf * s1;
    // Multinomial covariances: k pi(x) (1{x=y} - pi(y))
    let eq_var = kf * (s2 - s1 * s1);

    let d: Vec<f64> = eta.iter().zip(p).map(|(e, a)| e / a).collect();
    let psi_d = compensated_sum(p.iter().zip(&psi).zip(&d).map(|((a, b), c)| a * b * c));
    let decay = (-t / spec.t_rel).exp();
    let out_mean = kf * decay * psi_d;

    let unif = Uniformization::new(TOL);
    let h = unif.function(&q1, &d, t)?;
    let m1 = compensated_sum((0..n).map(|x| p[x] * psi[x] * h[x]));
    let m2 = compensated_sum((0..n).map(|x| p[x] * psi[x] * psi[x] * h[x]));
    let out_mean_semigroup = kf * m1;

    let mut out_var = kf * (m2 - m1 * m1);
    if k >= 2 {
        let space = LabeledSpace::new(n, 2, DEFAULT_TRANSIENT_CAP)?;
        let d2: Vec<f64> = (0..n * n).map(|i| d[i / n] * d[i % n]).collect();
        let bin2 = unif.function(&generator_bin_labeled(g, pi, &space)?, &d2, t)?;
        let indep = unif.function(&generator_product2(g, pi, DEFAULT_TRANSIENT_CAP)?, &d2, t)?;
        let cross = compensated_sum((0..n * n).map(|i| {
            let (x, y) = (i / n, i % n);
            p[x] * p[y] * psi[x] * psi[y] * (bin2[i] - indep[i])
        }));
        out_var += kf * (kf - 1.0) * cross;
    }

    let d_inf = d.iter().fold(0.0f64, |a, b| a.max(*b));
    let a_t = kf * psi_d * psi_d / (1.0 + kf / n as f64 * (d_inf * d_inf + (t / spec.t_rel).exp()));
    let bound = if a_t > 0.0 { (1.0 - 8.0 / a_t).max(0.0) } else { 0.0 };
    let gap = (out_mean - eq_mean).powi(2);
    let sigma2 = eq_var.max(out_var);
    let exact_bound = if gap > 0.0 { (1.0 - 8.0 * sigma2 / gap).max(0.0) } else { 0.0 };

    Ok(WilsonReport {
        k,
        t,
        t_rel: spec.t_rel,
        psi,
        eq_mean,
        eq_var,
        out_mean,
        out_mean_semigroup,
        out_var,
        a_t,
        bound,
        exact_bound,
    })
}

/// Power-law fit `max h_t ~ t^{-d/2}` of the on-diagonal heat kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct NashFit {
    pub d_hat: f64,
    pub t_nash_hat: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub r2: f64,
    pub points: usize,
}

impl NashFit {
    pub fn finite_dimensional(&self) -> bool {
        self.r2 >= NASH_MIN_R2 && self.d_hat <= NASH_MAX_DIM
    }
}

/// Outcome of the finite-dimensionality diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub enum NashVerdict {
    FiniteDimensional(NashFit),
    NotFiniteDimensional { reason: String, fit: Option<NashFit> },
}

impl NashVerdict {
    pub fn is_finite_dimensional(&self) -> bool {
        matches!(self, NashVerdict::FiniteDimensional(_))
    }
}

/// Single-particle spectrum with eigenfunctions, for exact heat kernels.
#[derive(Debug, Clone)]
pub struct HeatSpectrum {
    spec: Spectrum<f64>,
    q_max: f64,
}

impl HeatSpectrum {
    pub fn new(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>) -> Result<Self> {
        check_dim(g.n(), pi.len())?;
        if g.n() > DENSE_EIGEN_LIMIT {
            return Err(Error::SizeLimit { count: g.n() as u128, cap: DENSE_EIGEN_LIMIT });
        }
        let q = generator_bin1(g, pi)?;
        let spec = spectral_gap(&q, pi.as_slice())?;
        Ok(HeatSpectrum { q_max: q.max_exit_rate(), spec })
    }

    pub fn t_rel(&self) -> f64 {
        self.spec.t_rel
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.q_max
    }

    /// `max_{x,y} h_t^x(y)`, attained on the diagonal.
    pub fn max_density(&self, t: f64) -> f64 {
        let v = self.spec.eigenfunctions.as_ref().expect("dense spectrum");
        let w: Vec<f64> = self.spec.eigenvalues.iter().map(|l| (-l * t).exp()).collect();
        (0..v.nrows())
            .map(|x| compensated_sum((0..v.ncols()).map(|i| w[i] * v[(x, i)] * v[(x, i)])))
            .fold(f64::MIN, f64::max)
    }

    /// Log-spaced grid on `[1/(2 q_max), t_rel/4]`; empty when the interval is.
    pub fn default_grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (0.5 / self.q_max, self.spec.t_rel / 4.0);
        if !(hi > lo) || points < 2 {
            return Vec::new();
        }
        let step = (hi / lo).ln() / (points - 1) as f64;
        (0..points).map(|i| lo * (step * i as f64).exp()).collect()
    }
}

/// Regresses `log max h_t` on `log t` over the grid points whose profile lies
/// in `[1.05, max h_0 / 2]`.
pub fn nash_fit(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, t_grid: &[f64]) -> Result<NashFit> {
    nash_fit_with(&HeatSpectrum::new(g, pi)?, t_grid)
}

pub fn nash_fit_with(hs: &HeatSpectrum, t_grid: &[f64]) -> Result<NashFit> {
    let t_rel = hs.t_rel();
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0 && **t <= t_rel * (1.0 + 1e-12))) {
        return Err(Error::InvalidArgument(format!("grid time {t} outside (0, t_rel = {t_rel}]")));
    }
    let top = 0.5 * hs.max_density(0.0);
    let pts: Vec<(f64, f64)> = t_grid
        .iter()
        .map(|&t| (t, hs.max_density(t)))
        .filter(|(_, h)| *h >= 1.05 && *h <= top)
        .map(|(t, h)| (t.ln(), h.ln()))
        .collect();
    if pts.len() < NASH_MIN_POINTS {
        return Err(Error::InsufficientWindow(pts.len()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    let d_hat = -2.0 * slope;
    // max h_t = e (d t_N / 2t)^{d/2}  =>  intercept = 1 + (d/2) ln(d t_N / 2)
    let t_nash_hat = if d_hat > 0.0 { 2.0 / d_hat * ((intercept - 1.0) * 2.0 / d_hat).exp() } else { f64::NAN };
    Ok(NashFit {
        d_hat,
        t_nash_hat,
        t_lo: pts[0].0.exp(),
        t_hi: pts[pts.len() - 1].0.exp(),
        r2,
        points: pts.len(),
    })
}

/// Classifies the graph from its heat-kernel decay on the default grid.
pub fn classify_nash(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, points: usize) -> Result<NashVerdict> {
    let hs = HeatSpectrum::new(g, pi)?;
    let grid = hs.default_grid(points);
    if grid.is_empty() {
        return Ok(NashVerdict::NotFiniteDimensional {
            reason: format!(
                "no time window between the jump scale {:.3e} and t_rel/4 = {:.3e}",
                0.5 / hs.max_exit_rate(),
                hs.t_rel() / 4.0
            ),
            fit: None,
        });
    }
    Ok(match nash_fit_with(&hs, &grid) {
        Ok(fit) if fit.finite_dimensional() => NashVerdict::FiniteDimensional(fit),
        Ok(fit) => NashVerdict::NotFiniteDimensional {
            reason: format!("d_hat = {:.3}, R^2 = {:.4}", fit.d_hat, fit.r2),
            fit: Some(fit),
        },
        Err(Error::InsufficientWindow(m)) => {
            NashVerdict::NotFiniteDimensional { reason: format!("only {m} usable grid points"), fit: None }
        }
        Err(e) => return Err(e),
    })
}

/// `||h_t^eta - 1||_2^2` and the two-particle correction; their sum is
/// `E ||eta_t/pi - 1||_2^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtDecomposition {
    pub h_term: f64,
    pub nt_term: f64,
    /// `E ||eta_t/pi - 1||_2^2` from the forward two-particle law.
    pub exact: f64,
}

impl NtDecomposition {
    pub fn total(&self) -> f64 {
        self.h_term + self.nt_term
    }
}

pub fn nt_decomposition(
    g: &WeightedGraph<f64>,
    pi: &SiteWeights<f64>,
    eta: &[f64],
    t: f64,
    tol: f64,
) -> Result<NtDecomposition> {
    let n = g.n();
    check_dim(n, pi.len())?;
    check_dim(n, eta.len())?;
    check_prob(eta)?;
    let p = pi.as_slice();
    let unif = Uniformization::new(tol);
    let d: Vec<f64> = eta.iter().zip(p).map(|(e, a)| e / a).collect();
    let h = unif.function(&generator_bin1(g, pi)?, &d, t)?;
    let h_term = compensated_sum((0..n).map(|x| p[x] * (h[x] - 1.0).powi(2)));

    let space = LabeledSpace::new(n, 2, DEFAULT_TRANSIENT_CAP)?;
    let q2 = generator_bin_labeled(g, pi, &space)?;
    let d2: Vec<f64> = (0..n * n).map(|i| d[i / n] * d[i % n]).collect();
    let s2 = unif.function(&q2, &d2, t)?;
    let nt_term = compensated_sum((0..n).map(|z| p[z] * (s2[z * n + z] - h[z] * h[z])));

    let nu: Vec<f64> = (0..n * n).map(|i| eta[i / n] * eta[i % n]).collect();
    let fwd = unif.distribution(&q2, &nu, t)?;
    let exact = compensated_sum((0..n).map(|x| fwd[x * n + x] / p[x])) - 1.0;
    Ok(NtDecomposition { h_term, nt_term, exact })
}

/// Matrix `K_t(y, z) = E[sum_x 1{X_t = Y_t = x} / pi(x)]` for two particles
/// started at `(y, z)`, so that `E_eta ||eta_t/pi - 1||_2^2 = eta K_t eta - 1`.
pub fn l2_quadratic_form(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, t: f64, tol: f64) -> Result<Vec<f64>> {
    let n = g.n();
    check_dim(n, pi.len())?;
    let space = LabeledSpace::new(n, 2, DEFAULT_TRANSIENT_CAP)?;
    let q2 = generator_bin_labeled(g, pi, &space)?;
    let mut diag = vec![0.0; n * n];
    for x in 0..n {
        diag[x * n + x] = 1.0 / pi[x];
    }
    Uniformization::new(tol).function(&q2, &diag, t)
}

/// `sup_eta E_eta ||eta_t/pi - 1||_2^2`. The map is convex in `eta`, so the
/// supremum over the simplex sits at a vertex.
pub fn w2_sq_sup(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, t: f64, tol: f64) -> Result<f64> {
    let n = g.n();
    let k = l2_quadratic_form(g, pi, t, tol)?;
    Ok((0..n).map(|x| k[x * n + x] - 1.0).fold(f64::MIN, f64::max).max(0.0))
}

/// Eigen-expansion of the labeled two-particle kernel relative to `pi ⊗ pi`.
#[derive(Debug, Clone)]
pub struct Bin2Kernel {
    spec: Spectrum<f64>,
}

impl Bin2Kernel {
    pub fn new(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>) -> Result<Self> {
        let n = g.n();
        check_dim(n, pi.len())?;
        if n * n > DENSE_EIGEN_LIMIT {
            return Err(Error::SizeLimit { count: (n * n) as u128, cap: DENSE_EIGEN_LIMIT });
        }
        let space = LabeledSpace::new(n, 2, DENSE_EIGEN_LIMIT)?;
        let q: RateMatrix<f64> = generator_bin_labeled(g, pi, &space)?;
        let mu = product_measure(pi.as_slice(), &space);
        Ok(Bin2Kernel { spec: spectral_gap(&q, &mu)? })
    }

    pub fn t_rel(&self) -> f64 {
        self.spec.t_rel
    }

    /// `max_{a,b} |p_t(a, b) / (pi ⊗ pi)(b) - 1|`.
    pub fn max_deviation(&self, t: f64) -> f64 {
        let v = self.spec.eigenfunctions.as_ref().expect("dense spectrum");
        let m = v.nrows();
        let w: Vec<f64> = self.spec.eigenvalues.iter().map(|l| (-l * t).exp()).collect();
        let mut best = 0.0f64;
        for a in 0..m {
            for b in a..m {
                let s = compensated_sum((1..m).map(|i| w[i] * v[(a, i)] * v[(b, i)]));
                best = best.max(s.abs());
            }
        }
        best
    }
}

/// Decay of the two-particle kernel deviation on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin2Decay {
    pub times: Vec<f64>,
    pub deviations: Vec<f64>,
    /// Smallest `c` with `deviation <= c e^{-t/t_rel}` on the grid.
    pub c_hat: f64,
    pub decreasing: bool,
    pub log_convex: bool,
}

pub fn bin2_decay(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>, times: &[f64]) -> Result<Bin2Decay> {
    let kernel = Bin2Kernel::new(g, pi)?;
    let t_rel = HeatSpectrum::new(g, pi)?.t_rel();
    let deviations: Vec<f64> = times.iter().map(|&t| kernel.max_deviation(t)).collect();
    let c_hat = times
        .iter()
        .zip(&deviations)
        .map(|(t, d)| d * (t / t_rel).exp())
        .fold(0.0, f64::max);
    let decreasing = deviations.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let logs: Vec<f64> = deviations.iter().map(|d| d.ln()).collect();
    // second divided differences of ln(deviation) on a possibly uneven grid
    let log_convex = (2..times.len()).all(|i| {
        let s1 = (logs[i - 1] - logs[i - 2]) / (times[i - 1] - times[i - 2]);
        let s2 = (logs[i] - logs[i - 1]) / (times[i] - times[i - 1]);
        s2 >= s1 - 1e-9 * s1.abs().max(1.0)
    });
    Ok(Bin2Decay { times: times.to_vec(), deviations, c_hat, decreasing, log_convex })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_graph, uniform_weights, Conductance, GraphKind};

    fn graph(kind: GraphKind) -> WeightedGraph<f64> {
        build_graph(&kind, &Conductance::Uniform(1.0)).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.75, 0.25], &[0.25, 0.75]).unwrap() - 0.5).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[0.6, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn heat_kernel_examples() {
        let g = graph(GraphKind::Path(2));
        let pi = uniform_weights(2).unwrap();
        let h0 = heat_kernel(&g, &pi, 0, 0.0, 1e-12).unwrap();
        assert_eq!(h0.h, vec![2.0, 0.0]);
        for t in [0.1, 1.0, 3.0] {
            let h = heat_kernel(&g, &pi, 0, t, 1e-12).unwrap();
            assert!((h.h[0] - (1.0 + (-t).exp())).abs() < 1e-10);
        }
        let g = graph(GraphKind::Cycle(5));
        let pi = uniform_weights(5).unwrap();
        let t_rel = HeatSpectrum::new(&g, &pi).unwrap().t_rel();
        let h = heat_kernel(&g, &pi, 2, 50.0 * t_rel, 1e-12).unwrap();
        assert!(h.h.iter().all(|v| (v - 1.0).abs() < 1e-8));
        let mass: f64 = h.h.iter().zip(pi.as_slice()).map(|(a, b)| a * b).sum();
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chi2_examples() {
        let pi = uniform_weights(2).unwrap();
        assert_eq!(chi2_multinomial(&[0.5, 0.5], &pi, 4).unwrap(), 0.0);
        assert!((chi2_multinomial(&[1.0, 0.0], &pi, 3).unwrap() - 7.0).abs() < 1e-12);
        let pi = SiteWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let eta = [0.5, 0.25, 0.25];
        let direct: f64 = eta.iter().zip(pi.as_slice()).map(|(e, p)| p * (e / p - 1.0f64).powi(2)).sum();
        assert!((chi2_multinomial(&eta, &pi, 1).unwrap() - direct).abs() < 1e-14);
        assert!(chi2_multinomial(&[1.0, 0.0, 0.0], &pi, 100_000).unwrap().is_infinite());
        assert_eq!(tv_bound_multinomial(&[1.0, 0.0, 0.0], &pi, 100_000).unwrap(), 1.0);
    }

    #[test]
    fn tv_upper_bound_examples() {
        assert_eq!(tv_upper_bound_bin(10, 0.0), 0.0);
        assert!((tv_upper_bound_bin(10, 1e-4) - 0.052_137_1).abs() < 1e-6);
        assert_eq!(tv_upper_bound_bin(10, 1.0), 1.0);
    }

    #[test]
    fn tv_profile_single_edge() {
        let g = graph(GraphKind::Path(2));
        let pi = uniform_weights(2).unwrap();
        let times = [0.0, 0.3, 1.0, 2.5];
        let prof = tv_profile_exact(&g, &pi, 2, &[2, 0], &times, 1e-12).unwrap();
        for (t, d) in prof {
            assert!((d - 0.75 * (-t).exp()).abs() < 1e-10, "t={t} d={d}");
        }
    }

    #[test]
    fn wasserstein_at_zero() {
        let g = graph(GraphKind::Cycle(4));
        let pi = uniform_weights(4).unwrap();
        let eta = SimplexPoint::dirac(4, 0).unwrap();
        let est = wasserstein_estimate(&g, &pi, &eta, 0.0, 2.0, 10, 3, Some(2)).unwrap();
        assert!((est.mean - transport_norm(&eta, &pi, 2.0).unwrap()).abs() < 1e-14);
        assert_eq!(est.stderr, 0.0);
        assert!(wasserstein_estimate(&g, &pi, &eta, 0.0, 2.0, 1, 3, Some(2)).is_err());
    }

    #[test]
    fn wilson_at_equilibrium_start() {
        let g = graph(GraphKind::Cycle(5));
        let pi = uniform_weights(5).unwrap();
        let r = wilson_report(&g, &pi, 6, pi.as_slice(), 0.7).unwrap();
        assert!(r.out_mean.abs() < 1e-12);
        assert!(r.eq_mean.abs() < 1e-12);
        assert!((r.eq_var - 6.0).abs() < 1e-10);
        assert!((r.out_var - 6.0).abs() < 1e-8);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn nt_at_zero() {
        let g = graph(GraphKind::Cycle(4));
        let pi = SiteWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let eta = [0.4, 0.3, 0.2, 0.1];
        let r = nt_decomposition(&g, &pi, &eta, 0.0, 1e-12).unwrap();
        assert!(r.nt_term.abs() < 1e-12);
        let direct: f64 = eta.iter().zip(pi.as_slice()).map(|(e, p)| p * (e / p - 1.0f64).powi(2)).sum();
        assert!((r.h_term - direct).abs() < 1e-12);
        assert!((r.exact - direct).abs() < 1e-12);
    }

    #[test]
    fn nash_rejects_bad_grids() {
        let g = graph(GraphKind::Cycle(16));
        let pi = uniform_weights(16).unwrap();
        assert!(nash_fit(&g, &pi, &[0.0, 1.0]).is_err());
        assert!(matches!(nash_fit(&g, &pi, &[1.0, 2.0]), Err(Error::InsufficientWindow(_))));
    }
}
