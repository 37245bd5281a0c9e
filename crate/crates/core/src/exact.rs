//! Enumerated state spaces, sparse generators, spectra and uniformized
//! semigroups for the particle systems.

use crate::error::{Error, Result};
use crate::graphs::{SiteWeights, WeightedGraph};
use crate::scalar::{compensated_sum, Scalar};
use nalgebra::{DMatrix, SymmetricEigen};
use std::io::Write;
use std::sync::OnceLock;

/// Default cap on enumerated configurations.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;
/// Default cap on the dimension of vectors evolved by uniformization.
pub const DEFAULT_TRANSIENT_CAP: usize = 200_000;
/// Largest dimension handled by a dense symmetric eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 4096;

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// `|Omega_k| = C(n + k - 1, k)`.
pub fn unlabeled_size(n: usize, k: usize) -> u128 {
    if n == 0 {
        return u128::from(k == 0);
    }
    binomial_u128((n + k - 1) as u64, k as u64)
}

/// Occupation vectors of `k` particles on `n` sites, ordered lexicographically
/// from `(k, 0, ..., 0)` down to `(0, ..., 0, k)`.
#[derive(Debug, Clone)]
pub struct UnlabeledSpace {
    n: usize,
    k: usize,
    data: Vec<u32>,
    // counts[m][r] = number of configurations of r particles on m sites
    counts: Vec<Vec<u64>>,
}

pub fn enumerate_configs(n: usize, k: usize) -> Result<UnlabeledSpace> {
    UnlabeledSpace::with_cap(n, k, DEFAULT_STATE_CAP)
}

impl UnlabeledSpace {
    pub fn with_cap(n: usize, k: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let size = unlabeled_size(n, k);
        if size > cap as u128 {
            return Err(Error::SizeLimit { count: size, cap });
        }
        let mut counts = vec![vec![0u64; k + 1]; n + 2];
        counts[0][0] = 1;
        for m in 1..n + 2 {
            for r in 0..=k {
                counts[m][r] = unlabeled_size(m, r) as u64;
            }
        }
        let mut data = Vec::with_capacity(size as usize * n);
        let mut cur = vec![0u32; n];
        fill(0, k, &mut cur, &mut data);
        Ok(UnlabeledSpace { n, k, data, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn config(&self, i: usize) -> &[u32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.data.chunks_exact(self.n)
    }

    /// Row id of `xi`, or `None` if `xi` is not a configuration of this space.
    pub fn index(&self, xi: &[u32]) -> Option<usize> {
        if xi.len() != self.n || xi.iter().map(|&v| v as usize).sum::<usize>() != self.k {
            return None;
        }
        let mut rank = 0u64;
        let mut rem = self.k;
        for (i, &v) in xi[..self.n - 1].iter().enumerate() {
            let v = v as usize;
            if rem > v {
                rank += self.counts[self.n - i][rem - v - 1];
            }
            rem -= v;
        }
        Some(rank as usize)
    }

    /// Configuration with all `k` particles on `x`.
    pub fn pile(&self, x: usize) -> Vec<u32> {
        let mut xi = vec![0; self.n];
        xi[x] = self.k as u32;
        xi
    }
}

fn fill(pos: usize, rem: usize, cur: &mut [u32], out: &mut Vec<u32>) {
    if pos + 1 == cur.len() {
        cur[pos] = rem as u32;
        out.extend_from_slice(cur);
        return;
    }
    for v in (0..=rem).rev() {
        cur[pos] = v as u32;
        fill(pos + 1, rem - v, cur, out);
    }
}

/// Ordered tuples in `V^k`, row-major with the last coordinate fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSpace {
    n: usize,
    k: usize,
    len: usize,
}

impl LabeledSpace {
    pub fn new(n: usize, k: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let size = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        if size > cap as u128 {
            return Err(Error::SizeLimit { count: size, cap });
        }
        Ok(LabeledSpace { n, k, len: size as usize })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn encode(&self, xs: &[usize]) -> usize {
        xs.iter().fold(0, |acc, &x| acc * self.n + x)
    }

    pub fn decode_into(&self, mut i: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = i % self.n;
            i /= self.n;
        }
    }

    pub fn decode(&self, i: usize) -> Vec<usize> {
        let mut out = vec![0; self.k];
        self.decode_into(i, &mut out);
        out
    }

    /// Occupation vector of a tuple.
    pub fn occupation(&self, xs: &[usize]) -> Vec<u32> {
        let mut xi = vec![0; self.n];
        for &x in xs {
            xi[x] += 1;
        }
        xi
    }
}

/// Sparse generator: nonnegative off-diagonal rates in CSR form plus a
/// diagonal holding the negated row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> RateMatrix<T> {
    /// Builds from off-diagonal rows. Entries are sorted, duplicates merged,
    /// zeros dropped, and the diagonal set to minus the row sum.
    pub fn from_rows(rows: impl IntoIterator<Item = Vec<(usize, T)>>) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::new();
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let start = cols.len();
            for (j, r) in row {
                if j == i {
                    continue;
                }
                if r < T::zero() || !r.is_finite() {
                    return Err(Error::InvalidArgument(format!("rate {r} at ({i},{j})")));
                }
                if r == T::zero() {
                    continue;
                }
                if cols.len() > start && *cols.last().expect("nonempty") == j {
                    *vals.last_mut().expect("nonempty") += r;
                } else {
                    cols.push(j);
                    vals.push(r);
                }
            }
            diag.push(-compensated_sum(vals[start..].iter().copied()));
            row_ptr.push(cols.len());
        }
        let dim = diag.len();
        if let Some(&j) = cols.iter().find(|&&j| j >= dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: j + 1 });
        }
        Ok(RateMatrix { row_ptr, cols, vals, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn nnz_offdiag(&self) -> usize {
        self.cols.len()
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    /// Off-diagonal `(col, rate)` entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        if i == j {
            return self.diag[i];
        }
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => T::zero(),
        }
    }

    pub fn max_exit_rate(&self) -> T {
        self.diag.iter().fold(T::zero(), |acc, d| acc.max(-*d))
    }

    /// Largest `|sum_j Q_ij|`.
    pub fn row_sum_residual(&self) -> T {
        (0..self.dim())
            .map(|i| (self.diag[i] + compensated_sum(self.row(i).map(|(_, r)| r))).abs())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest `|mu_i Q_ij - mu_j Q_ji|`.
    pub fn detailed_balance_residual(&self, mu: &[T]) -> Result<T> {
        check_len(self.dim(), mu.len())?;
        let mut worst = T::zero();
        for i in 0..self.dim() {
            for (j, r) in self.row(i) {
                worst = worst.max((mu[i] * r - mu[j] * self.entry(j, i)).abs());
            }
        }
        Ok(worst)
    }

    /// `Q f` for a function `f` (column vector).
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| self.row(i).fold(self.diag[i] * f[i], |acc, (j, r)| acc + r * f[j]))
            .collect()
    }

    /// `nu Q` for a measure `nu` (row vector).
    pub fn apply_left(&self, nu: &[T]) -> Vec<T> {
        let mut out: Vec<T> = nu.iter().zip(&self.diag).map(|(a, d)| *a * *d).collect();
        for i in 0..self.dim() {
            for (j, r) in self.row(i) {
                out[j] += nu[i] * r;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, r) in self.row(i) {
                m[(i, j)] = r;
            }
        }
        m
    }

    /// Kronecker sum `self (+) other` on index `a * other.dim() + b`.
    pub fn kron_sum(&self, other: &RateMatrix<T>) -> Result<RateMatrix<T>> {
        let (m, n) = (self.dim(), other.dim());
        let rows = (0..m * n).map(|s| {
            let (a, b) = (s / n, s % n);
            let mut row: Vec<(usize, T)> = self.row(a).map(|(a2, r)| (a2 * n + b, r)).collect();
            row.extend(other.row(b).map(|(b2, r)| (a * n + b2, r)));
            row
        });
        RateMatrix::from_rows(rows)
    }

    /// Coordinate-format dump: one `row col rate` line per stored entry,
    /// diagonal included.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.dim() {
            let mut wrote_diag = false;
            for (j, r) in self.row(i) {
                if !wrote_diag && j > i {
                    writeln!(w, "{i} {i} {:e}", self.diag[i].as_f64())?;
                    wrote_diag = true;
                }
                writeln!(w, "{i} {j} {:e}", r.as_f64())?;
            }
            if !wrote_diag {
                writeln!(w, "{i} {i} {:e}", self.diag[i].as_f64())?;
            }
        }
        Ok(())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_weights<T: Scalar>(g: &WeightedGraph<T>, pi: &SiteWeights<T>) -> Result<()> {
    check_len(g.n(), pi.len())
}

/// `C(m, j) p^j q^(m-j)` for `j = 0..=m`; `q` is passed separately so that
/// `p + q = 1` need not be re-derived in floating point.
pub fn binomial_pmf<T: Scalar>(m: usize, p: T, q: T) -> Vec<T> {
    let mut coeff = T::one();
    (0..=m)
        .map(|j| {
            if j > 0 {
                coeff = coeff * T::count(m + 1 - j) / T::count(j);
            }
            coeff * p.powi(j as i32) * q.powi((m - j) as i32)
        })
        .collect()
}

/// `(pi(x)/(pi(x)+pi(y)), pi(y)/(pi(x)+pi(y)))`.
pub fn split_probs<T: Scalar>(pi: &SiteWeights<T>, x: usize, y: usize) -> (T, T) {
    let s = pi[x] + pi[y];
    (pi[x] / s, pi[y] / s)
}

/// Multinomial law `mu_{k,pi}` on the configurations of `space`.
pub fn multinomial_measure<T: Scalar>(pi: &[T], space: &UnlabeledSpace) -> Result<Vec<T>> {
    check_len(space.n(), pi.len())?;
    let k = space.k();
    let mut lf = vec![0.0f64; k + 1];
    for i in 1..=k {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    Ok(space
        .iter()
        .map(|xi| {
            // k! / prod xi! is an integer; evaluate it in logs, the powers directly
            let log_coef = lf[k] - xi.iter().map(|&v| lf[v as usize]).sum::<f64>();
            let coef = T::lit(log_coef.exp().round());
            xi.iter()
                .zip(pi)
                .fold(coef, |acc, (&v, &p)| if v == 0 { acc } else { acc * p.powi(v as i32) })
        })
        .collect())
}

/// Unlabeled Binomial Splitting generator on `space`.
pub fn generator_bin_unlabeled<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    space: &UnlabeledSpace,
) -> Result<RateMatrix<T>> {
    check_weights(g, pi)?;
    check_len(g.n(), space.n())?;
    let edge_pmfs: Vec<Vec<Vec<T>>> = g
        .edges()
        .iter()
        .map(|e| {
            let (p, q) = split_probs(pi, e.x, e.y);
            (0..=space.k()).map(|m| binomial_pmf(m, p, q)).collect()
        })
        .collect();
    let mut target = vec![0u32; space.n()];
    let rows = (0..space.len()).map(|i| {
        let xi = space.config(i);
        let mut row = Vec::new();
        for (e, pmfs) in g.edges().iter().zip(&edge_pmfs) {
            let m = (xi[e.x] + xi[e.y]) as usize;
            if m == 0 {
                continue;
            }
            target.copy_from_slice(xi);
            for (j, &w) in pmfs[m].iter().enumerate() {
                if j as u32 == xi[e.x] {
                    continue;
                }
                target[e.x] = j as u32;
                target[e.y] = (m - j) as u32;
                row.push((space.index(&target).expect("conserves k"), e.c * w));
            }
        }
        row
    });
    RateMatrix::from_rows(rows)
}

/// Labeled Binomial Splitting generator on `V^k`.
pub fn generator_bin_labeled<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    space: &LabeledSpace,
) -> Result<RateMatrix<T>> {
    check_weights(g, pi)?;
    check_len(g.n(), space.n())?;
    if space.k() > 24 {
        return Err(Error::InvalidArgument("labeled generator supports k <= 24".into()));
    }
    let splits: Vec<(T, T)> = g.edges().iter().map(|e| split_probs(pi, e.x, e.y)).collect();
    let mut xs = vec![0usize; space.k()];
    let mut ys = vec![0usize; space.k()];
    let rows = (0..space.len()).map(|s| {
        space.decode_into(s, &mut xs);
        let mut row = Vec::new();
        for (e, &(p, q)) in g.edges().iter().zip(&splits) {
            let involved: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] == e.x || xs[i] == e.y).collect();
            if involved.is_empty() {
                continue;
            }
            let m = involved.len();
            for mask in 0u32..(1 << m) {
                ys.copy_from_slice(&xs);
                for (b, &i) in involved.iter().enumerate() {
                    ys[i] = if mask >> b & 1 == 1 { e.x } else { e.y };
                }
                let t = space.encode(&ys);
                if t == s {
                    continue;
                }
                let ones = mask.count_ones() as i32;
                row.push((t, e.c * p.powi(ones) * q.powi(m as i32 - ones)));
            }
        }
        row
    });
    RateMatrix::from_rows(rows)
}

/// Single-particle generator; row `i` is vertex `i`.
pub fn generator_bin1<T: Scalar>(g: &WeightedGraph<T>, pi: &SiteWeights<T>) -> Result<RateMatrix<T>> {
    generator_bin_unlabeled(g, pi, &UnlabeledSpace::with_cap(g.n(), 1, usize::MAX)?)
}

/// Two independent single particles on `V^2`.
pub fn generator_product2<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    cap: usize,
) -> Result<RateMatrix<T>> {
    LabeledSpace::new(g.n(), 2, cap)?;
    let q1 = generator_bin1(g, pi)?;
    q1.kron_sum(&q1)
}

/// `pi^{(x) k}` on a labeled space.
pub fn product_measure<T: Scalar>(pi: &[T], space: &LabeledSpace) -> Vec<T> {
    let mut xs = vec![0; space.k()];
    (0..space.len())
        .map(|s| {
            space.decode_into(s, &mut xs);
            xs.iter().fold(T::one(), |acc, &x| acc * pi[x])
        })
        .collect()
}

/// Sorted spectrum of `-Q` for a reversible generator.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Scalar> {
    /// Ascending. Only `[0, gap]` when the iterative solver was used.
    pub eigenvalues: Vec<T>,
    pub gap: T,
    pub t_rel: T,
    /// Gap eigenfunction with unit `L^2(mu)` norm, canonically chosen.
    pub psi: Vec<T>,
    pub gap_multiplicity: usize,
    /// Columns are `L^2(mu)`-orthonormal eigenfunctions matching `eigenvalues`
    /// (dense path only).
    pub eigenfunctions: Option<DMatrix<T>>,
    pub mu: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    /// Orthonormal basis of the gap eigenspace (dense path), else `[psi]`.
    pub fn gap_eigenfunctions(&self) -> Vec<Vec<T>> {
        match &self.eigenfunctions {
            Some(v) => (1..1 + self.gap_multiplicity).map(|c| v.column(c).iter().copied().collect()).collect(),
            None => vec![self.psi.clone()],
        }
    }
}

fn reversibility_tol<T: Scalar>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(1e3))
}

/// Spectrum of `-Q` through the symmetrization `D^{1/2}(-Q)D^{-1/2}`.
pub fn spectral_gap<T: Scalar>(q: &RateMatrix<T>, mu: &[T]) -> Result<Spectrum<T>> {
    check_len(q.dim(), mu.len())?;
    if q.dim() < 2 {
        return Err(Error::InvalidArgument("spectral gap needs at least two states".into()));
    }
    let residual = q.detailed_balance_residual(mu)?;
    if residual > reversibility_tol() {
        return Err(Error::NotReversible { residual: residual.as_f64() });
    }
    if q.dim() <= DENSE_EIGEN_LIMIT {
        dense_spectrum(q, mu)
    } else {
        iterative_spectrum(q, mu)
    }
}

fn dense_spectrum<T: Scalar>(q: &RateMatrix<T>, mu: &[T]) -> Result<Spectrum<T>> {
    let n = q.dim();
    let sq: Vec<T> = mu.iter().map(|m| m.sqrt()).collect();
    let mut s = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = -q.diag()[i];
        for (j, r) in q.row(i) {
            s[(i, j)] = -(sq[i] * r / sq[j]);
        }
    }
    let s = (&s + s.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite"));
    let eigenvalues: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut funcs = DMatrix::<T>::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            funcs[(r, c)] = eig.eigenvectors[(r, i)] / sq[r];
        }
    }
    let gap = eigenvalues[1];
    let scale = eigenvalues[n - 1].abs().max(T::one());
    if gap <= T::lit(1e-10).max(T::default_epsilon() * T::lit(100.0)) * scale {
        return Err(Error::InvalidArgument("chain is reducible: second eigenvalue is zero".into()));
    }
    let mult_tol = gap * T::default_epsilon().sqrt() * T::lit(10.0);
    let multiplicity = eigenvalues[1..].iter().take_while(|l| (**l - gap).abs() <= mult_tol).count();
    let psi = canonical_eigenfunction(
        (1..1 + multiplicity).map(|c| funcs.column(c).iter().copied().collect()),
        mu,
    );
    Ok(Spectrum {
        gap,
        t_rel: T::one() / gap,
        psi,
        gap_multiplicity: multiplicity,
        eigenfunctions: Some(funcs),
        eigenvalues,
        mu: mu.to_vec(),
    })
}

/// Picks the basis vector of largest `L^1(mu)` norm, sign-fixed so its first
/// non-negligible coordinate is positive.
pub fn canonical_eigenfunction<T: Scalar>(basis: impl IntoIterator<Item = Vec<T>>, mu: &[T]) -> Vec<T> {
    let l1 = |v: &[T]| compensated_sum(v.iter().zip(mu).map(|(a, m)| a.abs() * *m));
    let mut best: Option<(T, Vec<T>)> = None;
    for v in basis {
        let norm = l1(&v);
        // strict improvement beyond rounding keeps the earliest candidate on ties
        if best.as_ref().is_none_or(|(b, _)| norm > *b * (T::one() + T::lit(1e-9))) {
            best = Some((norm, v));
        }
    }
    let mut v = best.expect("nonempty eigenspace").1;
    let vmax = v.iter().fold(T::zero(), |a, b| a.max(b.abs()));
    if let Some(first) = v.iter().find(|a| a.abs() > vmax * T::lit(1e-8)) {
        if *first < T::zero() {
            v.iter_mut().for_each(|a| *a = -*a);
        }
    }
    v
}

fn iterative_spectrum<T: Scalar>(q: &RateMatrix<T>, mu: &[T]) -> Result<Spectrum<T>> {
    let n = q.dim();
    let sq: Vec<T> = mu.iter().map(|m| m.sqrt()).collect();
    let op = |v: &[T]| -> Vec<T> {
        let scaled: Vec<T> = v.iter().zip(&sq).map(|(a, s)| *a / *s).collect();
        q.apply(&scaled).iter().zip(&sq).map(|(a, s)| -*a * *s).collect()
    };
    let dot = |a: &[T], b: &[T]| compensated_sum(a.iter().zip(b).map(|(x, y)| *x * *y));
    let deflate = |v: &mut [T]| {
        let c = dot(v, &sq);
        v.iter_mut().zip(&sq).for_each(|(a, s)| *a -= c * *s);
    };
    let normalize = |v: &mut [T]| {
        let nrm = dot(v, v).sqrt();
        v.iter_mut().for_each(|a| *a /= nrm);
    };
    let mut x: Vec<T> = (0..n).map(|i| T::lit(((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5)).collect();
    deflate(&mut x);
    normalize(&mut x);
    let mut lambda = dot(&x, &op(&x));
    for _ in 0..500 {
        let mut y = conjugate_gradient(&op, &x, &deflate, T::lit(1e-13), 20 * n.max(100));
        deflate(&mut y);
        normalize(&mut y);
        let sy = op(&y);
        let next = dot(&y, &sy);
        let resid = sy.iter().zip(&y).map(|(a, b)| (*a - next * *b).powi(2)).fold(T::zero(), |a, b| a + b).sqrt();
        x = y;
        let done = (next - lambda).abs() <= T::lit(1e-13) * next && resid <= T::lit(1e-9) * next;
        lambda = next;
        if done {
            break;
        }
    }
    let psi_raw: Vec<T> = x.iter().zip(&sq).map(|(a, s)| *a / *s).collect();
    let psi = canonical_eigenfunction([psi_raw], mu);
    Ok(Spectrum {
        eigenvalues: vec![T::zero(), lambda],
        gap: lambda,
        t_rel: T::one() / lambda,
        psi,
        gap_multiplicity: 1,
        eigenfunctions: None,
        mu: mu.to_vec(),
    })
}

fn conjugate_gradient<T: Scalar>(
    op: &dyn Fn(&[T]) -> Vec<T>,
    b: &[T],
    deflate: &dyn Fn(&mut [T]),
    rtol: T,
    max_iter: usize,
) -> Vec<T> {
    let dot = |a: &[T], c: &[T]| compensated_sum(a.iter().zip(c).map(|(x, y)| *x * *y));
    let mut x = vec![T::zero(); b.len()];
    let mut r = b.to_vec();
    deflate(&mut r);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = rr * rtol * rtol;
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        let mut ap = op(&p);
        deflate(&mut ap);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * *b);
        r.iter_mut().zip(&ap).for_each(|(a, b)| *a -= alpha * *b);
        let next = dot(&r, &r);
        let beta = next / rr;
        p.iter_mut().zip(&r).for_each(|(a, b)| *a = *b + beta * *a);
        rr = next;
    }
    x
}

/// Poisson(`lt`) weights truncated once the remaining mass is below `tol`.
pub fn poisson_weights(lt: f64, tol: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut log_w = -lt;
    let mut mass = 0.0;
    let mut m = 0usize;
    loop {
        let w = log_w.exp();
        out.push(w);
        mass += w;
        if (m as f64) > lt && 1.0 - mass < tol {
            return out;
        }
        m += 1;
        log_w += lt.ln() - (m as f64).ln();
        if m > 10 * (lt as usize + 100) {
            return out;
        }
    }
}

/// Uniformization settings.
#[derive(Debug, Clone, Copy)]
pub struct Uniformization {
    pub tol: f64,
    pub cap: usize,
}

impl Default for Uniformization {
    fn default() -> Self {
        Uniformization { tol: 1e-10, cap: DEFAULT_TRANSIENT_CAP }
    }
}

enum Side {
    Left,
    Right,
}

impl Uniformization {
    pub fn new(tol: f64) -> Self {
        Uniformization { tol, ..Self::default() }
    }

    fn check<T: Scalar>(&self, q: &RateMatrix<T>, v: &[T], t: f64) -> Result<()> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::NegativeTime(t));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-6) {
            return Err(Error::InvalidArgument(format!("uniformization tol {} outside (0, 1e-6]", self.tol)));
        }
        if q.dim() > self.cap {
            return Err(Error::SizeLimit { count: q.dim() as u128, cap: self.cap });
        }
        check_len(q.dim(), v.len())
    }

    fn run<T: Scalar>(&self, q: &RateMatrix<T>, v: &[T], t: f64, side: Side) -> Vec<T> {
        let lambda = q.max_exit_rate();
        if t == 0.0 || lambda == T::zero() {
            return v.to_vec();
        }
        let weights = poisson_weights(lambda.as_f64() * t, self.tol);
        let stay: Vec<T> = q.diag().iter().map(|d| T::one() + *d / lambda).collect();
        let mut cur = v.to_vec();
        let mut acc: Vec<T> = cur.iter().map(|a| *a * T::lit(weights[0])).collect();
        let mut next = vec![T::zero(); cur.len()];
        for &w in &weights[1..] {
            match side {
                Side::Left => {
                    next.iter_mut().zip(&cur).zip(&stay).for_each(|((o, c), s)| *o = *c * *s);
                    for i in 0..q.dim() {
                        let ci = cur[i] / lambda;
                        if ci != T::zero() {
                            for (j, r) in q.row(i) {
                                next[j] += ci * r;
                            }
                        }
                    }
                }
                Side::Right => {
                    for i in 0..q.dim() {
                        next[i] = q.row(i).fold(cur[i] * stay[i], |a, (j, r)| a + r / lambda * cur[j]);
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if w > 0.0 {
                let tw = T::lit(w);
                acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += tw * *c);
            }
        }
        acc
    }

    /// `nu S_t`.
    pub fn distribution<T: Scalar>(&self, q: &RateMatrix<T>, init: &[T], t: f64) -> Result<Vec<T>> {
        self.check(q, init, t)?;
        Ok(self.run(q, init, t, Side::Left))
    }

    /// `nu S_t` at each of the sorted `times`, stepping between them.
    pub fn distribution_path<T: Scalar>(&self, q: &RateMatrix<T>, init: &[T], times: &[f64]) -> Result<Vec<Vec<T>>> {
        self.check(q, init, 0.0)?;
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("times must be sorted".into()));
        }
        let mut out = Vec::with_capacity(times.len());
        let mut cur = init.to_vec();
        let mut now = 0.0;
        for &t in times {
            self.check(q, &cur, t)?;
            cur = self.run(q, &cur, t - now, Side::Left);
            now = t;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// `S_t f`.
    pub fn function<T: Scalar>(&self, q: &RateMatrix<T>, f: &[T], t: f64) -> Result<Vec<T>> {
        self.check(q, f, t)?;
        Ok(self.run(q, f, t, Side::Right))
    }
}

/// `init S_t` with the default state cap.
pub fn transient_distribution<T: Scalar>(q: &RateMatrix<T>, init: &[T], t: f64, tol: f64) -> Result<Vec<T>> {
    Uniformization::new(tol).distribution(q, init, t)
}

/// `<psi, -Q psi>_mu`, evaluated as a sum of squares for reversible `Q`.
pub fn dirichlet_form<T: Scalar>(q: &RateMatrix<T>, mu: &[T], psi: &[T]) -> Result<T> {
    check_len(q.dim(), mu.len())?;
    check_len(q.dim(), psi.len())?;
    let terms = (0..q.dim()).flat_map(|i| q.row(i).map(move |(j, r)| mu[i] * r * (psi[i] - psi[j]).powi(2)));
    Ok(compensated_sum(terms) * T::lit(0.5))
}

/// Single-particle Dirichlet form in closed form.
pub fn dirichlet_bin1<T: Scalar>(g: &WeightedGraph<T>, pi: &SiteWeights<T>, psi: &[T]) -> Result<T> {
    check_weights(g, pi)?;
    check_len(g.n(), psi.len())?;
    Ok(compensated_sum(g.edges().iter().map(|e| {
        e.c * pi[e.x] * pi[e.y] / (pi[e.x] + pi[e.y]) * (psi[e.x] - psi[e.y]).powi(2)
    })))
}

/// The nonnegative defect `E_{1(x)1} - E_{Bin(2)}` for `psi2` on `V^2`
/// (index `a * n + b`).
pub fn f_bin2_form<T: Scalar>(g: &WeightedGraph<T>, pi: &SiteWeights<T>, psi2: &[T]) -> Result<T> {
    check_weights(g, pi)?;
    let n = g.n();
    check_len(n * n, psi2.len())?;
    Ok(compensated_sum(g.edges().iter().map(|e| {
        let (x, y) = (e.x, e.y);
        let h = pi[x] * pi[y] / (pi[x] + pi[y]);
        let d = psi2[x * n + x] + psi2[y * n + y] - psi2[x * n + y] - psi2[y * n + x];
        e.c * h * h * d * d
    })))
}

/// Unlabeled Bin(k): configurations, generator and Multinomial law, with a
/// lazily computed spectrum.
#[derive(Debug)]
pub struct UnlabeledModel<T: Scalar> {
    pub space: UnlabeledSpace,
    pub q: RateMatrix<T>,
    pub mu: Vec<T>,
    spectrum: OnceLock<Spectrum<T>>,
}

impl<T: Scalar> UnlabeledModel<T> {
    pub fn build(g: &WeightedGraph<T>, pi: &SiteWeights<T>, k: usize, cap: usize) -> Result<Self> {
        Self::from_space(g, pi, UnlabeledSpace::with_cap(g.n(), k, cap)?)
    }

    pub fn from_space(g: &WeightedGraph<T>, pi: &SiteWeights<T>, space: UnlabeledSpace) -> Result<Self> {
        let q = generator_bin_unlabeled(g, pi, &space)?;
        let mu = multinomial_measure(pi.as_slice(), &space)?;
        Ok(UnlabeledModel { space, q, mu, spectrum: OnceLock::new() })
    }

    pub fn spectrum(&self) -> Result<&Spectrum<T>> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let s = spectral_gap(&self.q, &self.mu)?;
        Ok(self.spectrum.get_or_init(|| s))
    }

    /// Point mass at configuration `xi`.
    pub fn dirac(&self, xi: &[u32]) -> Result<Vec<T>> {
        let i = self
            .space
            .index(xi)
            .ok_or_else(|| Error::InvalidArgument(format!("{xi:?} is not in the state space")))?;
        let mut v = vec![T::zero(); self.space.len()];
        v[i] = T::one();
        Ok(v)
    }
}
