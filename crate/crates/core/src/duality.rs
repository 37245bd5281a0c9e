//! Duality functions, the Multinomial intertwiner and the operator algebra
//! on tensor and unlabeled functions, with residual checks.

use crate::averaging::SimplexPoint;
use crate::error::{Error, Result};
use crate::exact::{
    binomial_pmf, generator_bin_labeled, generator_bin_unlabeled, multinomial_measure, split_probs, LabeledSpace,
    RateMatrix, UnlabeledSpace, Uniformization,
};
use crate::graphs::{SiteWeights, WeightedGraph};
use crate::scalar::{compensated_sum, Scalar};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Above this many particles `sym_project` samples permutations.
pub const SYM_EXACT_MAX_K: usize = 6;
const SYM_SAMPLES: usize = 5040;

/// Function on `V^k`, row-major with the last coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFunction<T> {
    n: usize,
    k: usize,
    values: Vec<T>,
}

impl<T: Scalar> TensorFunction<T> {
    pub fn new(n: usize, k: usize, values: Vec<T>) -> Result<Self> {
        let len = n.checked_pow(k as u32).ok_or(Error::SizeLimit { count: u128::MAX, cap: usize::MAX })?;
        if values.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: values.len() });
        }
        Ok(TensorFunction { n, k, values })
    }

    pub fn from_fn(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let space = LabeledSpace::new(n, k, usize::MAX).expect("n >= 1");
        let mut xs = vec![0; k];
        let values = (0..space.len())
            .map(|s| {
                space.decode_into(s, &mut xs);
                f(&xs)
            })
            .collect();
        TensorFunction { n, k, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn space(&self) -> LabeledSpace {
        LabeledSpace::new(self.n, self.k, usize::MAX).expect("n >= 1")
    }

    pub fn at(&self, xs: &[usize]) -> T {
        self.values[self.space().encode(xs)]
    }

    /// `<self, other>` in `L^2(pi^{(x) k})`.
    pub fn inner(&self, other: &Self, pi: &[T]) -> Result<T> {
        if self.n != other.n || self.k != other.k {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: other.values.len() });
        }
        let w = crate::exact::product_measure(pi, &self.space());
        Ok(compensated_sum(w.iter().zip(&self.values).zip(&other.values).map(|((m, a), b)| *m * *a * *b)))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }
}

/// `prod_i eta(x_i) / pi(x_i)`.
pub fn moment_duality<T: Scalar>(xs: &[usize], eta: &[T], pi: &[T]) -> T {
    xs.iter().fold(T::one(), |acc, &x| acc * (eta[x] / pi[x]))
}

/// `prod_i (eta(x_i) / pi(x_i) - 1)`.
pub fn orthogonal_duality<T: Scalar>(xs: &[usize], eta: &[T], pi: &[T]) -> T {
    xs.iter().fold(T::one(), |acc, &x| acc * (eta[x] / pi[x] - T::one()))
}

/// `D(., eta)` or its orthogonal variant as a tensor function.
pub fn duality_tensor<T: Scalar>(n: usize, k: usize, eta: &[T], pi: &[T], orthogonal: bool) -> TensorFunction<T> {
    if orthogonal {
        TensorFunction::from_fn(n, k, |xs| orthogonal_duality(xs, eta, pi))
    } else {
        TensorFunction::from_fn(n, k, |xs| moment_duality(xs, eta, pi))
    }
}

/// `xi(x_1) (xi(x_2) - 1{x_2 = x_1}) ...`.
pub fn falling_factorial(xi: &[u32], xs: &[usize]) -> u64 {
    let mut acc = 1u64;
    for (i, &x) in xs.iter().enumerate() {
        let before = xs[..i].iter().filter(|&&z| z == x).count() as u64;
        let avail = u64::from(xi[x]);
        if avail <= before {
            return 0;
        }
        acc *= avail - before;
    }
    acc
}

/// `sum_xi mu_{k,eta}(xi) f(xi)`; `eta` need not be a probability vector.
pub fn lambda_apply<T: Scalar>(f: &[T], eta: &[T], space: &UnlabeledSpace) -> Result<T> {
    if f.len() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), got: f.len() });
    }
    let mu = multinomial_measure(eta, space)?;
    Ok(compensated_sum(mu.iter().zip(f).map(|(m, v)| *m * *v)))
}

/// Expectation of `f` after the Binomial redistribution of the particles on
/// `{x, y}` in configuration `xi`.
pub fn p_bin_edge_apply<T: Scalar>(
    f: &[T],
    space: &UnlabeledSpace,
    xi: &[u32],
    x: usize,
    y: usize,
    pi: &SiteWeights<T>,
) -> Result<T> {
    if f.len() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), got: f.len() });
    }
    let m = (xi[x] + xi[y]) as usize;
    let (p, q) = split_probs(pi, x, y);
    let mut target = xi.to_vec();
    let terms = binomial_pmf(m, p, q).into_iter().enumerate().map(|(j, w)| {
        target[x] = j as u32;
        target[y] = (m - j) as u32;
        w * f[space.index(&target).expect("conserves k")]
    });
    Ok(compensated_sum(terms.collect::<Vec<_>>()))
}

/// `P^Bin_{xy} f` as a whole function.
pub fn p_bin_edge_function<T: Scalar>(
    f: &[T],
    space: &UnlabeledSpace,
    x: usize,
    y: usize,
    pi: &SiteWeights<T>,
) -> Result<Vec<T>> {
    space.iter().map(|xi| p_bin_edge_apply(f, space, xi, x, y, pi)).collect()
}

/// Averaging edge map used by the residual checks; replaceable to test that
/// the checks detect a faulty update.
pub type EdgeUpdateFn<T> = dyn Fn(&[T], usize, usize, &SiteWeights<T>) -> Vec<T> + Sync;

/// The exact pooled update.
pub fn standard_edge_update<T: Scalar>(eta: &[T], x: usize, y: usize, pi: &SiteWeights<T>) -> Vec<T> {
    let mut out = eta.to_vec();
    let pooled = eta[x] + eta[y];
    let (p, q) = split_probs(pi, x, y);
    out[x] = pooled * p;
    out[y] = pooled * q;
    out
}

/// `max_xy |Lambda_k f(eta^{xy}) - Lambda_k (P^Bin_{xy} f)(eta)|`.
pub fn intertwining_residual<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    space: &UnlabeledSpace,
    f: &[T],
    eta: &[T],
) -> Result<T> {
    intertwining_residual_with(g, pi, space, f, eta, &standard_edge_update)
}

pub fn intertwining_residual_with<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    space: &UnlabeledSpace,
    f: &[T],
    eta: &[T],
    update: &EdgeUpdateFn<T>,
) -> Result<T> {
    let mut worst = T::zero();
    for e in g.edges() {
        let lhs = lambda_apply(f, &update(eta, e.x, e.y, pi), space)?;
        let rhs = lambda_apply(&p_bin_edge_function(f, space, e.x, e.y, pi)?, eta, space)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Multicolored per-edge intertwining for product test functions: with one
/// Averaging state and one function on `Omega_{xi(z)}` per color, returns
/// `max_xy |prod_z Lambda f_z(eta_z^{xy}) - prod_z Lambda (P^Bin_{xy} f_z)(eta_z)|`.
pub fn multicolored_intertwining_residual<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    xi: &[u32],
    fs: &[Vec<T>],
    etas: &[SimplexPoint<T>],
) -> Result<T> {
    let n = g.n();
    if xi.len() != n || fs.len() != n || etas.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: fs.len().min(etas.len()).min(xi.len()) });
    }
    let spaces: Vec<UnlabeledSpace> =
        xi.iter().map(|&m| UnlabeledSpace::with_cap(n, m as usize, usize::MAX)).collect::<Result<_>>()?;
    let mut worst = T::zero();
    for e in g.edges() {
        let mut lhs = T::one();
        let mut rhs = T::one();
        for z in 0..n {
            let eta = etas[z].as_slice();
            lhs *= lambda_apply(&fs[z], &standard_edge_update(eta, e.x, e.y, pi), &spaces[z])?;
            rhs *= lambda_apply(&p_bin_edge_function(&fs[z], &spaces[z], e.x, e.y, pi)?, eta, &spaces[z])?;
        }
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

fn check_slot(i: usize, k: usize) -> Result<()> {
    if i < k {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("slot {i} out of range for {k} particles")))
    }
}

/// `a_{k,i}`: lifts `psi` on `V^{k-1}` to `V^k`, ignoring coordinate `i`
/// (0-based).
pub fn annihilate<T: Scalar>(psi: &TensorFunction<T>, i: usize) -> Result<TensorFunction<T>> {
    let k = psi.k + 1;
    check_slot(i, k)?;
    let inner = psi.space();
    let mut rest = vec![0; psi.k];
    Ok(TensorFunction::from_fn(psi.n, k, |xs| {
        rest[..i].copy_from_slice(&xs[..i]);
        rest[i..].copy_from_slice(&xs[i + 1..]);
        psi.values[inner.encode(&rest)]
    }))
}

/// Adjoint of [`annihilate`]: averages coordinate `i` against `pi`.
pub fn create<T: Scalar>(phi: &TensorFunction<T>, i: usize, pi: &[T]) -> Result<TensorFunction<T>> {
    check_slot(i, phi.k)?;
    if pi.len() != phi.n {
        return Err(Error::DimensionMismatch { expected: phi.n, got: pi.len() });
    }
    let outer = phi.space();
    let mut full = vec![0; phi.k];
    Ok(TensorFunction::from_fn(phi.n, phi.k - 1, |rest| {
        full[..i].copy_from_slice(&rest[..i]);
        full[i + 1..].copy_from_slice(&rest[i..]);
        compensated_sum((0..phi.n).map(|z| {
            full[i] = z;
            pi[z] * phi.values[outer.encode(&full)]
        }))
    }))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm
    let mut a: Vec<usize> = (0..k).collect();
    let mut c = vec![0; k];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Symmetrization over coordinate permutations. The flag is `true` when all
/// `k!` permutations were summed, `false` when a fixed-seed sample was used.
pub fn sym_project<T: Scalar>(psi: &TensorFunction<T>) -> (TensorFunction<T>, bool) {
    let k = psi.k;
    let (perms, exact) = if k <= SYM_EXACT_MAX_K {
        (permutations(k), true)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut base: Vec<usize> = (0..k).collect();
        let perms = (0..SYM_SAMPLES)
            .map(|_| {
                base.shuffle(&mut rng);
                base.clone()
            })
            .collect();
        (perms, false)
    };
    let space = psi.space();
    let weight = T::one() / T::count(perms.len());
    let mut ys = vec![0; k];
    let out = TensorFunction::from_fn(psi.n, k, |xs| {
        let terms = perms.iter().map(|s| {
            for (slot, &j) in ys.iter_mut().zip(s) {
                *slot = xs[j];
            }
            psi.values[space.encode(&ys)]
        });
        compensated_sum(terms.collect::<Vec<_>>()) * weight
    });
    (out, exact)
}

/// `(J_k f)(xi) = sum_x xi(x) f(xi - delta_x)`.
pub fn jk_apply<T: Scalar>(f: &[T], lower: &UnlabeledSpace, upper: &UnlabeledSpace) -> Result<Vec<T>> {
    check_jk(lower, upper)?;
    if f.len() != lower.len() {
        return Err(Error::DimensionMismatch { expected: lower.len(), got: f.len() });
    }
    let mut buf = vec![0u32; upper.n()];
    Ok(upper
        .iter()
        .map(|xi| {
            buf.copy_from_slice(xi);
            let mut acc = T::zero();
            for x in 0..xi.len() {
                if xi[x] > 0 {
                    buf[x] -= 1;
                    acc += T::count(xi[x] as usize) * f[lower.index(&buf).expect("k-1 particles")];
                    buf[x] += 1;
                }
            }
            acc
        })
        .collect())
}

fn check_jk(lower: &UnlabeledSpace, upper: &UnlabeledSpace) -> Result<()> {
    if lower.n() != upper.n() || lower.k() + 1 != upper.k() || upper.k() < 2 {
        return Err(Error::InvalidArgument(format!(
            "J_k maps Omega_(k-1) to Omega_k with k >= 2, got k-1={} and k={}",
            lower.k(),
            upper.k()
        )));
    }
    Ok(())
}

/// Dense matrix of `J_k` (rows indexed by `upper`, columns by `lower`).
pub fn jk_matrix<T: Scalar>(lower: &UnlabeledSpace, upper: &UnlabeledSpace) -> Result<DMatrix<T>> {
    check_jk(lower, upper)?;
    let mut m = DMatrix::zeros(upper.len(), lower.len());
    for c in 0..lower.len() {
        let mut e = vec![T::zero(); lower.len()];
        e[c] = T::one();
        for (r, v) in jk_apply(&e, lower, upper)?.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

/// `max |(L^Bin(k) J_k - J_k L^Bin(k-1))_{ij}|` and the column rank of `J_k`.
pub fn jk_intertwining_check<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    k: usize,
) -> Result<(T, usize, usize)> {
    let lower = UnlabeledSpace::with_cap(g.n(), k - 1, crate::exact::DEFAULT_STATE_CAP)?;
    let upper = UnlabeledSpace::with_cap(g.n(), k, crate::exact::DEFAULT_STATE_CAP)?;
    let j = jk_matrix::<T>(&lower, &upper)?;
    let qk = generator_bin_unlabeled(g, pi, &upper)?.to_dense();
    let ql = generator_bin_unlabeled(g, pi, &lower)?.to_dense();
    let diff = &qk * &j - &j * &ql;
    let residual = diff.iter().fold(T::zero(), |a, b| a.max(b.abs()));
    let sv = j.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |a, b| a.max(*b));
    let rank = sv.iter().filter(|s| **s > smax * T::lit(1e-10)).count();
    Ok((residual, rank, lower.len()))
}

/// `f_psi(eta) = sum_x pi(x) psi(x) Dbar(x, eta)`.
pub fn f_psi_eval<T: Scalar>(psi: &TensorFunction<T>, eta: &[T], pi: &[T]) -> T {
    // pi(x) Dbar(x, eta) factorizes into prod_i (eta(x_i) - pi(x_i))
    let u: Vec<T> = eta.iter().zip(pi).map(|(e, p)| *e - *p).collect();
    let space = psi.space();
    let mut xs = vec![0; psi.k];
    compensated_sum((0..space.len()).map(|s| {
        space.decode_into(s, &mut xs);
        xs.iter().fold(psi.values[s], |acc, &x| acc * u[x])
    }))
}

/// Largest gap between both sides of the falling-factorial self-duality at
/// time `t`, evaluating each side with its own uniformized semigroup:
/// unlabeled Bin(l) on the left, labeled Bin(k) on the right.
pub fn selfduality_residual<T: Scalar>(
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
    k: usize,
    l: usize,
    t: f64,
    tol: f64,
) -> Result<T> {
    if l < k {
        return Err(Error::InvalidArgument(format!("self-duality needs l >= k, got l={l}, k={k}")));
    }
    let n = g.n();
    let omega = UnlabeledSpace::with_cap(n, l, crate::exact::DEFAULT_STATE_CAP)?;
    let tuples = LabeledSpace::new(n, k, crate::exact::DEFAULT_STATE_CAP)?;
    let q_l: RateMatrix<T> = generator_bin_unlabeled(g, pi, &omega)?;
    let q_k: RateMatrix<T> = generator_bin_labeled(g, pi, &tuples)?;
    let u = Uniformization::new(tol);
    let pi_s = pi.as_slice();
    let kernel = |xi: &[u32], xs: &[usize]| -> T {
        T::lit(falling_factorial(xi, xs) as f64) / xs.iter().fold(T::one(), |a, &x| a * pi_s[x])
    };
    // lhs[a][b] = E_{xi_b}[[xi_t]_{x_a}] / pi(x_a)
    let mut lhs = Vec::with_capacity(tuples.len());
    for a in 0..tuples.len() {
        let xs = tuples.decode(a);
        let gfun: Vec<T> = omega.iter().map(|zeta| kernel(zeta, &xs)).collect();
        lhs.push(u.function(&q_l, &gfun, t)?);
    }
    let mut worst = T::zero();
    for (b, xi) in omega.iter().enumerate() {
        let h: Vec<T> = (0..tuples.len()).map(|s| kernel(xi, &tuples.decode(s))).collect();
        let rhs = u.function(&q_k, &h, t)?;
        for a in 0..tuples.len() {
            worst = worst.max((lhs[a][b] - rhs[a]).abs());
        }
    }
    Ok(worst)
}
