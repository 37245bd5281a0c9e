//! Averaging states, the pooled edge update and transport norms.

use crate::error::{Error, Result};
use crate::graphs::{sum_tolerance, SiteWeights, WeightedGraph};
use crate::scalar::{compensated_sum, Scalar};

/// Probability vector over the vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint<T> {
    eta: Vec<T>,
    // rounding error accumulated by in-place updates since the last rescale
    drift: T,
    renormalizations: u64,
}

impl<T: Scalar> SimplexPoint<T> {
    pub fn new(eta: Vec<T>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::InvalidWeights("empty simplex point".into()));
        }
        if let Some(v) = eta.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidWeights(format!("entry {v} is negative")));
        }
        let sum = compensated_sum(eta.iter().copied());
        if (sum - T::one()).abs() > sum_tolerance::<T>(eta.len()) {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}, not 1")));
        }
        Ok(SimplexPoint { eta, drift: T::zero(), renormalizations: 0 })
    }

    pub fn dirac(n: usize, x: usize) -> Result<Self> {
        if x >= n {
            return Err(Error::InvalidArgument(format!("vertex {x} out of range for n={n}")));
        }
        let mut eta = vec![T::zero(); n];
        eta[x] = T::one();
        Self::new(eta)
    }

    pub fn from_weights(pi: &SiteWeights<T>) -> Self {
        SimplexPoint { eta: pi.as_slice().to_vec(), drift: T::zero(), renormalizations: 0 }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// How often in-place updates had to rescale the vector.
    pub fn renormalizations(&self) -> u64 {
        self.renormalizations
    }

    /// `eta / pi`.
    pub fn density(&self, pi: &SiteWeights<T>) -> Vec<T> {
        self.eta.iter().zip(pi.as_slice()).map(|(e, p)| *e / *p).collect()
    }

    /// Applies the `xy` update in place.
    pub fn update(&mut self, x: usize, y: usize, pi: &SiteWeights<T>) -> Result<()> {
        if x == y {
            return Err(Error::InvalidArgument(format!("edge update needs x != y, got {x}")));
        }
        if x >= self.eta.len() || y >= self.eta.len() || pi.len() != self.eta.len() {
            return Err(Error::DimensionMismatch { expected: self.eta.len(), got: x.max(y) + 1 });
        }
        self.update_unchecked(x, y, pi);
        Ok(())
    }

    pub(crate) fn update_unchecked(&mut self, x: usize, y: usize, pi: &SiteWeights<T>) {
        let pooled = self.eta[x] + self.eta[y];
        let s = pi[x] + pi[y];
        let (a, b) = (pooled * (pi[x] / s), pooled * (pi[y] / s));
        self.drift += (a + b) - pooled;
        self.eta[x] = a;
        self.eta[y] = b;
        if self.drift.abs() > T::lit(1e-12) {
            let sum = compensated_sum(self.eta.iter().copied());
            self.eta.iter_mut().for_each(|v| *v /= sum);
            self.drift = T::zero();
            self.renormalizations += 1;
        }
    }
}

/// `eta^{xy}`: the mass on `{x, y}` pooled and split proportionally to `pi`.
pub fn edge_update<T: Scalar>(eta: &SimplexPoint<T>, x: usize, y: usize, pi: &SiteWeights<T>) -> Result<SimplexPoint<T>> {
    let mut out = eta.clone();
    out.update(x, y, pi)?;
    Ok(out)
}

/// `sum_xy c_xy (f(eta^{xy}) - f(eta))`.
pub fn avg_generator_apply<T: Scalar>(
    f: impl Fn(&SimplexPoint<T>) -> T,
    eta: &SimplexPoint<T>,
    g: &WeightedGraph<T>,
    pi: &SiteWeights<T>,
) -> Result<T> {
    let base = f(eta);
    let mut terms = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        terms.push(e.c * (f(&edge_update(eta, e.x, e.y, pi)?) - base));
    }
    Ok(compensated_sum(terms))
}

/// `||eta/pi - 1||_2^2` in `L^2(pi)`.
pub fn l2_sq<T: Scalar>(eta: &SimplexPoint<T>, pi: &SiteWeights<T>) -> T {
    compensated_sum(eta.as_slice().iter().zip(pi.as_slice()).map(|(e, p)| *p * (*e / *p - T::one()).powi(2)))
}

/// Change of `||eta/pi - 1||_2^2` caused by the `xy` update.
pub fn l2_drop<T: Scalar>(eta: &SimplexPoint<T>, x: usize, y: usize, pi: &SiteWeights<T>) -> T {
    let (px, py) = (pi[x], pi[y]);
    let d = eta.as_slice()[x] / px - eta.as_slice()[y] / py;
    -(px * py / (px + py)) * d * d
}

/// `||eta/pi - 1||_p` in `L^p(pi)`; `p = f64::INFINITY` gives the max norm.
pub fn transport_norm<T: Scalar>(eta: &SimplexPoint<T>, pi: &SiteWeights<T>, p: f64) -> Result<T> {
    lp_norm_centered(&eta.density(pi), pi.as_slice(), p)
}

/// `||f - 1||_p` in `L^p(mu)`.
pub fn lp_norm_centered<T: Scalar>(f: &[T], mu: &[T], p: f64) -> Result<T> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} is below 1")));
    }
    if f.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: f.len() });
    }
    let dev = f.iter().map(|v| (*v - T::one()).abs());
    if p.is_infinite() {
        return Ok(dev.fold(T::zero(), |a, b| a.max(b)));
    }
    let s = compensated_sum(dev.zip(mu).map(|(d, m)| *m * d.powf(T::lit(p))));
    Ok(s.powf(T::lit(1.0 / p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::uniform_weights;

    #[test]
    fn edge_update_examples() {
        let u = uniform_weights::<f64>(2).unwrap();
        let e = SimplexPoint::dirac(2, 0).unwrap();
        assert_eq!(edge_update(&e, 0, 1, &u).unwrap().as_slice(), &[0.5, 0.5]);
        let pi = SiteWeights::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let out = edge_update(&e, 0, 1, &pi).unwrap();
        assert!((out.as_slice()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out.as_slice()[1] - 2.0 / 3.0).abs() < 1e-15);
        let fixed = edge_update(&SimplexPoint::from_weights(&pi), 1, 0, &pi).unwrap();
        for (a, b) in fixed.as_slice().iter().zip(pi.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(edge_update(&e, 1, 1, &u).is_err());
    }

    #[test]
    fn l2_drop_examples() {
        let u = uniform_weights::<f64>(2).unwrap();
        let e = SimplexPoint::dirac(2, 0).unwrap();
        assert_eq!(l2_sq(&e, &u), 1.0);
        assert_eq!(l2_drop(&e, 0, 1, &u), -1.0);
        assert_eq!(l2_drop(&SimplexPoint::from_weights(&u), 0, 1, &u), 0.0);
        let pi = SiteWeights::new(vec![0.2, 0.4, 0.4]).unwrap();
        let bal = SimplexPoint::new(vec![0.1, 0.2, 0.7]).unwrap();
        assert_eq!(l2_drop(&bal, 0, 1, &pi), 0.0);
    }

    #[test]
    fn transport_norm_examples() {
        let u = uniform_weights::<f64>(2).unwrap();
        let e = SimplexPoint::dirac(2, 0).unwrap();
        assert!((transport_norm(&e, &u, 2.0).unwrap() - 1.0).abs() < 1e-15);
        for p in [1.0, 1.5, 2.0, f64::INFINITY] {
            assert_eq!(transport_norm(&SimplexPoint::from_weights(&u), &u, p).unwrap(), 0.0);
        }
        assert!(transport_norm(&e, &u, 0.5).is_err());
        let pi = SiteWeights::<f64>::new(vec![0.2, 0.3, 0.5]).unwrap();
        let eta = SimplexPoint::new(vec![0.6, 0.1, 0.3]).unwrap();
        // direct evaluation: |eta/pi - 1| = (2, 2/3, 0.4)
        let inf = transport_norm(&eta, &pi, f64::INFINITY).unwrap();
        assert!((inf - 2.0).abs() < 1e-15);
        let one = transport_norm(&eta, &pi, 1.0).unwrap();
        assert!((one - (0.4 + 0.2 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn generator_constant_is_zero() {
        let g = crate::graphs::build_graph::<f64>(&crate::graphs::GraphKind::Cycle(4), &crate::graphs::Conductance::Uniform(1.0)).unwrap();
        let pi = uniform_weights(4).unwrap();
        let eta = SimplexPoint::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(avg_generator_apply(|_| 3.0, &eta, &g, &pi).unwrap(), 0.0);
    }

    #[test]
    fn rejects_invalid_points() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexPoint::<f64>::dirac(2, 2).is_err());
    }
}
