use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Seed for the shifted Halton rule used when D >= 2.
pub const DEFAULT_GRID_SEED: u64 = 0x5eed_2018;
pub const UNIDIMENSIONAL_POINTS: usize = 41;
pub const MULTIDIMENSIONAL_POINTS: usize = 2000;

/// Integration points over the ability distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    dim: usize,
    /// Row-major `len x dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("quadrature grid needs at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: weights.len(),
            });
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("quadrature weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("quadrature weights sum to {total}, not 1")));
        }
        Ok(QuadratureGrid {
            dim,
            points: points.into_iter().flatten().collect(),
            weights,
        })
    }

    /// Equally spaced points on `[-4, 4]` weighted by the renormalized
    /// standard normal density.
    pub fn normal_1d(n_points: usize) -> Self {
        assert!(n_points >= 2);
        let step = 8.0 / (n_points - 1) as f64;
        let points: Vec<f64> = (0..n_points).map(|i| -4.0 + step * i as f64).collect();
        let dens: Vec<f64> = points.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = dens.iter().sum();
        QuadratureGrid {
            dim: 1,
            points,
            weights: dens.into_iter().map(|w| w / total).collect(),
        }
    }

    /// Equal-weight quasi-random draws from `N(0, I_dim)`: a Halton sequence
    /// with a seeded Cranley-Patterson shift pushed through the normal quantile.
    pub fn quasi_normal(dim: usize, n_points: usize, seed: u64) -> Self {
        const PRIMES: [u64; 3] = [2, 3, 5];
        assert!((1..=PRIMES.len()).contains(&dim) && n_points >= 1);
        let normal = Normal::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut points = Vec::with_capacity(n_points * dim);
        for i in 1..=n_points as u64 {
            for (k, shift) in shifts.iter().enumerate() {
                let u = (radical_inverse(i, PRIMES[k]) + shift).fract();
                // Keep the quantile finite at the (measure-zero) endpoints.
                let u = u.clamp(1e-12, 1.0 - 1e-12);
                points.push(normal.inverse_cdf(u));
            }
        }
        QuadratureGrid {
            dim,
            points,
            weights: vec![1.0 / n_points as f64; n_points],
        }
    }

    /// The default rule for a dimensionality.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Self::normal_1d(UNIDIMENSIONAL_POINTS)
        } else {
            Self::quasi_normal(dim, MULTIDIMENSIONAL_POINTS, DEFAULT_GRID_SEED)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_rule() {
        let g = QuadratureGrid::normal_1d(41);
        assert_eq!(g.len(), 41);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.point(0), &[-4.0]);
        assert_eq!(g.point(40), &[4.0]);
        let mean: f64 = g.iter().map(|(p, w)| p[0] * w).sum();
        let var: f64 = g.iter().map(|(p, w)| p[0] * p[0] * w).sum();
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn quasi_normal_moments() {
        let g = QuadratureGrid::quasi_normal(3, 2000, DEFAULT_GRID_SEED);
        assert_eq!(g.len(), 2000);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for k in 0..3 {
            let mean: f64 = g.iter().map(|(p, w)| p[k] * w).sum();
            let var: f64 = g.iter().map(|(p, w)| p[k] * p[k] * w).sum();
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
        assert_eq!(g, QuadratureGrid::quasi_normal(3, 2000, DEFAULT_GRID_SEED));
    }

    #[test]
    fn validation() {
        assert!(QuadratureGrid::new(1, vec![], vec![]).is_err());
        assert!(QuadratureGrid::new(1, vec![vec![0.0]], vec![0.5]).is_err());
        assert!(QuadratureGrid::new(1, vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(QuadratureGrid::new(2, vec![vec![0.0]], vec![1.0]).is_err());
        assert!(QuadratureGrid::new(1, vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).is_ok());
    }
}
