use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Item, ThetaVector};

/// Coordinate change from the new-form metric to the base metric:
/// `theta_base = A * theta_new + B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Transform {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = b.len();
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(format!("transform dimension must be 1..=3, got {d}")));
        }
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a.nrows().max(a.ncols()),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform entries must be finite"));
        }
        Ok(Transform { a, b })
    }

    pub fn identity(dim: usize) -> Self {
        Transform {
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
        }
    }

    /// D = 1 transform from the Stocking-Lord scalars.
    pub fn scalar(a: f64, b: f64) -> Self {
        Transform {
            a: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, b),
        }
    }

    /// Row-major `A` entries followed by `B`.
    pub fn from_params(dim: usize, params: &[f64]) -> Result<Self> {
        if params.len() != dim * dim + dim {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: dim * dim + dim,
            });
        }
        Transform::new(
            DMatrix::from_row_slice(dim, dim, &params[..dim * dim]),
            DVector::from_row_slice(&params[dim * dim..]),
        )
    }

    pub fn to_params(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d + d);
        for r in 0..d {
            for c in 0..d {
                out.push(self.a[(r, c)]);
            }
        }
        out.extend(self.b.iter());
        out
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.b
    }

    /// 2-norm condition number of `A` (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let sv = self.a.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn inverse_matrix(&self) -> Result<DMatrix<f64>> {
        self.a
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularTransform)
    }

    /// The transform mapping base coordinates back onto the new-form metric.
    pub fn inverse(&self) -> Result<Transform> {
        let inv = self.inverse_matrix()?;
        let b = -(&inv * &self.b);
        Ok(Transform { a: inv, b })
    }

    /// Max absolute entry difference over `A` and `B`.
    pub fn max_abs_diff(&self, other: &Transform) -> f64 {
        self.to_params()
            .iter()
            .zip(other.to_params())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

pub fn transform_theta(theta: &ThetaVector, t: &Transform) -> Result<ThetaVector> {
    if theta.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            found: theta.dim(),
        });
    }
    let x = DVector::from_column_slice(theta.as_slice());
    let y = &t.a * x + &t.b;
    ThetaVector::new(y.iter().copied().collect())
}

/// Re-expresses an item on the base metric so that
/// `P(item, theta) == P(transform_item(item), A theta + B)`:
/// slopes `a* = a A^-1`, shift `s = a A^-1 B`, `d* = d - s`, `delta* = delta + s`.
pub fn transform_item(item: &Item, t: &Transform) -> Result<Item> {
    let inv = t.inverse_matrix()?;
    transform_item_with_inverse(item, &inv, &t.b)
}

pub(crate) fn transform_item_with_inverse(
    item: &Item,
    inv: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<Item> {
    let d = b.len();
    if item.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: item.dim(),
        });
    }
    let a = item.a();
    let mut a_star = vec![0.0; d];
    for (col, slot) in a_star.iter_mut().enumerate() {
        *slot = (0..d).map(|k| a[k] * inv[(k, col)]).sum();
    }
    let shift: f64 = a_star.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Ok(match item {
        Item::Dichotomous(i) => i.with_params_unchecked(a_star, i.d() - shift, i.c()).into(),
        Item::Polytomous(i) => {
            let deltas = i.deltas().iter().map(|v| v + shift).collect();
            i.with_params_unchecked(a_star, deltas).into()
        }
    })
}

/// `mu* = A mu + B`, `Sigma* = A Sigma A^T`.
pub fn transform_population(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    t: &Transform,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = t.dim();
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mu.len(),
        });
    }
    let scale = sigma.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for r in 0..d {
        for c in 0..r {
            if (sigma[(r, c)] - sigma[(c, r)]).abs() > 1e-12 * scale {
                return Err(Error::invalid("covariance matrix is not symmetric"));
            }
        }
    }
    let mu_star = &t.a * mu + &t.b;
    let mut sigma_star = &t.a * sigma * t.a.transpose();
    // Symmetrize away rounding in the triple product.
    for r in 0..d {
        for c in 0..r {
            let avg = 0.5 * (sigma_star[(r, c)] + sigma_star[(c, r)]);
            sigma_star[(r, c)] = avg;
            sigma_star[(c, r)] = avg;
        }
    }
    Ok((mu_star, sigma_star))
}
