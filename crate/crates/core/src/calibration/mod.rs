//! Item and population estimation from response data.
//!
//! Two modes: a Metropolis-within-Gibbs sampler ([`calibrate_mcmc`]) and an
//! oracle mode ([`calibrate_oracle`]) that perturbs known parameters with
//! seeded noise, which isolates linking behavior from estimation error.

mod mcmc;
mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ResponseMatrix, ThetaMatrix};
use crate::error::{Error, Result};
use crate::model::{Item, ModelFamily};

pub use mcmc::calibrate_mcmc;
pub use oracle::{calibrate_oracle, project_item};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationMode {
    OracleNoise,
    #[serde(rename = "MCMC")]
    Mcmc,
}

/// Named prior sets. `Default`: ln a ~ N(0, 0.5^2), d and thresholds
/// ~ N(0, 2^2), c ~ Beta(5, 17), factor correlation ~ U(-1, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PriorSet {
    #[default]
    Default,
}

impl PriorSet {
    pub(crate) fn log_slope_sd(self) -> f64 {
        0.5
    }
    pub(crate) fn location_sd(self) -> f64 {
        2.0
    }
    pub(crate) fn guessing_beta(self) -> (f64, f64) {
        (5.0, 17.0)
    }
}

/// Initial random-walk scales; adapted during burn-in, frozen afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalScales {
    pub theta: f64,
    pub item: f64,
    pub correlation: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            theta: 1.0,
            item: 0.1,
            correlation: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub mode: CalibrationMode,
    pub model_family: ModelFamily,
    pub chain_length: usize,
    pub burn_in: usize,
    pub proposal_scales: ProposalScales,
    pub prior_spec: PriorSet,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl CalibrationSpec {
    pub fn mcmc(model_family: ModelFamily, seed: u64) -> Self {
        CalibrationSpec {
            mode: CalibrationMode::Mcmc,
            model_family,
            chain_length: 2000,
            burn_in: 1000,
            proposal_scales: ProposalScales::default(),
            prior_spec: PriorSet::Default,
            seed,
            noise_sigma: 0.0,
        }
    }

    pub fn oracle(model_family: ModelFamily, noise_sigma: f64, seed: u64) -> Self {
        CalibrationSpec {
            mode: CalibrationMode::OracleNoise,
            noise_sigma,
            ..Self::mcmc(model_family, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.chain_length {
            return Err(Error::invalid(format!(
                "burn_in ({}) must be smaller than chain_length ({})",
                self.burn_in, self.chain_length
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be a nonnegative number"));
        }
        let s = self.proposal_scales;
        if [s.theta, s.item, s.correlation].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("proposal scales must be positive"));
        }
        Ok(())
    }
}

/// Ability distribution `N(mean, cov)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Population {
    pub fn standard(dim: usize) -> Self {
        Population {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    /// Standard bivariate normal with correlation `rho`.
    pub fn bivariate(rho: f64) -> Self {
        Population {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)] / (self.cov[(i, i)] * self.cov[(j, j)]).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub items: Vec<Item>,
    pub pop_mean: DVector<f64>,
    pub pop_cov: DMatrix<f64>,
    /// `(block, rate)`; item blocks are named `item:<id>`.
    pub acceptance_rates: Vec<(String, f64)>,
    pub seed_used: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn population(&self) -> Population {
        Population {
            mean: self.pop_mean.clone(),
            cov: self.pop_cov.clone(),
        }
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id() == id)
    }

    /// Item-bank CSV followed by the population block.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        crate::bank::write_items(&self.items, &mut w)?;
        crate::bank::write_population_block(&mut w, &self.pop_mean, &self.pop_cov)
    }
}

/// Sum over persons and items of `ln P(x_ij | theta_i)`; missing cells add 0.
/// `items` must be in the response matrix's column order.
pub fn log_likelihood(responses: &ResponseMatrix, items: &[Item], thetas: &ThetaMatrix) -> Result<f64> {
    check_alignment(responses, items)?;
    if thetas.n() != responses.n_persons() {
        return Err(Error::LengthMismatch {
            left: thetas.n(),
            right: responses.n_persons(),
        });
    }
    if let Some(bad) = items.iter().find(|i| i.dim() != thetas.dim()) {
        return Err(Error::DimensionMismatch {
            expected: thetas.dim(),
            found: bad.dim(),
        });
    }
    let mut total = 0.0;
    for p in 0..responses.n_persons() {
        let theta = thetas.row(p);
        for (j, item) in items.iter().enumerate() {
            if let Some(x) = responses.get(p, j) {
                total += item.log_prob_at(theta, x);
            }
        }
    }
    Ok(total)
}

pub(crate) fn check_alignment(responses: &ResponseMatrix, items: &[Item]) -> Result<()> {
    if responses.n_items() != items.len() {
        return Err(Error::LengthMismatch {
            left: responses.n_items(),
            right: items.len(),
        });
    }
    for (j, (id, item)) in responses.item_ids().iter().zip(items).enumerate() {
        if id != item.id() {
            return Err(Error::invalid(format!(
                "response column {j} is `{id}` but item {j} is `{}`",
                item.id()
            )));
        }
        for p in 0..responses.n_persons() {
            if let Some(x) = responses.get(p, j) {
                if x as usize > item.max_score() {
                    return Err(Error::ScoreOutOfRange {
                        item: id.clone(),
                        score: x as i64,
                        max: item.max_score(),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DichotomousItem, Format, PolytomousItem};
    use approx::assert_abs_diff_eq;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_cell() {
        let item: Item = DichotomousItem::from_uirt("i", 1.0, 0.0, 0.2).unwrap().into();
        let r = ResponseMatrix::from_rows(ids(&["i"]), &[vec![Some(1)]]).unwrap();
        let t = ThetaMatrix::new(1, vec![0.0]).unwrap();
        assert_abs_diff_eq!(log_likelihood(&r, &[item], &t).unwrap(), 0.6f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn all_missing_is_zero() {
        let item: Item = DichotomousItem::from_uirt("i", 1.0, 0.0, 0.2).unwrap().into();
        let r = ResponseMatrix::empty(ids(&["i"]), 3);
        let t = ThetaMatrix::zeros(3, 1);
        assert_eq!(log_likelihood(&r, &[item], &t).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_matches_cell_enumeration() {
        let items: Vec<Item> = vec![
            DichotomousItem::from_uirt("i", 1.3, -0.4, 0.15).unwrap().into(),
            PolytomousItem::new("c", Format::Cr, ModelFamily::Uirt, false, vec![0.8], vec![-0.5, 0.6])
                .unwrap()
                .into(),
        ];
        let r = ResponseMatrix::from_rows(ids(&["i", "c"]), &[vec![Some(1), Some(2)], vec![Some(0), Some(0)]])
            .unwrap();
        let thetas = [0.7, -1.2];
        let t = ThetaMatrix::new(1, thetas.to_vec()).unwrap();

        // Per-cell probabilities from the closed forms.
        let p3 = |th: f64| 0.15 + 0.85 / (1.0 + (-(1.3 * (th + 0.4))).exp());
        let gpc = |th: f64| {
            let z = 0.8 * th;
            let nums = [1.0, (z + 0.5).exp(), (2.0 * z + 0.5 - 0.6).exp()];
            let s: f64 = nums.iter().sum();
            nums.map(|n| n / s)
        };
        let expected = p3(0.7).ln() + gpc(0.7)[2].ln() + (1.0 - p3(-1.2)).ln() + gpc(-1.2)[0].ln();
        assert_abs_diff_eq!(log_likelihood(&r, &items, &t).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_score() {
        let item: Item = DichotomousItem::from_uirt("i", 1.0, 0.0, 0.2).unwrap().into();
        let r = ResponseMatrix::from_rows(ids(&["i"]), &[vec![Some(2)]]).unwrap();
        let t = ThetaMatrix::zeros(1, 1);
        assert!(matches!(
            log_likelihood(&r, &[item], &t),
            Err(Error::ScoreOutOfRange { score: 2, .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = CalibrationSpec::mcmc(ModelFamily::Uirt, 1);
        assert!(spec.validate().is_ok());
        spec.burn_in = spec.chain_length;
        assert!(spec.validate().is_err());
        let spec = CalibrationSpec::oracle(ModelFamily::Uirt, -0.1, 1);
        assert!(spec.validate().is_err());
    }
}
