//! Metropolis-within-Gibbs sampler.
//!
//! Blocks per iteration, in order: one random-walk proposal per examinee,
//! a per-dimension standardization of the ability draws (absorbed into the
//! item parameters so the likelihood is unchanged), one joint proposal per
//! item, and, for simple structure, one Fisher-z proposal for the factor
//! correlation. Proposal scales adapt in batches of 50 iterations during
//! burn-in toward 30-45% acceptance; item proposals additionally take the
//! shape of each item's burn-in posterior covariance. Everything is frozen
//! after burn-in.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_alignment, CalibrationMode, CalibrationResult, CalibrationSpec, PriorSet};
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::model::{log_logistic, logistic, DichotomousItem, Item, ModelFamily, PolytomousItem, TestForm};

const ADAPT_BATCH: usize = 50;
const CACHE_REFRESH: usize = 50;
const TARGET_LOW: f64 = 0.30;
const TARGET_HIGH: f64 = 0.45;
/// Relative proposal width of logit(c) versus slopes and locations.
const GUESSING_STEP: f64 = 4.0;
/// Burn-in draws needed before the proposal takes the sample covariance.
const MIN_MOMENT_SAMPLES: usize = 100;

struct ItemState {
    template: Item,
    loaded: &'static [usize],
    /// `[ln a (loaded dims) | d or thresholds | logit c (dichotomous only)]`
    params: Vec<f64>,
    n_loc: usize,
    dichotomous: bool,
    scale: f64,
    accepted: usize,
    proposed: usize,
    /// Burn-in moments of the sampled parameters, for the proposal covariance.
    moment_n: usize,
    moment_sum: Vec<f64>,
    moment_outer: Vec<f64>,
    /// Cholesky factor of the scaled proposal covariance once estimated.
    chol: Option<DMatrix<f64>>,
}

impl ItemState {
    fn n_slopes(&self) -> usize {
        self.loaded.len()
    }

    fn build(&self, params: &[f64], dim: usize) -> Item {
        let mut a = vec![0.0; dim];
        for (slot, &k) in self.loaded.iter().enumerate() {
            a[k] = params[slot].exp();
        }
        let loc = &params[self.n_slopes()..self.n_slopes() + self.n_loc];
        match &self.template {
            Item::Dichotomous(t) => t.with_params_unchecked(a, loc[0], logistic(params[params.len() - 1])).into(),
            Item::Polytomous(t) => t.with_params_unchecked(a, loc.to_vec()).into(),
        }
    }

    fn log_prior(&self, params: &[f64], prior: PriorSet) -> f64 {
        let ns = self.n_slopes();
        let sa = prior.log_slope_sd();
        let sl = prior.location_sd();
        let mut lp: f64 = params[..ns].iter().map(|v| -0.5 * (v / sa).powi(2)).sum();
        lp += params[ns..ns + self.n_loc]
            .iter()
            .map(|v| -0.5 * (v / sl).powi(2))
            .sum::<f64>();
        if self.dichotomous {
            // Beta(alpha, beta) on c, carried to logit(c) with its Jacobian.
            let (alpha, beta) = prior.guessing_beta();
            let l = params[params.len() - 1];
            lp += alpha * log_logistic(l) + beta * log_logistic(-l);
        }
        lp
    }

    fn step_width(&self, k: usize) -> f64 {
        if self.dichotomous && k == self.params.len() - 1 {
            GUESSING_STEP
        } else {
            1.0
        }
    }

    fn propose(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.params.len()).map(|_| rng.sample(StandardNormal)).collect();
        match &self.chol {
            Some(l) => {
                let step = l * DVector::from_column_slice(&z);
                self.params.iter().zip(step.iter()).map(|(v, s)| v + self.scale * s).collect()
            }
            None => self
                .params
                .iter()
                .zip(&z)
                .enumerate()
                .map(|(k, (v, z))| v + self.scale * self.step_width(k) * z)
                .collect(),
        }
    }

    fn record_moments(&mut self) {
        let p = self.params.len();
        self.moment_n += 1;
        for r in 0..p {
            self.moment_sum[r] += self.params[r];
            for c in 0..p {
                self.moment_outer[r * p + c] += self.params[r] * self.params[c];
            }
        }
    }

    /// Switches to (or refreshes) a proposal shaped like the burn-in
    /// covariance, scaled by `2.38^2 / p`.
    fn refresh_proposal(&mut self) {
        if self.moment_n < MIN_MOMENT_SAMPLES {
            return;
        }
        let p = self.params.len();
        let n = self.moment_n as f64;
        let mut cov = DMatrix::zeros(p, p);
        for r in 0..p {
            for c in 0..p {
                let m = self.moment_outer[r * p + c] / n - self.moment_sum[r] * self.moment_sum[c] / (n * n);
                cov[(r, c)] = m * 2.38 * 2.38 / p as f64;
            }
            cov[(r, r)] += 1e-8;
        }
        if let Some(chol) = cov.cholesky() {
            if self.chol.is_none() {
                self.scale = 1.0;
            }
            self.chol = Some(chol.l());
        }
    }
}

struct Chain<'a> {
    responses: &'a ResponseMatrix,
    family: ModelFamily,
    dim: usize,
    n: usize,
    j: usize,
    prior: PriorSet,
    theta: Vec<f64>,
    items: Vec<ItemState>,
    current: Vec<Item>,
    /// `ln P(x_ij)` per cell, 0 where missing.
    cell: Vec<f64>,
    rho: f64,
    theta_scale: f64,
    rho_scale: f64,
    theta_acc: (usize, usize),
    rho_acc: (usize, usize),
    rng: ChaCha8Rng,
}

pub fn calibrate_mcmc(
    responses: &ResponseMatrix,
    skeleton: &TestForm,
    spec: &CalibrationSpec,
) -> Result<CalibrationResult> {
    spec.validate()?;
    if spec.mode != CalibrationMode::Mcmc {
        return Err(Error::invalid("calibrate_mcmc requires MCMC mode"));
    }
    let ids: Vec<String> = skeleton.items().iter().map(|i| i.id().to_string()).collect();
    let aligned;
    let responses = if responses.item_ids() == ids.as_slice() {
        responses
    } else {
        aligned = responses.select(&ids)?;
        &aligned
    };
    check_alignment(responses, skeleton.items())?;
    if responses.n_persons() < 2 {
        return Err(Error::invalid("calibration needs at least two examinees"));
    }

    let mut chain = Chain::init(responses, skeleton, spec)?;
    let kept = spec.chain_length - spec.burn_in;
    let mut sum_params: Vec<Vec<f64>> = chain
        .current
        .iter()
        .map(|i| vec![0.0; accum_len(i)])
        .collect();
    let mut sum_rho = 0.0;

    for iter in 0..spec.chain_length {
        if iter == spec.burn_in {
            chain.reset_counters();
        }
        chain.update_persons();
        chain.standardize()?;
        if iter % CACHE_REFRESH == CACHE_REFRESH - 1 {
            chain.refresh_cache();
        }
        chain.update_items();
        if chain.family == ModelFamily::SimpleStructure {
            chain.update_correlation();
        }
        chain.check_finite()?;
        if iter < spec.burn_in && iter >= spec.burn_in / 4 {
            chain.items.iter_mut().for_each(ItemState::record_moments);
        }
        if iter < spec.burn_in && (iter + 1) % ADAPT_BATCH == 0 {
            chain.adapt();
            chain.reset_counters();
        }
        if iter >= spec.burn_in {
            for (acc, item) in sum_params.iter_mut().zip(&chain.current) {
                accumulate(acc, item);
            }
            sum_rho += chain.rho;
        }
    }

    chain.finish(sum_params, sum_rho, kept, spec.seed)
}

fn accum_len(item: &Item) -> usize {
    match item {
        Item::Dichotomous(i) => i.a().len() + 2,
        Item::Polytomous(i) => i.a().len() + i.deltas().len(),
    }
}

fn accumulate(acc: &mut [f64], item: &Item) {
    let d = item.dim();
    for (s, a) in acc.iter_mut().zip(item.a()) {
        *s += a;
    }
    match item {
        Item::Dichotomous(i) => {
            acc[d] += i.d();
            acc[d + 1] += i.c();
        }
        Item::Polytomous(i) => {
            for (s, v) in acc[d..].iter_mut().zip(i.deltas()) {
                *s += v;
            }
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl<'a> Chain<'a> {
    fn init(responses: &'a ResponseMatrix, skeleton: &TestForm, spec: &CalibrationSpec) -> Result<Self> {
        let family = spec.model_family;
        let dim = family.dim();
        let n = responses.n_persons();
        let j = responses.n_items();

        // Abilities start at standardized proportion scores per factor.
        let mut theta = vec![0.0; n * dim];
        let score_dims: Vec<usize> = match family {
            ModelFamily::Uirt | ModelFamily::Bifactor => vec![0],
            ModelFamily::SimpleStructure => vec![0, 1],
        };
        for &k in &score_dims {
            let mut raw = vec![0.0; n];
            for (p, slot) in raw.iter_mut().enumerate() {
                let (mut got, mut max) = (0.0, 0.0);
                for (col, item) in skeleton.items().iter().enumerate() {
                    let off_dim = family == ModelFamily::SimpleStructure
                        && family.loaded_dims(item.format())[0] != k;
                    if off_dim {
                        continue;
                    }
                    if let Some(x) = responses.get(p, col) {
                        got += x as f64;
                        max += item.max_score() as f64;
                    }
                }
                *slot = if max > 0.0 { got / max } else { f64::NAN };
            }
            let valid: Vec<f64> = raw.iter().copied().filter(|v| v.is_finite()).collect();
            let mean = valid.iter().sum::<f64>() / valid.len().max(1) as f64;
            let sd = (valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / valid.len().max(1) as f64).sqrt();
            for p in 0..n {
                theta[p * dim + k] = if raw[p].is_finite() && sd > 0.0 {
                    (raw[p] - mean) / sd
                } else {
                    0.0
                };
            }
        }

        let mut items = Vec::with_capacity(j);
        for (col, item) in skeleton.items().iter().enumerate() {
            let loaded = family.loaded_dims(item.format());
            let k = item.n_categories();
            let mut counts = vec![0.5f64; k];
            for p in 0..n {
                if let Some(x) = responses.get(p, col) {
                    counts[x as usize] += 1.0;
                }
            }
            let mut params: Vec<f64> = loaded
                .iter()
                .enumerate()
                .map(|(slot, _)| if slot == 0 { 0.0 } else { 0.5f64.ln() })
                .collect();
            let dichotomous = matches!(item, Item::Dichotomous(_));
            let template: Item = if dichotomous {
                let c0 = 0.2;
                let p = counts[1] / (counts[0] + counts[1]);
                let p_star = ((p - c0) / (1.0 - c0)).clamp(0.05, 0.95);
                params.push(1.3 * logit(p_star));
                params.push(logit(c0));
                DichotomousItem::new(item.id(), item.format(), family, item.anchor(), unit_slopes(dim, loaded), 0.0, c0)?
                    .into()
            } else {
                for v in 1..k {
                    params.push((counts[v - 1] / counts[v]).ln());
                }
                PolytomousItem::new(
                    item.id(),
                    item.format(),
                    family,
                    item.anchor(),
                    unit_slopes(dim, loaded),
                    vec![0.0; k - 1],
                )?
                .into()
            };
            let n_params = params.len();
            items.push(ItemState {
                template,
                loaded,
                n_loc: if dichotomous { 1 } else { k - 1 },
                params,
                dichotomous,
                scale: spec.proposal_scales.item,
                accepted: 0,
                proposed: 0,
                moment_n: 0,
                moment_sum: vec![0.0; n_params],
                moment_outer: vec![0.0; n_params * n_params],
                chol: None,
            });
        }
        let current: Vec<Item> = items.iter().map(|s| s.build(&s.params, dim)).collect();

        let rho = if family == ModelFamily::SimpleStructure {
            let (mut s01, mut s00, mut s11) = (0.0, 0.0, 0.0);
            for p in 0..n {
                let (x, y) = (theta[p * 2], theta[p * 2 + 1]);
                s01 += x * y;
                s00 += x * x;
                s11 += y * y;
            }
            let r = s01 / (s00 * s11).sqrt();
            if r.is_finite() {
                r.clamp(-0.9, 0.9)
            } else {
                0.0
            }
        } else {
            0.0
        };

        let mut chain = Chain {
            responses,
            family,
            dim,
            n,
            j,
            prior: spec.prior_spec,
            theta,
            items,
            current,
            cell: vec![0.0; n * j],
            rho,
            theta_scale: spec.proposal_scales.theta,
            rho_scale: spec.proposal_scales.correlation,
            theta_acc: (0, 0),
            rho_acc: (0, 0),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        };
        chain.refresh_cache();
        if chain.cell.iter().any(|v| !v.is_finite()) {
            return Err(Error::ChainDivergence { block: "init".into() });
        }
        Ok(chain)
    }

    fn refresh_cache(&mut self) {
        for p in 0..self.n {
            let theta = &self.theta[p * self.dim..(p + 1) * self.dim];
            for (col, item) in self.current.iter().enumerate() {
                self.cell[p * self.j + col] = match self.responses.get(p, col) {
                    Some(x) => item.log_prob_at(theta, x),
                    None => 0.0,
                };
            }
        }
    }

    /// `-1/2 theta' R^-1 theta` for the current latent correlation structure.
    fn theta_log_prior(&self, t: &[f64]) -> f64 {
        if self.family == ModelFamily::SimpleStructure {
            let r = self.rho;
            -0.5 * (t[0] * t[0] - 2.0 * r * t[0] * t[1] + t[1] * t[1]) / (1.0 - r * r)
        } else {
            -0.5 * t.iter().map(|v| v * v).sum::<f64>()
        }
    }

    fn update_persons(&mut self) {
        let dim = self.dim;
        let mut proposal = vec![0.0; dim];
        let mut row = vec![0.0; self.j];
        for p in 0..self.n {
            let cur = &self.theta[p * dim..(p + 1) * dim];
            for (slot, c) in proposal.iter_mut().zip(cur) {
                let z: f64 = self.rng.sample(StandardNormal);
                *slot = c + self.theta_scale * z;
            }
            let mut ll_new = 0.0;
            let mut ll_old = 0.0;
            for (col, item) in self.current.iter().enumerate() {
                if let Some(x) = self.responses.get(p, col) {
                    let v = item.log_prob_at(&proposal, x);
                    row[col] = v;
                    ll_new += v;
                    ll_old += self.cell[p * self.j + col];
                } else {
                    row[col] = 0.0;
                }
            }
            let log_ratio = ll_new + self.theta_log_prior(&proposal) - ll_old - self.theta_log_prior(cur);
            self.theta_acc.1 += 1;
            let u: f64 = self.rng.random();
            if u.ln() < log_ratio {
                self.theta[p * dim..(p + 1) * dim].copy_from_slice(&proposal);
                self.cell[p * self.j..(p + 1) * self.j].copy_from_slice(&row);
                self.theta_acc.0 += 1;
            }
        }
    }

    /// Rescales every ability dimension to mean 0 / variance 1 and moves the
    /// compensating affine change into the item parameters.
    fn standardize(&mut self) -> Result<()> {
        let dim = self.dim;
        let n = self.n as f64;
        let mut mean = vec![0.0; dim];
        let mut sd = vec![0.0; dim];
        for k in 0..dim {
            mean[k] = (0..self.n).map(|p| self.theta[p * dim + k]).sum::<f64>() / n;
            let var = (0..self.n)
                .map(|p| (self.theta[p * dim + k] - mean[k]).powi(2))
                .sum::<f64>()
                / n;
            sd[k] = var.sqrt();
            if !(sd[k] > 0.0 && sd[k].is_finite()) {
                return Err(Error::ChainDivergence { block: "theta".into() });
            }
        }
        for p in 0..self.n {
            for k in 0..dim {
                let v = &mut self.theta[p * dim + k];
                *v = (*v - mean[k]) / sd[k];
            }
        }
        for (state, item) in self.items.iter_mut().zip(self.current.iter_mut()) {
            let shift: f64 = item.a().iter().zip(&mean).map(|(a, m)| a * m).sum();
            let ns = state.n_slopes();
            for (slot, &k) in state.loaded.iter().enumerate() {
                state.params[slot] += sd[k].ln();
            }
            let sign = if state.dichotomous { 1.0 } else { -1.0 };
            for v in &mut state.params[ns..ns + state.n_loc] {
                *v += sign * shift;
            }
            *item = state.build(&state.params, dim);
        }
        Ok(())
    }

    fn update_items(&mut self) {
        let mut column = vec![0.0; self.n];
        for col in 0..self.j {
            let state = &self.items[col];
            let proposal = state.propose(&mut self.rng);
            let candidate = state.build(&proposal, self.dim);
            let mut ll_new = 0.0;
            let mut ll_old = 0.0;
            for (p, slot) in column.iter_mut().enumerate() {
                if let Some(x) = self.responses.get(p, col) {
                    let v = candidate.log_prob_at(&self.theta[p * self.dim..(p + 1) * self.dim], x);
                    *slot = v;
                    ll_new += v;
                    ll_old += self.cell[p * self.j + col];
                } else {
                    *slot = 0.0;
                }
            }
            let log_ratio =
                ll_new + state.log_prior(&proposal, self.prior) - ll_old - state.log_prior(&state.params, self.prior);
            let u: f64 = self.rng.random();
            let state = &mut self.items[col];
            state.proposed += 1;
            if u.ln() < log_ratio {
                state.params = proposal;
                state.accepted += 1;
                self.current[col] = candidate;
                for (p, v) in column.iter().enumerate() {
                    self.cell[p * self.j + col] = *v;
                }
            }
        }
    }

    fn update_correlation(&mut self) {
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for p in 0..self.n {
            let (x, y) = (self.theta[p * 2], self.theta[p * 2 + 1]);
            s00 += x * x;
            s11 += y * y;
            s01 += x * y;
        }
        let n = self.n as f64;
        // Bivariate normal log density summed over examinees, plus the
        // Jacobian of r = tanh(z) under a uniform prior on r.
        let target = |r: f64| {
            let q = 1.0 - r * r;
            -0.5 * n * q.ln() - (s00 - 2.0 * r * s01 + s11) / (2.0 * q) + q.ln()
        };
        let z = self.rho.atanh();
        let step: f64 = self.rng.sample(StandardNormal);
        let proposal = (z + self.rho_scale * step).tanh();
        let u: f64 = self.rng.random();
        self.rho_acc.1 += 1;
        if proposal.abs() < 1.0 && u.ln() < target(proposal) - target(self.rho) {
            self.rho = proposal;
            self.rho_acc.0 += 1;
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::ChainDivergence { block: "theta".into() });
        }
        for s in &self.items {
            if s.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::ChainDivergence {
                    block: format!("item:{}", s.template.id()),
                });
            }
        }
        if !self.rho.is_finite() {
            return Err(Error::ChainDivergence { block: "correlation".into() });
        }
        Ok(())
    }

    fn adapt(&mut self) {
        fn tune(scale: &mut f64, (acc, tot): (usize, usize)) {
            if tot == 0 {
                return;
            }
            let rate = acc as f64 / tot as f64;
            if rate < TARGET_LOW {
                *scale *= 0.75;
            } else if rate > TARGET_HIGH {
                *scale *= 1.3;
            }
        }
        tune(&mut self.theta_scale, self.theta_acc);
        tune(&mut self.rho_scale, self.rho_acc);
        for s in &mut self.items {
            let counts = (s.accepted, s.proposed);
            tune(&mut s.scale, counts);
            s.refresh_proposal();
        }
    }

    fn reset_counters(&mut self) {
        self.theta_acc = (0, 0);
        self.rho_acc = (0, 0);
        for s in &mut self.items {
            s.accepted = 0;
            s.proposed = 0;
        }
    }

    fn finish(self, sums: Vec<Vec<f64>>, sum_rho: f64, kept: usize, seed: u64) -> Result<CalibrationResult> {
        let k = kept as f64;
        let dim = self.dim;
        let mut items = Vec::with_capacity(self.j);
        for (state, sum) in self.items.iter().zip(&sums) {
            let mut a: Vec<f64> = sum[..dim].iter().map(|v| v / k).collect();
            // Entries off the loading pattern were never sampled.
            for (d, slot) in a.iter_mut().enumerate() {
                if !state.loaded.contains(&d) {
                    *slot = 0.0;
                }
            }
            let t = &state.template;
            let item: Item = match t {
                Item::Dichotomous(t) => {
                    DichotomousItem::new(t.id(), t.format(), self.family, t.anchor(), a, sum[dim] / k, sum[dim + 1] / k)?
                        .into()
                }
                Item::Polytomous(t) => PolytomousItem::new(
                    t.id(),
                    t.format(),
                    self.family,
                    t.anchor(),
                    a,
                    sum[dim..].iter().map(|v| v / k).collect(),
                )?
                .into(),
            };
            items.push(item);
        }

        let rate = |(acc, tot): (usize, usize)| if tot == 0 { 0.0 } else { acc as f64 / tot as f64 };
        let mut acceptance_rates = vec![("theta".to_string(), rate(self.theta_acc))];
        for s in &self.items {
            acceptance_rates.push((format!("item:{}", s.template.id()), rate((s.accepted, s.proposed))));
        }
        if self.family == ModelFamily::SimpleStructure {
            acceptance_rates.push(("correlation".to_string(), rate(self.rho_acc)));
        }
        let warnings: Vec<String> = acceptance_rates
            .iter()
            .filter(|(_, r)| !(0.05..=0.95).contains(r))
            .map(|(block, r)| format!("acceptance rate {r:.3} for block `{block}` outside [0.05, 0.95]"))
            .collect();
        for w in &warnings {
            log::warn!("{w}");
        }

        let mut pop_cov = DMatrix::identity(dim, dim);
        if self.family == ModelFamily::SimpleStructure {
            let r = sum_rho / k;
            pop_cov[(0, 1)] = r;
            pop_cov[(1, 0)] = r;
        }
        Ok(CalibrationResult {
            items,
            pop_mean: DVector::zeros(dim),
            pop_cov,
            acceptance_rates,
            seed_used: seed,
            warnings,
        })
    }

    #[cfg(test)]
    fn theta_moments(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|k| {
                let col: Vec<f64> = (0..self.n).map(|p| self.theta[p * self.dim + k]).collect();
                let m = col.iter().sum::<f64>() / self.n as f64;
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.n as f64;
                (m, v)
            })
            .collect()
    }
}

fn unit_slopes(dim: usize, loaded: &[usize]) -> Vec<f64> {
    let mut a = vec![0.0; dim];
    for &k in loaded {
        a[k] = 1.0;
    }
    a
}
