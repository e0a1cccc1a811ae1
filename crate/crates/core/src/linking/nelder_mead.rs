//! Nelder-Mead simplex minimizer with dimension-adaptive coefficients
//! (Gao & Han), used for the TRF-matching criterion.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NelderMeadConfig {
    /// Offset added to each coordinate to form the initial simplex.
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop when `f_worst - f_best <= ftol_rel * |f_best| + ftol_abs`.
    pub ftol_rel: f64,
    pub ftol_abs: f64,
    /// Or when every vertex lies within `xtol` of the best one (sup norm).
    pub xtol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            initial_step: 0.1,
            max_evals: 20_000,
            ftol_rel: 1e-12,
            ftol_abs: 1e-22,
            xtol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evals: usize,
    /// Sup-norm radius of the final simplex around its best vertex.
    pub simplex_size: f64,
    /// True when a tolerance fired before the evaluation budget ran out.
    pub tolerance_met: bool,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    }
}

pub fn minimize<F>(f: F, x0: &[f64], cfg: &NelderMeadConfig) -> Result<NelderMeadOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1);
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n <= 2 {
        (1.0, 2.0, 0.5, 0.5)
    } else {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    };

    let mut obj = Counted { f, evals: 0 };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += cfg.initial_step;
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        values.push(obj.call(v)?);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut centroid = vec![0.0; n];
    let mut tolerance_met = false;

    loop {
        // Stable sort: ties keep their earlier position.
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        trace.push(values[best]);

        let spread = values[worst] - values[best];
        let size = simplex_size(&simplex, best);
        if spread <= cfg.ftol_rel * values[best].abs() + cfg.ftol_abs || size <= cfg.xtol {
            tolerance_met = true;
            break;
        }
        if obj.evals >= cfg.max_evals {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &idx in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= nf);

        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, x)| c + t * (c - x))
                .collect()
        };

        let reflected = along(alpha, &simplex[worst]);
        let f_r = obj.call(&reflected)?;
        if f_r < values[best] {
            let expanded = along(alpha * gamma, &simplex[worst]);
            let f_e = obj.call(&expanded)?;
            if f_e < f_r {
                simplex[worst] = expanded;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_r;
            }
            continue;
        }
        if f_r < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_r;
            continue;
        }
        let (candidate, f_c) = if f_r < values[worst] {
            let outside = along(alpha * rho, &simplex[worst]);
            let f_o = obj.call(&outside)?;
            (outside, f_o)
        } else {
            let inside = along(-rho, &simplex[worst]);
            let f_i = obj.call(&inside)?;
            (inside, f_i)
        };
        if f_c < values[worst].min(f_r) {
            simplex[worst] = candidate;
            values[worst] = f_c;
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = simplex[best].clone();
        for &idx in &order[1..] {
            for (x, b) in simplex[idx].iter_mut().zip(&anchor) {
                *x = b + sigma * (*x - b);
            }
            values[idx] = obj.call(&simplex[idx])?;
        }
    }

    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let best = order[0];
    Ok(NelderMeadOutcome {
        simplex_size: simplex_size(&simplex, best),
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        evals: obj.evals,
        tolerance_met,
        trace,
    })
}

fn simplex_size(simplex: &[Vec<f64>], best: usize) -> f64 {
    simplex
        .iter()
        .flat_map(|v| v.iter().zip(&simplex[best]).map(|(x, b)| (x - b).abs()))
        .fold(0.0, f64::max)
}
