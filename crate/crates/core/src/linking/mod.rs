//! Scale linking by test-response-function matching.
//!
//! The transformation `theta_base = A theta_new + B` is chosen to minimize
//! the weighted squared distance between the base anchors' TRF and the TRF
//! of the new-form anchors re-expressed on the base metric. With D = 1 this
//! is the Stocking-Lord criterion.

mod grid;
pub mod nelder_mead;
mod transform;

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Item, ThetaVector};

pub use grid::{QuadratureGrid, DEFAULT_GRID_SEED, MULTIDIMENSIONAL_POINTS, UNIDIMENSIONAL_POINTS};
pub use transform::{transform_item, transform_population, transform_theta, Transform};

use nelder_mead::NelderMeadConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkingOptions {
    /// Initial simplex offset for every entry of `A` and `B`.
    pub initial_step: f64,
    /// Restarts from the incumbent after the first simplex run.
    pub max_restarts: usize,
    pub max_evals_per_run: usize,
    /// A simplex run stops when `f_worst - f_best <= ftol_rel * |f_best| + ftol_abs`
    /// or when every vertex lies within `xtol` of the best one.
    pub ftol_rel: f64,
    pub ftol_abs: f64,
    pub xtol: f64,
    /// A restart cycle improving the loss by less than this fraction counts as converged.
    pub improvement_tol: f64,
    pub hessian_step: f64,
    pub hessian_condition_limit: f64,
    pub matrix_condition_limit: f64,
}

impl Default for LinkingOptions {
    fn default() -> Self {
        LinkingOptions {
            initial_step: 0.1,
            max_restarts: 6,
            max_evals_per_run: 20_000,
            ftol_rel: 1e-12,
            ftol_abs: 1e-22,
            xtol: 1e-10,
            improvement_tol: 1e-10,
            hessian_step: 1e-3,
            hessian_condition_limit: 1e6,
            matrix_condition_limit: 1e8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkingResult {
    pub transform: Transform,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub condition_warning: bool,
    /// Condition number of the finite-difference loss Hessian; `None` when singular.
    pub hessian_condition: Option<f64>,
    /// Best loss after every simplex iteration, across restarts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl LinkingResult {
    /// Flat `key=value` record: D, row-major A, B, loss, iterations,
    /// converged, condition_warning.
    pub fn to_record(&self) -> String {
        let t = &self.transform;
        let d = t.dim();
        let mut out = String::new();
        let _ = writeln!(out, "D={d}");
        for r in 0..d {
            for c in 0..d {
                let _ = writeln!(out, "A{}{}={}", r + 1, c + 1, t.matrix()[(r, c)]);
            }
        }
        for r in 0..d {
            let _ = writeln!(out, "B{}={}", r + 1, t.location()[r]);
        }
        let _ = writeln!(out, "loss={}", self.loss);
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "converged={}", self.converged);
        let _ = writeln!(out, "condition_warning={}", self.condition_warning);
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<record>".into(),
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields.get(k).ok_or_else(|| Error::Parse {
                path: "<record>".into(),
                line: 0,
                message: format!("missing key `{k}`"),
            })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                path: "<record>".into(),
                line: 0,
                message: format!("`{k}` is not a number"),
            })
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?.parse().map_err(|_| Error::Parse {
                path: "<record>".into(),
                line: 0,
                message: format!("`{k}` is not true/false"),
            })
        };
        let d = num("D")? as usize;
        let mut params = Vec::with_capacity(d * d + d);
        for r in 1..=d {
            for c in 1..=d {
                params.push(num(&format!("A{r}{c}"))?);
            }
        }
        for r in 1..=d {
            params.push(num(&format!("B{r}"))?);
        }
        Ok(LinkingResult {
            transform: Transform::from_params(d, &params)?,
            loss: num("loss")?,
            iterations: num("iterations")? as usize,
            evaluations: 0,
            restarts: 0,
            converged: flag("converged")?,
            condition_warning: flag("condition_warning")?,
            hessian_condition: None,
            trace: Vec::new(),
        })
    }
}

/// Anchor parameters flattened for the loss kernel.
enum Kernel {
    Mc {
        a: [f64; 3],
        d: f64,
        c: f64,
    },
    Cr {
        a: [f64; 3],
        deltas: Vec<f64>,
        /// `exp(-delta_v)`, used when every category term stays in range.
        ratios: Vec<f64>,
        fast: bool,
    },
}

/// Above this |a . u| the GPC terms go through the max-shifted path.
const FAST_LOGIT_LIMIT: f64 = 30.0;

impl Kernel {
    fn new(item: &Item) -> Self {
        let mut a = [0.0; 3];
        a[..item.dim()].copy_from_slice(item.a());
        match item {
            Item::Dichotomous(i) => Kernel::Mc { a, d: i.d(), c: i.c() },
            Item::Polytomous(i) => {
                let deltas = i.deltas().to_vec();
                let fast = deltas.iter().all(|d| d.abs() <= FAST_LOGIT_LIMIT)
                    && (deltas.len() as f64) * 2.0 * FAST_LOGIT_LIMIT < 700.0;
                Kernel::Cr {
                    a,
                    ratios: deltas.iter().map(|d| (-d).exp()).collect(),
                    deltas,
                    fast,
                }
            }
        }
    }

    #[inline]
    fn expected(&self, u: &[f64; 3], dim: usize) -> f64 {
        match self {
            Kernel::Mc { a, d, c } => {
                let mut z = *d;
                for k in 0..dim {
                    z += a[k] * u[k];
                }
                c + (1.0 - c) * crate::model::logistic(z)
            }
            Kernel::Cr { a, deltas, ratios, fast } => {
                let mut z = 0.0;
                for k in 0..dim {
                    z += a[k] * u[k];
                }
                if *fast && z.abs() <= FAST_LOGIT_LIMIT {
                    // Category terms exp(sum_{v<=k} (z - delta_v)) by running products.
                    let t = z.exp();
                    let mut term = 1.0;
                    let mut total = 1.0;
                    let mut weighted = 0.0;
                    for (k, r) in ratios.iter().enumerate() {
                        term *= t * r;
                        total += term;
                        weighted += (k + 1) as f64 * term;
                    }
                    weighted / total
                } else {
                    let mut s = 0.0;
                    let mut max = 0.0f64;
                    for delta in deltas {
                        s += z - delta;
                        max = max.max(s);
                    }
                    let mut s = 0.0;
                    let mut total = (-max).exp();
                    let mut weighted = 0.0;
                    for (k, delta) in deltas.iter().enumerate() {
                        s += z - delta;
                        let e = (s - max).exp();
                        total += e;
                        weighted += (k + 1) as f64 * e;
                    }
                    weighted / total
                }
            }
        }
    }
}

/// Precomputed pieces of the TRF-matching criterion for one anchor pairing.
///
/// A transformed item evaluated at `theta` equals the original item at
/// `u = A^-1 (theta - B)`, so each loss evaluation maps the grid once and
/// reuses the new-form parameters as given.
pub struct TrfMatcher<'g> {
    dim: usize,
    grid: &'g QuadratureGrid,
    base_trf: Vec<f64>,
    new_kernels: Vec<Kernel>,
    worst_loss: f64,
}

impl<'g> TrfMatcher<'g> {
    pub fn new(anchor_base: &[Item], anchor_new: &[Item], grid: &'g QuadratureGrid) -> Result<Self> {
        if anchor_base.is_empty() || anchor_new.is_empty() {
            return Err(Error::EmptyAnchors);
        }
        if anchor_base.len() != anchor_new.len() {
            return Err(Error::AnchorMisalignment(format!(
                "{} base anchors vs {} new anchors",
                anchor_base.len(),
                anchor_new.len()
            )));
        }
        let dim = grid.dim();
        let mut new_kernels = Vec::with_capacity(anchor_new.len());
        for base in anchor_base {
            let new = anchor_new
                .iter()
                .find(|i| i.id() == base.id())
                .ok_or_else(|| {
                    Error::AnchorMisalignment(format!("`{}` missing from the new form", base.id()))
                })?;
            if new.n_categories() != base.n_categories() {
                return Err(Error::AnchorMisalignment(format!(
                    "`{}` has {} categories on the base form and {} on the new form",
                    base.id(),
                    base.n_categories(),
                    new.n_categories()
                )));
            }
            for item in [base, new] {
                if item.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: item.dim(),
                    });
                }
            }
            new_kernels.push(Kernel::new(new));
        }
        let base_kernels: Vec<Kernel> = anchor_base.iter().map(Kernel::new).collect();
        let base_trf = grid
            .iter()
            .map(|(p, _)| {
                let mut u = [0.0; 3];
                u[..dim].copy_from_slice(p);
                base_kernels.iter().map(|k| k.expected(&u, dim)).sum()
            })
            .collect();
        let max_score: usize = anchor_base.iter().map(Item::max_score).sum();
        Ok(TrfMatcher {
            dim,
            grid,
            base_trf,
            new_kernels,
            worst_loss: (max_score * max_score) as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss(&self, t: &Transform) -> Result<f64> {
        if t.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: t.dim(),
            });
        }
        let inv = t.inverse_matrix()?;
        let d = self.dim;
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate().take(d) {
            for (c, v) in row.iter_mut().enumerate().take(d) {
                *v = inv[(r, c)];
            }
        }
        let mut b = [0.0; 3];
        b[..d].copy_from_slice(t.location().as_slice());
        let mut total = 0.0;
        for ((p, w), base) in self.grid.iter().zip(&self.base_trf) {
            let mut u = [0.0; 3];
            for (r, slot) in u.iter_mut().enumerate().take(d) {
                let mut s = 0.0;
                for c in 0..d {
                    s += m[r][c] * (p[c] - b[c]);
                }
                *slot = s;
            }
            let new: f64 = self.new_kernels.iter().map(|k| k.expected(&u, d)).sum();
            total += w * (base - new) * (base - new);
        }
        Ok(total)
    }

    /// Loss over flattened parameters; a singular `A` scores the worst
    /// attainable value so the search moves away from it.
    fn loss_params(&self, params: &[f64]) -> f64 {
        if params.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        match Transform::from_params(self.dim, params).and_then(|t| self.loss(&t)) {
            Ok(v) => v,
            Err(Error::SingularTransform) => self.worst_loss,
            Err(_) => f64::NAN,
        }
    }
}

/// Weighted squared TRF difference between base anchors and transformed new anchors.
pub fn sl_loss(
    anchor_base: &[Item],
    anchor_new: &[Item],
    t: &Transform,
    grid: &QuadratureGrid,
) -> Result<f64> {
    TrfMatcher::new(anchor_base, anchor_new, grid)?.loss(t)
}

/// Minimizes [`sl_loss`] over `(A, B)` by Nelder-Mead from `(I, 0)`, restarting
/// from the incumbent until a restart cycle stops improving.
pub fn estimate_transform(
    anchor_base: &[Item],
    anchor_new: &[Item],
    grid: &QuadratureGrid,
    options: &LinkingOptions,
) -> Result<LinkingResult> {
    let matcher = TrfMatcher::new(anchor_base, anchor_new, grid)?;
    let dim = matcher.dim();
    let objective = |p: &[f64]| matcher.loss_params(p);

    let cfg = NelderMeadConfig {
        initial_step: options.initial_step,
        max_evals: options.max_evals_per_run,
        ftol_rel: options.ftol_rel,
        ftol_abs: options.ftol_abs,
        xtol: options.xtol,
    };

    let mut x = Transform::identity(dim).to_params();
    let mut f = objective(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut iterations = 0;
    let mut evaluations = 1;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut restarts = 0;
    for cycle in 0..=options.max_restarts {
        let out = nelder_mead::minimize(objective, &x, &cfg)?;
        iterations += out.iterations;
        evaluations += out.evals;
        trace.extend_from_slice(&out.trace);
        let improvement = if f > 0.0 { (f - out.f) / f } else { 0.0 };
        if out.f <= f {
            x = out.x;
            f = out.f;
        }
        restarts = cycle;
        if cycle > 0 && improvement < options.improvement_tol && out.tolerance_met {
            converged = true;
            break;
        }
    }

    let transform = Transform::from_params(dim, &x)?;
    let hessian = fd_hessian(&objective, &x, options.hessian_step)?;
    let hessian_condition = symmetric_condition(&hessian);
    let condition_warning = hessian_condition.is_none_or(|c| c > options.hessian_condition_limit)
        || transform.condition_number() > options.matrix_condition_limit;

    Ok(LinkingResult {
        transform,
        loss: f,
        iterations,
        evaluations: evaluations + 2 * x.len() * x.len() + 1,
        restarts,
        converged,
        condition_warning,
        hessian_condition,
        trace,
    })
}

fn fd_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let eval = |p: &[f64]| {
        let v = f(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    };
    let f0 = eval(x)?;
    let mut hess = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    for i in 0..n {
        p[i] = x[i] + h;
        let fp = eval(&p)?;
        p[i] = x[i] - h;
        let fm = eval(&p)?;
        p[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * h;
                p[j] = x[j] + sj * h;
                let v = eval(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

fn symmetric_condition(m: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = max / min;
    (min > 0.0 && cond.is_finite()).then_some(cond)
}

/// Base-metric TRF of `items` along `theta`, for overlay plots.
pub fn trf_curve(items: &[Item], thetas: &[ThetaVector]) -> Result<Vec<f64>> {
    thetas.iter().map(|t| crate::model::trf(items, t)).collect()
}
