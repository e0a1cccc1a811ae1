use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CalibrationMode, CalibrationResult, CalibrationSpec, Population};
use crate::error::{Error, Result};
use crate::model::{logistic, DichotomousItem, Format, Item, ModelFamily, PolytomousItem};

/// Re-expresses a generating item on the standardized scale of `pop` and in
/// the target family's coordinates.
///
/// Simple-structure items map exactly onto a bifactor layout by splitting
/// each correlated factor as `sqrt(rho) g + sqrt(1 - rho) s`. The
/// unidimensional view keeps the item's own loading, which is exact only
/// when `rho = 1`.
pub fn project_item(item: &Item, target: ModelFamily, pop: &Population) -> Result<Item> {
    let source = item.family();
    if pop.dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: pop.dim(),
        });
    }
    if source != target && source != ModelFamily::SimpleStructure {
        return Err(Error::Unsupported(format!(
            "cannot project a {source} item onto {target}"
        )));
    }
    // Standardize: theta = mu + s * z.
    let a_std: Vec<f64> = item
        .a()
        .iter()
        .enumerate()
        .map(|(k, a)| a * pop.cov[(k, k)].sqrt())
        .collect();
    let shift: f64 = item.a().iter().zip(pop.mean.iter()).map(|(a, m)| a * m).sum();

    let a_target = if source == target {
        a_std
    } else {
        let own = match item.format() {
            Format::Mc => 0,
            Format::Cr => 1,
        };
        let loading = a_std[own];
        match target {
            ModelFamily::Uirt => vec![loading],
            ModelFamily::Bifactor => {
                let rho = pop.correlation(0, 1).clamp(0.0, 1.0);
                let mut a = vec![0.0; 3];
                a[0] = loading * rho.sqrt();
                a[1 + own] = loading * (1.0 - rho).sqrt();
                a
            }
            ModelFamily::SimpleStructure => unreachable!(),
        }
    };

    Ok(match item {
        Item::Dichotomous(i) => DichotomousItem::new(
            i.id(),
            i.format(),
            target,
            i.anchor(),
            a_target,
            i.d() + shift,
            i.c(),
        )?
        .into(),
        Item::Polytomous(i) => PolytomousItem::new(
            i.id(),
            i.format(),
            target,
            i.anchor(),
            a_target,
            i.deltas().iter().map(|v| v - shift).collect(),
        )?
        .into(),
    })
}

fn projected_population(target: ModelFamily, pop: &Population, source: ModelFamily) -> Population {
    match target {
        ModelFamily::Uirt => Population::standard(1),
        ModelFamily::Bifactor => Population::standard(3),
        ModelFamily::SimpleStructure if source == target => {
            let d = pop.dim();
            let mut corr = DMatrix::identity(d, d);
            for r in 0..d {
                for c in 0..d {
                    if r != c {
                        corr[(r, c)] = pop.correlation(r, c);
                    }
                }
            }
            Population {
                mean: DVector::zeros(d),
                cov: corr,
            }
        }
        ModelFamily::SimpleStructure => Population::standard(2),
    }
}

/// Truth, projected to the analysis family and perturbed by seeded Gaussian
/// noise on ln(a) (nonzero entries), d / thresholds, and logit(c).
pub fn calibrate_oracle(
    true_items: &[Item],
    true_pop: &Population,
    spec: &CalibrationSpec,
) -> Result<CalibrationResult> {
    spec.validate()?;
    if spec.mode != CalibrationMode::OracleNoise {
        return Err(Error::invalid("calibrate_oracle requires OracleNoise mode"));
    }
    let first = true_items.first().ok_or(Error::EmptyItems)?;
    let target = spec.model_family;
    let mut items = true_items
        .iter()
        .map(|i| project_item(i, target, true_pop))
        .collect::<Result<Vec<_>>>()?;

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        let mut draw = || noise.sample(&mut rng);
        for item in items.iter_mut() {
            let a: Vec<f64> = item
                .a()
                .iter()
                .map(|&v| if v != 0.0 { v * draw().exp() } else { 0.0 })
                .collect();
            *item = match &*item {
                Item::Dichotomous(i) => {
                    let d = i.d() + draw();
                    let c = if i.c() > 0.0 {
                        let logit = (i.c() / (1.0 - i.c())).ln();
                        logistic(logit + draw())
                    } else {
                        0.0
                    };
                    DichotomousItem::new(i.id(), i.format(), i.family(), i.anchor(), a, d, c)?.into()
                }
                Item::Polytomous(i) => {
                    let deltas = i.deltas().iter().map(|v| v + draw()).collect();
                    PolytomousItem::new(i.id(), i.format(), i.family(), i.anchor(), a, deltas)?.into()
                }
            };
        }
    }

    let pop = projected_population(target, true_pop, first.family());
    Ok(CalibrationResult {
        items,
        pop_mean: pop.mean,
        pop_cov: pop.cov,
        acceptance_rates: Vec::new(),
        seed_used: spec.seed,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThetaVector;

    fn ss_items(n: usize) -> Vec<Item> {
        (0..n)
            .map(|k| {
                if k % 5 == 4 {
                    PolytomousItem::new(
                        format!("c{k}"),
                        Format::Cr,
                        ModelFamily::SimpleStructure,
                        k % 2 == 0,
                        vec![0.0, 0.7 + 0.05 * k as f64],
                        vec![-0.6, 0.1, 0.4, 1.0],
                    )
                    .unwrap()
                    .into()
                } else {
                    DichotomousItem::new(
                        format!("m{k}"),
                        Format::Mc,
                        ModelFamily::SimpleStructure,
                        k % 2 == 0,
                        vec![0.6 + 0.03 * k as f64, 0.0],
                        -1.0 + 0.05 * k as f64,
                        0.2,
                    )
                    .unwrap()
                    .into()
                }
            })
            .collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let items = ss_items(20);
        let spec = CalibrationSpec::oracle(ModelFamily::SimpleStructure, 0.0, 7);
        let out = calibrate_oracle(&items, &Population::bivariate(0.8), &spec).unwrap();
        assert_eq!(out.items, items);
        assert_eq!(out.pop_cov, Population::bivariate(0.8).cov);
    }

    #[test]
    fn deterministic_given_seed() {
        let items = ss_items(20);
        let spec = CalibrationSpec::oracle(ModelFamily::Bifactor, 0.1, 99);
        let pop = Population::bivariate(0.5);
        assert_eq!(
            calibrate_oracle(&items, &pop, &spec).unwrap(),
            calibrate_oracle(&items, &pop, &spec).unwrap()
        );
    }

    #[test]
    fn noise_scale_matches_sigma() {
        let items: Vec<Item> = (0..40)
            .map(|k| {
                DichotomousItem::new(
                    format!("m{k}"),
                    Format::Mc,
                    ModelFamily::SimpleStructure,
                    false,
                    vec![1.0, 0.0],
                    0.1 * k as f64 - 2.0,
                    0.2,
                )
                .unwrap()
                .into()
            })
            .collect();
        let pop = Population::bivariate(0.8);
        for seed in 0..20 {
            let spec = CalibrationSpec::oracle(ModelFamily::SimpleStructure, 0.05, seed);
            let out = calibrate_oracle(&items, &pop, &spec).unwrap();
            let diffs: Vec<f64> = out
                .items
                .iter()
                .zip(&items)
                .map(|(e, t)| match (e, t) {
                    (Item::Dichotomous(e), Item::Dichotomous(t)) => e.d() - t.d(),
                    _ => unreachable!(),
                })
                .collect();
            let mean = diffs.iter().sum::<f64>() / 40.0;
            let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 39.0).sqrt();
            assert!((0.03..=0.07).contains(&sd), "seed {seed}: sd {sd}");
            assert!(out.items.iter().all(Item::respects_mask));
        }
    }

    #[test]
    fn bifactor_projection_is_exact() {
        // P under (theta1, theta2) with corr rho equals P under the bifactor split.
        let rho: f64 = 0.64;
        let pop = Population::bivariate(rho);
        for item in ss_items(10) {
            let bf = project_item(&item, ModelFamily::Bifactor, &pop).unwrap();
            assert!(bf.respects_mask());
            let (g, s1, s2) = (0.3, -1.1, 0.7);
            let th1 = rho.sqrt() * g + (1.0 - rho).sqrt() * s1;
            let th2 = rho.sqrt() * g + (1.0 - rho).sqrt() * s2;
            let p_ss = item.category_probs(&ThetaVector::new(vec![th1, th2]).unwrap()).unwrap();
            let p_bf = bf.category_probs(&ThetaVector::new(vec![g, s1, s2]).unwrap()).unwrap();
            for (x, y) in p_ss.iter().zip(&p_bf) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardizes_nonequivalent_group() {
        let pop = Population {
            mean: DVector::from_vec(vec![0.5, -0.2]),
            cov: DMatrix::from_row_slice(2, 2, &[1.44, 0.6, 0.6, 0.81]),
        };
        for item in ss_items(10) {
            let std = project_item(&item, ModelFamily::SimpleStructure, &pop).unwrap();
            let z = [0.4, -0.9];
            let theta = [0.5 + 1.2 * z[0], -0.2 + 0.9 * z[1]];
            let p0 = item.category_probs(&ThetaVector::new(theta.to_vec()).unwrap()).unwrap();
            let p1 = std.category_probs(&ThetaVector::new(z.to_vec()).unwrap()).unwrap();
            for (x, y) in p0.iter().zip(&p1) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mcmc_mode() {
        let spec = CalibrationSpec::mcmc(ModelFamily::Uirt, 1);
        assert!(calibrate_oracle(&ss_items(3), &Population::bivariate(0.5), &spec).is_err());
    }
}
