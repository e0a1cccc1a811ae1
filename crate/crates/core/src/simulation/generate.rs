use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AnchorScenario;
use crate::calibration::Population;
use crate::data::{ResponseMatrix, ThetaMatrix};
use crate::error::{Error, Result};
use crate::model::{DichotomousItem, Format, Item, ModelFamily, PolytomousItem, TestForm};

/// `base ^ first 8 bytes of SHA-256(key)`; keys name the consumer, so any
/// subset of work reproduces the same streams.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_le_bytes(bytes)
}

/// `n` draws from the standard bivariate normal with correlation `rho`:
/// `theta1 = z1`, `theta2 = rho z1 + sqrt(1 - rho^2) z2`.
pub fn sample_thetas(n: usize, rho: f64, seed: u64) -> Result<ThetaMatrix> {
    if n == 0 {
        return Err(Error::invalid("need at least one examinee"));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail = (1.0 - rho * rho).sqrt();
    let mut values = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        values.push(z1);
        values.push(if rho == 1.0 { z1 } else { rho * z1 + tail * z2 });
    }
    ThetaMatrix::new(2, values)
}

/// Draws from an arbitrary bivariate normal `pop`: the standardized
/// correlated pair from [`sample_thetas`], rescaled and shifted.
pub fn sample_population(n: usize, pop: &Population, seed: u64) -> Result<ThetaMatrix> {
    if pop.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: pop.dim(),
        });
    }
    let mut t = sample_thetas(n, pop.correlation(0, 1), seed)?;
    let sd = [pop.cov[(0, 0)].sqrt(), pop.cov[(1, 1)].sqrt()];
    if sd == [1.0, 1.0] && pop.mean.iter().all(|m| *m == 0.0) {
        return Ok(t);
    }
    for i in 0..n {
        for (k, v) in t.row_mut(i).iter_mut().enumerate() {
            *v = pop.mean[k] + sd[k] * *v;
        }
    }
    Ok(t)
}

/// Scores drawn from the simple-structure model, one uniform per cell in
/// person-major order.
pub fn generate_responses(form: &TestForm, thetas: &ThetaMatrix, seed: u64) -> Result<ResponseMatrix> {
    if form.family() != ModelFamily::SimpleStructure {
        return Err(Error::invalid(format!(
            "form {} is {}; responses are generated from simple-structure items only",
            form.name(),
            form.family()
        )));
    }
    if thetas.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: thetas.dim(),
        });
    }
    let ids = form.items().iter().map(|i| i.id().to_string()).collect();
    let mut out = ResponseMatrix::empty(ids, thetas.n());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = vec![0.0; form.items().iter().map(Item::n_categories).max().unwrap_or(2)];
    for p in 0..thetas.n() {
        let theta = thetas.row(p);
        for (j, item) in form.items().iter().enumerate() {
            let u: f64 = rng.random();
            let score = match item {
                Item::Dichotomous(i) => u8::from(u < i.prob_at(theta)),
                Item::Polytomous(i) => {
                    let k = i.n_categories();
                    i.probs_into(theta, &mut probs[..k]);
                    let mut acc = 0.0;
                    let mut x = k - 1;
                    for (v, pr) in probs[..k].iter().enumerate() {
                        acc += pr;
                        if u < acc {
                            x = v;
                            break;
                        }
                    }
                    x as u8
                }
            };
            out.set(p, j, Some(score));
        }
    }
    Ok(out)
}

/// Ids of the form's anchors that qualify for `scenario`, in form order.
pub fn build_anchor_set(form: &TestForm, scenario: AnchorScenario) -> Result<Vec<String>> {
    let ids: Vec<String> = form
        .anchors()
        .filter(|i| scenario == AnchorScenario::McCr || i.format() == Format::Mc)
        .map(|i| i.id().to_string())
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyAnchorSet(match scenario {
            AnchorScenario::McOnly => format!("form {}: MC-only scenario requires MC anchor items", form.name()),
            AnchorScenario::McCr => format!("form {}: no designated anchor items", form.name()),
        }));
    }
    Ok(ids)
}

pub const BANK_MC_PER_FORM: usize = 40;
pub const BANK_CR_PER_FORM: usize = 8;
pub const BANK_MC_ANCHORS: usize = 12;
pub const BANK_CR_ANCHORS: usize = 4;
pub const BANK_CR_CATEGORIES: usize = 5;

fn bank_mc(rng: &mut ChaCha8Rng, id: String, anchor: bool) -> Result<Item> {
    let z: f64 = rng.sample(StandardNormal);
    let a = (0.3 * z).exp();
    let b: f64 = rng.sample(StandardNormal);
    let c = Beta::new(5.0, 17.0).expect("valid beta").sample(rng);
    Ok(DichotomousItem::new(id, Format::Mc, ModelFamily::SimpleStructure, anchor, vec![a, 0.0], -a * b, c)?.into())
}

fn bank_cr(rng: &mut ChaCha8Rng, id: String, anchor: bool) -> Result<Item> {
    let z: f64 = rng.sample(StandardNormal);
    let a = (0.3 * z).exp();
    let mut tau: Vec<f64> = (1..BANK_CR_CATEGORIES).map(|_| rng.sample(StandardNormal)).collect();
    tau.sort_by(f64::total_cmp);
    let mean = tau.iter().sum::<f64>() / tau.len() as f64;
    let deltas = tau.iter().map(|t| a * (t - mean)).collect();
    Ok(PolytomousItem::new(id, Format::Cr, ModelFamily::SimpleStructure, anchor, vec![0.0, a], deltas)?.into())
}

/// Synthetic two-form simple-structure bank: per form 40 MC 3PL items and
/// 8 five-category GPC items, of which 12 MC and 4 CR are shared anchors.
///
/// MC: ln a ~ N(0, 0.3^2), b ~ N(0, 1), c ~ Beta(5, 17).
/// CR: ln a ~ N(0, 0.3^2), steps are sorted N(0, 1) draws centered at 0.
pub fn default_item_bank(seed: u64) -> Result<(TestForm, TestForm)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor_mc = (1..=BANK_MC_ANCHORS)
        .map(|k| bank_mc(&mut rng, format!("ANC_MC{k:02}"), true))
        .collect::<Result<Vec<_>>>()?;
    let anchor_cr = (1..=BANK_CR_ANCHORS)
        .map(|k| bank_cr(&mut rng, format!("ANC_CR{k:02}"), true))
        .collect::<Result<Vec<_>>>()?;
    let mut form = |prefix: &str, name: &str| -> Result<TestForm> {
        let mut items = anchor_mc.clone();
        for k in 1..=BANK_MC_PER_FORM - BANK_MC_ANCHORS {
            items.push(bank_mc(&mut rng, format!("{prefix}_MC{k:02}"), false)?);
        }
        items.extend(anchor_cr.iter().cloned());
        for k in 1..=BANK_CR_PER_FORM - BANK_CR_ANCHORS {
            items.push(bank_cr(&mut rng, format!("{prefix}_CR{k:02}"), false)?);
        }
        TestForm::new(name, items)
    };
    let base = form("BASE", "base")?;
    let new = form("NEW", "new")?;
    Ok((base, new))
}

/// Abilities and scores for one group on one form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub thetas: ThetaMatrix,
    pub responses: ResponseMatrix,
    pub rho_used: f64,
    pub seed_used: u64,
}

impl GeneratedDataset {
    /// Abilities come from `derive_seed(seed, "theta")`, scores from
    /// `derive_seed(seed, "responses")`.
    pub fn generate(form: &TestForm, n: usize, pop: &Population, seed: u64) -> Result<Self> {
        let thetas = sample_population(n, pop, derive_seed(seed, "theta"))?;
        let responses = generate_responses(form, &thetas, derive_seed(seed, "responses"))?;
        Ok(GeneratedDataset {
            thetas,
            responses,
            rho_used: pop.correlation(0, 1),
            seed_used: seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_stats(t: &ThetaMatrix) -> (f64, f64, f64) {
        let n = t.n() as f64;
        let x: Vec<f64> = t.column(0).collect();
        let y: Vec<f64> = t.column(1).collect();
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        (mx, my, sxy / (sxx * syy).sqrt())
    }

    #[test]
    fn theta_moments() {
        let t = sample_thetas(3000, 0.8, 42).unwrap();
        let (mx, my, r) = column_stats(&t);
        assert!(mx.abs() < 0.05 && my.abs() < 0.05);
        assert!((r - 0.8).abs() < 0.03, "{r}");
        assert_eq!(t, sample_thetas(3000, 0.8, 42).unwrap());
    }

    #[test]
    fn perfect_correlation_copies_column() {
        let t = sample_thetas(500, 1.0, 1).unwrap();
        assert!(t.column(0).zip(t.column(1)).all(|(a, b)| a == b));
        assert!(sample_thetas(10, 1.01, 1).is_err());
        assert!(sample_thetas(0, 0.5, 1).is_err());
    }

    #[test]
    fn shared_normals_across_correlations() {
        let a = sample_thetas(100, 0.5, 9).unwrap();
        let b = sample_thetas(100, 0.8, 9).unwrap();
        assert!(a.column(0).zip(b.column(0)).all(|(x, y)| x == y));
    }

    #[test]
    fn nonequivalent_population() {
        let pop = Population {
            mean: nalgebra::DVector::from_vec(vec![0.5, -0.3]),
            cov: nalgebra::DMatrix::from_row_slice(2, 2, &[1.44, 0.48, 0.48, 1.0]),
        };
        let t = sample_population(4000, &pop, 3).unwrap();
        let (mx, my, r) = column_stats(&t);
        assert!((mx - 0.5).abs() < 0.06 && (my + 0.3).abs() < 0.05);
        assert!((r - 0.4).abs() < 0.04);
    }

    #[test]
    fn extreme_abilities_hit_max_score() {
        let (base, _) = default_item_bank(5).unwrap();
        let items: Vec<Item> = base
            .items()
            .iter()
            .map(|i| {
                let a: Vec<f64> = i.a().iter().map(|v| if *v > 0.0 { 2.0 } else { 0.0 }).collect();
                match i {
                    Item::Dichotomous(d) => DichotomousItem::new(d.id(), d.format(), d.family(), false, a, d.d(), 0.0)
                        .unwrap()
                        .into(),
                    Item::Polytomous(p) => PolytomousItem::new(p.id(), p.format(), p.family(), false, a, p.deltas().to_vec())
                        .unwrap()
                        .into(),
                }
            })
            .collect();
        let form = TestForm::new("f", items).unwrap();
        let t = ThetaMatrix::new(2, vec![8.0; 200]).unwrap();
        let r = generate_responses(&form, &t, 1).unwrap();
        for p in 0..100 {
            for (j, item) in form.items().iter().enumerate() {
                assert_eq!(r.get(p, j), Some(item.max_score() as u8));
            }
        }
    }

    #[test]
    fn lower_asymptote_rate() {
        let item: Item =
            DichotomousItem::new("g", Format::Mc, ModelFamily::SimpleStructure, false, vec![1.0, 0.0], 0.0, 0.25)
                .unwrap()
                .into();
        let form = TestForm::new("f", vec![item]).unwrap();
        let t = ThetaMatrix::new(2, [-8.0, 0.0].repeat(3000)).unwrap();
        let r = generate_responses(&form, &t, 77).unwrap();
        let rate = (0..3000).filter(|&p| r.get(p, 0) == Some(1)).count() as f64 / 3000.0;
        assert!((rate - 0.25).abs() < 0.02, "{rate}");
        assert_eq!(r, generate_responses(&form, &t, 77).unwrap());
    }

    #[test]
    fn rejects_non_simple_structure_forms() {
        let item: Item = DichotomousItem::from_uirt("u", 1.0, 0.0, 0.2).unwrap().into();
        let form = TestForm::new("u", vec![item]).unwrap();
        assert!(generate_responses(&form, &ThetaMatrix::zeros(2, 2), 1).is_err());
    }

    #[test]
    fn anchor_sets() {
        let mk = |id: &str, format: Format, anchor: bool| -> Item {
            match format {
                Format::Mc => DichotomousItem::new(id, format, ModelFamily::SimpleStructure, anchor, vec![1.0, 0.0], 0.0, 0.2)
                    .unwrap()
                    .into(),
                Format::Cr => PolytomousItem::new(id, format, ModelFamily::SimpleStructure, anchor, vec![0.0, 1.0], vec![0.0])
                    .unwrap()
                    .into(),
            }
        };
        let form = TestForm::new(
            "f",
            vec![mk("mc1", Format::Mc, true), mk("mc2", Format::Mc, true), mk("x", Format::Mc, false), mk("cr1", Format::Cr, true)],
        )
        .unwrap();
        assert_eq!(build_anchor_set(&form, AnchorScenario::McOnly).unwrap(), ["mc1", "mc2"]);
        assert_eq!(build_anchor_set(&form, AnchorScenario::McCr).unwrap(), ["mc1", "mc2", "cr1"]);
        let cr_only = TestForm::new("g", vec![mk("cr1", Format::Cr, true)]).unwrap();
        let err = build_anchor_set(&cr_only, AnchorScenario::McOnly).unwrap_err();
        assert!(err.to_string().contains("MC-only scenario requires MC anchor items"));
    }

    #[test]
    fn default_bank_shape() {
        let (base, new) = default_item_bank(2018).unwrap();
        assert_eq!(default_item_bank(2018).unwrap(), (base.clone(), new.clone()));
        for form in [&base, &new] {
            assert_eq!(form.len(), 48);
            assert_eq!(form.items().iter().filter(|i| i.format() == Format::Mc).count(), 40);
            assert_eq!(form.anchors().filter(|i| i.format() == Format::Mc).count(), 12);
            assert_eq!(form.anchors().filter(|i| i.format() == Format::Cr).count(), 4);
            assert!(form.items().iter().all(Item::respects_mask));
            assert!(form
                .items()
                .iter()
                .filter(|i| i.format() == Format::Cr)
                .all(|i| i.n_categories() == 5));
        }
        for anchor in base.anchors() {
            assert_eq!(Some(anchor), new.get(anchor.id()));
        }
        let unique = base.items().iter().filter(|i| !i.anchor()).count();
        assert_eq!(unique, 32);
        assert!(base.items().iter().filter(|i| !i.anchor()).all(|i| new.get(i.id()).is_none()));
    }

    #[test]
    fn seed_derivation_is_keyed() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_eq!(derive_seed(1, "a") ^ derive_seed(2, "a"), 3);
    }
}
