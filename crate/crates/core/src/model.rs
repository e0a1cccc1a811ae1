//! Response models: compensatory multidimensional 3PL for dichotomous items
//! and the multidimensional generalized partial credit model for polytomous
//! items, both in slope/intercept form on the logistic metric (no 1.7).
//!
//! Dimensions are laid out per model family:
//!
//! | family            | D | MC loads on      | CR loads on      |
//! |-------------------|---|------------------|------------------|
//! | `Uirt`            | 1 | 0                | 0                |
//! | `SimpleStructure` | 2 | 0                | 1                |
//! | `Bifactor`        | 3 | 0 (general), 1   | 0 (general), 2   |

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "CR")]
    Cr,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Mc => "MC",
            Format::Cr => "CR",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "MC" | "mc" => Ok(Format::Mc),
            "CR" | "cr" => Ok(Format::Cr),
            other => Err(Error::invalid(format!("unknown item format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "UIRT")]
    Uirt,
    #[serde(rename = "SimpleStructure")]
    SimpleStructure,
    #[serde(rename = "Bifactor")]
    Bifactor,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [
        ModelFamily::Uirt,
        ModelFamily::SimpleStructure,
        ModelFamily::Bifactor,
    ];

    pub fn dim(self) -> usize {
        match self {
            ModelFamily::Uirt => 1,
            ModelFamily::SimpleStructure => 2,
            ModelFamily::Bifactor => 3,
        }
    }

    /// Dimensions an item of `format` may load on.
    pub fn loaded_dims(self, format: Format) -> &'static [usize] {
        match (self, format) {
            (ModelFamily::Uirt, _) => &[0],
            (ModelFamily::SimpleStructure, Format::Mc) => &[0],
            (ModelFamily::SimpleStructure, Format::Cr) => &[1],
            (ModelFamily::Bifactor, Format::Mc) => &[0, 1],
            (ModelFamily::Bifactor, Format::Cr) => &[0, 2],
        }
    }

    pub fn is_multidimensional(self) -> bool {
        self != ModelFamily::Uirt
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Uirt => "UIRT",
            ModelFamily::SimpleStructure => "SimpleStructure",
            ModelFamily::Bifactor => "Bifactor",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "UIRT" | "uirt" => Ok(ModelFamily::Uirt),
            "SimpleStructure" | "simple" | "simple-structure" => Ok(ModelFamily::SimpleStructure),
            "Bifactor" | "bifactor" => Ok(ModelFamily::Bifactor),
            other => Err(Error::invalid(format!("unknown model family `{other}`"))),
        }
    }
}

/// Ability coordinates on the logit metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector(Vec<f64>);

impl ThetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() > 3 {
            return Err(Error::invalid(format!(
                "theta must have 1..=3 coordinates, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta coordinates must be finite"));
        }
        Ok(ThetaVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<ThetaVector> for Vec<f64> {
    fn from(t: ThetaVector) -> Self {
        t.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(logistic(x)) without overflow.
#[inline]
pub(crate) fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn check_mask(id: &str, family: ModelFamily, format: Format, a: &[f64]) -> Result<()> {
    if a.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: a.len(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("item {id}: slopes must be finite")));
    }
    let allowed = family.loaded_dims(format);
    let off_mask_nonzero = a
        .iter()
        .enumerate()
        .any(|(k, &v)| v != 0.0 && !allowed.contains(&k));
    // A simple-structure item must actually load on its own factor.
    let missing_loading = family == ModelFamily::SimpleStructure && a[allowed[0]] == 0.0;
    if off_mask_nonzero || missing_loading {
        return Err(Error::LoadingMask {
            id: id.to_string(),
            family: family.to_string(),
        });
    }
    Ok(())
}

/// Compensatory 3PL item: `P = c + (1 - c) * logistic(a . theta + d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomousItem {
    id: String,
    format: Format,
    family: ModelFamily,
    anchor: bool,
    a: Vec<f64>,
    d: f64,
    c: f64,
}

impl DichotomousItem {
    pub fn new(
        id: impl Into<String>,
        format: Format,
        family: ModelFamily,
        anchor: bool,
        a: Vec<f64>,
        d: f64,
        c: f64,
    ) -> Result<Self> {
        let id = id.into();
        check_mask(&id, family, format, &a)?;
        if !(0.0..1.0).contains(&c) {
            return Err(Error::invalid(format!("item {id}: c = {c} outside [0, 1)")));
        }
        if !d.is_finite() {
            return Err(Error::invalid(format!("item {id}: d must be finite")));
        }
        Ok(DichotomousItem {
            id,
            format,
            family,
            anchor,
            a,
            d,
            c,
        })
    }

    /// Unidimensional item from the difficulty view (`d = -a * b`).
    pub fn from_uirt(id: impl Into<String>, a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(id, Format::Mc, ModelFamily::Uirt, false, vec![a], -a * b, c)
    }

    /// Skips the loading-pattern check; slopes produced by a rotation are dense.
    pub(crate) fn with_params_unchecked(&self, a: Vec<f64>, d: f64, c: f64) -> Self {
        DichotomousItem {
            id: self.id.clone(),
            format: self.format,
            family: self.family,
            anchor: self.anchor,
            a,
            d,
            c,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn format(&self) -> Format {
        self.format
    }
    pub fn family(&self) -> ModelFamily {
        self.family
    }
    pub fn anchor(&self) -> bool {
        self.anchor
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Difficulty `b = -d / a`; only defined for a unidimensional item.
    pub fn difficulty(&self) -> Option<f64> {
        (self.a.len() == 1).then(|| -self.d / self.a[0])
    }

    #[inline]
    pub(crate) fn prob_at(&self, theta: &[f64]) -> f64 {
        self.c + (1.0 - self.c) * logistic(dot(&self.a, theta) + self.d)
    }

    #[inline]
    pub(crate) fn log_prob_at(&self, theta: &[f64], score: u8) -> f64 {
        let x = dot(&self.a, theta) + self.d;
        if score == 1 {
            if self.c == 0.0 {
                log_logistic(x)
            } else {
                (self.c + (1.0 - self.c) * logistic(x)).ln()
            }
        } else {
            (1.0 - self.c).ln() + log_logistic(-x)
        }
    }
}

/// Generalized partial credit item:
/// `P(k) ∝ exp(sum_{v<=k} (a . theta - delta_v))`, category 0 has an empty sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytomousItem {
    id: String,
    format: Format,
    family: ModelFamily,
    anchor: bool,
    a: Vec<f64>,
    deltas: Vec<f64>,
}

impl PolytomousItem {
    pub fn new(
        id: impl Into<String>,
        format: Format,
        family: ModelFamily,
        anchor: bool,
        a: Vec<f64>,
        deltas: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        check_mask(&id, family, format, &a)?;
        if deltas.is_empty() {
            return Err(Error::invalid(format!(
                "item {id}: a polytomous item needs at least 2 categories"
            )));
        }
        if deltas.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("item {id}: thresholds must be finite")));
        }
        Ok(PolytomousItem {
            id,
            format,
            family,
            anchor,
            a,
            deltas,
        })
    }

    pub(crate) fn with_params_unchecked(&self, a: Vec<f64>, deltas: Vec<f64>) -> Self {
        PolytomousItem {
            id: self.id.clone(),
            format: self.format,
            family: self.family,
            anchor: self.anchor,
            a,
            deltas,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn format(&self) -> Format {
        self.format
    }
    pub fn family(&self) -> ModelFamily {
        self.family
    }
    pub fn anchor(&self) -> bool {
        self.anchor
    }
    pub fn a(&self) -> &[f64] {
        &self.a
    }
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
    pub fn n_categories(&self) -> usize {
        self.deltas.len() + 1
    }

    /// Step parameters on the theta metric, `delta_v / a` (unidimensional only).
    pub fn steps(&self) -> Option<Vec<f64>> {
        (self.a.len() == 1).then(|| self.deltas.iter().map(|d| d / self.a[0]).collect())
    }

    /// Mean step, the item location on the theta metric (unidimensional only).
    pub fn location(&self) -> Option<f64> {
        self.steps()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Max over the cumulative log-numerators, for the shifted exponentials.
    #[inline]
    fn max_log_numerator(&self, z: f64) -> f64 {
        let mut s = 0.0;
        let mut max = 0.0f64;
        for delta in &self.deltas {
            s += z - delta;
            max = max.max(s);
        }
        max
    }

    pub(crate) fn probs_into(&self, theta: &[f64], out: &mut [f64]) {
        let z = dot(&self.a, theta);
        let max = self.max_log_numerator(z);
        let mut s = 0.0;
        out[0] = (-max).exp();
        let mut total = out[0];
        for (k, delta) in self.deltas.iter().enumerate() {
            s += z - delta;
            out[k + 1] = (s - max).exp();
            total += out[k + 1];
        }
        for p in out.iter_mut() {
            *p /= total;
        }
    }

    #[inline]
    pub(crate) fn expected_at(&self, theta: &[f64]) -> f64 {
        let z = dot(&self.a, theta);
        let max = self.max_log_numerator(z);
        let mut s = 0.0;
        let mut total = (-max).exp();
        let mut weighted = 0.0;
        for (k, delta) in self.deltas.iter().enumerate() {
            s += z - delta;
            let e = (s - max).exp();
            total += e;
            weighted += (k + 1) as f64 * e;
        }
        weighted / total
    }

    #[inline]
    pub(crate) fn log_prob_at(&self, theta: &[f64], score: u8) -> f64 {
        let z = dot(&self.a, theta);
        let max = self.max_log_numerator(z);
        let mut s = 0.0;
        let mut total = (-max).exp();
        let mut chosen = if score == 0 { 0.0 } else { f64::NAN };
        for (k, delta) in self.deltas.iter().enumerate() {
            s += z - delta;
            total += (s - max).exp();
            if k + 1 == score as usize {
                chosen = s;
            }
        }
        chosen - max - total.ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Item {
    Dichotomous(DichotomousItem),
    Polytomous(PolytomousItem),
}

impl From<DichotomousItem> for Item {
    fn from(i: DichotomousItem) -> Self {
        Item::Dichotomous(i)
    }
}

impl From<PolytomousItem> for Item {
    fn from(i: PolytomousItem) -> Self {
        Item::Polytomous(i)
    }
}

impl Item {
    pub fn id(&self) -> &str {
        match self {
            Item::Dichotomous(i) => i.id(),
            Item::Polytomous(i) => i.id(),
        }
    }

    pub fn format(&self) -> Format {
        match self {
            Item::Dichotomous(i) => i.format,
            Item::Polytomous(i) => i.format,
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            Item::Dichotomous(i) => i.family,
            Item::Polytomous(i) => i.family,
        }
    }

    pub fn anchor(&self) -> bool {
        match self {
            Item::Dichotomous(i) => i.anchor,
            Item::Polytomous(i) => i.anchor,
        }
    }

    pub fn a(&self) -> &[f64] {
        match self {
            Item::Dichotomous(i) => &i.a,
            Item::Polytomous(i) => &i.a,
        }
    }

    pub fn dim(&self) -> usize {
        self.a().len()
    }

    /// Number of score categories (2 for a dichotomous item).
    pub fn n_categories(&self) -> usize {
        match self {
            Item::Dichotomous(_) => 2,
            Item::Polytomous(i) => i.n_categories(),
        }
    }

    pub fn max_score(&self) -> usize {
        self.n_categories() - 1
    }

    /// Whether the slopes follow the family's loading pattern.
    pub fn respects_mask(&self) -> bool {
        check_mask(self.id(), self.family(), self.format(), self.a()).is_ok()
    }

    #[cfg(test)]
    pub(crate) fn with_anchor(mut self, anchor: bool) -> Self {
        match &mut self {
            Item::Dichotomous(i) => i.anchor = anchor,
            Item::Polytomous(i) => i.anchor = anchor,
        }
        self
    }

    #[inline]
    pub(crate) fn expected_at(&self, theta: &[f64]) -> f64 {
        match self {
            Item::Dichotomous(i) => i.prob_at(theta),
            Item::Polytomous(i) => i.expected_at(theta),
        }
    }

    #[inline]
    pub(crate) fn log_prob_at(&self, theta: &[f64], score: u8) -> f64 {
        match self {
            Item::Dichotomous(i) => i.log_prob_at(theta, score),
            Item::Polytomous(i) => i.log_prob_at(theta, score),
        }
    }

    /// Category probabilities `P(X = k | theta)`, k = 0..K.
    pub fn category_probs(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta)?;
        Ok(match self {
            Item::Dichotomous(i) => {
                let p = i.prob_at(theta.as_slice());
                vec![1.0 - p, p]
            }
            Item::Polytomous(i) => {
                let mut out = vec![0.0; i.n_categories()];
                i.probs_into(theta.as_slice(), &mut out);
                out
            }
        })
    }
}

fn check_dim(expected: usize, theta: &ThetaVector) -> Result<()> {
    if expected != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected,
            found: theta.dim(),
        });
    }
    Ok(())
}

pub fn prob_dichotomous(item: &DichotomousItem, theta: &ThetaVector) -> Result<f64> {
    check_dim(item.a.len(), theta)?;
    if !(0.0..1.0).contains(&item.c) {
        return Err(Error::invalid(format!("item {}: c outside [0, 1)", item.id)));
    }
    Ok(item.prob_at(theta.as_slice()))
}

pub fn prob_polytomous(item: &PolytomousItem, theta: &ThetaVector) -> Result<Vec<f64>> {
    check_dim(item.a.len(), theta)?;
    let mut out = vec![0.0; item.n_categories()];
    item.probs_into(theta.as_slice(), &mut out);
    Ok(out)
}

/// Expected item score `sum_k k P(k)`; for a dichotomous item this is `P(X = 1)`.
pub fn expected_score(item: &Item, theta: &ThetaVector) -> Result<f64> {
    check_dim(item.dim(), theta)?;
    Ok(item.expected_at(theta.as_slice()))
}

/// Test response function: the sum of expected item scores.
pub fn trf(items: &[Item], theta: &ThetaVector) -> Result<f64> {
    let first = items.first().ok_or(Error::EmptyItems)?;
    let dim = first.dim();
    if let Some(bad) = items.iter().find(|i| i.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    check_dim(dim, theta)?;
    Ok(items.iter().map(|i| i.expected_at(theta.as_slice())).sum())
}

/// An ordered collection of items administered together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestForm {
    name: String,
    items: Vec<Item>,
}

impl TestForm {
    pub fn new(name: impl Into<String>, items: Vec<Item>) -> Result<Self> {
        let name = name.into();
        let first = items.first().ok_or(Error::EmptyItems)?;
        let family = first.family();
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id().to_string()) {
                return Err(Error::invalid(format!(
                    "form {name}: duplicate item id `{}`",
                    item.id()
                )));
            }
            if item.family() != family {
                return Err(Error::invalid(format!(
                    "form {name}: item {} is {} but the form is {family}",
                    item.id(),
                    item.family()
                )));
            }
        }
        Ok(TestForm { name, items })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Item> {
        self.items
    }

    pub fn family(&self) -> ModelFamily {
        self.items[0].family()
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn max_score(&self) -> usize {
        self.items.iter().map(Item::max_score).sum()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id() == id)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(|i| i.anchor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn th(v: &[f64]) -> ThetaVector {
        ThetaVector::new(v.to_vec()).unwrap()
    }

    fn uirt_3pl(a: f64, d: f64, c: f64) -> DichotomousItem {
        DichotomousItem::new("i", Format::Mc, ModelFamily::Uirt, false, vec![a], d, c).unwrap()
    }

    fn uirt_gpc(a: f64, deltas: &[f64]) -> PolytomousItem {
        PolytomousItem::new("p", Format::Cr, ModelFamily::Uirt, false, vec![a], deltas.to_vec())
            .unwrap()
    }

    #[test]
    fn three_pl_reference_values() {
        assert_abs_diff_eq!(
            prob_dichotomous(&uirt_3pl(1.0, 0.0, 0.2), &th(&[0.0])).unwrap(),
            0.6,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            prob_dichotomous(&uirt_3pl(1.0, 0.0, 0.2), &th(&[-800.0])).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        // 0.2 + 0.8 / (1 + e^-2), evaluated at 30 digits
        assert_abs_diff_eq!(
            prob_dichotomous(&uirt_3pl(2.0, 2.0, 0.2), &th(&[0.0])).unwrap(),
            0.904_637_662_382_305_9,
            epsilon = 1e-14
        );
    }

    #[test]
    fn three_pl_errors() {
        let item = uirt_3pl(1.0, 0.0, 0.2);
        assert!(matches!(
            prob_dichotomous(&item, &th(&[0.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DichotomousItem::from_uirt("x", 1.0, 0.0, 1.0).is_err());
        assert!(DichotomousItem::from_uirt("x", 1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn gpc_reference_values() {
        let p = prob_polytomous(&uirt_gpc(1.0, &[0.0]), &th(&[0.0])).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);

        let item = uirt_gpc(1.0, &[0.5, -0.5]);
        let p = prob_polytomous(&item, &th(&[0.0])).unwrap();
        assert_abs_diff_eq!(p[0], 0.383_651_731_190_550_7, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 0.232_696_537_618_898_6, epsilon = 1e-14);
        assert_abs_diff_eq!(p[2], 0.383_651_731_190_550_7, epsilon = 1e-14);
        // P(0) = P(2), so the mean score is exactly the middle category.
        let e = expected_score(&item.clone().into(), &th(&[0.0])).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gpc_log_probs_match_probs() {
        let item = uirt_gpc(1.3, &[0.4, -1.2, 2.0, 0.1]);
        let t = th(&[0.7]);
        let p = prob_polytomous(&item, &t).unwrap();
        for (k, pk) in p.iter().enumerate() {
            assert_abs_diff_eq!(item.log_prob_at(t.as_slice(), k as u8), pk.ln(), epsilon = 1e-13);
        }
    }

    #[test]
    fn expected_score_limits() {
        let item: Item = uirt_3pl(1.0, 0.0, 0.0).into();
        assert_abs_diff_eq!(expected_score(&item, &th(&[0.0])).unwrap(), 0.5);
        let gpc: Item = uirt_gpc(1.0, &[0.3, -0.2, 1.0, 0.5]).into();
        assert_abs_diff_eq!(expected_score(&gpc, &th(&[1e6])).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_score(&gpc, &th(&[-1e6])).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn trf_cases() {
        let items: Vec<Item> = (0..10).map(|_| uirt_3pl(1.0, 0.0, 0.0).into()).collect();
        assert_abs_diff_eq!(trf(&items, &th(&[0.0])).unwrap(), 5.0, epsilon = 1e-14);
        assert!(matches!(trf(&[], &th(&[0.0])), Err(Error::EmptyItems)));

        let mut form: Vec<Item> = items.clone();
        form.push(uirt_gpc(1.2, &[0.0, 0.5, -0.3, 1.0]).into());
        let top = trf(&form, &th(&[8.0])).unwrap();
        assert!((14.0 - top).abs() < 1e-3 * 14.0, "trf at +8 = {top}");

        let mixed: Vec<Item> = vec![
            uirt_3pl(1.0, 0.0, 0.0).into(),
            DichotomousItem::new(
                "m",
                Format::Mc,
                ModelFamily::SimpleStructure,
                false,
                vec![1.0, 0.0],
                0.0,
                0.0,
            )
            .unwrap()
            .into(),
        ];
        assert!(matches!(trf(&mixed, &th(&[0.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loading_masks_are_enforced() {
        let ss = |format, a: Vec<f64>| {
            DichotomousItem::new("x", format, ModelFamily::SimpleStructure, false, a, 0.0, 0.1)
        };
        assert!(ss(Format::Mc, vec![1.0, 0.0]).is_ok());
        assert!(ss(Format::Mc, vec![1.0, 0.2]).is_err());
        assert!(ss(Format::Mc, vec![0.0, 0.0]).is_err());
        assert!(ss(Format::Cr, vec![0.0, 1.0]).is_ok());
        assert!(ss(Format::Cr, vec![1.0, 0.0]).is_err());

        let bf = |format, a: Vec<f64>| {
            PolytomousItem::new("y", format, ModelFamily::Bifactor, false, a, vec![0.0, 1.0])
        };
        assert!(bf(Format::Mc, vec![1.0, 0.5, 0.0]).is_ok());
        assert!(bf(Format::Mc, vec![1.0, 0.5, 0.1]).is_err());
        assert!(bf(Format::Cr, vec![1.0, 0.0, 0.7]).is_ok());
        assert!(bf(Format::Cr, vec![1.0, 0.7, 0.0]).is_err());
        assert!(bf(Format::Cr, vec![1.0, 0.7]).is_err());
    }

    #[test]
    fn form_validation() {
        let i: Item = uirt_3pl(1.0, 0.0, 0.0).into();
        assert!(TestForm::new("f", vec![]).is_err());
        assert!(TestForm::new("f", vec![i.clone(), i.clone()]).is_err());
        let form = TestForm::new(
            "f",
            vec![i, uirt_gpc(1.0, &[0.0, 0.0, 0.0, 0.0]).into()],
        )
        .unwrap();
        assert_eq!(form.max_score(), 5);
    }

    fn arb_gpc() -> impl Strategy<Value = (PolytomousItem, f64)> {
        (
            0.2f64..3.0,
            prop::collection::vec(-4.0f64..4.0, 1..7),
            -10.0f64..10.0,
        )
            .prop_map(|(a, deltas, theta)| (uirt_gpc(a, &deltas), theta))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn gpc_probabilities_normalize((item, theta) in arb_gpc()) {
            let p = prob_polytomous(&item, &th(&[theta])).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn three_pl_monotone_along_slope(
            a1 in 0.1f64..2.0, a2 in 0.1f64..2.0, d in -3.0f64..3.0, c in 0.0f64..0.5,
            t in -1.5f64..1.5, step in 0.01f64..1.0,
        ) {
            let item = DichotomousItem::new(
                "m", Format::Mc, ModelFamily::Bifactor, false, vec![a1, a2, 0.0], d, c,
            ).unwrap();
            let at = |s: f64| item.prob_at(&[s * a1, s * a2, 0.0]);
            prop_assert!(at(t + step) > at(t));
            prop_assert!(at(t) > c && at(t) < 1.0);
        }

        #[test]
        fn uirt_matches_textbook_three_pl(
            a in 0.2f64..3.0, b in -3.0f64..3.0, c in 0.0f64..0.5, theta in -5.0f64..5.0,
        ) {
            let item = DichotomousItem::from_uirt("u", a, b, c).unwrap();
            let textbook = c + (1.0 - c) / (1.0 + (-a * (theta - b)).exp());
            prop_assert!((item.prob_at(&[theta]) - textbook).abs() < 1e-12);
        }
    }
}
