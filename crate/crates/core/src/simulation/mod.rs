//! Data generation and the replicated linking study.
//!
//! One work unit is `(rho, analysis model, replication)`: generate both
//! groups' data, calibrate both forms, then link once per anchor scenario.
//! Every random stream is seeded from `base_seed` and a key naming its
//! consumer. Keys never include the correlation level, so all levels share
//! the same underlying normal draws, and they never include the scenario,
//! since scenarios only differ in which calibrated anchors are linked.

mod generate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_mcmc, calibrate_oracle, project_item, CalibrationMode, CalibrationResult, CalibrationSpec, Population};
use crate::error::{Error, Result};
use crate::linking::{estimate_transform, transform_item, transform_population, LinkingOptions, LinkingResult, QuadratureGrid};
use crate::model::{Item, ModelFamily, TestForm};

pub use generate::{
    build_anchor_set, default_item_bank, derive_seed, generate_responses, sample_population, sample_thetas,
    GeneratedDataset,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnchorScenario {
    #[serde(rename = "MCOnly")]
    McOnly,
    #[serde(rename = "MCCR")]
    McCr,
}

impl AnchorScenario {
    pub const ALL: [AnchorScenario; 2] = [AnchorScenario::McOnly, AnchorScenario::McCr];
}

impl fmt::Display for AnchorScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorScenario::McOnly => "MCOnly",
            AnchorScenario::McCr => "MCCR",
        })
    }
}

impl FromStr for AnchorScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "MCOnly" | "mconly" | "MC-only" => Ok(AnchorScenario::McOnly),
            "MCCR" | "mccr" | "MC-CR" => Ok(AnchorScenario::McCr),
            other => Err(Error::invalid(format!("unknown anchor scenario `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub rho_levels: Vec<f64>,
    pub anchor_scenarios: Vec<AnchorScenario>,
    pub analysis_models: Vec<ModelFamily>,
    pub n_examinees: usize,
    pub n_replications: usize,
    pub base_seed: u64,
    pub base_form: TestForm,
    pub new_form: TestForm,
    /// Template for every calibration; its seed is replaced per work unit.
    pub calibration: CalibrationSpec,
    pub linking: LinkingOptions,
    /// New-group ability distribution; `None` means the base group's.
    pub new_group: Option<Population>,
    /// Keep per-iteration linking losses in the report.
    pub keep_traces: bool,
}

impl StudyConfig {
    /// Study defaults on the synthetic bank: every condition, 3000
    /// examinees, 20 replications, MCMC calibration.
    pub fn paper_defaults(base_seed: u64, bank_seed: u64) -> Result<Self> {
        let (base_form, new_form) = default_item_bank(bank_seed)?;
        Ok(StudyConfig {
            rho_levels: vec![0.5, 0.8, 1.0],
            anchor_scenarios: AnchorScenario::ALL.to_vec(),
            analysis_models: ModelFamily::ALL.to_vec(),
            n_examinees: 3000,
            n_replications: 20,
            base_seed,
            base_form,
            new_form,
            calibration: CalibrationSpec::mcmc(ModelFamily::Uirt, 0),
            linking: LinkingOptions::default(),
            new_group: None,
            keep_traces: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_levels.is_empty() || self.anchor_scenarios.is_empty() || self.analysis_models.is_empty() {
            return Err(Error::invalid("rho_levels, anchor_scenarios and analysis_models must be nonempty"));
        }
        if let Some(r) = self.rho_levels.iter().find(|r| !(-1.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("correlation level {r} outside [-1, 1]")));
        }
        if self.n_examinees == 0 || self.n_replications == 0 {
            return Err(Error::invalid("n_examinees and n_replications must be at least 1"));
        }
        self.calibration.validate()?;
        for form in [&self.base_form, &self.new_form] {
            if form.family() != ModelFamily::SimpleStructure {
                return Err(Error::invalid(format!(
                    "form {} must hold simple-structure generating items",
                    form.name()
                )));
            }
            if form.anchors().next().is_none() {
                return Err(Error::EmptyAnchorSet(format!(
                    "form {} has no designated anchor items",
                    form.name()
                )));
            }
        }
        for &scenario in &self.anchor_scenarios {
            for id in build_anchor_set(&self.base_form, scenario)? {
                match self.new_form.get(&id) {
                    Some(item) if item.anchor() => {}
                    _ => {
                        return Err(Error::AnchorMisalignment(format!(
                            "anchor {id} of form {} is not an anchor of form {}",
                            self.base_form.name(),
                            self.new_form.name()
                        )))
                    }
                }
            }
            build_anchor_set(&self.new_form, scenario)?;
        }
        if let Some(pop) = &self.new_group {
            if pop.dim() != 2 {
                return Err(Error::invalid("new_group must be two-dimensional"));
            }
        }
        Ok(())
    }

    pub fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for &rho in &self.rho_levels {
            for &scenario in &self.anchor_scenarios {
                for &model in &self.analysis_models {
                    out.push(Condition { rho, scenario, model });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub rho: f64,
    pub scenario: AnchorScenario,
    pub model: ModelFamily,
}

impl Condition {
    fn sort_key(&self) -> (u64, AnchorScenario, ModelFamily) {
        (self.rho.to_bits(), self.scenario, self.model)
    }

    fn cmp(&self, other: &Condition) -> std::cmp::Ordering {
        self.rho
            .total_cmp(&other.rho)
            .then(self.scenario.cmp(&other.scenario))
            .then(self.model.cmp(&other.model))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rho={}/scenario={}/model={}", self.rho, self.scenario, self.model)
    }
}

/// Everything evaluation needs from one linked replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub condition: Condition,
    pub replication: usize,
    pub linking: LinkingResult,
    /// Base-form calibration estimates of the scenario's anchors.
    pub base_anchors: Vec<Item>,
    /// New-form estimates of the same anchors after the transformation.
    pub new_anchors: Vec<Item>,
    /// Generating anchors expressed in the analysis family on the base
    /// group's standardized scale.
    pub true_anchors: Vec<Item>,
    /// New-group population estimate after the transformation.
    pub new_population: Population,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionFailure {
    pub condition: Condition,
    pub replication: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub format_version: u32,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ConditionFailure>,
    /// Every derived seed, keyed by consumer.
    pub seeds: BTreeMap<String, u64>,
}

impl StudyReport {
    pub fn records_for(&self, condition: &Condition) -> impl Iterator<Item = &ReplicationRecord> + '_ {
        let key = condition.sort_key();
        self.records.iter().filter(move |r| r.condition.sort_key() == key)
    }

    /// Distinct conditions in canonical order.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut out: Vec<Condition> = Vec::new();
        for r in &self.records {
            if !out.iter().any(|c| c.sort_key() == r.condition.sort_key()) {
                out.push(r.condition);
            }
        }
        out.sort_by(Condition::cmp);
        out
    }
}

struct Unit {
    rho: f64,
    model: ModelFamily,
    replication: usize,
}

type UnitOutput = (Vec<std::result::Result<ReplicationRecord, ConditionFailure>>, Vec<(String, u64)>);

/// Runs every condition and replication on `jobs` worker threads (0 = all
/// cores). Failing work units are recorded in [`StudyReport::failures`];
/// the report is identical for any `jobs`.
pub fn run_study(config: &StudyConfig, jobs: usize) -> Result<StudyReport> {
    config.validate()?;
    let mut units = Vec::new();
    for &rho in &config.rho_levels {
        for &model in &config.analysis_models {
            for replication in 0..config.n_replications {
                units.push(Unit { rho, model, replication });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outputs: Vec<UnitOutput> = pool.install(|| units.par_iter().map(|u| run_unit(config, u)).collect());

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut seeds = BTreeMap::new();
    for (results, unit_seeds) in outputs {
        for r in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(f) => failures.push(f),
            }
        }
        seeds.extend(unit_seeds);
    }
    records.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.replication.cmp(&b.replication)));
    failures.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.replication.cmp(&b.replication)));
    Ok(StudyReport {
        format_version: REPORT_FORMAT_VERSION,
        records,
        failures,
        seeds,
    })
}

fn run_unit(config: &StudyConfig, unit: &Unit) -> UnitOutput {
    let mut seeds = Vec::new();
    let calibrated = calibrate_unit(config, unit, &mut seeds);
    let results = config
        .anchor_scenarios
        .iter()
        .map(|&scenario| {
            let condition = Condition {
                rho: unit.rho,
                scenario,
                model: unit.model,
            };
            let outcome = match &calibrated {
                Ok((base, new)) => link_unit(config, condition, unit.replication, base, new),
                Err(e) => Err(e.to_string()),
            };
            outcome.map_err(|message| {
                log::error!("condition {condition}, replication {}: {message}", unit.replication);
                ConditionFailure {
                    condition,
                    replication: unit.replication,
                    message,
                }
            })
        })
        .collect();
    (results, seeds)
}

fn populations(config: &StudyConfig, rho: f64) -> (Population, Population) {
    let base = Population::bivariate(rho);
    let new = config.new_group.clone().unwrap_or_else(|| base.clone());
    (base, new)
}

fn calibrate_unit(
    config: &StudyConfig,
    unit: &Unit,
    seeds: &mut Vec<(String, u64)>,
) -> Result<(CalibrationResult, CalibrationResult)> {
    let (base_pop, new_pop) = populations(config, unit.rho);
    let r = unit.replication;
    let mut run = |form: &TestForm, pop: &Population, group: &str| -> Result<CalibrationResult> {
        let cal_key = format!("calibrate/{}/{group}/rep{r}", unit.model);
        let spec = CalibrationSpec {
            model_family: unit.model,
            seed: derive_seed(config.base_seed, &cal_key),
            ..config.calibration.clone()
        };
        seeds.push((cal_key, spec.seed));
        match spec.mode {
            CalibrationMode::OracleNoise => calibrate_oracle(form.items(), pop, &spec),
            CalibrationMode::Mcmc => {
                let data_key = format!("data/{group}/rep{r}");
                let data_seed = derive_seed(config.base_seed, &data_key);
                seeds.push((data_key, data_seed));
                let data = GeneratedDataset::generate(form, config.n_examinees, pop, data_seed)?;
                calibrate_mcmc(&data.responses, form, &spec)
            }
        }
    };
    let tag = |e: Error| Error::Condition {
        condition: format!("rho={}/model={}", unit.rho, unit.model),
        replication: r,
        source: Box::new(e),
    };
    let base = run(&config.base_form, &base_pop, "base").map_err(tag)?;
    let new = run(&config.new_form, &new_pop, "new").map_err(tag)?;
    Ok((base, new))
}

fn link_unit(
    config: &StudyConfig,
    condition: Condition,
    replication: usize,
    base: &CalibrationResult,
    new: &CalibrationResult,
) -> std::result::Result<ReplicationRecord, String> {
    let inner = || -> Result<ReplicationRecord> {
        let ids = build_anchor_set(&config.base_form, condition.scenario)?;
        let pick = |cal: &CalibrationResult| -> Result<Vec<Item>> {
            ids.iter()
                .map(|id| {
                    cal.item(id)
                        .cloned()
                        .ok_or_else(|| Error::AnchorMisalignment(format!("calibration lacks anchor {id}")))
                })
                .collect()
        };
        let base_anchors = pick(base)?;
        let new_est = pick(new)?;
        let grid = QuadratureGrid::default_for(condition.model.dim());
        let mut linking = estimate_transform(&base_anchors, &new_est, &grid, &config.linking)?;
        if !config.keep_traces {
            linking.trace.clear();
        }
        if linking.condition_warning {
            log::warn!("condition {condition}, replication {replication}: ill-conditioned linking solution");
        }
        let t = &linking.transform;
        let new_anchors = new_est.iter().map(|i| transform_item(i, t)).collect::<Result<Vec<_>>>()?;
        let np = new.population();
        let (mean, cov) = transform_population(&np.mean, &np.cov, t)?;
        let (base_pop, _) = populations(config, condition.rho);
        let true_anchors = ids
            .iter()
            .map(|id| {
                let item = config.base_form.get(id).expect("validated anchor");
                project_item(item, condition.model, &base_pop)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut calibration_warnings = base.warnings.clone();
        calibration_warnings.extend(new.warnings.iter().cloned());
        Ok(ReplicationRecord {
            condition,
            replication,
            linking,
            base_anchors,
            new_anchors,
            true_anchors,
            new_population: Population { mean, cov },
            calibration_warnings,
        })
    };
    inner().map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_config(sigma: f64) -> StudyConfig {
        let mut cfg = StudyConfig::paper_defaults(11, 2018).unwrap();
        cfg.n_replications = 1;
        cfg.rho_levels = vec![0.8];
        cfg.analysis_models = vec![ModelFamily::Uirt, ModelFamily::SimpleStructure];
        cfg.calibration = CalibrationSpec::oracle(ModelFamily::Uirt, sigma, 0);
        cfg
    }

    #[test]
    fn noiseless_oracle_recovers_identity() {
        let report = run_study(&oracle_config(0.0), 1).unwrap();
        assert!(report.failures.is_empty());
        assert_eq!(report.records.len(), 4);
        for rec in &report.records {
            let t = &rec.linking.transform;
            let d = t.dim();
            let id = nalgebra::DMatrix::<f64>::identity(d, d);
            assert!((t.matrix() - id).amax() < 1e-2, "{}", rec.condition);
            assert!(t.location().amax() < 1e-2);
        }
    }

    #[test]
    fn jobs_do_not_change_results() {
        let cfg = oracle_config(0.05);
        let a = run_study(&cfg, 1).unwrap();
        let b = run_study(&cfg, 2).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn condition_subset_matches_full_run() {
        let cfg = oracle_config(0.05);
        let full = run_study(&cfg, 1).unwrap();
        let mut only = cfg.clone();
        only.anchor_scenarios = vec![AnchorScenario::McOnly];
        only.analysis_models = vec![ModelFamily::SimpleStructure];
        let sub = run_study(&only, 1).unwrap();
        let c = sub.records[0].condition;
        let matching: Vec<_> = full.records_for(&c).collect();
        assert_eq!(matching, sub.records.iter().collect::<Vec<_>>());
    }

    #[test]
    fn validation_names_the_form() {
        let mut cfg = oracle_config(0.0);
        let items: Vec<Item> = cfg.new_form.items().iter().map(|i| i.clone().with_anchor(false)).collect();
        cfg.new_form = TestForm::new("new", items).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("new"), "{err}");
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("MCOnly".parse::<AnchorScenario>().unwrap(), AnchorScenario::McOnly);
        assert_eq!(AnchorScenario::McCr.to_string(), "MCCR");
        assert!("x".parse::<AnchorScenario>().is_err());
    }
}
