//! Study configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//! base_seed = 20180401
//! n_examinees = 3000
//! n_replications = 20
//! rho_levels = [0.5, 0.8, 1.0]
//! anchor_scenarios = ["MCOnly", "MCCR"]
//! analysis_models = ["UIRT", "SimpleStructure", "Bifactor"]
//!
//! [bank]
//! seed = 2018            # synthetic bank, or: base = "base.csv", new = "new.csv"
//!
//! [calibration]
//! mode = "MCMC"          # or "OracleNoise" with noise_sigma
//! chain_length = 2000
//! burn_in = 1000
//!
//! [linking]
//! initial_step = 0.1
//!
//! [new_group]            # optional nonequivalent new group
//! mean = [0.0, 0.2]
//! cov = [[1.0, 0.5], [0.5, 1.0]]
//! ```
//!
//! Unknown keys are errors. Relative bank paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bank::load_form;
use crate::calibration::{CalibrationMode, CalibrationSpec, Population, PriorSet, ProposalScales};
use crate::error::{Error, Result};
use crate::linking::LinkingOptions;
use crate::model::ModelFamily;
use crate::simulation::{default_item_bank, AnchorScenario, StudyConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub schema_version: u32,
    /// Omitted: drawn from entropy by the caller and recorded in the manifest.
    pub base_seed: Option<u64>,
    #[serde(default = "default_examinees")]
    pub n_examinees: usize,
    #[serde(default = "default_replications")]
    pub n_replications: usize,
    #[serde(default = "default_rhos")]
    pub rho_levels: Vec<f64>,
    #[serde(default = "default_scenarios")]
    pub anchor_scenarios: Vec<AnchorScenario>,
    #[serde(default = "default_models")]
    pub analysis_models: Vec<ModelFamily>,
    #[serde(default)]
    pub keep_traces: bool,
    pub bank: BankSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub linking: LinkingOptions,
    pub new_group: Option<GroupSection>,
}

fn default_examinees() -> usize {
    3000
}
fn default_replications() -> usize {
    20
}
fn default_rhos() -> Vec<f64> {
    vec![0.5, 0.8, 1.0]
}
fn default_scenarios() -> Vec<AnchorScenario> {
    AnchorScenario::ALL.to_vec()
}
fn default_models() -> Vec<ModelFamily> {
    ModelFamily::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSection {
    pub seed: Option<u64>,
    pub base: Option<PathBuf>,
    pub new: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub mode: CalibrationMode,
    pub chain_length: usize,
    pub burn_in: usize,
    pub noise_sigma: f64,
    pub prior: PriorSet,
    pub proposal_scales: ProposalScales,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let spec = CalibrationSpec::mcmc(ModelFamily::Uirt, 0);
        CalibrationSection {
            mode: spec.mode,
            chain_length: spec.chain_length,
            burn_in: spec.burn_in,
            noise_sigma: 0.0,
            prior: spec.prior_spec,
            proposal_scales: spec.proposal_scales,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl StudyFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let file: StudyFile = toml::from_str(text).map_err(|e| Error::Config {
            path: source.to_string(),
            line: e.span().map_or(0, |s| line_at(text, s.start)),
            message: e.message().to_string(),
        })?;
        if file.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config {
                path: source.to_string(),
                line: key_line(text, "schema_version"),
                message: format!(
                    "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                    file.schema_version
                ),
            });
        }
        Ok(file)
    }

    /// Resolves the bank and assembles a validated [`StudyConfig`]. Semantic
    /// errors carry the line of the offending key when it can be found.
    pub fn resolve(&self, text: &str, source: &str, dir: &Path, base_seed: u64) -> Result<StudyConfig> {
        let cfg_err = |key: &str, message: String| Error::Config {
            path: source.to_string(),
            line: key_line(text, key),
            message,
        };
        let (base_form, new_form) = match (&self.bank.seed, &self.bank.base, &self.bank.new) {
            (Some(seed), None, None) => default_item_bank(*seed)?,
            (None, Some(base), Some(new)) => {
                let load = |p: &PathBuf| load_form(&if p.is_absolute() { p.clone() } else { dir.join(p) });
                (load(base)?, load(new)?)
            }
            _ => {
                return Err(cfg_err(
                    "[bank]",
                    "[bank] needs either `seed` or both `base` and `new`".into(),
                ))
            }
        };
        let c = &self.calibration;
        let calibration = CalibrationSpec {
            mode: c.mode,
            model_family: ModelFamily::Uirt,
            chain_length: c.chain_length,
            burn_in: c.burn_in,
            proposal_scales: c.proposal_scales,
            prior_spec: c.prior,
            seed: 0,
            noise_sigma: c.noise_sigma,
        };
        let new_group = self.new_group.as_ref().map(|g| Population {
            mean: DVector::from_row_slice(&g.mean),
            cov: DMatrix::from_row_slice(2, 2, &[g.cov[0][0], g.cov[0][1], g.cov[1][0], g.cov[1][1]]),
        });
        if let Some(g) = &new_group {
            let ok = g.cov[(0, 1)] == g.cov[(1, 0)]
                && g.cov[(0, 0)] > 0.0
                && g.cov[(1, 1)] > 0.0
                && g.cov[(0, 1)].powi(2) <= g.cov[(0, 0)] * g.cov[(1, 1)];
            if !ok {
                return Err(cfg_err("cov", "new_group.cov must be symmetric positive semidefinite".into()));
            }
        }
        let config = StudyConfig {
            rho_levels: self.rho_levels.clone(),
            anchor_scenarios: self.anchor_scenarios.clone(),
            analysis_models: self.analysis_models.clone(),
            n_examinees: self.n_examinees,
            n_replications: self.n_replications,
            base_seed,
            base_form,
            new_form,
            calibration,
            linking: self.linking.clone(),
            new_group,
            keep_traces: self.keep_traces,
        };
        config.validate().map_err(|e| {
            let key = match &e {
                Error::InvalidParameter(m) if m.contains("correlation level") => "rho_levels",
                Error::InvalidParameter(m) if m.contains("n_examinees") => "n_examinees",
                Error::InvalidParameter(m) if m.contains("burn_in") => "burn_in",
                Error::InvalidParameter(m) if m.contains("noise_sigma") => "noise_sigma",
                Error::EmptyAnchorSet(_) | Error::AnchorMisalignment(_) => "[bank]",
                _ => "",
            };
            cfg_err(key, e.to_string())
        })?;
        Ok(config)
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of the first line starting with `key`, 0 when absent.
fn key_line(text: &str, key: &str) -> usize {
    if key.is_empty() {
        return 0;
    }
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.starts_with(key) && (key.starts_with('[') || l[key.len()..].trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nbase_seed = 7\n\n[bank]\nseed = 2018\n";

    #[test]
    fn defaults_fill_in() {
        let f = StudyFile::parse(MINIMAL, "study.toml").unwrap();
        assert_eq!(f.n_examinees, 3000);
        assert_eq!(f.n_replications, 20);
        assert_eq!(f.rho_levels, vec![0.5, 0.8, 1.0]);
        let cfg = f.resolve(MINIMAL, "study.toml", Path::new("."), 7).unwrap();
        assert_eq!(cfg.calibration.chain_length, 2000);
        assert_eq!(cfg.base_form.len(), 48);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "schema_version = 1\n[bank]\nseed = 1\n[calibration]\nchains = 3\n";
        let err = StudyFile::parse(text, "s.toml").unwrap_err();
        match err {
            Error::Config { line, ref message, .. } => {
                assert_eq!(line, 5, "{message}");
                assert!(message.contains("chains"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn wrong_schema_version() {
        let err = StudyFile::parse("schema_version = 9\n[bank]\nseed = 1\n", "s.toml").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn semantic_errors_point_at_key() {
        let text = "schema_version = 1\nrho_levels = [0.5, 1.5]\n[bank]\nseed = 1\n";
        let f = StudyFile::parse(text, "s.toml").unwrap();
        let err = f.resolve(text, "s.toml", Path::new("."), 1).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");

        let text = "schema_version = 1\n[bank]\nseed = 1\nbase = \"x.csv\"\n";
        let f = StudyFile::parse(text, "s.toml").unwrap();
        let err = f.resolve(text, "s.toml", Path::new("."), 1).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }
}
