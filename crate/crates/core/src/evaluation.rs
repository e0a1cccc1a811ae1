//! Accuracy summaries over a [`StudyReport`]: mean equating constants,
//! average RMSDs of transformed anchor parameters, and population recovery.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Format, Item, ModelFamily};
use crate::simulation::{AnchorScenario, Condition, ReplicationRecord, StudyReport};

/// `sqrt(mean((e - r)^2))`, summed left to right.
pub fn rmsd(estimates: &[f64], references: &[f64]) -> Result<f64> {
    if estimates.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: references.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::invalid("rmsd of an empty list"));
    }
    let mut sum = 0.0;
    for (e, r) in estimates.iter().zip(references) {
        let d = e - r;
        sum += d * d;
    }
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Mean over replications of the per-replication [`rmsd`].
pub fn armsd(per_replication: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if per_replication.is_empty() {
        return Err(Error::invalid("armsd needs at least one replication"));
    }
    let mut sum = 0.0;
    for (e, r) in per_replication {
        sum += rmsd(e, r)?;
    }
    Ok(sum / per_replication.len() as f64)
}

/// A pool of comparable anchor parameters.
///
/// Under UIRT the MC location is `b = -d/a` and CR parameters use the
/// step metric (`delta_v / a`); under MIRT the raw intercepts `d` and
/// thresholds `delta_v` are compared. CR location is the mean step (mean
/// threshold), and `Step` pools each item's deviations from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamClass {
    /// Slope on the `slot`-th loaded dimension of the format's mask.
    Slope { format: Format, slot: usize },
    Location { format: Format },
    Guessing,
    Step,
}

impl ParamClass {
    /// Classes reported for `model` under `scenario`; CR classes only when
    /// CR anchors are linked.
    pub fn all_for(model: ModelFamily, scenario: AnchorScenario) -> Vec<ParamClass> {
        let mut out = Vec::new();
        let mut push_format = |format: Format| {
            for slot in 0..model.loaded_dims(format).len() {
                out.push(ParamClass::Slope { format, slot });
            }
            out.push(ParamClass::Location { format });
            match format {
                Format::Mc => out.push(ParamClass::Guessing),
                Format::Cr => out.push(ParamClass::Step),
            }
        };
        push_format(Format::Mc);
        if scenario == AnchorScenario::McCr {
            push_format(Format::Cr);
        }
        out
    }

    pub fn format(self) -> Format {
        match self {
            ParamClass::Slope { format, .. } | ParamClass::Location { format } => format,
            ParamClass::Guessing => Format::Mc,
            ParamClass::Step => Format::Cr,
        }
    }

    /// Row label, e.g. `MC-a`, `MC-a2`, `MC-b` (UIRT) / `MC-d` (MIRT), `CR-step`.
    pub fn label(self, model: ModelFamily) -> String {
        let f = self.format();
        match self {
            ParamClass::Slope { slot, .. } if model.loaded_dims(f).len() > 1 => format!("{f}-a{}", slot + 1),
            ParamClass::Slope { .. } => format!("{f}-a"),
            ParamClass::Location { .. } if model == ModelFamily::Uirt => format!("{f}-b"),
            ParamClass::Location { .. } => format!("{f}-d"),
            ParamClass::Guessing => "MC-c".into(),
            ParamClass::Step => "CR-step".into(),
        }
    }

    /// Values of this class over `items` in order, items of other formats skipped.
    pub fn values(self, items: &[Item], model: ModelFamily) -> Vec<f64> {
        let uirt = model == ModelFamily::Uirt;
        let mut out = Vec::new();
        for item in items.iter().filter(|i| i.format() == self.format()) {
            match (self, item) {
                (ParamClass::Slope { format, slot }, _) => {
                    let k = model.loaded_dims(format)[slot];
                    out.push(item.a()[k]);
                }
                (ParamClass::Location { .. }, Item::Dichotomous(i)) => {
                    out.push(if uirt { -i.d() / i.a()[0] } else { i.d() });
                }
                (ParamClass::Location { .. }, Item::Polytomous(i)) => {
                    out.push(mean(i.deltas()) / if uirt { i.a()[0] } else { 1.0 });
                }
                (ParamClass::Guessing, Item::Dichotomous(i)) => out.push(i.c()),
                (ParamClass::Step, Item::Polytomous(i)) => {
                    let scale = if uirt { i.a()[0] } else { 1.0 };
                    let center = mean(i.deltas());
                    out.extend(i.deltas().iter().map(|v| (v - center) / scale));
                }
                _ => {}
            }
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// What the transformed new-form anchors are compared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reference {
    /// Base-form calibration estimates.
    Calibration,
    /// Generating parameters projected onto the analysis family.
    Truth,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Calibration => "calibration",
            Reference::Truth => "truth",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmsdCell {
    pub condition: Condition,
    pub class: ParamClass,
    pub label: String,
    pub reference: Reference,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmsdTable {
    pub cells: Vec<ArmsdCell>,
}

impl ArmsdTable {
    pub fn get(&self, condition: &Condition, label: &str, reference: Reference) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| same_condition(&c.condition, condition) && c.label == label && c.reference == reference)
            .map(|c| c.value)
    }
}

fn same_condition(a: &Condition, b: &Condition) -> bool {
    a.rho.to_bits() == b.rho.to_bits() && a.scenario == b.scenario && a.model == b.model
}

/// ARMSD of every class for every condition in the report, against both references.
pub fn armsd_table(report: &StudyReport) -> Result<ArmsdTable> {
    let mut cells = Vec::new();
    for condition in report.conditions() {
        let records: Vec<&ReplicationRecord> = report.records_for(&condition).collect();
        for class in ParamClass::all_for(condition.model, condition.scenario) {
            for reference in [Reference::Calibration, Reference::Truth] {
                let pairs: Vec<(Vec<f64>, Vec<f64>)> = records
                    .iter()
                    .map(|r| {
                        let target = match reference {
                            Reference::Calibration => &r.base_anchors,
                            Reference::Truth => &r.true_anchors,
                        };
                        (class.values(&r.new_anchors, condition.model), class.values(target, condition.model))
                    })
                    .collect();
                cells.push(ArmsdCell {
                    condition,
                    class,
                    label: class.label(condition.model),
                    reference,
                    value: armsd(&pairs)?,
                });
            }
        }
    }
    Ok(ArmsdTable { cells })
}

/// Per-entry means of the transformation over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRow {
    pub condition: Condition,
    pub replications: usize,
    pub matrix: DMatrix<f64>,
    pub location: DVector<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSummary {
    pub rows: Vec<ConstantsRow>,
}

impl ConstantsSummary {
    pub fn get(&self, condition: &Condition) -> Option<&ConstantsRow> {
        self.rows.iter().find(|r| same_condition(&r.condition, condition))
    }
}

pub fn summarize_constants(report: &StudyReport) -> Result<ConstantsSummary> {
    let mut rows = Vec::new();
    for condition in report.conditions() {
        let records: Vec<&ReplicationRecord> = report.records_for(&condition).collect();
        let d = records[0].linking.transform.dim();
        let mut matrix = DMatrix::zeros(d, d);
        let mut location = DVector::zeros(d);
        for r in &records {
            let t = &r.linking.transform;
            if t.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: t.dim(),
                });
            }
            matrix += t.matrix();
            location += t.location();
        }
        let n = records.len() as f64;
        rows.push(ConstantsRow {
            condition,
            replications: records.len(),
            matrix: matrix / n,
            location: location / n,
        });
    }
    Ok(ConstantsSummary { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub condition: Condition,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Mean transformed new-group population per condition. Defined for
/// simple-structure analyses only.
pub fn population_recovery(report: &StudyReport, model: ModelFamily) -> Result<Vec<PopulationRow>> {
    if model != ModelFamily::SimpleStructure {
        return Err(Error::Unsupported(format!(
            "population recovery is reported for SimpleStructure analyses, not {model}"
        )));
    }
    let mut rows = Vec::new();
    for condition in report.conditions().into_iter().filter(|c| c.model == model) {
        let records: Vec<&ReplicationRecord> = report.records_for(&condition).collect();
        let mut mean = DVector::zeros(2);
        let mut cov = DMatrix::zeros(2, 2);
        for r in &records {
            mean += &r.new_population.mean;
            cov += &r.new_population.cov;
        }
        let n = records.len() as f64;
        rows.push(PopulationRow {
            condition,
            mean: mean / n,
            cov: cov / n,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("report holds no SimpleStructure results"));
    }
    Ok(rows)
}

/// Everything the report tables are built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub constants: ConstantsSummary,
    pub armsd: ArmsdTable,
    pub population: Vec<PopulationRow>,
}

pub fn evaluate(report: &StudyReport) -> Result<Evaluation> {
    let has_ss = report.records.iter().any(|r| r.condition.model == ModelFamily::SimpleStructure);
    Ok(Evaluation {
        constants: summarize_constants(report)?,
        armsd: armsd_table(report)?,
        population: if has_ss {
            population_recovery(report, ModelFamily::SimpleStructure)?
        } else {
            Vec::new()
        },
    })
}
