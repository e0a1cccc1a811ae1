//! Table and plot emission.
//!
//! Every table is written twice: `<name>.csv` at two decimals for reading
//! and `<name>_raw.csv` with shortest round-trip floats.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{Evaluation, ParamClass, Reference};
use crate::linking::trf_curve;
use crate::model::{ModelFamily, ThetaVector};
use crate::simulation::{AnchorScenario, Condition, StudyReport};

enum Cell {
    Text(String),
    Num(f64),
    Blank,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    fn render(&self, raw: bool) -> Result<Vec<u8>> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(&self.header).map_err(crate::data::csv_err)?;
        for row in &self.rows {
            let fields = row.iter().map(|c| match c {
                Cell::Text(s) => s.clone(),
                Cell::Num(v) if raw => v.to_string(),
                Cell::Num(v) => two_decimals(*v),
                Cell::Blank => String::new(),
            });
            wr.write_record(fields).map_err(crate::data::csv_err)?;
        }
        wr.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
    }

    fn save(&self, dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<()> {
        for (raw, suffix) in [(false, ""), (true, "_raw")] {
            let path = dir.join(format!("{name}{suffix}.csv"));
            fs::write(&path, self.render(raw)?).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(())
    }
}

fn two_decimals(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn rhos(report: &StudyReport) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for c in report.conditions() {
        if !out.iter().any(|r| r.to_bits() == c.rho.to_bits()) {
            out.push(c.rho);
        }
    }
    out
}

fn scenarios(report: &StudyReport, model: ModelFamily) -> Vec<AnchorScenario> {
    let mut out: Vec<AnchorScenario> = report
        .conditions()
        .iter()
        .filter(|c| c.model == model)
        .map(|c| c.scenario)
        .collect();
    out.sort();
    out.dedup();
    out
}

fn condition(rho: f64, scenario: AnchorScenario, model: ModelFamily) -> Condition {
    Condition { rho, scenario, model }
}

fn constants_table(report: &StudyReport, eval: &Evaluation, model: ModelFamily) -> Table {
    let d = model.dim();
    let mut header = vec!["scenario".to_string(), "rho".to_string()];
    if d == 1 {
        header.extend(["A".to_string(), "B".to_string()]);
    } else {
        for r in 1..=d {
            for c in 1..=d {
                header.push(format!("a{r}{c}"));
            }
        }
        header.extend((1..=d).map(|r| format!("b{r}")));
    }
    let mut rows = Vec::new();
    for scenario in scenarios(report, model) {
        for rho in rhos(report) {
            let Some(row) = eval.constants.get(&condition(rho, scenario, model)) else {
                continue;
            };
            let mut cells = vec![Cell::Text(scenario.to_string()), Cell::Text(rho.to_string())];
            for r in 0..d {
                for c in 0..d {
                    cells.push(Cell::Num(row.matrix[(r, c)]));
                }
            }
            cells.extend(row.location.iter().map(|v| Cell::Num(*v)));
            rows.push(cells);
        }
    }
    Table { header, rows }
}

/// Rows per parameter class and scenario, one column per correlation level.
fn armsd_by_class(report: &StudyReport, eval: &Evaluation, model: ModelFamily) -> Table {
    let rho_levels = rhos(report);
    let mut header = vec!["parameter".to_string(), "scenario".to_string()];
    header.extend(rho_levels.iter().map(|r| format!("rho={r}")));
    let mut rows = Vec::new();
    for class in ParamClass::all_for(model, AnchorScenario::McCr) {
        let label = class.label(model);
        for scenario in scenarios(report, model).into_iter().rev() {
            if !ParamClass::all_for(model, scenario).contains(&class) {
                continue;
            }
            let mut cells = vec![Cell::Text(label.clone()), Cell::Text(scenario.to_string())];
            for &rho in &rho_levels {
                cells.push(
                    eval.armsd
                        .get(&condition(rho, scenario, model), &label, Reference::Calibration)
                        .map_or(Cell::Blank, Cell::Num),
                );
            }
            rows.push(cells);
        }
    }
    Table { header, rows }
}

/// One row per correlation level, one column per (class, scenario).
fn armsd_by_rho(report: &StudyReport, eval: &Evaluation, model: ModelFamily) -> Table {
    let mut columns = Vec::new();
    for class in ParamClass::all_for(model, AnchorScenario::McCr) {
        for scenario in scenarios(report, model).into_iter().rev() {
            if ParamClass::all_for(model, scenario).contains(&class) {
                columns.push((class.label(model), scenario));
            }
        }
    }
    let mut header = vec!["rho".to_string()];
    header.extend(columns.iter().map(|(l, s)| format!("{l}:{s}")));
    let rows = rhos(report)
        .into_iter()
        .map(|rho| {
            let mut cells = vec![Cell::Text(rho.to_string())];
            for (label, scenario) in &columns {
                cells.push(
                    eval.armsd
                        .get(&condition(rho, *scenario, model), label, Reference::Calibration)
                        .map_or(Cell::Blank, Cell::Num),
                );
            }
            cells
        })
        .collect();
    Table { header, rows }
}

fn population_table(eval: &Evaluation) -> Table {
    let header = ["scenario", "rho", "mean1", "mean2", "cov11", "cov12", "cov21", "cov22"]
        .map(String::from)
        .to_vec();
    let mut sorted: Vec<_> = eval.population.iter().collect();
    sorted.sort_by(|a, b| {
        b.condition
            .scenario
            .cmp(&a.condition.scenario)
            .then(a.condition.rho.total_cmp(&b.condition.rho))
    });
    let rows = sorted
        .into_iter()
        .map(|p| {
            vec![
                Cell::Text(p.condition.scenario.to_string()),
                Cell::Text(p.condition.rho.to_string()),
                Cell::Num(p.mean[0]),
                Cell::Num(p.mean[1]),
                Cell::Num(p.cov[(0, 0)]),
                Cell::Num(p.cov[(0, 1)]),
                Cell::Num(p.cov[(1, 0)]),
                Cell::Num(p.cov[(1, 1)]),
            ]
        })
        .collect();
    Table { header, rows }
}

/// Every ARMSD cell, both references, long format.
fn armsd_long(eval: &Evaluation) -> Table {
    let header = ["model", "scenario", "rho", "parameter", "reference", "armsd"]
        .map(String::from)
        .to_vec();
    let rows = eval
        .armsd
        .cells
        .iter()
        .map(|c| {
            vec![
                Cell::Text(c.condition.model.to_string()),
                Cell::Text(c.condition.scenario.to_string()),
                Cell::Text(c.condition.rho.to_string()),
                Cell::Text(c.label.clone()),
                Cell::Text(c.reference.to_string()),
                Cell::Num(c.value),
            ]
        })
        .collect();
    Table { header, rows }
}

/// Writes every table that the report's models support; returns the paths.
pub fn write_tables(dir: &Path, report: &StudyReport, eval: &Evaluation) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let models: Vec<ModelFamily> = ModelFamily::ALL
        .into_iter()
        .filter(|m| report.records.iter().any(|r| r.condition.model == *m))
        .collect();
    let mut written = Vec::new();
    for model in models {
        let (constants, armsd) = match model {
            ModelFamily::Uirt => ("table2_uirt_constants", "table3_uirt_armsd"),
            ModelFamily::Bifactor => ("table4a_bifactor_constants", "table5a_bifactor_armsd"),
            ModelFamily::SimpleStructure => ("table4b_simple_structure_constants", "table5b_simple_structure_armsd"),
        };
        constants_table(report, eval, model).save(dir, constants, &mut written)?;
        let table = if model == ModelFamily::Uirt {
            armsd_by_class(report, eval, model)
        } else {
            armsd_by_rho(report, eval, model)
        };
        table.save(dir, armsd, &mut written)?;
    }
    if !eval.population.is_empty() {
        population_table(eval).save(dir, "table6_population", &mut written)?;
    }
    armsd_long(eval).save(dir, "armsd_all", &mut written)?;
    Ok(written)
}

pub fn condition_slug(c: &Condition) -> String {
    format!("rho{}_{}_{}", c.rho, c.scenario, c.model)
}

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 55.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            h - bottom + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + (w - left - right) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        let ly = top + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + 10.0,
            left + 30.0,
            s.color,
            left + 36.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// TRF overlay of base anchors against transformed new anchors along the
/// equal-ability diagonal, for the first replication of each condition.
/// Loss traces are drawn when the report kept them.
pub fn write_plots(dir: &Path, report: &StudyReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for c in report.conditions() {
        let Some(rec) = report.records_for(&c).next() else {
            continue;
        };
        let d = c.model.dim();
        let ts: Vec<f64> = (0..=80).map(|k| -4.0 + 0.1 * k as f64).collect();
        let thetas = ts
            .iter()
            .map(|&t| ThetaVector::new(vec![t; d]))
            .collect::<Result<Vec<_>>>()?;
        let base = trf_curve(&rec.base_anchors, &thetas)?;
        let new = trf_curve(&rec.new_anchors, &thetas)?;
        let svg = line_chart(
            &format!("Anchor TRF, {c}, replication {}", rec.replication),
            "theta (all dimensions equal)",
            "expected anchor score",
            &[
                Series {
                    name: "base calibration",
                    color: "#1f77b4",
                    points: ts.iter().copied().zip(base).collect(),
                },
                Series {
                    name: "new, transformed",
                    color: "#d62728",
                    points: ts.iter().copied().zip(new).collect(),
                },
            ],
        );
        let path = dir.join(format!("trf_{}.svg", condition_slug(&c)));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let trace = &rec.linking.trace;
        if !trace.is_empty() {
            let floor = trace.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
            let points = trace
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64, v.max(floor).log10()))
                .collect();
            let svg = line_chart(
                &format!("Linking loss, {c}, replication {}", rec.replication),
                "simplex iteration",
                "log10 loss",
                &[Series {
                    name: "best loss",
                    color: "#2ca02c",
                    points,
                }],
            );
            let path = dir.join(format!("loss_{}.svg", condition_slug(&c)));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimals_drop_negative_zero() {
        assert_eq!(two_decimals(-0.001), "0.00");
        assert_eq!(two_decimals(0.955), "0.95");
        assert_eq!(two_decimals(1.0), "1.00");
    }

    #[test]
    fn chart_is_well_formed() {
        let svg = line_chart(
            "a<b",
            "x",
            "y",
            &[Series {
                name: "s",
                color: "red",
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
    }
}
