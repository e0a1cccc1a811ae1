//! Item-bank CSV layout:
//!
//! ```text
//! id,format,model_family,K,a1,a2,a3,d,c,delta1,...,delta{K-1},anchor
//! ```
//!
//! Slopes beyond the family's dimension are blank (blank reads as 0). A
//! dichotomous row fills `d` and `c` and leaves the thresholds blank; a
//! polytomous row leaves `d`/`c` blank. Numbers are written in shortest
//! round-trip decimal form, so read-then-write reproduces a written file
//! byte for byte. Lines starting with `#` are comments; a calibration result
//! appends its population estimates as `#pop_mean,...` and `#pop_cov,...`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::csv_err;
use crate::error::{Error, Result};
use crate::model::{DichotomousItem, Format, Item, ModelFamily, PolytomousItem, TestForm};

const FIXED: [&str; 9] = ["id", "format", "model_family", "K", "a1", "a2", "a3", "d", "c"];

fn num(v: f64) -> String {
    v.to_string()
}

pub fn write_items<W: Write>(items: &[Item], w: W) -> Result<()> {
    let max_steps = items.iter().map(Item::max_score).max().unwrap_or(1);
    let n_deltas = if items.iter().any(|i| matches!(i, Item::Polytomous(_))) {
        max_steps
    } else {
        0
    };
    let mut wr = csv::WriterBuilder::new().flexible(false).from_writer(w);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_deltas).map(|v| format!("delta{v}")));
    header.push("anchor".into());
    wr.write_record(&header).map_err(csv_err)?;

    for item in items {
        let mut row = vec![
            item.id().to_string(),
            item.format().to_string(),
            item.family().to_string(),
            item.n_categories().to_string(),
        ];
        for k in 0..3 {
            row.push(item.a().get(k).map(|&v| num(v)).unwrap_or_default());
        }
        match item {
            Item::Dichotomous(i) => {
                row.push(num(i.d()));
                row.push(num(i.c()));
                row.extend(std::iter::repeat_n(String::new(), n_deltas));
            }
            Item::Polytomous(i) => {
                row.push(String::new());
                row.push(String::new());
                row.extend(i.deltas().iter().map(|&v| num(v)));
                row.extend(std::iter::repeat_n(String::new(), n_deltas - i.deltas().len()));
            }
        }
        row.push(if item.anchor() { "1" } else { "0" }.into());
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_items<R: Read>(r: R, source: &str) -> Result<Vec<Item>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(r);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| perr(source, 1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = Vec::new();
    for name in FIXED.iter().chain(std::iter::once(&"anchor")) {
        idx.push(col(name).ok_or_else(|| perr(source, 1, format!("missing column `{name}`")))?);
    }
    let delta_cols: Vec<usize> = (1..)
        .map_while(|v| col(&format!("delta{v}")))
        .collect();

    let mut items = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| perr(source, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let float = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| perr(source, line, format!("{what}: `{s}` is not a number")))
        };
        let id = field(0).to_string();
        let format: Format = field(1).parse().map_err(|e: Error| perr(source, line, e.to_string()))?;
        let family: ModelFamily = field(2)
            .parse()
            .map_err(|e: Error| perr(source, line, e.to_string()))?;
        let k: usize = field(3)
            .parse()
            .map_err(|_| perr(source, line, format!("K: `{}` is not an integer", field(3))))?;
        if k < 2 {
            return Err(perr(source, line, format!("K must be at least 2, got {k}")));
        }
        let mut a = Vec::with_capacity(family.dim());
        for slot in 0..family.dim() {
            a.push(float(field(4 + slot), "slope")?.unwrap_or(0.0));
        }
        for slot in family.dim()..3 {
            if float(field(4 + slot), "slope")?.is_some_and(|v| v != 0.0) {
                return Err(perr(
                    source,
                    line,
                    format!("a{} must be blank for a {family} item", slot + 1),
                ));
            }
        }
        let anchor = match field(9) {
            "1" => true,
            "0" | "" => false,
            other => return Err(perr(source, line, format!("anchor must be 0 or 1, got `{other}`"))),
        };
        let d = float(field(7), "d")?;
        let item: Item = if let Some(d) = d {
            if k != 2 {
                return Err(perr(source, line, format!("dichotomous item with K = {k}")));
            }
            let c = float(field(8), "c")?.unwrap_or(0.0);
            DichotomousItem::new(id, format, family, anchor, a, d, c)
                .map_err(|e| perr(source, line, e.to_string()))?
                .into()
        } else {
            if delta_cols.len() < k - 1 {
                return Err(perr(source, line, format!("K = {k} but only {} threshold columns", delta_cols.len())));
            }
            let mut deltas = Vec::with_capacity(k - 1);
            for &c in &delta_cols[..k - 1] {
                let s = rec.get(c).unwrap_or("").trim();
                deltas.push(
                    float(s, "threshold")?
                        .ok_or_else(|| perr(source, line, "blank threshold within K".into()))?,
                );
            }
            PolytomousItem::new(id, format, family, anchor, a, deltas)
                .map_err(|e| perr(source, line, e.to_string()))?
                .into()
        };
        items.push(item);
    }
    Ok(items)
}

fn perr(source: &str, line: usize, message: String) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message,
    }
}

pub fn save_form(form: &TestForm, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_items(form.items(), &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_form(path: &Path) -> Result<TestForm> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let items = read_items(f, &path.display().to_string())?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "form".into());
    TestForm::new(name, items)
}

/// `#pop_mean,...` and `#pop_cov,...` (row-major) comment lines.
pub fn write_population_block<W: Write>(mut w: W, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
    let d = mean.len();
    let mean_s: Vec<String> = mean.iter().map(|&v| num(v)).collect();
    let mut cov_s = Vec::with_capacity(d * d);
    for r in 0..d {
        for c in 0..d {
            cov_s.push(num(cov[(r, c)]));
        }
    }
    writeln!(w, "#pop_mean,{}", mean_s.join(",")).map_err(|e| Error::io("<population>", e))?;
    writeln!(w, "#pop_cov,{}", cov_s.join(",")).map_err(|e| Error::io("<population>", e))?;
    Ok(())
}

pub fn read_population_block<R: Read>(r: R) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let mut mean = None;
    let mut cov = None;
    for line in BufReader::new(r).lines() {
        let line = line.map_err(|e| Error::io("<population>", e))?;
        let parse = |rest: &str| -> Result<Vec<f64>> {
            rest.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad population value `{s}`"))))
                .collect()
        };
        if let Some(rest) = line.strip_prefix("#pop_mean,") {
            mean = Some(parse(rest)?);
        } else if let Some(rest) = line.strip_prefix("#pop_cov,") {
            cov = Some(parse(rest)?);
        }
    }
    match (mean, cov) {
        (Some(m), Some(c)) if c.len() == m.len() * m.len() => {
            let d = m.len();
            Ok(Some((DVector::from_vec(m), DMatrix::from_row_slice(d, d, &c))))
        }
        (None, None) => Ok(None),
        _ => Err(Error::invalid("incomplete or malformed population block")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_items() -> Vec<Item> {
        vec![
            DichotomousItem::new("m1", Format::Mc, ModelFamily::SimpleStructure, true, vec![1.25, 0.0], -0.3, 0.18)
                .unwrap()
                .into(),
            PolytomousItem::new(
                "c1",
                Format::Cr,
                ModelFamily::SimpleStructure,
                false,
                vec![0.0, 0.9],
                vec![-1.1, 0.25, 0.75, 1.5],
            )
            .unwrap()
            .into(),
            PolytomousItem::new("c2", Format::Cr, ModelFamily::SimpleStructure, true, vec![0.0, 1.1], vec![0.5])
                .unwrap()
                .into(),
        ]
    }

    #[test]
    fn exact_layout() {
        let mut buf = Vec::new();
        write_items(&sample_items(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "id,format,model_family,K,a1,a2,a3,d,c,delta1,delta2,delta3,delta4,anchor\n\
             m1,MC,SimpleStructure,2,1.25,0,,-0.3,0.18,,,,,1\n\
             c1,CR,SimpleStructure,5,0,0.9,,,,-1.1,0.25,0.75,1.5,0\n\
             c2,CR,SimpleStructure,2,0,1.1,,,,0.5,,,,1\n"
        );
        let back = read_items(text.as_bytes(), "mem").unwrap();
        assert_eq!(back, sample_items());
        let mut again = Vec::new();
        write_items(&back, &mut again).unwrap();
        assert_eq!(String::from_utf8(again).unwrap(), text);
    }

    #[test]
    fn blank_slopes_read_as_zero() {
        let text = "id,format,model_family,K,a1,a2,a3,d,c,anchor\nm,MC,SimpleStructure,2,1.5,,,0.2,0.1,0\n";
        let items = read_items(text.as_bytes(), "mem").unwrap();
        assert_eq!(items[0].a(), &[1.5, 0.0]);
    }

    #[test]
    fn rejects_mask_violations_with_line() {
        let text = "id,format,model_family,K,a1,a2,a3,d,c,anchor\nm,MC,SimpleStructure,2,1.5,0.3,,0.2,0.1,0\n";
        let err = read_items(text.as_bytes(), "bank.csv").unwrap_err();
        assert!(err.to_string().starts_with("bank.csv:2"), "{err}");
    }

    #[test]
    fn population_block_round_trip() {
        let mean = DVector::from_vec(vec![0.0, 0.2]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let mut buf = Vec::new();
        write_items(&sample_items(), &mut buf).unwrap();
        write_population_block(&mut buf, &mean, &cov).unwrap();
        assert_eq!(read_items(&buf[..], "mem").unwrap(), sample_items());
        assert_eq!(read_population_block(&buf[..]).unwrap(), Some((mean, cov)));
    }

    fn arb_item() -> impl Strategy<Value = Item> {
        let num = || prop_oneof![-5.0f64..5.0, (-50i32..50).prop_map(|v| v as f64 / 8.0)];
        prop_oneof![
            (0.05f64..4.0, num(), 0.0f64..0.5, any::<bool>()).prop_map(|(a, d, c, anchor)| {
                DichotomousItem::new("x", Format::Mc, ModelFamily::SimpleStructure, anchor, vec![a, 0.0], d, c)
                    .unwrap()
                    .into()
            }),
            (0.05f64..4.0, 0.05f64..4.0, prop::collection::vec(num(), 1..6)).prop_map(|(g, s, deltas)| {
                PolytomousItem::new("y", Format::Cr, ModelFamily::Bifactor, false, vec![g, 0.0, s], deltas)
                    .unwrap()
                    .into()
            }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(items in prop::collection::vec(arb_item(), 1..8)) {
            let items: Vec<Item> = items
                .into_iter()
                .enumerate()
                .map(|(k, i)| match i {
                    Item::Dichotomous(d) => DichotomousItem::new(
                        format!("i{k}"), d.format(), d.family(), d.anchor(), d.a().to_vec(), d.d(), d.c(),
                    ).unwrap().into(),
                    Item::Polytomous(p) => PolytomousItem::new(
                        format!("i{k}"), p.format(), p.family(), p.anchor(), p.a().to_vec(), p.deltas().to_vec(),
                    ).unwrap().into(),
                })
                .collect();
            let mut buf = Vec::new();
            write_items(&items, &mut buf).unwrap();
            let back = read_items(&buf[..], "mem").unwrap();
            prop_assert_eq!(&back, &items);
            let mut again = Vec::new();
            write_items(&back, &mut again).unwrap();
            prop_assert_eq!(again, buf);
        }
    }
}
