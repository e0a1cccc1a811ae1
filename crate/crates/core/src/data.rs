//! Score and ability matrices plus their CSV layouts.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MISSING: i16 = -1;

/// Examinee x item integer scores; `None` marks a missing response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    item_ids: Vec<String>,
    n_persons: usize,
    scores: Vec<i16>,
}

impl ResponseMatrix {
    /// All responses missing.
    pub fn empty(item_ids: Vec<String>, n_persons: usize) -> Self {
        let len = item_ids.len() * n_persons;
        ResponseMatrix {
            item_ids,
            n_persons,
            scores: vec![MISSING; len],
        }
    }

    pub fn from_rows(item_ids: Vec<String>, rows: &[Vec<Option<u8>>]) -> Result<Self> {
        let mut out = Self::empty(item_ids, rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != out.n_items() {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: out.n_items(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        Ok(out)
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> Option<u8> {
        let v = self.scores[person * self.item_ids.len() + item];
        (v >= 0).then_some(v as u8)
    }

    #[inline]
    pub fn set(&mut self, person: usize, item: usize, score: Option<u8>) {
        let j = self.item_ids.len();
        self.scores[person * j + item] = score.map_or(MISSING, i16::from);
    }

    pub fn row(&self, person: usize) -> impl Iterator<Item = Option<u8>> + '_ {
        let j = self.item_ids.len();
        self.scores[person * j..(person + 1) * j]
            .iter()
            .map(|&v| (v >= 0).then_some(v as u8))
    }

    /// Columns restricted (and reordered) to `ids`.
    pub fn select(&self, ids: &[String]) -> Result<ResponseMatrix> {
        let cols = ids
            .iter()
            .map(|id| {
                self.item_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::invalid(format!("response matrix has no item `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::empty(ids.to_vec(), self.n_persons);
        for i in 0..self.n_persons {
            for (k, &j) in cols.iter().enumerate() {
                out.set(i, k, self.get(i, j));
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.item_ids).map_err(csv_err)?;
        for i in 0..self.n_persons {
            wr.write_record(self.row(i).map(|v| v.map(|s| s.to_string()).unwrap_or_default()))
                .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, source: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let item_ids: Vec<String> = rd
            .headers()
            .map_err(|e| parse_err(source, 1, e))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (n, rec) in rd.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|e| parse_err(source, line, e))?;
            let row = rec
                .iter()
                .map(|s| {
                    let s = s.trim();
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<u8>().map(Some).map_err(|_| Error::Parse {
                            path: source.to_string(),
                            line,
                            message: format!("score `{s}` is not a nonnegative integer"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(item_ids, &rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, &path.display().to_string())
    }
}

/// Row-major `n x dim` ability draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl ThetaMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::invalid("ability matrix shape does not divide evenly"));
        }
        Ok(ThetaMatrix { dim, values })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        ThetaMatrix {
            dim,
            values: vec![0.0; n * dim],
        }
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(k).step_by(self.dim).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((1..=self.dim).map(|k| format!("theta{k}")))
            .map_err(csv_err)?;
        for i in 0..self.n() {
            wr.write_record(self.row(i).iter().map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

fn parse_err(source: &str, line: usize, e: csv::Error) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: e.to_string(),
    }
}
