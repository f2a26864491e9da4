//! Long-format experiment results: one row per
//! `(method, delta, sw, subset, metric)` cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use crate::objectives::Method;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub delta: f64,
    pub sw: bool,
    pub subset: usize,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    fn key(&self) -> (Method, u64, bool, usize, &str) {
        (self.method, self.delta.to_bits(), self.sw, self.subset, self.metric.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentResult {
    rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = ResultRow>) -> Result<Self> {
        let mut out = Self::new();
        for r in rows {
            out.push(r)?;
        }
        Ok(out)
    }

    /// Appends a row; rejects non-finite values and duplicate cells.
    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if !row.value.is_finite() || !row.delta.is_finite() || row.delta < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid result row {row:?}")));
        }
        if self.rows.iter().any(|r| r.key() == row.key()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate result cell ({}, {}, {}, {}, {})",
                row.method, row.delta, row.sw, row.subset, row.metric
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: ExperimentResult) -> Result<()> {
        for r in other.rows {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> Vec<Method> {
        self.rows.iter().map(|r| r.method).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn metrics(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.metric.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct δ values for `method`, ascending.
    pub fn deltas(&self, method: Method) -> Vec<f64> {
        let mut d: Vec<f64> = self.rows.iter().filter(|r| r.method == method).map(|r| r.delta).collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// Per-subset values of one condition, keyed by subset id.
    pub fn cell(&self, method: Method, delta: f64, sw: bool, metric: &str) -> BTreeMap<usize, f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.delta == delta && r.sw == sw && r.metric == metric)
            .map(|r| (r.subset, r.value))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut out = Self::new();
        for row in reader.deserialize() {
            out.push(row?)?;
        }
        Ok(out)
    }

    /// Mean (population std) across subsets for every condition of `metric`,
    /// laid out as `Method | δ | SW | Mean (std)`.
    pub fn summary_table(&self, metric: &str) -> Result<String> {
        let mut cells: BTreeMap<(Method, u64, bool), (f64, Vec<f64>)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.metric == metric) {
            // δ sorts correctly by bit pattern for nonnegative floats
            cells
                .entry((r.method, r.delta.to_bits(), r.sw))
                .or_insert((r.delta, Vec::new()))
                .1
                .push(r.value);
        }
        if cells.is_empty() {
            return Err(Error::Empty(format!("no rows for metric '{metric}'")));
        }
        let mut out = String::new();
        writeln!(out, "{:<8} {:>6} {:>4}  {}", "Method", "δ", "SW", format!("Mean (std) {metric}")).unwrap();
        for ((method, _, sw), (delta, values)) in &cells {
            let (m, s) = mean_std(values)?;
            writeln!(
                out,
                "{:<8} {:>6} {:>4}  {m:.3} ({s:.3})",
                method.name(),
                format!("{delta}"),
                if *sw { "yes" } else { "no" }
            )
            .unwrap();
        }
        Ok(out)
    }
}
