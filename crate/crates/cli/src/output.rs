//! CSV result files. Floats are written as `{:.16e}` (17 significant digits),
//! which reads back to the same `f64`.

use std::path::Path;

use cenkf_core::{Divisor, Ensemble, ViolationReport};

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

/// One row per member per step: `index_name, [time,] member, components...`.
pub fn ensemble_table(index_name: &str, names: &[&str], ensembles: &[Ensemble], times: Option<&[f64]>) -> Table {
    let mut header = vec![index_name.to_string()];
    if times.is_some() {
        header.push("time".into());
    }
    header.push("member".into());
    header.extend(names.iter().map(|s| s.to_string()));
    let mut t = Table::new(header);
    for (j, e) in ensembles.iter().enumerate() {
        for (n, m) in e.members().enumerate() {
            let mut row = vec![j.to_string()];
            if let Some(ts) = times {
                row.push(num(ts[j]));
            }
            row.push(n.to_string());
            row.extend(m.iter().map(|&x| num(x)));
            t.push(row);
        }
    }
    t
}

/// Ensemble mean and standard deviation per component and step.
pub fn mean_spread_table(index_name: &str, names: &[&str], ensembles: &[Ensemble], times: Option<&[f64]>, divisor: Divisor) -> Table {
    let mut header = vec![index_name.to_string()];
    if times.is_some() {
        header.push("time".into());
    }
    header.extend(names.iter().map(|s| format!("mean_{s}")));
    header.extend(names.iter().map(|s| format!("std_{s}")));
    let mut t = Table::new(header);
    for (j, e) in ensembles.iter().enumerate() {
        let stats = cenkf_core::ensemble::compute_stats_with(e, divisor);
        let mut row = vec![j.to_string()];
        if let Some(ts) = times {
            row.push(num(ts[j]));
        }
        row.extend(stats.mean.iter().map(|&x| num(x)));
        row.extend((0..e.dim()).map(|i| num(stats.covariance[(i, i)].max(0.0).sqrt())));
        t.push(row);
    }
    t
}

/// Rows are constraints, columns `1..J` are steps, cells are violation fractions.
pub fn violation_table(report: &ViolationReport) -> Table {
    let mut t = Table::new(std::iter::once("constraint".to_string()).chain((1..=report.steps()).map(|j| j.to_string())));
    for r in 0..report.rows() {
        let mut row = vec![report.labels()[r].clone()];
        row.extend((0..report.steps()).map(|j| num(report.fraction(r, j))));
        t.push(row);
    }
    t
}

/// Parsed CSV with a string first column kept aside.
pub struct ReadTable {
    pub header: Vec<String>,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ReadTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Read a CSV of numbers; when `label_column` is set the first field of each
/// row is kept as a string.
pub fn read_table(path: &Path, label_column: bool) -> Result<ReadTable, Box<dyn std::error::Error>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut fields = rec.iter();
        let mut row = Vec::with_capacity(rec.len());
        if label_column {
            labels.push(fields.next().unwrap_or_default().to_string());
            row.push(f64::NAN);
        }
        for f in fields {
            row.push(f.parse()?);
        }
        rows.push(row);
    }
    Ok(ReadTable { header, labels, rows })
}
