//! Measurement files.
//!
//! Two CSV layouts are read:
//! - glucose: `time,type,value` where `type` is `glucose` or `meal` (carbohydrates
//!   in grams); rows may be interleaved in any order and are sorted by time.
//! - plain: `time,y1,...,yk` with strictly increasing times.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Glucose,
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataError {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

impl std::error::Error for DataError {}

/// Observation rows plus, for glucose data, the meal table.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    /// `(time, carbs)` sorted by time.
    pub meals: Vec<(f64, f64)>,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// First observed column over all rows.
    pub fn first_column(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.values.iter().map(|v| v[0]))
    }
}

pub fn ingest_measurements(path: &Path, schema: Schema) -> Result<MeasurementSeries, DataError> {
    let err = |message: String| DataError {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let headers: Vec<String> = reader.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        rows.push((i + 2, rec));
    }
    let number = |line: usize, field: &str, s: &str| -> Result<f64, DataError> {
        let x: f64 = s.parse().map_err(|_| err(format!("line {line}: {field} = {s:?} is not a number")))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(err(format!("line {line}: {field} is not finite")))
        }
    };
    let col = |name: &str| headers.iter().position(|h| h == name);

    match schema {
        Schema::Glucose => {
            let (Some(ti), Some(ki), Some(vi)) = (col("time"), col("type"), col("value")) else {
                return Err(err(format!("missing columns: expected time,type,value, found {}", headers.join(","))));
            };
            let mut obs = Vec::new();
            let mut meals = Vec::new();
            for (line, rec) in &rows {
                let t = number(*line, "time", &rec[ti])?;
                let v = number(*line, "value", &rec[vi])?;
                match &rec[ki] {
                    "glucose" => obs.push((t, v)),
                    "meal" => {
                        if v < 0.0 {
                            return Err(err(format!("line {line}: negative meal size")));
                        }
                        meals.push((t, v))
                    }
                    other => return Err(err(format!("line {line}: unknown row type {other:?}"))),
                }
            }
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            meals.sort_by(|a, b| a.0.total_cmp(&b.0));
            if obs.is_empty() {
                return Err(err("no glucose rows".into()));
            }
            strictly_increasing(obs.iter().map(|o| o.0)).map_err(|t| err(format!("duplicate glucose time {t}")))?;
            strictly_increasing(meals.iter().map(|o| o.0)).map_err(|t| err(format!("duplicate meal time {t}")))?;
            Ok(MeasurementSeries {
                columns: vec!["glucose".into()],
                times: obs.iter().map(|o| o.0).collect(),
                values: obs.iter().map(|o| DVector::from_element(1, o.1)).collect(),
                meals,
            })
        }
        Schema::Plain => {
            if headers.first().map(String::as_str) != Some("time") || headers.len() < 2 {
                return Err(err(format!("missing columns: expected time,y1,..., found {}", headers.join(","))));
            }
            let k = headers.len() - 1;
            let mut times = Vec::with_capacity(rows.len());
            let mut values = Vec::with_capacity(rows.len());
            for (line, rec) in &rows {
                if rec.len() != headers.len() {
                    return Err(err(format!("line {line}: {} fields, expected {}", rec.len(), headers.len())));
                }
                times.push(number(*line, "time", &rec[0])?);
                let mut v = DVector::zeros(k);
                for j in 0..k {
                    v[j] = number(*line, &headers[j + 1], &rec[j + 1])?;
                }
                values.push(v);
            }
            if times.is_empty() {
                return Err(err("no data rows".into()));
            }
            strictly_increasing(times.iter().cloned()).map_err(|t| err(format!("times not strictly increasing at {t}")))?;
            Ok(MeasurementSeries {
                columns: headers[1..].to_vec(),
                times,
                values,
                meals: Vec::new(),
            })
        }
    }
}

fn strictly_increasing(mut it: impl Iterator<Item = f64>) -> Result<(), f64> {
    let Some(mut prev) = it.next() else { return Ok(()) };
    for t in it {
        if t <= prev {
            return Err(t);
        }
        prev = t;
    }
    Ok(())
}
