//! Configuration, data files, experiment runs and result output for the
//! `cenkf` command-line tool.

pub mod config;
pub mod data;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{parse_config, ConfigError, Kind, RunConfig};
pub use data::{ingest_measurements, MeasurementSeries, Schema};
pub use run::{run, RunError, RunSummary};
