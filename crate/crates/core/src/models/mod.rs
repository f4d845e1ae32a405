//! Forward models: the ultradian glucose-insulin system and a 1-D layered-soil
//! shear-wave propagator.

pub mod integrate;
pub mod ultradian;
pub mod wave;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("stable time stepping needs {required} substeps per output sample, limit is {limit}")]
    Cfl { required: u64, limit: u64 },

    #[error("unphysical model parameters: {0}")]
    Unphysical(String),

    #[error("state became non-finite at t = {time}")]
    NonFinite { time: f64 },

    #[error("invalid model input: {0}")]
    Invalid(String),
}
