//! Seeded Gaussian noise with per-member substreams.
//!
//! Every draw comes from a ChaCha20 generator seeded with the master seed and
//! positioned on a stream identified by `(purpose, step, member)`:
//!
//! ```text
//! stream = purpose << 56 | (step & 0xffff_ffff) << 24 | (member & 0xff_ffff)
//! ```
//!
//! so any member's noise can be regenerated in isolation, in any order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg;

/// What a substream is used for; part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    ProcessNoise = 1,
    ObservationNoise = 2,
    InitialEnsemble = 3,
    SyntheticData = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStreams {
    seed: u64,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        NoiseStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, purpose: Purpose, step: u64, member: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let stream = ((purpose as u64) << 56) | ((step & 0xffff_ffff) << 24) | (member & 0xff_ffff);
        rng.set_stream(stream);
        rng
    }
}

/// Zero-mean Gaussian with covariance `L L^T`.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianNoise {
    pub fn new(what: &str, covariance: DMatrix<f64>) -> Result<Self> {
        linalg::check_square("noise covariance", &covariance, covariance.nrows())?;
        let mut covariance = covariance;
        linalg::symmetrize(&mut covariance);
        let factor = linalg::psd_sqrt(what, &covariance)?;
        Ok(GaussianNoise { covariance, factor })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn is_zero(&self) -> bool {
        self.factor.iter().all(|&x| x == 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}
