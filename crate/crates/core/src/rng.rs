//! Deterministic random-number substreams.
//!
//! A single master seed feeds ChaCha8; each (replicate, purpose, index)
//! triple selects its own ChaCha stream. Patient data for a replicate are
//! therefore identical across strategies and across worker counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Purpose {
    PatientData = 1,
    Analysis = 2,
}

/// Substream factory for one simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
    replicate: u64,
}

impl Substreams {
    pub fn new(seed: u64, replicate: u64) -> Self {
        assert!(replicate < (1 << 40), "replicate index too large for stream layout");
        Self { seed, replicate }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// Stream for accrual gaps and latent response times of one basket.
    pub fn patient_data(&self, basket: usize) -> ChaCha8Rng {
        self.stream(Purpose::PatientData, basket as u64)
    }

    /// Stream for the `seq`-th analysis of the trial (MCMC and imputation).
    pub fn analysis(&self, seq: usize) -> ChaCha8Rng {
        self.stream(Purpose::Analysis, seq as u64)
    }

    fn stream(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        debug_assert!(index < (1 << 16));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.replicate << 24) | ((purpose as u64) << 16) | index);
        rng
    }
}
