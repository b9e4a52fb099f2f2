//! Write-path fault injection: flips the first bit of a written block with
//! a configured probability, drawn from a seeded deterministic generator.
//! Exists to exercise parity verification on the read path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Per-block flip probability in [0, 1].
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_probability() -> f64 {
    0.001
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self { enabled: false, probability: default_probability(), seed: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoisonConfigError {
    #[error("poison probability must lie in [0, 1]")]
    ProbabilityOutOfRange,
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<(), PoisonConfigError> {
        if !(0.0..=1.0).contains(&self.probability) || self.probability.is_nan() {
            return Err(PoisonConfigError::ProbabilityOutOfRange);
        }
        Ok(())
    }
}

/// Stateful filter applied to data blocks on the write path. One Bernoulli
/// draw per block; a hit inverts bit 0 of byte 0.
pub struct PoisonFilter {
    config: PoisonConfig,
    rng: ChaCha8Rng,
    blocks_seen: u64,
    blocks_flipped: u64,
}

impl PoisonFilter {
    pub fn new(config: PoisonConfig) -> Result<Self, PoisonConfigError> {
        config.validate()?;
        Ok(Self { config, rng: ChaCha8Rng::seed_from_u64(config.seed), blocks_seen: 0, blocks_flipped: 0 })
    }

    pub fn config(&self) -> &PoisonConfig {
        &self.config
    }

    /// Possibly poisons one block in place; returns whether it was flipped.
    pub fn apply(&mut self, block: &mut [u8]) -> bool {
        if !self.config.enabled || block.is_empty() {
            return false;
        }
        self.blocks_seen += 1;
        if self.rng.gen_bool(self.config.probability) {
            block[0] ^= 0x01;
            self.blocks_flipped += 1;
            true
        } else {
            false
        }
    }

    pub fn blocks_seen(&self) -> u64 {
        self.blocks_seen
    }

    pub fn blocks_flipped(&self) -> u64 {
        self.blocks_flipped
    }
}
