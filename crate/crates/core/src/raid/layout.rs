//! Stripe geometry: how logical blocks map onto the base devices for each
//! RAID level.
//!
//! RAID5 uses rotating parity: the parity strip of stripe `s` lives on
//! device `n - 1 - (s mod n)` and the data strips fill the remaining
//! devices in ascending order. The mapping is pinned by golden tests so
//! the on-disk layout stays stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::DeviceGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaidLevel {
    /// Striping, no redundancy.
    Raid0,
    /// Mirroring.
    Raid1,
    /// Striping with rotating distributed parity.
    Raid5,
}

impl std::fmt::Display for RaidLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RaidLevel::Raid0 => f.write_str("raid0"),
            RaidLevel::Raid1 => f.write_str("raid1"),
            RaidLevel::Raid5 => f.write_str("raid5"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("{level} requires at least {min} base devices, got {got}")]
    TooFewDevices { level: RaidLevel, min: usize, got: usize },
    #[error("strip size must be at least one block")]
    ZeroStripSize,
    #[error("base devices too small: need at least {need} blocks per device")]
    BasesTooSmall { need: u64 },
}

/// Placement of one logical block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeAddress {
    pub stripe_index: u64,
    /// Index among the stripe's data strips (parity excluded).
    pub strip_in_stripe: u64,
    pub device_index: usize,
    pub offset_in_strip: u64,
}

impl StripeAddress {
    /// Block index on the owning base device.
    pub fn physical_block(&self, strip_size_blocks: u64) -> u64 {
        self.stripe_index * strip_size_blocks + self.offset_in_strip
    }
}

/// Static stripe geometry for a RAID device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaidLayout {
    pub level: RaidLevel,
    pub num_devices: usize,
    pub strip_size_blocks: u64,
    pub base_geometry: DeviceGeometry,
}

impl RaidLayout {
    pub fn new(
        level: RaidLevel,
        num_devices: usize,
        strip_size_blocks: u64,
        base_geometry: DeviceGeometry,
    ) -> Result<Self, LayoutError> {
        let min = match level {
            RaidLevel::Raid5 => 3,
            _ => 2,
        };
        if num_devices < min {
            return Err(LayoutError::TooFewDevices { level, min, got: num_devices });
        }
        if strip_size_blocks == 0 {
            return Err(LayoutError::ZeroStripSize);
        }
        if base_geometry.block_count < strip_size_blocks {
            return Err(LayoutError::BasesTooSmall { need: strip_size_blocks });
        }
        Ok(Self { level, num_devices, strip_size_blocks, base_geometry })
    }

    /// Complete strips available on each base device; trailing partial
    /// strips are unused.
    pub fn strips_per_device(&self) -> u64 {
        self.base_geometry.block_count / self.strip_size_blocks
    }

    pub fn stripe_count(&self) -> u64 {
        match self.level {
            RaidLevel::Raid1 => self.strips_per_device(),
            _ => self.strips_per_device(),
        }
    }

    /// Data strips per stripe (parity excluded).
    pub fn data_strips_per_stripe(&self) -> u64 {
        match self.level {
            RaidLevel::Raid0 => self.num_devices as u64,
            RaidLevel::Raid1 => 1,
            RaidLevel::Raid5 => self.num_devices as u64 - 1,
        }
    }

    /// Logical blocks carried by one stripe.
    pub fn blocks_per_stripe(&self) -> u64 {
        self.data_strips_per_stripe() * self.strip_size_blocks
    }

    pub fn exposed_geometry(&self) -> DeviceGeometry {
        let block_count = match self.level {
            RaidLevel::Raid1 => self.base_geometry.block_count,
            _ => self.stripe_count() * self.blocks_per_stripe(),
        };
        DeviceGeometry { block_size: self.base_geometry.block_size, block_count }
    }

    /// Device holding the parity strip of `stripe` (RAID5 only).
    pub fn parity_device(&self, stripe: u64) -> Option<usize> {
        match self.level {
            RaidLevel::Raid5 => {
                let n = self.num_devices as u64;
                Some((n - 1 - (stripe % n)) as usize)
            }
            _ => None,
        }
    }

    /// Device holding data strip `strip_in_stripe` of `stripe`.
    pub fn data_device(&self, stripe: u64, strip_in_stripe: u64) -> usize {
        match self.level {
            RaidLevel::Raid0 => strip_in_stripe as usize,
            RaidLevel::Raid1 => 0,
            RaidLevel::Raid5 => {
                let parity = self.parity_device(stripe).unwrap() as u64;
                if strip_in_stripe < parity {
                    strip_in_stripe as usize
                } else {
                    strip_in_stripe as usize + 1
                }
            }
        }
    }

    /// Maps a logical block to its physical placement. For RAID1 the
    /// canonical placement is mirror 0; every mirror holds the same block.
    pub fn map(&self, lba: u64) -> Option<StripeAddress> {
        if lba >= self.exposed_geometry().block_count {
            return None;
        }
        match self.level {
            RaidLevel::Raid1 => Some(StripeAddress {
                stripe_index: lba / self.strip_size_blocks,
                strip_in_stripe: 0,
                device_index: 0,
                offset_in_strip: lba % self.strip_size_blocks,
            }),
            RaidLevel::Raid0 | RaidLevel::Raid5 => {
                let per_stripe = self.blocks_per_stripe();
                let stripe_index = lba / per_stripe;
                let within = lba % per_stripe;
                let strip_in_stripe = within / self.strip_size_blocks;
                let offset_in_strip = within % self.strip_size_blocks;
                Some(StripeAddress {
                    stripe_index,
                    strip_in_stripe,
                    device_index: self.data_device(stripe_index, strip_in_stripe),
                    offset_in_strip,
                })
            }
        }
    }
}
