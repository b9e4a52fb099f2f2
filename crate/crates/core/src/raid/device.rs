//! The RAID virtual block device.
//!
//! RAID5 writes are full-stripe only: parity is computed from the incoming
//! data, so there is no read-modify-write path. Reads on RAID5 default to
//! "safe reads": after reading the target block, the rest of its stripe is
//! read and the target is recomputed as the XOR of the sibling strips; a
//! mismatch completes with `ParityMismatch` while still delivering the data
//! that was read. XOR parity detects the inconsistency but cannot tell
//! which strip is corrupt, so the read data is returned as-is.

use thiserror::Error;

use crate::block::{
    BlockDevice, DeviceGeometry, DeviceOutput, IoOp, IoRequest, IoStatus, SharedDevice,
};
use crate::raid::layout::{RaidLayout, RaidLevel};
use crate::raid::poison::{PoisonConfig, PoisonConfigError, PoisonFilter};
use crate::raid::xor_fold;

#[derive(Debug, Error)]
pub enum RaidError {
    #[error("raid level {level} needs {want} bases, got {got}")]
    BaseCount { level: RaidLevel, want: usize, got: usize },
    #[error("base device {index} geometry differs from base 0")]
    BaseGeometryMismatch { index: usize },
    #[error(transparent)]
    Poison(#[from] PoisonConfigError),
}

/// Outcome of parity verification for one safe read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParityReport {
    pub lba: u64,
    pub stripe_index: u64,
    pub matched: bool,
    /// Digest of the block as read from its device.
    pub read_digest: u64,
    /// Digest of the block reconstructed from the rest of the stripe.
    pub reconstructed_digest: u64,
}

/// FNV-1a, as an opaque diagnostic checksum for parity reports.
fn digest(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub struct RaidDevice {
    layout: RaidLayout,
    bases: Vec<SharedDevice>,
    poison: Option<PoisonFilter>,
    /// Safe read on the RAID5 read path; on by default, disable for
    /// benchmarking.
    verify_reads: bool,
    /// Round-robin cursor for RAID1 read scheduling.
    read_cursor: usize,
    mismatches_observed: u64,
}

impl RaidDevice {
    pub fn new(
        layout: RaidLayout,
        bases: Vec<SharedDevice>,
        poison: Option<PoisonConfig>,
        verify_reads: bool,
    ) -> Result<Self, RaidError> {
        if bases.len() != layout.num_devices {
            return Err(RaidError::BaseCount {
                level: layout.level,
                want: layout.num_devices,
                got: bases.len(),
            });
        }
        for (index, base) in bases.iter().enumerate() {
            if base.lock().geometry() != layout.base_geometry {
                return Err(RaidError::BaseGeometryMismatch { index });
            }
        }
        let poison = match poison {
            Some(cfg) => Some(PoisonFilter::new(cfg)?),
            None => None,
        };
        Ok(Self { layout, bases, poison, verify_reads, read_cursor: 0, mismatches_observed: 0 })
    }

    pub fn layout(&self) -> &RaidLayout {
        &self.layout
    }

    pub fn poison_flip_count(&self) -> u64 {
        self.poison.as_ref().map(PoisonFilter::blocks_flipped).unwrap_or(0)
    }

    pub fn mismatches_observed(&self) -> u64 {
        self.mismatches_observed
    }

    fn block_size(&self) -> usize {
        self.layout.base_geometry.block_size as usize
    }

    fn base_read(&self, device: usize, block: u64, count: u64) -> Result<Vec<u8>, IoStatus> {
        let req = IoRequest::read(0, block, count as u32);
        let out = self.bases[device].lock().execute(&req);
        if out.status.is_ok() {
            Ok(out.payload)
        } else {
            Err(IoStatus::IoError)
        }
    }

    fn base_write(&self, device: usize, block: u64, payload: Vec<u8>) -> Result<(), IoStatus> {
        let count = (payload.len() / self.block_size()) as u32;
        let req = IoRequest::write(0, block, count, payload);
        let out = self.bases[device].lock().execute(&req);
        if out.status.is_ok() {
            Ok(())
        } else {
            Err(IoStatus::IoError)
        }
    }

    /// Writes one full RAID5 stripe: `data` holds the stripe's logical
    /// bytes (data strips, in order). Parity is the XOR of the data strips
    /// and is computed before poison so injected faults are detectable.
    pub fn full_stripe_write(&mut self, stripe_index: u64, data: &[u8]) -> IoStatus {
        debug_assert_eq!(self.layout.level, RaidLevel::Raid5);
        let strip_bytes = self.layout.strip_size_blocks as usize * self.block_size();
        let data_strips = self.layout.data_strips_per_stripe() as usize;
        if data.len() != strip_bytes * data_strips {
            return IoStatus::Unsupported;
        }
        if stripe_index >= self.layout.stripe_count() {
            return IoStatus::OutOfRange;
        }

        let parity = xor_fold(data.chunks_exact(strip_bytes));
        let physical = stripe_index * self.layout.strip_size_blocks;

        for strip in 0..data_strips {
            let mut buf = data[strip * strip_bytes..(strip + 1) * strip_bytes].to_vec();
            if let Some(filter) = self.poison.as_mut() {
                for block in buf.chunks_exact_mut(self.layout.base_geometry.block_size as usize) {
                    filter.apply(block);
                }
            }
            let device = self.layout.data_device(stripe_index, strip as u64);
            if let Err(status) = self.base_write(device, physical, buf) {
                return status;
            }
        }
        let parity_device = self.layout.parity_device(stripe_index).unwrap();
        match self.base_write(parity_device, physical, parity) {
            Ok(()) => IoStatus::Ok,
            Err(status) => status,
        }
    }

    /// Reads a block, then re-reads its stripe column and recomputes the
    /// block as the XOR of the sibling strips and parity. Returns the data
    /// as read plus the verification report.
    pub fn safe_read(&mut self, lba: u64) -> Result<(Vec<u8>, ParityReport), IoStatus> {
        debug_assert_eq!(self.layout.level, RaidLevel::Raid5);
        let addr = self.layout.map(lba).ok_or(IoStatus::OutOfRange)?;
        let physical = addr.physical_block(self.layout.strip_size_blocks);
        let data = self.base_read(addr.device_index, physical, 1)?;

        let mut reconstructed = vec![0u8; self.block_size()];
        for device in 0..self.layout.num_devices {
            if device == addr.device_index {
                continue;
            }
            let sibling = self.base_read(device, physical, 1)?;
            for (acc, byte) in reconstructed.iter_mut().zip(&sibling) {
                *acc ^= byte;
            }
        }

        let matched = reconstructed == data;
        if !matched {
            self.mismatches_observed += 1;
        }
        let report = ParityReport {
            lba,
            stripe_index: addr.stripe_index,
            matched,
            read_digest: digest(&data),
            reconstructed_digest: digest(&reconstructed),
        };
        Ok((data, report))
    }

    /// Recovers one strip of a stripe as the XOR of all the others. Works
    /// for data strips and the parity strip alike. Exactly one device may
    /// be designated missing.
    pub fn reconstruct_read(
        &mut self,
        stripe_index: u64,
        missing: &[usize],
    ) -> Result<Vec<u8>, IoStatus> {
        debug_assert_eq!(self.layout.level, RaidLevel::Raid5);
        let &[target] = missing else {
            return Err(IoStatus::Unsupported);
        };
        if target >= self.layout.num_devices || stripe_index >= self.layout.stripe_count() {
            return Err(IoStatus::OutOfRange);
        }
        let physical = stripe_index * self.layout.strip_size_blocks;
        let strip_bytes = self.layout.strip_size_blocks as usize * self.block_size();
        let mut recovered = vec![0u8; strip_bytes];
        for device in 0..self.layout.num_devices {
            if device == target {
                continue;
            }
            let strip = self.base_read(device, physical, self.layout.strip_size_blocks)?;
            for (acc, byte) in recovered.iter_mut().zip(&strip) {
                *acc ^= byte;
            }
        }
        Ok(recovered)
    }

    fn read_plain(&mut self, lba: u64) -> Result<Vec<u8>, IoStatus> {
        let addr = self.layout.map(lba).ok_or(IoStatus::OutOfRange)?;
        let physical = addr.physical_block(self.layout.strip_size_blocks);
        self.base_read(addr.device_index, physical, 1)
    }

    fn raid5_read(&mut self, req: &IoRequest) -> DeviceOutput {
        let mut payload = Vec::with_capacity(req.len_bytes(self.layout.base_geometry.block_size) as usize);
        let mut status = IoStatus::Ok;
        for lba in req.lba..req.lba + req.num_blocks as u64 {
            if self.verify_reads {
                match self.safe_read(lba) {
                    Ok((data, report)) => {
                        payload.extend_from_slice(&data);
                        if !report.matched {
                            status = IoStatus::ParityMismatch;
                        }
                    }
                    Err(err) => return DeviceOutput::error(err),
                }
            } else {
                match self.read_plain(lba) {
                    Ok(data) => payload.extend_from_slice(&data),
                    Err(err) => return DeviceOutput::error(err),
                }
            }
        }
        DeviceOutput { status, payload }
    }

    fn raid5_write(&mut self, req: &IoRequest) -> DeviceOutput {
        let per_stripe = self.layout.blocks_per_stripe();
        if req.lba % per_stripe != 0 || req.num_blocks as u64 % per_stripe != 0 {
            return DeviceOutput::error(IoStatus::Unsupported);
        }
        let stripe_bytes = (per_stripe * self.layout.base_geometry.block_size as u64) as usize;
        let first_stripe = req.lba / per_stripe;
        for (i, chunk) in req.payload.chunks_exact(stripe_bytes).enumerate() {
            let status = self.full_stripe_write(first_stripe + i as u64, chunk);
            if !status.is_ok() {
                return DeviceOutput::error(status);
            }
        }
        DeviceOutput::ok_empty()
    }

    fn raid0_io(&mut self, req: &IoRequest) -> DeviceOutput {
        let block_size = self.layout.base_geometry.block_size;
        match req.op {
            IoOp::Read => {
                let mut payload = Vec::with_capacity(req.len_bytes(block_size) as usize);
                for lba in req.lba..req.lba + req.num_blocks as u64 {
                    let addr = self.layout.map(lba).expect("validated range");
                    match self.base_read(addr.device_index, addr.physical_block(self.layout.strip_size_blocks), 1) {
                        Ok(data) => payload.extend_from_slice(&data),
                        Err(err) => return DeviceOutput::error(err),
                    }
                }
                DeviceOutput::ok(payload)
            }
            IoOp::Write => {
                for (i, block) in req.payload.chunks_exact(block_size as usize).enumerate() {
                    let lba = req.lba + i as u64;
                    let addr = self.layout.map(lba).expect("validated range");
                    if let Err(err) = self.base_write(
                        addr.device_index,
                        addr.physical_block(self.layout.strip_size_blocks),
                        block.to_vec(),
                    ) {
                        return DeviceOutput::error(err);
                    }
                }
                DeviceOutput::ok_empty()
            }
            IoOp::Flush => self.flush_bases(),
        }
    }

    fn raid1_io(&mut self, req: &IoRequest) -> DeviceOutput {
        match req.op {
            IoOp::Read => {
                // Round-robin across mirrors.
                let mirror = self.read_cursor % self.bases.len();
                self.read_cursor = self.read_cursor.wrapping_add(1);
                match self.base_read(mirror, req.lba, req.num_blocks as u64) {
                    Ok(data) => DeviceOutput::ok(data),
                    Err(err) => DeviceOutput::error(err),
                }
            }
            IoOp::Write => {
                // Mirrors share the logical address space, so the request
                // passes straight through, no payload copies.
                for base in &self.bases {
                    let out = base.lock().execute(req);
                    if !out.status.is_ok() {
                        return DeviceOutput::error(IoStatus::IoError);
                    }
                }
                DeviceOutput::ok_empty()
            }
            IoOp::Flush => self.flush_bases(),
        }
    }

    fn flush_bases(&mut self) -> DeviceOutput {
        for base in &self.bases {
            let out = base.lock().execute(&IoRequest::flush(0));
            if !out.status.is_ok() {
                return DeviceOutput::error(IoStatus::IoError);
            }
        }
        DeviceOutput::ok_empty()
    }
}

impl BlockDevice for RaidDevice {
    fn geometry(&self) -> DeviceGeometry {
        self.layout.exposed_geometry()
    }

    fn execute(&mut self, req: &IoRequest) -> DeviceOutput {
        match self.layout.level {
            RaidLevel::Raid0 => self.raid0_io(req),
            RaidLevel::Raid1 => self.raid1_io(req),
            RaidLevel::Raid5 => match req.op {
                IoOp::Read => self.raid5_read(req),
                IoOp::Write => self.raid5_write(req),
                IoOp::Flush => self.flush_bases(),
            },
        }
    }
}
