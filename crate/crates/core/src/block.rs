//! Core block device abstraction: geometry, the request/completion model,
//! and the `BlockDevice` trait that terminal and virtual devices implement.
//!
//! Devices move data in whole blocks. A request addresses a contiguous run
//! of blocks by LBA; every accepted request produces exactly one completion
//! carrying a status and, for reads, the payload.

use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest supported block size in bytes.
pub const MIN_BLOCK_SIZE: u32 = 512;
/// Largest supported block size in bytes (the per-I/O ceiling).
pub const MAX_BLOCK_SIZE: u32 = 128 * 1024;
/// Largest single device I/O in bytes. Requests above this complete
/// with `IoStatus::SizeLimit`; larger transfers must be split by the caller.
pub const MAX_IO_BYTES: u32 = 128 * 1024;

/// Block size and count of a device; fixed for the device's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub block_size: u32,
    pub block_count: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("block size {0} is not a power of two")]
    NotPowerOfTwo(u32),
    #[error("block size {0} outside supported range {MIN_BLOCK_SIZE}..={MAX_BLOCK_SIZE}")]
    BlockSizeOutOfRange(u32),
    #[error("device must contain at least one block")]
    ZeroBlocks,
}

impl DeviceGeometry {
    pub fn new(block_size: u32, block_count: u64) -> Result<Self, GeometryError> {
        if !block_size.is_power_of_two() {
            return Err(GeometryError::NotPowerOfTwo(block_size));
        }
        if !(MIN_BLOCK_SIZE..=MAX_BLOCK_SIZE).contains(&block_size) {
            return Err(GeometryError::BlockSizeOutOfRange(block_size));
        }
        if block_count == 0 {
            return Err(GeometryError::ZeroBlocks);
        }
        Ok(Self { block_size, block_count })
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.block_size as u64 * self.block_count
    }

    /// True when `lba..lba+num_blocks` lies within the device.
    pub fn contains(&self, lba: u64, num_blocks: u32) -> bool {
        lba.checked_add(num_blocks as u64)
            .map(|end| end <= self.block_count)
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoOp {
    Read,
    Write,
    Flush,
}

/// One block I/O command. `payload` is non-empty only for writes, where it
/// must hold exactly `num_blocks * block_size` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoRequest {
    pub id: u64,
    pub op: IoOp,
    pub lba: u64,
    pub num_blocks: u32,
    pub payload: Vec<u8>,
}

impl IoRequest {
    pub fn read(id: u64, lba: u64, num_blocks: u32) -> Self {
        Self { id, op: IoOp::Read, lba, num_blocks, payload: Vec::new() }
    }

    pub fn write(id: u64, lba: u64, num_blocks: u32, payload: Vec<u8>) -> Self {
        Self { id, op: IoOp::Write, lba, num_blocks, payload }
    }

    pub fn flush(id: u64) -> Self {
        Self { id, op: IoOp::Flush, lba: 0, num_blocks: 0, payload: Vec::new() }
    }

    pub fn len_bytes(&self, block_size: u32) -> u64 {
        self.num_blocks as u64 * block_size as u64
    }
}

/// Completion status. Wire code in parentheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoStatus {
    /// Success (0).
    Ok,
    /// Device or transport failure (1).
    IoError,
    /// Read data failed parity verification; payload still delivered (2).
    ParityMismatch,
    /// Request range exceeds device capacity (3).
    OutOfRange,
    /// Operation not supported by this device, e.g. a partial-stripe write (4).
    Unsupported,
    /// Request or job exceeds a size ceiling (5).
    SizeLimit,
}

impl IoStatus {
    pub fn code(self) -> u8 {
        match self {
            IoStatus::Ok => 0,
            IoStatus::IoError => 1,
            IoStatus::ParityMismatch => 2,
            IoStatus::OutOfRange => 3,
            IoStatus::Unsupported => 4,
            IoStatus::SizeLimit => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => IoStatus::Ok,
            1 => IoStatus::IoError,
            2 => IoStatus::ParityMismatch,
            3 => IoStatus::OutOfRange,
            4 => IoStatus::Unsupported,
            5 => IoStatus::SizeLimit,
            _ => return None,
        })
    }

    pub fn is_ok(self) -> bool {
        self == IoStatus::Ok
    }
}

impl fmt::Display for IoStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IoStatus::Ok => "OK",
            IoStatus::IoError => "IO_ERROR",
            IoStatus::ParityMismatch => "PARITY_MISMATCH",
            IoStatus::OutOfRange => "OUT_OF_RANGE",
            IoStatus::Unsupported => "UNSUPPORTED",
            IoStatus::SizeLimit => "SIZE_LIMIT",
        };
        f.write_str(s)
    }
}

/// Result of one request. Reads that complete `Ok` carry a payload of
/// exactly `num_blocks * block_size` bytes; `ParityMismatch` reads still
/// deliver the data they read; all other non-`Ok` completions carry none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoCompletion {
    pub request_id: u64,
    pub status: IoStatus,
    pub payload: Vec<u8>,
    pub submit_to_complete_ns: u64,
}

impl IoCompletion {
    pub fn new(request_id: u64, status: IoStatus) -> Self {
        Self { request_id, status, payload: Vec::new(), submit_to_complete_ns: 0 }
    }
}

/// What a device produced for a request; the engine wraps this into an
/// `IoCompletion` with timing attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceOutput {
    pub status: IoStatus,
    pub payload: Vec<u8>,
}

impl DeviceOutput {
    pub fn ok(payload: Vec<u8>) -> Self {
        Self { status: IoStatus::Ok, payload }
    }

    pub fn ok_empty() -> Self {
        Self { status: IoStatus::Ok, payload: Vec::new() }
    }

    pub fn error(status: IoStatus) -> Self {
        Self { status, payload: Vec::new() }
    }
}

/// Request defects detected before a request is accepted. These are caller
/// bugs and are reported as errors rather than completions.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("read/write must cover at least one block")]
    ZeroBlocks,
    #[error("write payload of {got} bytes does not match {want} request bytes")]
    PayloadLength { got: usize, want: u64 },
    #[error("payload is only valid on writes")]
    UnexpectedPayload,
    #[error("request id {0} is already in flight")]
    DuplicateId(u64),
}

/// Validates a request against a device geometry.
///
/// Malformed requests return `Err`; well-formed requests that cannot be
/// serviced return `Ok(Some(status))` and must complete immediately with
/// that status, without reaching the device.
pub fn validate_request(
    geometry: &DeviceGeometry,
    req: &IoRequest,
) -> Result<Option<IoStatus>, RequestError> {
    match req.op {
        IoOp::Flush => {
            if !req.payload.is_empty() {
                return Err(RequestError::UnexpectedPayload);
            }
            Ok(None)
        }
        IoOp::Read | IoOp::Write => {
            if req.num_blocks == 0 {
                return Err(RequestError::ZeroBlocks);
            }
            let want = req.len_bytes(geometry.block_size);
            if req.op == IoOp::Write {
                if req.payload.len() as u64 != want {
                    return Err(RequestError::PayloadLength { got: req.payload.len(), want });
                }
            } else if !req.payload.is_empty() {
                return Err(RequestError::UnexpectedPayload);
            }
            if want > MAX_IO_BYTES as u64 {
                return Ok(Some(IoStatus::SizeLimit));
            }
            if !geometry.contains(req.lba, req.num_blocks) {
                return Ok(Some(IoStatus::OutOfRange));
            }
            Ok(None)
        }
    }
}

/// Device families a registry can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Null,
    Memory,
    File,
    Raid,
    Compress,
    Remote,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DeviceKind::Null => "null",
            DeviceKind::Memory => "memory",
            DeviceKind::File => "file",
            DeviceKind::Raid => "raid",
            DeviceKind::Compress => "compress",
            DeviceKind::Remote => "remote",
        };
        f.write_str(s)
    }
}

/// Stable reference to a registered device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceHandle {
    pub id: String,
    pub kind: DeviceKind,
    pub geometry: DeviceGeometry,
}

/// A block device. Requests reaching `execute` have already passed
/// `validate_request`; implementations may assume well-formed, in-range,
/// size-limited requests.
pub trait BlockDevice: Send {
    fn geometry(&self) -> DeviceGeometry;
    fn execute(&mut self, req: &IoRequest) -> DeviceOutput;
}

/// Devices are shared between the registry, virtual devices layered on
/// them, and the reactor that drives them; the mutex serializes access.
pub type SharedDevice = Arc<Mutex<dyn BlockDevice>>;

pub fn share_device<D: BlockDevice + 'static>(device: D) -> SharedDevice {
    Arc::new(Mutex::new(device))
}
