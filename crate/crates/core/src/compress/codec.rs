//! Deflate codec for block payloads.
//!
//! Streams use the zlib wrapper around deflate, so corrupted data is
//! caught by the integrity checksum on decompression. Jobs above the
//! configured ceiling are rejected outright.

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::block::MAX_IO_BYTES;

/// Ceiling for a single (de)compression job, in bytes.
pub const DEFAULT_MAX_JOB_BYTES: u64 = 128 * 1024 * 1024;

/// Size ceilings for the compression path. `max_io_bytes` mirrors the
/// device-level per-I/O limit; `max_job_bytes` bounds a single codec job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressLimits {
    pub max_job_bytes: u64,
    pub max_io_bytes: u32,
}

impl Default for CompressLimits {
    fn default() -> Self {
        Self { max_job_bytes: DEFAULT_MAX_JOB_BYTES, max_io_bytes: MAX_IO_BYTES }
    }
}

impl CompressLimits {
    pub fn with_max_job_bytes(max_job_bytes: u64) -> Self {
        Self { max_job_bytes, ..Self::default() }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    /// Job exceeds `max_job_bytes`; maps to `IoStatus::SizeLimit`.
    #[error("job of {got} bytes exceeds the {limit} byte ceiling")]
    JobTooLarge { got: u64, limit: u64 },
    /// Stream does not decode; maps to `IoStatus::IoError`.
    #[error("corrupt stream: {0}")]
    Corrupt(std::io::Error),
    /// Stream decoded to the wrong length; maps to `IoStatus::IoError`.
    #[error("stream decoded to {got} bytes, expected {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Compresses one payload into a self-contained deflate (zlib) stream.
pub fn compress_block(data: &[u8], limits: &CompressLimits) -> Result<Vec<u8>, CodecError> {
    if data.len() as u64 > limits.max_job_bytes {
        return Err(CodecError::JobTooLarge { got: data.len() as u64, limit: limits.max_job_bytes });
    }
    let mut encoder = ZlibEncoder::new(Vec::new(), Compression::default());
    encoder.write_all(data).map_err(CodecError::Corrupt)?;
    encoder.finish().map_err(CodecError::Corrupt)
}

/// Inverts `compress_block`. The caller states the expected plaintext
/// length; any deviation is an error.
pub fn decompress_block(
    stream: &[u8],
    expected_len: usize,
    limits: &CompressLimits,
) -> Result<Vec<u8>, CodecError> {
    if expected_len as u64 > limits.max_job_bytes {
        return Err(CodecError::JobTooLarge { got: expected_len as u64, limit: limits.max_job_bytes });
    }
    let mut out = Vec::with_capacity(expected_len);
    let mut decoder = ZlibDecoder::new(stream);
    // Read one byte past the expected length so over-long streams are caught.
    decoder
        .by_ref()
        .take(expected_len as u64 + 1)
        .read_to_end(&mut out)
        .map_err(CodecError::Corrupt)?;
    if out.len() != expected_len {
        return Err(CodecError::LengthMismatch { got: out.len(), want: expected_len });
    }
    Ok(out)
}
