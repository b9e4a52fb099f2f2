//! Transparent compression virtual block device: deflate on the write
//! path, inflate on the read path, over any base device.
//!
//! The device exposes the same geometry as its base. Each logical block is
//! compressed independently; if deflate does not shrink it below one block
//! the data is stored raw and flagged, so stored size never exceeds
//! logical size. Variable-length extents are placed on the base through
//! block-aligned read-modify-write.

use crate::block::{
    BlockDevice, DeviceGeometry, DeviceOutput, IoOp, IoRequest, IoStatus, SharedDevice,
};
use crate::compress::codec::{compress_block, decompress_block, CodecError, CompressLimits};
use crate::compress::map::{BlockMapping, CompressionMap, Extent, MapError};

pub struct CompressDevice {
    base: SharedDevice,
    geometry: DeviceGeometry,
    limits: CompressLimits,
    map: CompressionMap,
}

impl CompressDevice {
    pub fn new(base: SharedDevice, limits: CompressLimits) -> Self {
        let geometry = base.lock().geometry();
        let map = CompressionMap::new(geometry.block_count, geometry.capacity_bytes());
        Self { base, geometry, limits, map }
    }

    /// Bytes of base storage referenced by live blocks; the space the
    /// stored data actually occupies.
    pub fn stored_bytes(&self) -> u64 {
        self.map.live_bytes()
    }

    pub fn mapping(&self, lba: u64) -> Option<BlockMapping> {
        self.map.lookup(lba)
    }

    pub fn limits(&self) -> &CompressLimits {
        &self.limits
    }

    fn block_size(&self) -> usize {
        self.geometry.block_size as usize
    }

    fn base_read_blocks(&self, block: u64, count: u64) -> Result<Vec<u8>, IoStatus> {
        let out = self.base.lock().execute(&IoRequest::read(0, block, count as u32));
        if out.status.is_ok() {
            Ok(out.payload)
        } else {
            Err(IoStatus::IoError)
        }
    }

    fn base_write_blocks(&self, block: u64, payload: Vec<u8>) -> Result<(), IoStatus> {
        let count = (payload.len() / self.block_size()) as u32;
        let out = self.base.lock().execute(&IoRequest::write(0, block, count, payload));
        if out.status.is_ok() {
            Ok(())
        } else {
            Err(IoStatus::IoError)
        }
    }

    fn read_extent(&self, extent: Extent) -> Result<Vec<u8>, IoStatus> {
        let bs = self.block_size() as u64;
        let first = extent.offset / bs;
        let last = (extent.end() - 1) / bs;
        let mut span = Vec::with_capacity(((last - first + 1) * bs) as usize);
        for block in first..=last {
            span.extend_from_slice(&self.base_read_blocks(block, 1)?);
        }
        let skip = (extent.offset - first * bs) as usize;
        Ok(span[skip..skip + extent.len as usize].to_vec())
    }

    /// Splices `bytes` into the base at a byte offset. Partially covered
    /// base blocks go through read-modify-write, one block per sub-I/O.
    fn write_extent(&self, extent: Extent, bytes: &[u8]) -> Result<(), IoStatus> {
        let bs = self.block_size() as u64;
        let mut cursor = extent.offset;
        let mut remaining = bytes;
        while !remaining.is_empty() {
            let block = cursor / bs;
            let within = (cursor % bs) as usize;
            let take = remaining.len().min(bs as usize - within);
            if within == 0 && take == bs as usize {
                self.base_write_blocks(block, remaining[..take].to_vec())?;
            } else {
                let mut cell = self.base_read_blocks(block, 1)?;
                cell[within..within + take].copy_from_slice(&remaining[..take]);
                self.base_write_blocks(block, cell)?;
            }
            cursor += take as u64;
            remaining = &remaining[take..];
        }
        Ok(())
    }

    fn write_block(&mut self, lba: u64, data: &[u8]) -> IoStatus {
        let stream = match compress_block(data, &self.limits) {
            Ok(stream) => stream,
            Err(CodecError::JobTooLarge { .. }) => return IoStatus::SizeLimit,
            Err(_) => return IoStatus::IoError,
        };
        let (bytes, compressed): (&[u8], bool) = if stream.len() < data.len() {
            (&stream, true)
        } else {
            (data, false)
        };
        let extent = match self.map.allocate(bytes.len() as u32) {
            Ok(extent) => extent,
            Err(MapError::Exhausted(_)) => return IoStatus::IoError,
        };
        if let Err(status) = self.write_extent(extent, bytes) {
            self.map.abandon(extent);
            return status;
        }
        self.map.commit(lba, extent, compressed);
        IoStatus::Ok
    }

    fn read_block(&mut self, lba: u64) -> Result<Vec<u8>, IoStatus> {
        let Some(mapping) = self.map.lookup(lba) else {
            // Never written: fresh devices read zero.
            return Ok(vec![0u8; self.block_size()]);
        };
        let bytes = self.read_extent(mapping.extent)?;
        if mapping.compressed {
            decompress_block(&bytes, self.block_size(), &self.limits).map_err(|err| {
                log::warn!("compress device: lba {lba} failed to decode: {err}");
                IoStatus::IoError
            })
        } else {
            Ok(bytes)
        }
    }
}

impl BlockDevice for CompressDevice {
    fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    fn execute(&mut self, req: &IoRequest) -> DeviceOutput {
        match req.op {
            IoOp::Write => {
                for (i, block) in req.payload.chunks_exact(self.block_size()).enumerate() {
                    let status = self.write_block(req.lba + i as u64, block);
                    if !status.is_ok() {
                        return DeviceOutput::error(status);
                    }
                }
                DeviceOutput::ok_empty()
            }
            IoOp::Read => {
                let mut payload =
                    Vec::with_capacity(req.len_bytes(self.geometry.block_size) as usize);
                for lba in req.lba..req.lba + req.num_blocks as u64 {
                    match self.read_block(lba) {
                        Ok(block) => payload.extend_from_slice(&block),
                        Err(status) => return DeviceOutput::error(status),
                    }
                }
                DeviceOutput::ok(payload)
            }
            IoOp::Flush => {
                let out = self.base.lock().execute(&IoRequest::flush(0));
                if out.status.is_ok() {
                    DeviceOutput::ok_empty()
                } else {
                    DeviceOutput::error(IoStatus::IoError)
                }
            }
        }
    }
}
