//! Placement map for the compression device: which byte extent of the
//! base device holds each logical block, and whether it is stored
//! compressed.
//!
//! Extents come from a bump allocator with a free list fed by overwrites.
//! Released spans coalesce with their neighbours and the frontier retracts
//! when space is freed at the end, but live data is never moved (no
//! compaction), so heavily fragmented arenas can still exhaust.

use thiserror::Error;

/// A byte range on the base device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub offset: u64,
    pub len: u32,
}

impl Extent {
    pub fn end(&self) -> u64 {
        self.offset + self.len as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMapping {
    pub extent: Extent,
    pub compressed: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("base device exhausted: no extent of {0} bytes available")]
    Exhausted(u32),
}

/// Free region; may span many merged extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FreeSpan {
    offset: u64,
    len: u64,
}

impl FreeSpan {
    fn end(&self) -> u64 {
        self.offset + self.len
    }
}

pub struct CompressionMap {
    slots: Vec<Option<BlockMapping>>,
    /// Next never-used base offset.
    cursor: u64,
    capacity_bytes: u64,
    /// Sorted by offset; adjacent spans are always merged.
    free: Vec<FreeSpan>,
    live_bytes: u64,
}

impl CompressionMap {
    pub fn new(block_count: u64, capacity_bytes: u64) -> Self {
        Self {
            slots: vec![None; block_count as usize],
            cursor: 0,
            capacity_bytes,
            free: Vec::new(),
            live_bytes: 0,
        }
    }

    pub fn lookup(&self, lba: u64) -> Option<BlockMapping> {
        self.slots[lba as usize]
    }

    /// Reserves an extent of `len` bytes: first fit from the free list,
    /// else fresh space past the cursor.
    pub fn allocate(&mut self, len: u32) -> Result<Extent, MapError> {
        if let Some(pos) = self.free.iter().position(|s| s.len >= len as u64) {
            let span = self.free[pos];
            let taken = Extent { offset: span.offset, len };
            if span.len == len as u64 {
                self.free.remove(pos);
            } else {
                self.free[pos] = FreeSpan { offset: span.offset + len as u64, len: span.len - len as u64 };
            }
            return Ok(taken);
        }
        if self.cursor + len as u64 > self.capacity_bytes {
            return Err(MapError::Exhausted(len));
        }
        let extent = Extent { offset: self.cursor, len };
        self.cursor += len as u64;
        Ok(extent)
    }

    /// Points `lba` at a freshly written extent, releasing any previous one.
    pub fn commit(&mut self, lba: u64, extent: Extent, compressed: bool) {
        if let Some(old) = self.slots[lba as usize].take() {
            self.live_bytes -= old.extent.len as u64;
            self.release(old.extent);
        }
        self.live_bytes += extent.len as u64;
        self.slots[lba as usize] = Some(BlockMapping { extent, compressed });
    }

    /// Returns an extent reserved by `allocate` that ended up unused.
    pub fn abandon(&mut self, extent: Extent) {
        self.release(extent);
    }

    fn release(&mut self, extent: Extent) {
        let mut span = FreeSpan { offset: extent.offset, len: extent.len as u64 };
        let pos = self.free.partition_point(|s| s.offset < span.offset);
        // Merge with the following span.
        if pos < self.free.len() && span.end() == self.free[pos].offset {
            span.len += self.free[pos].len;
            self.free.remove(pos);
        }
        // Merge with the preceding span.
        if pos > 0 && self.free[pos - 1].end() == span.offset {
            self.free[pos - 1].len += span.len;
        } else {
            self.free.insert(pos, span);
        }
        // Retract the frontier over trailing free space.
        if let Some(last) = self.free.last() {
            if last.end() == self.cursor {
                self.cursor = last.offset;
                self.free.pop();
            }
        }
    }

    /// Total bytes currently referenced by live mappings.
    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn mappings(&self) -> impl Iterator<Item = (u64, BlockMapping)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(lba, m)| m.map(|mapping| (lba as u64, mapping)))
    }
}
