//! Terminal block devices: null (discard writes, zero reads), memory
//! (heap-backed), and file-backed stores.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::block::{BlockDevice, DeviceGeometry, DeviceOutput, IoOp, IoRequest, IoStatus};

/// Discards writes and reads back zeroes. Useful as a sink for benchmarks.
pub struct NullDevice {
    geometry: DeviceGeometry,
}

impl NullDevice {
    pub fn new(geometry: DeviceGeometry) -> Self {
        Self { geometry }
    }
}

impl BlockDevice for NullDevice {
    fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    fn execute(&mut self, req: &IoRequest) -> DeviceOutput {
        match req.op {
            IoOp::Read => DeviceOutput::ok(vec![0u8; req.len_bytes(self.geometry.block_size) as usize]),
            IoOp::Write | IoOp::Flush => DeviceOutput::ok_empty(),
        }
    }
}

/// Heap-backed store, zero-initialized.
pub struct MemoryDevice {
    geometry: DeviceGeometry,
    cells: Vec<u8>,
}

impl MemoryDevice {
    pub fn new(geometry: DeviceGeometry) -> Self {
        let cells = vec![0u8; geometry.capacity_bytes() as usize];
        Self { geometry, cells }
    }

    fn range(&self, req: &IoRequest) -> std::ops::Range<usize> {
        let start = (req.lba * self.geometry.block_size as u64) as usize;
        let len = req.len_bytes(self.geometry.block_size) as usize;
        start..start + len
    }
}

impl BlockDevice for MemoryDevice {
    fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    fn execute(&mut self, req: &IoRequest) -> DeviceOutput {
        match req.op {
            IoOp::Read => DeviceOutput::ok(self.cells[self.range(req)].to_vec()),
            IoOp::Write => {
                let range = self.range(req);
                self.cells[range].copy_from_slice(&req.payload);
                DeviceOutput::ok_empty()
            }
            IoOp::Flush => DeviceOutput::ok_empty(),
        }
    }
}

/// File-backed store using positioned reads and writes (no caching layer of
/// its own). FLUSH maps to fsync, so data survives process restarts.
pub struct FileDevice {
    geometry: DeviceGeometry,
    path: PathBuf,
    file: File,
}

impl FileDevice {
    /// Opens (creating if needed) the backing file and extends it to the
    /// device capacity. With `sparse` the extension is a hole; otherwise
    /// the file is zero-filled up front.
    pub fn open(geometry: DeviceGeometry, path: &Path, sparse: bool) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create(true).open(path)?;
        let capacity = geometry.capacity_bytes();
        let existing = file.metadata()?.len();
        if existing < capacity {
            if sparse {
                file.set_len(capacity)?;
            } else {
                let zeros = vec![0u8; 1 << 20];
                let mut off = existing;
                while off < capacity {
                    let n = ((capacity - off) as usize).min(zeros.len());
                    file.write_all_at(&zeros[..n], off)?;
                    off += n as u64;
                }
            }
        }
        Ok(Self { geometry, path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl BlockDevice for FileDevice {
    fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    fn execute(&mut self, req: &IoRequest) -> DeviceOutput {
        let offset = req.lba * self.geometry.block_size as u64;
        match req.op {
            IoOp::Read => {
                let mut buf = vec![0u8; req.len_bytes(self.geometry.block_size) as usize];
                match self.file.read_exact_at(&mut buf, offset) {
                    Ok(()) => DeviceOutput::ok(buf),
                    Err(err) => {
                        log::warn!("file device {}: read failed: {err}", self.path.display());
                        DeviceOutput::error(IoStatus::IoError)
                    }
                }
            }
            IoOp::Write => match self.file.write_all_at(&req.payload, offset) {
                Ok(()) => DeviceOutput::ok_empty(),
                Err(err) => {
                    log::warn!("file device {}: write failed: {err}", self.path.display());
                    DeviceOutput::error(IoStatus::IoError)
                }
            },
            IoOp::Flush => match self.file.sync_all() {
                Ok(()) => DeviceOutput::ok_empty(),
                Err(err) => {
                    log::warn!("file device {}: fsync failed: {err}", self.path.display());
                    DeviceOutput::error(IoStatus::IoError)
                }
            },
        }
    }
}
