//! Transparent block compression: deflate on write, inflate on read.

mod codec;
mod device;
mod map;

pub use codec::{
    compress_block, decompress_block, CodecError, CompressLimits, DEFAULT_MAX_JOB_BYTES,
};
pub use device::CompressDevice;
pub use map::{BlockMapping, CompressionMap, Extent, MapError};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backstore::MemoryDevice;
    use crate::block::{share_device, BlockDevice, DeviceGeometry, IoRequest, IoStatus};
    use crate::corpus;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn geom(block_size: u32, block_count: u64) -> DeviceGeometry {
        DeviceGeometry::new(block_size, block_count).unwrap()
    }

    fn device(block_size: u32, block_count: u64) -> CompressDevice {
        let base = share_device(MemoryDevice::new(geom(block_size, block_count)));
        CompressDevice::new(base, CompressLimits::default())
    }

    #[test]
    fn compressible_block_consumes_less_than_raw() {
        let mut dev = device(4096, 64);
        let text = corpus::generate(1, 4096);
        assert_eq!(dev.execute(&IoRequest::write(1, 0, 1, text.clone())).status, IoStatus::Ok);
        let mapping = dev.mapping(0).unwrap();
        assert!(mapping.compressed);
        assert!((mapping.extent.len as usize) < 4096);
        assert!(dev.stored_bytes() < 4096);
        assert_eq!(dev.execute(&IoRequest::read(2, 0, 1)).payload, text);
    }

    #[test]
    fn random_block_falls_back_to_raw() {
        let mut dev = device(4096, 64);
        let mut rng = StdRng::seed_from_u64(12);
        let mut block = vec![0u8; 4096];
        rng.fill(block.as_mut_slice());
        dev.execute(&IoRequest::write(1, 3, 1, block.clone()));
        let mapping = dev.mapping(3).unwrap();
        assert!(!mapping.compressed);
        assert_eq!(mapping.extent.len, 4096);
        assert_eq!(dev.execute(&IoRequest::read(2, 3, 1)).payload, block);
    }

    #[test]
    fn overwrite_keeps_exactly_one_live_extent() {
        let mut dev = device(4096, 64);
        let text = corpus::generate(2, 4096);
        dev.execute(&IoRequest::write(1, 5, 1, text.clone()));
        let first = dev.stored_bytes();
        dev.execute(&IoRequest::write(2, 5, 1, text));
        // The old extent was released: live bytes account for one copy.
        assert_eq!(dev.stored_bytes(), first);
        assert!(dev.mapping(5).is_some());
    }

    #[test]
    fn unwritten_block_reads_zero() {
        let mut dev = device(4096, 64);
        let out = dev.execute(&IoRequest::read(1, 63, 1));
        assert_eq!(out.status, IoStatus::Ok);
        assert_eq!(out.payload, vec![0u8; 4096]);
    }

    /// The experiment shape from the compression runs: write a 1 MiB body
    /// sequentially, then read it back completely.
    #[test]
    fn write_everything_then_read_everything() {
        let mut dev = device(4096, 512);
        let body = corpus::generate(3, 1 << 20);
        for (i, chunk) in body.chunks(4096 * 8).enumerate() {
            let req = IoRequest::write(i as u64, i as u64 * 8, 8, chunk.to_vec());
            assert_eq!(dev.execute(&req).status, IoStatus::Ok);
        }
        let mut back = Vec::new();
        for i in 0..(1 << 20) / (4096 * 8) as usize {
            let out = dev.execute(&IoRequest::read(1000 + i as u64, i as u64 * 8, 8));
            assert_eq!(out.status, IoStatus::Ok);
            back.extend_from_slice(&out.payload);
        }
        assert_eq!(back, body);
        // Natural-language corpus compresses at least 3x.
        assert!(
            dev.stored_bytes() * 3 <= (1 << 20),
            "stored {} bytes of {}",
            dev.stored_bytes(),
            1 << 20
        );
    }

    /// Random mixed trace: the compression device is observationally
    /// equivalent to a plain memory device.
    #[test]
    fn trace_equivalence_with_memory_device() {
        let block_count = 64u64;
        let mut plain = MemoryDevice::new(geom(4096, block_count));
        let mut dev = device(4096, block_count);
        let corpus = corpus::generate(4, 1 << 16);

        let mut rng = StdRng::seed_from_u64(21);
        for id in 0..2500u64 {
            let lba = rng.gen_range(0..block_count);
            let num = rng.gen_range(1..=4).min(block_count - lba) as u32;
            let req = match rng.gen_range(0..10) {
                0 => IoRequest::flush(id),
                1..=5 => {
                    let len = num as usize * 4096;
                    let mut payload = vec![0u8; len];
                    match rng.gen_range(0..10) {
                        0..=2 => rng.fill(payload.as_mut_slice()),
                        3..=6 => {
                            let start = rng.gen_range(0..corpus.len() - len);
                            payload.copy_from_slice(&corpus[start..start + len]);
                        }
                        _ => {}
                    }
                    IoRequest::write(id, lba, num, payload)
                }
                _ => IoRequest::read(id, lba, num),
            };
            assert_eq!(plain.execute(&req), dev.execute(&req), "divergence at request {id}");
        }
    }

    /// Stored bytes never exceed the logical bytes of live blocks.
    #[test]
    fn stored_size_is_bounded_by_logical_size() {
        let mut dev = device(4096, 32);
        let mut rng = StdRng::seed_from_u64(33);
        let mut written = std::collections::HashSet::new();
        for id in 0..500u64 {
            let lba = rng.gen_range(0..32u64);
            let mut payload = vec![0u8; 4096];
            if rng.gen_bool(0.5) {
                rng.fill(payload.as_mut_slice());
            }
            dev.execute(&IoRequest::write(id, lba, 1, payload));
            written.insert(lba);
            assert!(dev.stored_bytes() <= written.len() as u64 * 4096);
        }
    }

    /// Corrupting one stored extent affects exactly that logical block.
    #[test]
    fn extent_corruption_is_isolated() {
        let base = share_device(MemoryDevice::new(geom(4096, 64)));
        let mut dev = CompressDevice::new(base.clone(), CompressLimits::default());
        let corpus = corpus::generate(5, 8 * 4096);
        for lba in 0..8u64 {
            let chunk = corpus[lba as usize * 4096..][..4096].to_vec();
            dev.execute(&IoRequest::write(lba, lba, 1, chunk));
        }

        let victim = dev.mapping(3).unwrap().extent;
        let bs = 4096u64;
        let block = victim.offset / bs;
        let within = (victim.offset % bs) as usize;
        let mut cell = base.lock().execute(&IoRequest::read(0, block, 1)).payload;
        cell[within] ^= 0xFF;
        base.lock().execute(&IoRequest::write(0, block, 1, cell));

        for lba in 0..8u64 {
            let out = dev.execute(&IoRequest::read(100 + lba, lba, 1));
            if lba == 3 {
                assert_eq!(out.status, IoStatus::IoError, "corruption undetected");
            } else {
                assert_eq!(out.status, IoStatus::Ok, "collateral damage at lba {lba}");
                assert_eq!(out.payload, corpus[lba as usize * 4096..][..4096]);
            }
        }
    }

    #[test]
    fn base_exhaustion_surfaces_as_io_error() {
        // Fill a tiny base with incompressible blocks; raw fallback makes
        // each block consume a full cell, and fragmentation from the
        // allocator eventually runs the arena out.
        let mut dev = device(512, 4);
        let mut rng = StdRng::seed_from_u64(44);
        let mut block = vec![0u8; 512];
        for lba in 0..4u64 {
            rng.fill(block.as_mut_slice());
            assert_eq!(dev.execute(&IoRequest::write(lba, lba, 1, block.clone())).status, IoStatus::Ok);
        }
        // Every cell is live; an overwrite must allocate before releasing,
        // and no free extent fits a raw block.
        rng.fill(block.as_mut_slice());
        let out = dev.execute(&IoRequest::write(9, 0, 1, block));
        assert_eq!(out.status, IoStatus::IoError);
    }
}
