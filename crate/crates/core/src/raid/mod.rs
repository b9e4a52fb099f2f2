//! RAID virtual block devices: RAID0 striping, RAID1 mirroring, and RAID5
//! rotating parity with full-stripe writes, parity-verified reads, and a
//! deterministic write-path fault injector.

mod device;
mod layout;
mod poison;

pub use device::{ParityReport, RaidDevice, RaidError};
pub use layout::{LayoutError, RaidLayout, RaidLevel, StripeAddress};
pub use poison::{PoisonConfig, PoisonConfigError, PoisonFilter};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParityError {
    #[error("parity needs at least one strip")]
    NoStrips,
    #[error("strip {index} is {got} bytes, expected {want}")]
    LengthMismatch { index: usize, got: usize, want: usize },
}

/// Byte-wise XOR of all data strips; the RAID5 parity strip.
pub fn compute_parity<'a, I>(strips: I) -> Result<Vec<u8>, ParityError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut iter = strips.into_iter();
    let first = iter.next().ok_or(ParityError::NoStrips)?;
    let mut parity = first.to_vec();
    for (index, strip) in iter.enumerate() {
        if strip.len() != parity.len() {
            return Err(ParityError::LengthMismatch {
                index: index + 1,
                got: strip.len(),
                want: parity.len(),
            });
        }
        for (acc, byte) in parity.iter_mut().zip(strip) {
            *acc ^= byte;
        }
    }
    Ok(parity)
}

/// XOR fold over equally sized chunks; callers guarantee uniform lengths.
pub(crate) fn xor_fold<'a, I>(strips: I) -> Vec<u8>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    compute_parity(strips).expect("uniform strip lengths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backstore::MemoryDevice;
    use crate::block::{
        share_device, BlockDevice, DeviceGeometry, IoRequest, IoStatus, SharedDevice,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn parity_of_zero_strips_is_zero() {
        let zero = vec![0u8; 32];
        let strips = [zero.as_slice(), zero.as_slice(), zero.as_slice()];
        assert_eq!(compute_parity(strips).unwrap(), zero);
    }

    #[test]
    fn parity_matches_bytewise_oracle() {
        let a = vec![0x0Fu8; 16];
        let b = vec![0x33u8; 16];
        let c = vec![0x55u8; 16];
        let parity = compute_parity([a.as_slice(), b.as_slice(), c.as_slice()]).unwrap();
        assert_eq!(parity, vec![0x0F ^ 0x33 ^ 0x55; 16]);
        assert_eq!(parity, vec![0x69u8; 16]);
    }

    #[test]
    fn parity_is_an_involution() {
        let mut rng = StdRng::seed_from_u64(3);
        let strip = |rng: &mut StdRng| {
            let mut s = vec![0u8; 64];
            rng.fill(s.as_mut_slice());
            s
        };
        let (d0, d1, d2) = (strip(&mut rng), strip(&mut rng), strip(&mut rng));
        let p = compute_parity([d0.as_slice(), d1.as_slice(), d2.as_slice()]).unwrap();
        let back = compute_parity([p.as_slice(), d1.as_slice(), d2.as_slice()]).unwrap();
        assert_eq!(back, d0);
    }

    #[test]
    fn parity_rejects_mismatched_lengths() {
        let a = vec![0u8; 16];
        let b = vec![0u8; 8];
        assert_eq!(
            compute_parity([a.as_slice(), b.as_slice()]),
            Err(ParityError::LengthMismatch { index: 1, got: 8, want: 16 })
        );
    }

    // ---- device-level tests -------------------------------------------

    const BS: u32 = 512;

    fn bases(n: usize, blocks: u64) -> Vec<SharedDevice> {
        let geometry = DeviceGeometry::new(BS, blocks).unwrap();
        (0..n).map(|_| share_device(MemoryDevice::new(geometry))).collect()
    }

    fn raid5(n: usize, strip: u64, blocks: u64, poison: Option<PoisonConfig>) -> RaidDevice {
        let geometry = DeviceGeometry::new(BS, blocks).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, n, strip, geometry).unwrap();
        RaidDevice::new(layout, bases(n, blocks), poison, true).unwrap()
    }

    fn block_fill(seed: u8) -> Vec<u8> {
        (0..BS as usize).map(|i| seed.wrapping_add(i as u8)).collect()
    }

    #[test]
    fn full_stripe_write_stores_xor_parity() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, 4, 1, geometry).unwrap();
        let base_devices = bases(4, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let strips = [block_fill(1), block_fill(2), block_fill(3)];
        let data: Vec<u8> = strips.concat();
        assert_eq!(dev.full_stripe_write(0, &data), IoStatus::Ok);

        // Stripe 0: parity on device 3.
        let stored_parity =
            base_devices[3].lock().execute(&IoRequest::read(0, 0, 1)).payload;
        let expected =
            compute_parity(strips.iter().map(|s| s.as_slice())).unwrap();
        assert_eq!(stored_parity, expected);

        // Round trip through the read path.
        let out = dev.execute(&IoRequest::read(1, 0, 3));
        assert_eq!(out.status, IoStatus::Ok);
        assert_eq!(out.payload, data);
    }

    #[test]
    fn partial_stripe_write_is_unsupported() {
        let mut dev = raid5(4, 1, 8, None);
        // Half a stripe.
        let out = dev.execute(&IoRequest::write(1, 0, 1, vec![0u8; BS as usize]));
        assert_eq!(out.status, IoStatus::Unsupported);
        // Misaligned full-length write.
        let out = dev.execute(&IoRequest::write(2, 1, 3, vec![0u8; 3 * BS as usize]));
        assert_eq!(out.status, IoStatus::Unsupported);
        // Exact stripe is fine.
        let out = dev.execute(&IoRequest::write(3, 0, 3, vec![0u8; 3 * BS as usize]));
        assert_eq!(out.status, IoStatus::Ok);
    }

    #[test]
    fn safe_read_matches_on_consistent_stripe() {
        let mut dev = raid5(4, 1, 8, None);
        let data: Vec<u8> = [block_fill(7), block_fill(8), block_fill(9)].concat();
        dev.full_stripe_write(2, &data);
        for lba in 6..9 {
            let (block, report) = dev.safe_read(lba).unwrap();
            assert!(report.matched, "lba {lba}");
            assert_eq!(report.read_digest, report.reconstructed_digest);
            assert_eq!(block, data[(lba as usize - 6) * BS as usize..][..BS as usize]);
        }
    }

    #[test]
    fn safe_read_flags_poisoned_block() {
        let poison = PoisonConfig { enabled: true, probability: 1.0, seed: 5 };
        let mut dev = raid5(4, 1, 8, Some(poison));
        let data: Vec<u8> = [block_fill(1), block_fill(2), block_fill(3)].concat();
        assert_eq!(dev.full_stripe_write(0, &data), IoStatus::Ok);
        assert_eq!(dev.poison_flip_count(), 3);

        let (block, report) = dev.safe_read(0).unwrap();
        assert!(!report.matched);
        assert_ne!(report.read_digest, report.reconstructed_digest);
        // The poisoned data is still delivered: first bit inverted.
        let mut expected = block_fill(1);
        expected[0] ^= 0x01;
        assert_eq!(block, expected);

        let out = dev.execute(&IoRequest::read(1, 0, 1));
        assert_eq!(out.status, IoStatus::ParityMismatch);
        assert_eq!(out.payload, expected);
    }

    /// Any single-bit flip in any stored data strip is detected by a safe
    /// read of the affected block: exhaustive over every bit of a small
    /// 3-data+parity stripe.
    #[test]
    fn safe_read_detects_every_single_bit_flip() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, 4, 1, geometry).unwrap();
        let base_devices = bases(4, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();
        let data: Vec<u8> = [block_fill(11), block_fill(22), block_fill(33)].concat();
        dev.full_stripe_write(0, &data);

        for lba in 0..3u64 {
            let addr = layout.map(lba).unwrap();
            let clean = base_devices[addr.device_index]
                .lock()
                .execute(&IoRequest::read(0, 0, 1))
                .payload;
            for bit in 0..(BS as usize * 8) {
                let mut corrupt = clean.clone();
                corrupt[bit / 8] ^= 1 << (bit % 8);
                base_devices[addr.device_index]
                    .lock()
                    .execute(&IoRequest::write(0, 0, 1, corrupt));
                let (_, report) = dev.safe_read(lba).unwrap();
                assert!(!report.matched, "flip of bit {bit} on lba {lba} undetected");
            }
            base_devices[addr.device_index]
                .lock()
                .execute(&IoRequest::write(0, 0, 1, clean));
        }
    }

    /// A corrupt strip taints parity verification for its whole stripe
    /// column and nothing else.
    #[test]
    fn corruption_is_confined_to_the_stripe() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, 4, 2, geometry).unwrap();
        let base_devices = bases(4, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let mut rng = StdRng::seed_from_u64(17);
        let stripe_bytes = (layout.blocks_per_stripe() * BS as u64) as usize;
        let mut all = vec![0u8; stripe_bytes * layout.stripe_count() as usize];
        rng.fill(all.as_mut_slice());
        for s in 0..layout.stripe_count() {
            dev.full_stripe_write(s, &all[s as usize * stripe_bytes..][..stripe_bytes]);
        }

        // Corrupt stripe 1, strip on device 0, second block of the strip.
        let victim_block = 1 * layout.strip_size_blocks + 1;
        let mut stored =
            base_devices[0].lock().execute(&IoRequest::read(0, victim_block, 1)).payload;
        stored[40] ^= 0x80;
        base_devices[0].lock().execute(&IoRequest::write(0, victim_block, 1, stored));

        let exposed = dev.geometry().block_count;
        for lba in 0..exposed {
            let addr = layout.map(lba).unwrap();
            let (_, report) = dev.safe_read(lba).unwrap();
            let same_column = addr.stripe_index == 1 && addr.offset_in_strip == 1;
            assert_eq!(
                report.matched, !same_column,
                "lba {lba} (stripe {}, offset {})",
                addr.stripe_index, addr.offset_in_strip
            );
        }
    }

    #[test]
    fn reconstruct_read_recovers_any_single_strip() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, 4, 2, geometry).unwrap();
        let base_devices = bases(4, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let mut rng = StdRng::seed_from_u64(23);
        let stripe_bytes = (layout.blocks_per_stripe() * BS as u64) as usize;
        let mut data = vec![0u8; stripe_bytes];
        rng.fill(data.as_mut_slice());
        dev.full_stripe_write(1, &data);

        for target in 0..4usize {
            let stored = base_devices[target]
                .lock()
                .execute(&IoRequest::read(0, 2, 2))
                .payload;
            let recovered = dev.reconstruct_read(1, &[target]).unwrap();
            assert_eq!(recovered, stored, "device {target}");
        }
    }

    #[test]
    fn reconstruct_read_rejects_two_missing_devices() {
        let mut dev = raid5(4, 1, 8, None);
        assert_eq!(dev.reconstruct_read(0, &[0, 1]), Err(IoStatus::Unsupported));
        assert_eq!(dev.reconstruct_read(0, &[]), Err(IoStatus::Unsupported));
    }

    #[test]
    fn reconstruct_read_of_zero_stripe_is_zero() {
        let mut dev = raid5(4, 1, 8, None);
        for target in 0..4usize {
            let strip = dev.reconstruct_read(0, &[target]).unwrap();
            assert!(strip.iter().all(|&b| b == 0));
        }
    }

    /// After full-stripe writes with poison off, the XOR of every stripe's
    /// strips is zero.
    #[test]
    fn parity_closure_over_random_writes() {
        let geometry = DeviceGeometry::new(BS, 16).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid5, 5, 2, geometry).unwrap();
        let base_devices = bases(5, 16);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let mut rng = StdRng::seed_from_u64(31);
        let stripe_bytes = (layout.blocks_per_stripe() * BS as u64) as usize;
        for _ in 0..40 {
            let stripe = rng.gen_range(0..layout.stripe_count());
            let mut data = vec![0u8; stripe_bytes];
            rng.fill(data.as_mut_slice());
            assert_eq!(dev.full_stripe_write(stripe, &data), IoStatus::Ok);
        }

        let strip_bytes = (layout.strip_size_blocks * BS as u64) as usize;
        for stripe in 0..layout.stripe_count() {
            let mut acc = vec![0u8; strip_bytes];
            for base in &base_devices {
                let strip = base
                    .lock()
                    .execute(&IoRequest::read(0, stripe * layout.strip_size_blocks, 2))
                    .payload;
                for (a, b) in acc.iter_mut().zip(&strip) {
                    *a ^= b;
                }
            }
            assert!(acc.iter().all(|&b| b == 0), "stripe {stripe} XOR not zero");
        }
    }

    #[test]
    fn raid1_write_reaches_every_mirror_and_reads_rotate() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid1, 2, 1, geometry).unwrap();
        let base_devices = bases(2, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let p = block_fill(0xA5);
        assert_eq!(dev.execute(&IoRequest::write(1, 4, 1, p.clone())).status, IoStatus::Ok);
        for base in &base_devices {
            assert_eq!(base.lock().execute(&IoRequest::read(0, 4, 1)).payload, p);
        }

        // Distinct content planted directly on each mirror makes the
        // round-robin read schedule observable.
        base_devices[0].lock().execute(&IoRequest::write(0, 0, 1, block_fill(1)));
        base_devices[1].lock().execute(&IoRequest::write(0, 0, 1, block_fill(2)));
        let first = dev.execute(&IoRequest::read(2, 0, 1)).payload;
        let second = dev.execute(&IoRequest::read(3, 0, 1)).payload;
        assert_ne!(first, second);
        assert_eq!(dev.execute(&IoRequest::read(4, 0, 1)).payload, first);
    }

    #[test]
    fn raid1_over_null_mirrors_reads_zero() {
        use crate::backstore::NullDevice;
        let geometry = DeviceGeometry::new(4096, 64).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid1, 2, 1, geometry).unwrap();
        let nulls: Vec<SharedDevice> =
            (0..2).map(|_| share_device(NullDevice::new(geometry))).collect();
        let mut dev = RaidDevice::new(layout, nulls, None, true).unwrap();
        dev.execute(&IoRequest::write(1, 0, 1, vec![0xFF; 4096]));
        let out = dev.execute(&IoRequest::read(2, 0, 1));
        assert_eq!(out.status, IoStatus::Ok);
        assert_eq!(out.payload, vec![0u8; 4096]);
    }

    #[test]
    fn raid0_round_trip_and_placement() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid0, 4, 1, geometry).unwrap();
        let base_devices = bases(4, 8);
        let mut dev = RaidDevice::new(layout, base_devices.clone(), None, true).unwrap();

        let payload: Vec<u8> = (0..8).flat_map(|i| block_fill(i as u8)).collect();
        assert_eq!(dev.execute(&IoRequest::write(1, 0, 8, payload.clone())).status, IoStatus::Ok);
        assert_eq!(dev.execute(&IoRequest::read(2, 0, 8)).payload, payload);

        // lba 9 would live on device 1, physical block 2; lba 5 on device 1,
        // physical block 1.
        let on_dev1 = base_devices[1].lock().execute(&IoRequest::read(0, 1, 1)).payload;
        assert_eq!(on_dev1, block_fill(5));
    }

    #[test]
    fn mismatched_base_geometry_is_rejected() {
        let geometry = DeviceGeometry::new(BS, 8).unwrap();
        let other = DeviceGeometry::new(BS, 16).unwrap();
        let layout = RaidLayout::new(RaidLevel::Raid1, 2, 1, geometry).unwrap();
        let devs = vec![
            share_device(MemoryDevice::new(geometry)),
            share_device(MemoryDevice::new(other)),
        ];
        assert!(matches!(
            RaidDevice::new(layout, devs, None, true),
            Err(RaidError::BaseGeometryMismatch { index: 1 })
        ));
    }
}
