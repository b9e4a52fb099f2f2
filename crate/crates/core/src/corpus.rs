//! Deterministic natural-language text generator.
//!
//! Produces English prose from sentence templates and a fixed vocabulary,
//! seeded so runs are reproducible. Used as write payload for
//! compression-ratio checks and the `text` benchmark fill.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SUBJECTS: &[&str] = &[
    "the storage stack", "the device layer", "a request", "the reactor", "the parity strip",
    "the benchmark", "the write path", "the read path", "a block", "the allocator",
    "the completion queue", "the mirror", "the target", "the client", "the scheduler",
    "the controller", "a stripe", "the channel", "the backing file", "the protocol",
];

const VERBS: &[&str] = &[
    "moves", "stores", "drains", "validates", "reconstructs", "replicates", "compresses",
    "verifies", "schedules", "submits", "completes", "rotates", "maps", "streams", "records",
    "measures", "recovers", "serializes", "acknowledges", "allocates",
];

const OBJECTS: &[&str] = &[
    "every block", "the payload", "each stripe", "the parity", "the request window",
    "the data path", "a full stripe", "the extent map", "the workload", "the report",
    "each completion", "the read buffer", "the mirror set", "the queue", "the offset trace",
];

const MODIFIERS: &[&str] = &[
    "in order", "without blocking", "under load", "at full depth", "per iteration",
    "deterministically", "on the fast path", "before parity", "after validation", "in place",
    "at line rate", "per stripe", "with backpressure", "on completion", "per channel",
];

const CONNECTORS: &[&str] = &[
    "meanwhile", "as a result", "in the steady state", "under contention", "by contrast",
    "once the queue drains", "when the window fills", "after the flush settles",
];

/// Generates `len` bytes of reproducible English-like prose.
pub fn generate(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + 128);
    let mut sentence_in_paragraph = 0u32;
    while out.len() < len {
        let mut sentence = String::with_capacity(96);
        if sentence_in_paragraph > 0 && rng.gen_bool(0.3) {
            sentence.push_str(CONNECTORS.choose(&mut rng).unwrap());
            sentence.push_str(", ");
        }
        sentence.push_str(SUBJECTS.choose(&mut rng).unwrap());
        sentence.push(' ');
        sentence.push_str(VERBS.choose(&mut rng).unwrap());
        sentence.push(' ');
        sentence.push_str(OBJECTS.choose(&mut rng).unwrap());
        if rng.gen_bool(0.7) {
            sentence.push(' ');
            sentence.push_str(MODIFIERS.choose(&mut rng).unwrap());
        }
        if rng.gen_bool(0.25) {
            sentence.push_str(", and ");
            sentence.push_str(SUBJECTS.choose(&mut rng).unwrap());
            sentence.push(' ');
            sentence.push_str(VERBS.choose(&mut rng).unwrap());
            sentence.push(' ');
            sentence.push_str(OBJECTS.choose(&mut rng).unwrap());
        }
        sentence.push_str(". ");

        let mut bytes = sentence.into_bytes();
        // Sentence case.
        bytes[0] = bytes[0].to_ascii_uppercase();
        out.extend_from_slice(&bytes);

        sentence_in_paragraph += 1;
        if sentence_in_paragraph >= 6 && rng.gen_bool(0.4) {
            out.extend_from_slice(b"\n\n");
            sentence_in_paragraph = 0;
        }
    }
    out.truncate(len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(5, 10_000), generate(5, 10_000));
        assert_ne!(generate(5, 10_000), generate(6, 10_000));
    }

    #[test]
    fn exact_length_and_printable() {
        let text = generate(1, 4096);
        assert_eq!(text.len(), 4096);
        assert!(text.iter().all(|&b| b == b'\n' || (0x20..0x7F).contains(&b)));
    }

    /// The corpus must behave like natural language under deflate: every
    /// 4 KiB block independently compresses at least 3x.
    #[test]
    fn blocks_compress_at_least_three_to_one() {
        use crate::compress::{compress_block, CompressLimits};
        let limits = CompressLimits::default();
        let text = generate(7, 1 << 20);
        for (i, block) in text.chunks(4096).enumerate() {
            let stream = compress_block(block, &limits).unwrap();
            assert!(
                stream.len() * 3 <= block.len(),
                "block {i} ratio too low: {} -> {}",
                block.len(),
                stream.len()
            );
        }
    }
}
