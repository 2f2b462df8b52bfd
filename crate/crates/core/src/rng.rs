//! Counter-based random streams.
//!
//! Every random draw in an experiment comes from a ChaCha8 stream keyed by the
//! master seed, with the 64-bit stream id laid out as
//!
//! ```text
//!   bits 63..44  replica index (20 bits)
//!   bits 43..12  task index    (32 bits)
//!   bits 11..0   purpose tag   (12 bits)
//! ```
//!
//! Within a stream, draws are consumed sequentially round by round. Since the
//! stream for (replica, task, purpose) does not depend on execution order,
//! replicas run concurrently reproduce serial runs exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; keeps unrelated draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Environment = 1,
    MetaSample = 2,
    WithinTask = 3,
    Baseline = 4,
    Test = 5,
}

pub fn stream(master: u64, replica: u32, task: u32, purpose: Purpose) -> StreamRng {
    let id = ((replica as u64 & 0xF_FFFF) << 44) | ((task as u64) << 12) | (purpose as u64 & 0xFFF);
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}

/// Index sampled from `probs` (non-negative, summing to ~1) by inverse CDF.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if target < acc {
            return i;
        }
    }
    last_positive
}
