//! Every random draw in a run derives from one seed. Each consumer gets its
//! own ChaCha stream, keyed by purpose and step, so adding or removing one
//! consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Split = 2,
    Synth = 3,
    BatchSampler = 4,
    EncoderDropout = 5,
    ClassifierDropout = 6,
    HeadDropout = 7,
    Pairing = 8,
    AugClassifierDropout = 9,
    ReconDropout = 10,
    DiscDropout = 11,
    GradCheck = 12,
}

/// Generator for `stream` at `step`. Distinct `(stream, step)` pairs never
/// share a keystream.
pub fn stream_rng(seed: u64, stream: Stream, step: u64) -> Rng {
    debug_assert!(step < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | step);
    rng
}
