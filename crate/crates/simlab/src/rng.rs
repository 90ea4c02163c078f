//! Reproducible random streams.
//!
//! Each `(seed, n, rep)` triple selects its own ChaCha20 stream, so
//! replications can run in any order or in parallel and still produce the
//! same data.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn stream(seed: u64, n: usize, rep: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | (rep as u64 & 0xffff_ffff));
    rng
}
