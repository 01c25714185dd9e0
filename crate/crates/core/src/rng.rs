use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator rooted at `seed`.
///
/// Streams are addressed by counter, so the draws a worker sees never depend
/// on how work is split across threads.
pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    substream(seed, stream).next_u64()
}
