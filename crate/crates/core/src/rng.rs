use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator keyed by `(seed, stream)`; independent streams let parallel or
/// reordered work reproduce exactly.
pub(crate) fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
