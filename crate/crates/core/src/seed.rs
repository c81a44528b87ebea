use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derive an independent stream seed from a base seed and a stream index.
///
/// Stream 0 maps back to the base seed itself so that single-stream callers
/// and the first stream of a multi-stream caller agree.
pub(crate) fn derive(base: u64, stream: u64) -> u64 {
    if stream == 0 {
        return base;
    }
    // splitmix64 finalizer
    let mut z = base.wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
