//! Deterministic seed derivation.
//!
//! Replicated experiments need one independent generator per replicate, and
//! the assignment must not depend on scheduling. Everything here is pure
//! arithmetic on `u64`, so a (root seed, index) pair always maps to the same
//! child seed no matter how many threads are running.

/// SplitMix64 output function. Used as a finaliser because it mixes all input
/// bits into all output bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for child stream `index` of `root`.
pub fn split(root: u64, index: u64) -> u64 {
    mix(mix(root) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Derive a seed from a root seed and a textual label such as a benchmark
/// cell id, then an index within that label.
pub fn split_labelled(root: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label bytes keeps distinct cell ids on distinct streams.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    split(mix(root) ^ h, index)
}
