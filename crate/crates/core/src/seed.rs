//! Seed derivation. Every frame gets its own RNG stream so results do not
//! depend on generation order or thread scheduling.

/// Mixes `base` with a sequence of labels (SplitMix64 finalizer per word).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = mix(base ^ 0x6a09_e667_f3bc_c909);
    for &p in parts {
        h = mix(h ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
