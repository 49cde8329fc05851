//! Deterministic derivation of independent random streams.
//!
//! Every stochastic piece of the pipeline (phantom deformations, noise,
//! classifier init, batch sampling) gets its own seed derived from one master
//! seed, a purpose tag, and an index, so reruns are bit-reproducible and
//! streams never alias across stages.

/// Mixes `(base, tag, index)` into a new seed.
///
/// FNV-1a over the tag bytes, xored into the base, then a splitmix64
/// finalizer so nearby indices produce unrelated streams.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = base ^ h.rotate_left(32) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_and_indices_decorrelate() {
        let a = derive_seed(7, "deform", 0);
        let b = derive_seed(7, "deform", 1);
        let c = derive_seed(7, "noise", 0);
        let d = derive_seed(8, "deform", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn stable_across_calls() {
        assert_eq!(derive_seed(42, "init", 3), derive_seed(42, "init", 3));
    }
}
