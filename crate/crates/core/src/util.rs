//! Seed derivation and small binary helpers shared across the pipeline.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; used to mix seed components into stream keys.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix an arbitrary list of seed components into a single stream key.
///
/// Every randomized stage derives its generator through this, so results are
/// independent of thread schedule: item `i` of epoch `e` always sees the same
/// stream regardless of which worker touches it.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3; // pi fraction, arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Deterministic generator for a derived stream.
pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// Encode a float slice as little-endian bytes.
pub fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode little-endian bytes into floats. Length must be a multiple of 4.
pub fn f32s_from_le_bytes(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_distinguishes_components() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_ne!(mix_seed(&[0]), mix_seed(&[0, 0]));
        assert_eq!(mix_seed(&[7, 9, 3]), mix_seed(&[7, 9, 3]));
    }

    #[test]
    fn f32_bytes_round_trip() {
        let xs = vec![0.0f32, -1.5, 3.25e-7, f32::MAX];
        let bytes = f32s_to_le_bytes(&xs);
        assert_eq!(f32s_from_le_bytes(&bytes).unwrap(), xs);
        assert!(f32s_from_le_bytes(&bytes[1..]).is_none());
    }
}
