//! Keyed random streams: every (seed, order, stratum) triple owns an
//! independent generator, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one stratum of one collision order.
pub fn stream(seed: u64, order: u64, stratum: u64) -> ChaCha8Rng {
    let mut state = seed ^ order.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let _ = splitmix64(&mut state);
    state ^= stratum.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
