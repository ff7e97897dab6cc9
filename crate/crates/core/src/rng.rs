//! Keyed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha12 stream selected by a
//! `(master seed, role, index)` triple. ChaCha is a counter-mode generator, so
//! a substream is fully determined by its key and can be regenerated in any
//! order, on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a substream is used for. Distinct roles never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Design = 1,
    Noise = 2,
    Split = 3,
    Screen = 4,
    Auxiliary = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for `(master_seed, role, index)`.
pub fn substream(master_seed: u64, role: Role, index: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(master_seed),
        splitmix64(master_seed ^ 0x5851_f42d_4c95_7f2d),
        splitmix64(role as u64),
        splitmix64((role as u64).rotate_left(32) ^ master_seed),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed drawn from the `(master_seed, role, index)` substream.
pub fn derive_seed(master_seed: u64, role: Role, index: u64) -> u64 {
    use rand::RngCore;
    substream(master_seed, role, index).next_u64()
}
