//! Shared infrastructure: deterministic RNG, little-endian binary I/O helpers,
//! and an order-preserving parallel map.

pub mod io;
pub mod parallel;
pub mod rng;

/// FNV-1a 64-bit hash, used for content-addressing pipeline artifacts.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
