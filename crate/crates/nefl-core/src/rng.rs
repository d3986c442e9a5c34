//! Deterministic random-stream derivation.
//!
//! Every random decision in the simulator draws from a ChaCha stream keyed by
//! `(base seed, purpose, a, b)`. Streams never depend on scheduling, so
//! client-parallel execution cannot change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is for; part of the key so purposes can never collide.
#[derive(Clone, Copy, Debug)]
pub enum Purpose {
    ModelInit = 1,
    ClientSample = 2,
    SubmodelAssign = 3,
    LocalTrain = 4,
    DataGen = 5,
    Partition = 6,
}

/// A ChaCha8 stream keyed by (seed, purpose, a, b).
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Uniform sample of `k` distinct values from `0..n`, returned sorted.
/// Partial Fisher–Yates so the draw count is exactly `k`.
pub fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    use rand::Rng;
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle(rng: &mut ChaCha8Rng, items: &mut [usize]) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
