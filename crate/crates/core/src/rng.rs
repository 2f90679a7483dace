//! Seeded, splittable random number streams.
//!
//! A stream is a `(seed, stream_index)` pair mapped onto a ChaCha8 generator
//! keyed by `seed` with its 64-bit stream counter set to `stream_index`.
//! Parallel work is always partitioned by stream index with fixed per-stream
//! quotas, so results never depend on the number of worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Draws per stream chunk for partitioned Monte Carlo work.
pub const DEFAULT_QUOTA: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        Self { seed, stream_index }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// A child stream identified by `tag`. Children of distinct tags (or of
    /// distinct parents) land on unrelated stream indices.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_index: mix(self.stream_index ^ mix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Child stream for the `k`-th chunk of a partitioned workload.
    pub fn chunk(&self, k: u64) -> Self {
        self.derive(k).derive(0xc4_0c4)
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splits `total` items into chunks of at most `quota`, returning
/// `(chunk_index, len)` pairs.
pub fn partition(total: usize, quota: usize) -> Vec<(u64, usize)> {
    let quota = quota.max(1);
    (0..total.div_ceil(quota))
        .map(|k| (k as u64, quota.min(total - k * quota)))
        .collect()
}

/// Generates `n` values in parallel, chunk `k` drawing from `stream.chunk(k)`.
/// Output order and values are independent of the thread count.
pub fn par_draws<T, F>(n: usize, stream: RngStream, quota: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    partition(n, quota)
        .into_par_iter()
        .flat_map_iter(|(k, len)| {
            let mut rng = stream.chunk(k).rng();
            (0..len).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Fallible variant of [`par_draws`]; the first error in chunk order wins.
pub fn try_par_draws<T, E, F>(n: usize, stream: RngStream, quota: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T, E> + Sync,
{
    let chunks: Vec<Result<Vec<T>, E>> = partition(n, quota)
        .into_par_iter()
        .map(|(k, len)| {
            let mut rng = stream.chunk(k).rng();
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
