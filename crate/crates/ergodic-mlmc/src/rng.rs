//! Reproducible random-number streams.
//!
//! Every Gaussian or subsample draw in the engine comes from a ChaCha8 stream
//! keyed by `(global seed, level, replica, attempt, lane)`. Draws are therefore
//! pure functions of those coordinates and of the (fixed) per-step draw order,
//! so results do not depend on thread count or scheduling. Replicas can be
//! simulated in any order, on any worker, and merged deterministically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent sub-generators used within one `(level, replica)` sample.
///
/// The solo burn-in phase consumes its own lanes so that coupled-phase draws
/// are identical across replicas with the same index regardless of the burn
/// length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Lane {
    /// Gaussian increments of the solo (fine-only) phase.
    BurnNoise = 0,
    /// Minibatch indices of the solo phase.
    BurnBatch = 1,
    /// Gaussian increments of the coupled phase.
    CoupledNoise = 2,
    /// Minibatch indices and subsample-coupling randomness of the coupled phase.
    CoupledBatch = 3,
    /// Truncation-level draws of the randomized (unbiased) estimator.
    Randomization = 4,
    /// Data-set fixture generation.
    Fixture = 5,
}

const MAX_REPLICA: u64 = 1 << 40;
const MAX_LEVEL: u32 = 32;
const MAX_ATTEMPT: u32 = 1 << 16;

/// Factory of reproducible RNG streams, cheap to copy around.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream for `(level, replica, attempt, lane)`. `attempt` is bumped
    /// when a failed sample is redrawn.
    pub fn stream(&self, level: u32, replica: u64, attempt: u32, lane: Lane) -> ChaCha8Rng {
        assert!(replica < MAX_REPLICA, "replica index out of stream range");
        assert!(level < MAX_LEVEL, "level out of stream range");
        assert!(attempt < MAX_ATTEMPT, "attempt out of stream range");
        let id = ((attempt as u64) << 48) | (replica << 8) | ((level as u64) << 3) | lane as u64;
        let mut rng = ChaCha8Rng::from_seed(expand_seed(self.seed));
        rng.set_stream(id);
        rng
    }
}

/// Expand a 64-bit seed to the 256-bit ChaCha key with SplitMix64.
fn expand_seed(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut state = seed;
    for chunk in out.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}

/// Fill `out` with independent standard normals.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
