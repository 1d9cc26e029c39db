//! Labelled random streams.
//!
//! Every source of randomness in a trial is an [`RngStream`] addressed by a
//! `(seed, StreamId)` pair. The generator is ChaCha8 keyed by the trial seed,
//! with the structured label packed into the 64-bit ChaCha stream selector, so
//! each stream is a disjoint counter range of the same keyed function. Draws in
//! one stream never depend on how many draws another stream has made, which is
//! what lets learners and environment copies run on any number of workers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. The discriminant is part of the stream selector
/// and must never be renumbered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u16)]
pub enum Role {
    /// Shared environment initialisation (identical across copies).
    EnvInit = 1,
    /// Per-copy environment dynamics.
    EnvStep = 2,
    /// Learner parameter initialisation.
    LearnerInit = 3,
    /// Learner action sampling.
    LearnerAct = 4,
    /// Initial hyperparameter draw.
    Hyper = 5,
    /// Outer-loop randomness (tie breaks, donors, perturbations).
    Meta = 6,
}

/// Structured label of a stream within one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub trial: u64,
    pub role: Role,
    pub index: u64,
}

impl StreamId {
    pub fn new(trial: u64, role: Role, index: u64) -> Self {
        Self { trial, role, index }
    }

    fn selector(&self) -> u64 {
        debug_assert!(self.index < 1 << 48, "stream index out of range");
        ((self.role as u64) << 48) | (self.index & ((1 << 48) - 1))
    }
}

/// SplitMix64 finaliser, used to fold the trial id into the key.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    id: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(id.trial)));
        inner.set_stream(id.selector());
        Self { id, inner }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std_dev * z
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
