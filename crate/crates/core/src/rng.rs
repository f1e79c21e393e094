//! Counter-keyed random substreams.
//!
//! Every random quantity consumed by a kernel step is drawn from a stream
//! addressed by `(seed, chain, iteration, purpose, index)`. Streams never
//! share state, so the values a step sees do not depend on how work is
//! distributed across threads.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a stream is used for inside one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Proposal = 1,
    Auxiliary = 2,
    Preliminary = 3,
    Select = 4,
    Accept = 5,
    Momentum = 6,
    Mixture = 7,
    Exact = 8,
    Replicate = 9,
    Adapt = 10,
}

/// SplitMix64 generator over a fixed key.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn from_key(key: u64) -> Self {
        Self { key: mix64(key ^ 0xD134_2543_DE82_EF95), counter: 0 }
    }

    /// Stream for a free-standing use (tests, oracles, exact samplers).
    pub fn seeded(seed: u64) -> Self {
        Self::from_key(mix64(seed.wrapping_add(GOLDEN)))
    }

    /// Derive an independent child stream without advancing `self`.
    pub fn derive(&self, label: u64) -> Self {
        Self::from_key(mix64(self.key ^ mix64(label.wrapping_mul(GOLDEN) ^ 0x2545_F491_4F6C_DD1D)))
    }

    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Stream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN);
        mix64(self.key ^ mix64(self.counter))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Addresses all streams of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainStreams {
    pub seed: u64,
    pub chain: u64,
}

impl ChainStreams {
    pub fn new(seed: u64, chain: u64) -> Self {
        Self { seed, chain }
    }

    pub fn step(&self, iteration: u64) -> StepStreams {
        let base = mix64(mix64(self.seed ^ GOLDEN) ^ mix64(self.chain.wrapping_add(0x632B_E59B_D9B4_E019)));
        StepStreams { base: mix64(base ^ mix64(iteration.wrapping_mul(0xA076_1D64_78BD_642F))) }
    }
}

/// Streams belonging to a single transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepStreams {
    base: u64,
}

impl StepStreams {
    /// A one-off step, for use outside of a chain (tests, one-step studies).
    pub fn standalone(seed: u64, replicate: u64) -> Self {
        ChainStreams::new(seed, u64::MAX).step(replicate)
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> Stream {
        let slot = ((purpose as u64) << 32) | (index & 0xFFFF_FFFF);
        Stream::from_key(self.base ^ mix64(slot.wrapping_add(index >> 32).wrapping_mul(GOLDEN)))
    }

    pub fn uniform(&self, purpose: Purpose, index: u64) -> f64 {
        self.stream(purpose, index).next_f64()
    }
}
