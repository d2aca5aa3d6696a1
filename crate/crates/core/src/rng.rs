//! Identity-addressed random streams.
//!
//! Every random draw in a simulation belongs to a stream named by
//! `(seed, worker, step, layer, side)`. The four integers form the ChaCha key
//! and the side selects the ChaCha stream, so distinct identities never share
//! keystream and a stream can be recreated without replaying anything else.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer id used when an operator is applied once to the whole model.
pub const ENTIRE_MODEL_LAYER: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// Worker-side compression `Q_W`.
    Worker,
    /// Master-side compression `Q_M`.
    Master,
    /// Stochastic gradient sampling (minibatch indices or additive noise).
    Gradient,
    /// Synthetic dataset generation.
    Data,
    /// Parameter initialisation.
    Init,
    /// Auxiliary draws of the verifier (probe points, corpora).
    Probe,
}

impl Side {
    fn stream(self) -> u64 {
        match self {
            Side::Worker => 1,
            Side::Master => 2,
            Side::Gradient => 3,
            Side::Data => 4,
            Side::Init => 5,
            Side::Probe => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub worker: u64,
    pub step: u64,
    pub layer: u64,
    pub side: Side,
}

impl StreamId {
    pub fn new(side: Side, worker: u64, step: u64) -> Self {
        Self {
            worker,
            step,
            layer: 0,
            side,
        }
    }

    pub fn with_layer(self, layer: u64) -> Self {
        Self { layer, ..self }
    }
}

/// A deterministic random stream; implements [`RngCore`].
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&id.worker.to_le_bytes());
        key[16..24].copy_from_slice(&id.step.to_le_bytes());
        key[24..32].copy_from_slice(&id.layer.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(id.side.stream());
        Self { inner }
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

/// Mixes a base seed with an index (SplitMix64 finaliser); used to derive
/// replicate seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
