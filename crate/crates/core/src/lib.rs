//! Layer-wise versus entire-model gradient compression.
//!
//! The crate is organised bottom-up:
//!
//! * [`layered`] holds the layer-partitioned vector type and the block-diagonal
//!   weights used by the convergence bounds.
//! * [`compress`] is the operator catalog (Random k, Top k, Threshold v,
//!   Adaptive Threshold, TernGrad, QSGD, sign) together with the layer-wise /
//!   entire-model application strategies and the bidirectional
//!   worker → master → worker round.
//! * [`sim`] is a deterministic in-process simulation of synchronous
//!   data-parallel SGD with compressed communication in both directions.
//! * [`verify`] estimates the quantities appearing in the convergence analysis
//!   by exhaustive enumeration or Monte Carlo and reports pass/fail.
//! * [`rng`] provides the seeded, identity-addressed random streams every
//!   stochastic component draws from.

pub mod compress;
pub mod error;
pub mod layered;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod verify;

pub use compress::{ApplicationMode, Compressor, CompressorSpec};
pub use error::{Error, Result};
pub use layered::{BlockWeights, LayerShape, LayeredVector};
pub use rng::{RngStream, Side, StreamId};
