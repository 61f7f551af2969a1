//! Downlink multi-user MISO beamforming with WMMSE decomposition,
//! meta-learned component prediction and a loss-ranked replay memory.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: complex matrices and the Hermitian positive-definite solve.
//! * [`channels`]: fading generators, tasks and the dataset file format.
//! * [`objective`]: SINR, weighted sum rate and the sum-rate loss.
//! * [`wmmse`]: the component formulas, the WMMSE solver and a grid oracle.
//! * [`nn`]: reverse-mode tape, MLPs, optimizers and the differentiable
//!   channel-to-loss pipeline.
//! * [`meta`]: inner/outer meta-learning loops and training baselines.
//! * [`memory`]: the replay memory and the test-time adaptation loop.
//! * [`harness`]: configuration, experiments and result tables.

pub mod channels;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod memory;
pub mod meta;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod stats;
pub mod wmmse;

pub use error::{Error, Result};
