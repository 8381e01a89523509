//! Token Hidden Reward (THR) for group-relative policy optimization, on a
//! toy policy whose logits are a shared readout matrix applied to free
//! per-context feature vectors.
//!
//! The modules follow the data flow of one training step:
//! [`rollout`] samples groups from a [`policy`] on a [`tasks`] question,
//! [`advantage`] and [`thr`] turn rewards into per-token advantages, and
//! [`objective`] produces the loss gradients that [`train`] applies.
//! [`dynamics`] and [`verify`] check the first-order identities behind THR
//! numerically.

pub mod advantage;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod sweep;
pub mod tasks;
pub mod thr;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
