//! Deterministic simulator for denoising, adaptive online vertical federated
//! learning over multi-sensor data streams.
//!
//! Sensors hold disjoint feature blocks of the same samples, train local
//! feature extractors and upload embeddings over a noisy (quantizing) uplink.
//! The server optionally denoises the uploads with per-sensor autoencoders,
//! broadcasts a model representation, and every party then runs its own
//! number of local gradient steps chosen by a scheduler (fixed baselines or a
//! PPO agent trained against a latency/disparity-aware reward).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codec;
pub mod denoiser;
pub mod envsim;
pub mod error;
pub mod exp;
pub mod numkit;
pub mod par;
pub mod rng;
pub mod scheduler;
pub mod streams;
pub mod vflcore;

pub use error::{Error, Result};
