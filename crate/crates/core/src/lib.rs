//! Desk-scale laboratory for one-shot Bayesian federated learning via
//! pseudocoresets.
//!
//! Each client compresses its shard into a tiny synthetic dataset whose
//! induced weight posterior approximates the local posterior; a single up-link
//! of those pseudocoresets lets the server assemble a target density for the
//! global posterior. The crate provides the model family ([`nn`]), posterior
//! machinery ([`posterior`]), the contrastive coreset learner ([`bpc`]), the
//! federation protocols and communication ledger ([`federation`]), synthetic
//! data generators ([`datagen`]), calibration and accuracy metrics ([`eval`]),
//! and the on-disk formats ([`io`]).
//!
//! Everything is 64-bit and deterministic: stochastic routines take explicit
//! seeds, sub-streams are derived per index ([`rng`]), and parallel sections
//! reduce in fixed order, so a configuration and seed pin every artifact byte.

pub mod bpc;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod federation;
pub mod io;
pub mod nn;
pub mod posterior;
pub mod rng;

pub use error::{CoreError, Result};
