//! Desk-scale laboratory for combinatorial field reconstruction attacks
//! against layout-aware document encoders.
//!
//! The crate is organised along the attack pipeline:
//!
//! * [`corpus`] generates synthetic form/receipt documents, tokenizes,
//!   partitions and scrubs them.
//! * [`model`] is a small layout-aware transformer encoder with MLM,
//!   BIO-tagging and SPADE pointer heads, trained with hand-written
//!   backpropagation.
//! * [`attack`] reconstructs scrubbed fields token by token by combining a
//!   public auxiliary MLM with the target model's loss.
//! * [`game`] runs the one-shot and multi-shot reconstruction games and the
//!   membership-inference scores used to filter and rank attempts.
//! * [`metrics`] evaluates reconstructions (similarity metrics, improvement
//!   factor, ranked accuracy/hamming curves).
//! * [`experiment`] wires everything into the `cdmi` command line driver.

pub mod attack;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod game;
pub mod metrics;
pub mod model;
pub mod seed;

pub use error::{Error, Result};
