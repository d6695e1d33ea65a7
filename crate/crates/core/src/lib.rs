//! Query reduction from search logs.
//!
//! Two complementary reducers share a small from-scratch transformer
//! encoder:
//!
//! - [`coreterm`] scores every term of a query independently and keeps the
//!   terms whose retention probability clears a threshold.
//! - [`subselect`] cross-encodes an (original, candidate) pair and scores how
//!   well the candidate stands in for the original.
//!
//! [`reducer`] combines both views with a greedy search, [`trainer`] fits
//! either head (optionally discarding large-loss samples), and
//! [`baselines`]/[`metrics`] provide the rule-based reducers and the
//! evaluation protocol. [`querylog`] ingests and synthesizes the
//! (original, reduced) query logs everything is trained on.

pub mod baselines;
pub mod coreterm;
pub mod encoder;
mod error;
pub mod metrics;
pub mod querylog;
pub mod reducer;
pub mod rng;
pub mod subselect;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use querylog::{KeepMask, Query, QueryPair};
