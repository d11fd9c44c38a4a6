//! Context Mover's Distance: words and sentences as histograms over clustered
//! contexts, compared with entropic optimal transport.
//!
//! The pipeline runs corpus → co-occurrence counts → SPPMI → clustered SPPMI →
//! per-word histograms, and scores with [`cmd::cmd`], [`cmd::comb`] and
//! [`cmd::sentence_cmd`]. [`pipeline::build`] runs every stage in memory and
//! [`pipeline::Model`] wraps the artifacts for scoring by token.

mod binio;
pub mod clustering;
pub mod cmd;
pub mod config;
pub mod corpus;
pub mod error;
pub mod estimates;
pub mod eval;
pub mod ot;
pub mod pipeline;
pub mod ppmi;
pub mod selftest;

pub use error::{Error, Result};
