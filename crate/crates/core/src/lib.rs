//! Claim detection with dependency-hierarchy Poincare embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`ingest`] reads CoNLL-U parses and emits `form.UPOS` hierarchy edges.
//! * [`poincare`] holds the ball geometry and [`dare`] trains embeddings on it.
//! * [`nn`] is a small reverse-mode tape with the layers the classifier uses.
//! * [`model`] composes the classifier and [`protocol`] runs the
//!   resample / split / focal-gamma ensemble and votes.
//! * [`data`] and [`eval`] cover corpora, encoding, metrics and the
//!   K-means baseline.

pub mod checkpoint;
pub mod data;
pub mod dare;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod poincare;
pub mod protocol;
pub mod toy;
pub mod util;

pub use error::{Error, Result};
