//! Neural trajectory analysis of a handwriting-synthesis recurrent network.
//!
//! The crate covers the full chain: a desk-scale stacked-LSTM generator with
//! an attention window and mixture-density head ([`synth`]), activation
//! recording ([`datamodel`]), median filtering and unit pruning
//! ([`preprocess`]), Gaussian-process factor analysis ([`gpfa`]), and
//! condition-level statistics ([`analysis`]).

pub mod analysis;
pub mod datamodel;
pub mod error;
pub mod gpfa;
mod linalg;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod synth;
pub mod tensorfile;

pub use error::{Error, Result};
