//! Masked learning-behavior pre-training for MOOC learner modeling.
//!
//! Pipeline: heartbeat logs are aggregated into learning sequences
//! ([`corpus`]), studied statistically ([`analysis`]), encoded through text
//! or concept vectors ([`encoder`], [`concepts`]) and fed to a small
//! bidirectional transformer ([`nn`], [`model`]) whose representations are
//! evaluated by four downstream harnesses ([`downstream`]).

pub mod analysis;
pub mod concepts;
pub mod corpus;
pub mod downstream;
pub mod encoder;
pub mod model;
pub mod error;
pub mod nn;
pub mod par;

pub use error::{PalError, Result};
pub use par::Exec;
