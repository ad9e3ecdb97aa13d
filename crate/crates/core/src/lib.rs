//! Funnel-Transformer at desk scale.
//!
//! A compressing transformer encoder that halves the hidden sequence between
//! blocks, a decoder that restores full length for token-level objectives,
//! relative positional attention with three interchangeable score routes,
//! MLM/ELECTRA training scaffolds, and an analytical cost model.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod cost;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod layout;
pub mod model;
pub mod objectives;
pub mod params;
pub mod relattn;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{FunnelError, Result};
