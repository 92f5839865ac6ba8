//! Structure-informed positional encoding for linear-complexity attention.
//!
//! The crate builds positional index grids (plain time or multi-level
//! structural labels), turns them into sinusoidal positional features
//! whose pairwise products realize a cosine kernel exactly or estimate it
//! stochastically, folds those features into attention so the whole thing
//! runs in linear time, and verifies the construction against exact
//! quadratic oracles. On top sit a desk-scale trainable transformer with a
//! minimal reverse-mode tape and the four pianoroll evaluation metrics.

pub mod alloc_track;
pub mod attention;
pub mod bench;
pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod net;

pub use error::{Error, Result};
