//! File formats and the command line for the residual steps network laboratory.
//!
//! The numerical core lives in `rsn-core`; this crate adds what needs `std`:
//! `RSN1` checkpoints, `HMP1` heatmap dumps, key-value network configs,
//! COCO-style JSON, PGM/PPM images and the `rsn` binary.

pub mod checkpoint;
pub mod cli;
pub mod coco;
mod error;
pub mod hmp;
pub mod image_io;
pub mod netcfg;

pub use error::{Error, Result};
