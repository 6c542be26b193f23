//! Multi-task vessel segmentation engine.
//!
//! Trains a shared-encoder, dual-decoder U-Net that jointly predicts a
//! binary vessel mask and a Euclidean distance-transform map, combining
//! the BCE and MSE losses with an adaptive inverse-mean weight. Ships
//! with an exact distance transform (plus brute-force oracle), Dice/IoU
//! metrics, a synthetic tubular dataset generator, and a CLI for the
//! proposed / fixed-weight multi-task / single-task comparison.

pub mod combiner;
pub mod config;
pub mod data;
pub mod dt;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tensormap;
pub mod trainer;

pub use error::{Error, Result};
