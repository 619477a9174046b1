//! Weather-adaptive image restoration.
//!
//! A small feature network condenses the degradation of an input image into
//! a weather vector `v`. Hyper-networks turn `v` into attention projections,
//! depthwise kernels and channel modulations of a hierarchical restoration
//! transformer, so one set of stored weights serves several weather types.
//!
//! The crate also contains the synthetic weather benchmark, the three-phase
//! training schedule, the inference modes built on top of `v`, checkpoint
//! and dataset containers, and the evaluation harness.

pub mod backbone;
pub mod blocks;
pub mod checkpoint;
pub mod compute;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod feature;
pub mod hyper;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use hyperweather_tensor as tensor;
