//! Multi-path segmentation training with evolutionary dataset partitioning.
//!
//! A shared-encoder network with several decoder heads is trained so that
//! each head sees only its own subset of the training scans. The subset
//! assignment is a categorical genotype optimized by a gene-pool optimal
//! mixing EA against a best-of-alpha validation score (mean of Dice and
//! surface Dice at 2mm). A synthetic generator plants observer-style mask
//! variations so partition recovery can be checked against ground truth.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod opt;
pub mod util;

pub use error::{Error, Result};
