//! Universal solution manifold networks.
//!
//! A USM-Net maps a query point (physical or universal coordinates), a vector
//! of physical parameters and a vector of geometrical landmarks to the value of
//! a PDE solution at that point. This crate holds the model-side machinery:
//!
//! * [`autodiff`]: a small vector tape with reverse-mode parameter gradients and
//!   recorded forward tangents with respect to spatial inputs,
//! * [`network`]: model specification, normalization, output heads and checkpoints,
//! * [`training`]: the per-snapshot averaged loss, Adam and BFGS,
//! * [`dataset`]: snapshot corpora, the flattened training table, splits,
//! * [`eval`]: error metrics, streamline tracing and landmark probes.
//!
//! Full-order solvers and geometry live in the `usmnet-fom` crate.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod network;
pub mod training;

pub use error::{Error, Result};
