//! Full-order models and geometry for USM-Net training data.
//!
//! * [`cavity`]: steady lid-driven cavity on `(0, 1) x (0, H)` in
//!   streamfunction-vorticity form, with its landmark and reference map,
//! * [`geometry`]: random planar bifurcations with optional stenoses, and
//!   wall landmarks,
//! * [`mesh`]: patch-structured triangulations, point location, mesh files,
//! * [`uc`]: the two Laplace fields defining universal coordinates,
//! * [`flow`]: stabilized P1-P1 Stokes (optionally Picard-iterated) solver,
//! * [`provider`]: [`usmnet_core::dataset::GeometryProvider`] implementations,
//! * [`linalg`]: banded LU, CSR and conjugate gradients.

pub mod cavity;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod provider;
pub mod uc;

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum FomError {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("continuation step underflow at lid fraction {reached} (step {step:e}); last residual {residual:e}")]
    ContinuationUnderflow {
        reached: f64,
        step: f64,
        residual: f64,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid mesh: {message} (element {element:?})")]
    Mesh {
        message: String,
        element: Option<usize>,
    },
    #[error("point ({x}, {y}) is outside the domain (distance to boundary {distance:e})")]
    Outside { x: f64, y: f64, distance: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] usmnet_core::Error),
}

pub type Result<T, E = FomError> = std::result::Result<T, E>;

impl From<FomError> for usmnet_core::Error {
    fn from(e: FomError) -> Self {
        match e {
            FomError::Core(inner) => inner,
            FomError::Io(inner) => usmnet_core::Error::Io(inner),
            other => usmnet_core::Error::InvalidInput(other.to_string()),
        }
    }
}
