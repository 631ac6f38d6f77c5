//! Deep homography estimation at configurable scale.
//!
//! * [`geometry`]: 4-point and 3x3 homography forms, normalized DLT.
//! * [`imaging`]: grayscale rasters, warping, resizing, augmentation, PGM I/O.
//! * [`datagen`]: deterministic training and test pair generation.
//! * [`nn`]: a small CNN engine with the regression and classification
//!   HomographyNets and their SGD training loop.
//! * [`classical`]: the ORB-style feature + RANSAC baseline.
//! * [`eval`]: Mean Average Corner Error and overlay rendering.
//! * [`cli`]: the `hnet` command line.

use thiserror::Error;

pub mod classical;
pub mod cli;
pub mod datagen;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod nn;
pub mod rng;

/// Any error the crate can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Imaging(#[from] imaging::ImagingError),
    #[error(transparent)]
    Datagen(#[from] datagen::DatagenError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Classical(#[from] classical::ClassicalError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
