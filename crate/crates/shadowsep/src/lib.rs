//! Toolkit for shadows of measures, barycenter-preserving dilations, and
//! barrier-type solutions of the Skorokhod embedding problem, with a
//! deterministic Monte Carlo harness that verifies the shadow-residual
//! characterization of the embeddings.

pub mod dilation;
pub mod error;
pub mod grid;
pub mod instances;
pub mod io;
pub mod mc;
pub mod plot;
pub mod measure;
pub mod piecewise;
pub mod root;
pub mod shadow;
pub mod solvers;

pub use error::{Error, Result};
