//! Training-free instance segmentation by flow convergence.
//!
//! Pixels are advected along a flow field whose vectors point toward the
//! interior of each instance; trajectories that settle in the same sink form
//! one instance. Flow fields come either from an external predictor (loaded
//! through [`io`]) or from the heat-diffusion construction in [`flows`].

pub mod advect;
pub mod error;
pub mod flows;
pub mod gate;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
