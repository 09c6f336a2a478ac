//! Point distribution models (PDMs) for 2D landmark shapes, with model-order
//! selection by an information criterion that allows colored residual noise.
//!
//! The pipeline is: load landmarks ([`shapes`]), align them with generalized
//! Procrustes, fit a PDM ([`pdm`]), and pick the number of modes with
//! [`order_select::select_order_proposed`]. [`simgen`] draws synthetic sets
//! with a known order and [`eval`] holds the experiment harnesses.

pub mod cli;
pub mod error;
pub mod eval;
pub mod numfmt;
pub mod order_select;
pub mod pdm;
pub mod shapes;
pub mod simgen;

pub use error::{Error, Result};
