//! SXL: auxiliary-task learning for geographic grids.
//!
//! The crate is organized around a small set of raster primitives ([`grid`]),
//! the single- and multi-resolution local Moran's I embedding ([`moran`]),
//! a minimal reverse-mode autodiff engine with the layers the models need
//! ([`autodiff`]), multi-task loss combination ([`multitask`]), GAN training
//! with Moran auxiliary tasks ([`gan`]), spatial interpolation baselines and
//! the CNN regressor ([`interp`]), evaluation metrics ([`metrics`]), dataset
//! generation ([`datagen`]) and the command-line front end ([`cli`]).

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod gan;
pub mod grdf;
pub mod grid;
pub mod interp;
pub mod metrics;
pub mod moran;
pub mod multitask;

pub use error::{Result, SxlError};
pub use grid::{Grid, GridStack, NeighborhoodSpec};
