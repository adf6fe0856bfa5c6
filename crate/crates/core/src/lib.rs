//! Staggered-grid Stokes toolkit for periodically perforated domains.
//!
//! The crate solves the generalized cell problem on a perforated unit cell,
//! measures effective permeability tensors and their small-hole limits, runs
//! direct simulations on perforated boxes, and compares coarse-grained fields
//! against the predicted limit models (Stokes, Darcy, Brinkman) for hole
//! scalings in each asymptotic regime.

pub mod acceptance;
pub mod cell;
pub mod cli;
pub mod dns;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod homogenized;
pub mod ops;
pub mod regimes;
pub mod solver;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
