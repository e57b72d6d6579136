//! Simulation and evaluation of single-pixel THz imaging with caustic masks.
//!
//! The pipeline runs ripple-tank surface → caustic mask → single-pixel
//! measurements → wavelet scalogram → CNN, with k-fold evaluation on top.

pub mod caustic;
pub mod classifier;
pub mod config;
pub mod cs;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod ripple;
pub mod rng;
pub mod scalogram;
pub mod target;

pub use error::{Error, Result};
