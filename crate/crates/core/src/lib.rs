//! Simulation and estimation tools for Mandelbrot fractal percolation.

pub mod bounds;
pub mod dsu;
pub mod enhance;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod fractal;
pub mod lattice;
pub mod percolation;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
