// `!(a <= b)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod gaussianity;
pub mod grid;
pub mod harness;
pub mod io;
pub mod models;
pub mod optim;
pub mod robust_train;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{add_clamped, residual, ImageGrid, Shape};
pub use rng::{derive_seed, sample_gaussian, Rng};
