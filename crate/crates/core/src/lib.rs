//! Recurrent-network laboratory built around the Fourier Recurrent Unit.
//!
//! The crate holds the cells (RNN, LSTM, SRU, FRU), exact backpropagation
//! through time, analytic gradient bounds and their empirical certification,
//! numerical checks of the expressive-power constructions, seeded synthetic
//! data, MNIST framing and an Adam training loop.

pub mod bounds;
pub mod bptt;
pub mod cells;
pub mod datagen;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod rng;
pub mod theory;
pub mod train;

pub use cells::{Activation, Arch, Cell, CellState};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
