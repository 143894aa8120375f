//! Dense-matrix reverse-mode automatic differentiation and the Adam
//! optimizer.

mod adam;
mod sparse;
mod tape;

pub use adam::{Adam, AdamConfig, WeightDecay};
pub use sparse::CsrMatrix;
pub use tape::{Tape, Var};
