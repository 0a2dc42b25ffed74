pub mod error;
pub mod experiment;
pub mod graph;
pub mod nn;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
