//! Division-and-summarization dense video captioning at desk scale.

pub mod checkpoint;
pub mod data;
pub mod decode;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
