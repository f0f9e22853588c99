//! Fully temporal convolution networks (FTCN) with a temporal transformer
//! head for video forgery detection, built on a small CPU tensor engine.

pub mod arch;
pub mod autograd;
pub mod error;
pub mod eval;
pub mod gradcheck;
mod kv;
pub mod localize;
pub mod model;
pub mod ops;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{Scalar, Tensor};
