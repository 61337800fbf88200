//! Laboratory for width/depth scaling, frequency damping and weight
//! sparsification of residual CNNs on spectrogram classification under
//! recording-device shift.

pub mod arch;
pub mod autodiff;
pub mod damping;
pub mod erf;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod pruning;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
