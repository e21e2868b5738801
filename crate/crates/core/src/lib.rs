//! Multi-resolution non-stationary DAG models: simulation, wavelet spectral
//! estimation and variational structure inference.

pub mod autodiff;
pub mod castle;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod mndag;
pub mod spectrum;
pub mod stochastic;
pub mod synth;
pub mod tensor;
pub mod wavelet;

pub use castle::{train, Castle, InferConfig, Posterior};
pub use error::{Error, Result};
pub use mndag::{GenConfig, MnDag};
pub use stochastic::{CausalOrdering, Kernel};
pub use tensor::Tensor;
pub use wavelet::{Family, WaveletSystem};
