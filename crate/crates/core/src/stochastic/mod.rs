//! Random-variate machinery: seeded streams, Plackett-Luce permutations,
//! Gaussian-process kernels and batched path sampling.

mod gp;
mod kernel;
mod pl;
mod rng;

pub use gp::{gp_sample_batched, TimeAxis, DEFAULT_AXIS_SCALE};
pub use kernel::Kernel;
pub use pl::{pl_log_prob, pl_log_prob_grad, pl_mode, pl_sample, uniform_scores, CausalOrdering};
pub use rng::{stream, substream, Rng};
