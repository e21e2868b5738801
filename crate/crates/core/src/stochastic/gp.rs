use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Kernel, Rng};
use crate::error::Result;
use crate::tensor::{cholesky_with_retries, Tensor, DEFAULT_JITTER, JITTER_RETRIES};

pub const DEFAULT_AXIS_SCALE: f64 = 10.0;

/// Maps sample index `t` of a length-`T` series to `t / T · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub scale: f64,
}

impl Default for TimeAxis {
    fn default() -> Self {
        Self {
            scale: DEFAULT_AXIS_SCALE,
        }
    }
}

impl TimeAxis {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    pub fn points(&self, t: usize) -> Vec<f64> {
        (0..t).map(|i| i as f64 / t as f64 * self.scale).collect()
    }
}

/// Draws `batch` independent paths `L ε` with `L = chol(K + jitter·I)`.
/// Returns a `[batch, T]` tensor.
pub fn gp_sample_batched(
    kernel: &Kernel,
    times: &[f64],
    batch: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let t = times.len();
    let (l, _) = cholesky_with_retries(&kernel.gram(times), DEFAULT_JITTER, JITTER_RETRIES)?;
    let ld = l.data();
    let mut out = Tensor::zeros(&[batch, t]);
    let od = out.data_mut();
    let mut eps = vec![0.0; t];
    for b in 0..batch {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
        let row = &mut od[b * t..(b + 1) * t];
        for i in 0..t {
            row[i] = ld[i * t..i * t + i + 1]
                .iter()
                .zip(&eps)
                .map(|(a, e)| a * e)
                .sum();
        }
    }
    Ok(out)
}
