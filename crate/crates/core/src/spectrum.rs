//! Local wavelet spectral matrix estimation: raw periodogram, Daniell
//! smoothing, autocorrelation-wavelet bias correction and PD regularisation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mndag::field_dims;
use crate::tensor::Tensor;
use crate::wavelet::{series_dims, Family, InnerProductMatrix, WaveletSystem};

pub const DEFAULT_WIDTH: usize = 22;
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// `I[j, t] = d_j[t] d_j[t]ᵀ`, shape `J×T×N×N`.
pub fn raw_periodogram(x: &Tensor, system: &WaveletSystem) -> Result<Tensor> {
    let d = system.ndwt(x)?;
    let (n, t) = series_dims(x)?;
    let j = system.max_scale();
    let dd = d.data();
    let mut out = Tensor::zeros(&[j, t, n, n]);
    for (slice, v) in out.data_mut().chunks_mut(n * n).zip(dd.chunks(n)) {
        for a in 0..n {
            for b in 0..n {
                slice[a * n + b] = v[a] * v[b];
            }
        }
    }
    Ok(out)
}

/// Smallest odd integer `≥ width`.
pub fn effective_width(width: usize) -> usize {
    width.max(1) | 1
}

/// Centred circular moving average over time with window
/// [`effective_width`]`(width)`.
pub fn smooth(s: &Tensor, width: usize) -> Result<Tensor> {
    let (j, t, n) = field_dims(s)?;
    let w = effective_width(width);
    if w > t {
        return Err(Error::WidthTooLarge { width: w, len: t });
    }
    if w == 1 {
        return Ok(s.clone());
    }
    let half = w / 2;
    let nn = n * n;
    let sd = s.data();
    let mut out = Tensor::zeros(s.shape());
    let od = out.data_mut();
    let inv = 1.0 / w as f64;
    for jj in 0..j {
        let base = jj * t * nn;
        for e in 0..nn {
            let at = |tt: usize| sd[base + tt * nn + e];
            for tt in 0..t {
                let mut acc = 0.0;
                for d in 0..w {
                    acc += at((tt + t + d - half) % t);
                }
                od[base + tt * nn + e] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Left-multiplies the scale vector of every `(t, n, m)` by `A⁻¹`.
pub fn bias_correct(s: &Tensor, a: &InnerProductMatrix) -> Result<Tensor> {
    let (j, t, n) = field_dims(s)?;
    if a.dim() != j {
        return Err(Error::ShapeMismatch {
            op: "bias_correct",
            lhs: s.shape().to_vec(),
            rhs: vec![a.dim(), a.dim()],
        });
    }
    let inv = a.inverse();
    let stride = t * n * n;
    let sd = s.data();
    let mut out = Tensor::zeros(s.shape());
    let od = out.data_mut();
    for i in 0..stride {
        for r in 0..j {
            od[r * stride + i] = (0..j).map(|k| inv[r * j + k] * sd[k * stride + i]).sum();
        }
    }
    Ok(out)
}

/// Clamps the eigenvalues of every symmetric slice to at least `floor`.
/// Slices already satisfying the bound are returned untouched.
pub fn regularize_pd(s: &Tensor, floor: f64) -> Result<Tensor> {
    let (_, _, n) = field_dims(s)?;
    let mut out = s.clone();
    for slice in out.data_mut().chunks_mut(n * n) {
        let m = DMatrix::from_row_slice(n, n, slice);
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if eig.eigenvalues.iter().all(|&l| l >= floor) {
            continue;
        }
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        let r = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        for a in 0..n {
            for b in 0..n {
                slice[a * n + b] = 0.5 * (r[(a, b)] + r[(b, a)]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub family: Family,
    pub scales: usize,
    /// Requested width; the applied width is rounded up to odd.
    pub width: usize,
    pub floor: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            family: Family::Daubechies(8),
            scales: 1,
            width: DEFAULT_WIDTH,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub family: Family,
    pub scales: usize,
    pub requested_width: usize,
    pub width: usize,
    pub corrected: bool,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub values: Tensor,
    pub meta: SpectrumMeta,
}

/// Periodogram, smoothing, bias correction and regularisation in sequence.
pub fn estimate(x: &Tensor, config: &EstimateConfig) -> Result<SpectralEstimate> {
    let (_, t) = series_dims(x)?;
    if !t.is_power_of_two() {
        return Err(Error::BadLength(t));
    }
    let system = WaveletSystem::new(config.family, config.scales)?;
    let a = system.autocorr().inner_product_matrix(config.scales)?;
    let raw = raw_periodogram(x, &system)?;
    let smoothed = smooth(&raw, config.width)?;
    let corrected = bias_correct(&smoothed, &a)?;
    let values = regularize_pd(&corrected, config.floor)?;
    Ok(SpectralEstimate {
        values,
        meta: SpectrumMeta {
            family: config.family,
            scales: config.scales,
            requested_width: config.width,
            width: effective_width(config.width),
            corrected: true,
            floor: config.floor,
        },
    })
}
