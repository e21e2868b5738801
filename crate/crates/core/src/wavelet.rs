//! Non-decimated wavelet systems and their autocorrelation wavelets.
//!
//! Scale index `j = 0` is the finest scale (dyadic resolution `2¹`).
//! Filters are unit-norm, so the autocorrelation wavelet is 1 at lag 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

// Extremal-phase Daubechies low-pass filters, normalised so Σh = √2.
const D4: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_4,
];
const D6: [f64; 6] = [
    0.332_670_552_950_082_6,
    0.806_891_509_311_092_6,
    0.459_877_502_118_491_6,
    -0.135_011_020_010_254_6,
    -0.085_441_273_882_026_66,
    0.035_226_291_885_709_54,
];
const D8: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_6,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_85,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_76,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_03,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Family {
    Haar,
    /// Daubechies extremal-phase wavelet with the given filter length (4, 6 or 8).
    Daubechies(usize),
}

impl Family {
    fn low_pass(self) -> Result<&'static [f64]> {
        static HAAR: [f64; 2] = [SQRT_HALF, SQRT_HALF];
        match self {
            Family::Haar | Family::Daubechies(2) => Ok(&HAAR),
            Family::Daubechies(4) => Ok(&D4),
            Family::Daubechies(6) => Ok(&D6),
            Family::Daubechies(8) => Ok(&D8),
            Family::Daubechies(f) => Err(Error::UnsupportedFamily(format!(
                "daubechies filter length {f}"
            ))),
        }
    }

    pub fn filter_length(self) -> usize {
        match self {
            Family::Haar => 2,
            Family::Daubechies(f) => f,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Haar => write!(f, "haar"),
            Family::Daubechies(n) => write!(f, "d{n}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "haar" | "d2" => Ok(Family::Haar),
            "d4" => Ok(Family::Daubechies(4)),
            "d6" => Ok(Family::Daubechies(6)),
            "d8" | "daubechies" => Ok(Family::Daubechies(8)),
            _ => Err(Error::UnsupportedFamily(s)),
        }
    }
}

impl From<Family> for String {
    fn from(f: Family) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Family {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Per-scale non-decimated wavelet filters.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSystem {
    family: Family,
    filters: Vec<Vec<f64>>,
}

impl WaveletSystem {
    /// Builds filters for scales `0..max_scale` with the cascade
    /// `φ₁ = h, ψ₁ = g`, `φ_{j+1}[k] = Σ_l h[l] φ_j[k − 2ʲl]`,
    /// `ψ_{j+1}[k] = Σ_l g[l] φ_j[k − 2ʲl]`, where `g_k = (−1)ᵏ h_{F−1−k}`.
    pub fn new(family: Family, max_scale: usize) -> Result<Self> {
        if max_scale == 0 {
            return Err(Error::InvalidConfig(
                "wavelet system needs at least one scale".into(),
            ));
        }
        let h = family.low_pass()?;
        let f = h.len();
        let g: Vec<f64> = (0..f)
            .map(|k| {
                if k % 2 == 0 {
                    h[f - 1 - k]
                } else {
                    -h[f - 1 - k]
                }
            })
            .collect();
        let mut filters = vec![g.clone()];
        let mut phi = h.to_vec();
        for j in 1..max_scale {
            let step = 1usize << j;
            let len = phi.len() + (f - 1) * step;
            let mut next_phi = vec![0.0; len];
            let mut next_psi = vec![0.0; len];
            for (l, (&hl, &gl)) in h.iter().zip(&g).enumerate() {
                for (k, &p) in phi.iter().enumerate() {
                    next_phi[k + step * l] += hl * p;
                    next_psi[k + step * l] += gl * p;
                }
            }
            filters.push(next_psi);
            phi = next_phi;
        }
        Ok(Self { family, filters })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn max_scale(&self) -> usize {
        self.filters.len()
    }

    /// Filter of scale `j` (0-based).
    pub fn filter(&self, j: usize) -> &[f64] {
        &self.filters[j]
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Discrete autocorrelation wavelet `Ψ_j[l] = Σ_k ψ_j[k] ψ_j[k − l]`.
    pub fn autocorr(&self) -> AutocorrWavelet {
        let seqs = self
            .filters
            .iter()
            .map(|psi| {
                let len = psi.len();
                (0..len)
                    .map(|l| (l..len).map(|k| psi[k] * psi[k - l]).sum())
                    .collect()
            })
            .collect();
        AutocorrWavelet { seqs }
    }

    /// Non-decimated transform of an `N×T` series with circular boundaries:
    /// `d_j[t] = Σ_l ψ_j[l] x[(t − l) mod T]`. Returns a `J×T×N` tensor.
    pub fn ndwt(&self, x: &Tensor) -> Result<Tensor> {
        let (n, t) = series_dims(x)?;
        if !t.is_power_of_two() || t < 2 {
            return Err(Error::BadLength(t));
        }
        if (1usize << self.max_scale()) > t {
            return Err(Error::InvalidConfig(format!(
                "{} scales need at least {} samples, got {t}",
                self.max_scale(),
                1usize << self.max_scale()
            )));
        }
        let jn = self.max_scale();
        let mut out = Tensor::zeros(&[jn, t, n]);
        let xd = x.data();
        let od = out.data_mut();
        for (j, psi) in self.filters.iter().enumerate() {
            for s in 0..n {
                let row = &xd[s * t..(s + 1) * t];
                for tt in 0..t {
                    let mut acc = 0.0;
                    for (l, &w) in psi.iter().enumerate() {
                        acc += w * row[(tt + t * psi.len() - l) % t];
                    }
                    od[(j * t + tt) * n + s] = acc;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn series_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [n, t] => Ok((*n, *t)),
        s => Err(Error::ShapeMismatch {
            op: "series",
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

/// Autocorrelation wavelets; only non-negative lags are stored since
/// `Ψ_j[l] = Ψ_j[−l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrWavelet {
    seqs: Vec<Vec<f64>>,
}

impl AutocorrWavelet {
    pub fn max_scale(&self) -> usize {
        self.seqs.len()
    }

    /// `Ψ_j[lag]`, zero outside the compact support.
    pub fn at(&self, j: usize, lag: i64) -> f64 {
        let l = lag.unsigned_abs() as usize;
        self.seqs[j].get(l).copied().unwrap_or(0.0)
    }

    /// Largest lag with a stored value at scale `j`.
    pub fn support(&self, j: usize) -> usize {
        self.seqs[j].len() - 1
    }

    /// Scale inner-product matrix `A_{jk} = Σ_l Ψ_j[l] Ψ_k[l]` over scales
    /// `0..j_max`.
    pub fn inner_product_matrix(&self, j_max: usize) -> Result<InnerProductMatrix> {
        if j_max == 0 || j_max > self.max_scale() {
            return Err(Error::InvalidConfig(format!(
                "inner product matrix needs 1..={} scales, got {j_max}",
                self.max_scale()
            )));
        }
        let mut a = vec![0.0; j_max * j_max];
        for j in 0..j_max {
            for k in 0..=j {
                let sj = &self.seqs[j];
                let sk = &self.seqs[k];
                let m = sj.len().min(sk.len());
                // lag 0 once, ±l twice
                let v = sj[0] * sk[0] + 2.0 * (1..m).map(|l| sj[l] * sk[l]).sum::<f64>();
                a[j * j_max + k] = v;
                a[k * j_max + j] = v;
            }
        }
        InnerProductMatrix::new(a, j_max)
    }
}

/// Symmetric positive definite scale inner-product matrix with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductMatrix {
    dim: usize,
    a: Vec<f64>,
    inverse: Vec<f64>,
    condition: f64,
}

pub const MAX_CONDITION: f64 = 1e12;

impl InnerProductMatrix {
    pub fn new(a: Vec<f64>, dim: usize) -> Result<Self> {
        let m = DMatrix::from_row_slice(dim, dim, &a);
        let eig = m.clone().symmetric_eigen();
        let max = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularMatrix(condition));
        }
        let inv = m.try_inverse().ok_or(Error::SingularMatrix(condition))?;
        let inverse = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| inv[(i, j)])
            .collect();
        Ok(Self {
            dim,
            a,
            inverse,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.a[j * self.dim + k]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }
}
