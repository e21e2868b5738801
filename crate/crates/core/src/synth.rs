//! Time-series synthesis from a mixing tensor and descriptive statistics.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mndag::{field_dims, GenConfig, MnDag};
use crate::stochastic::{stream, Rng};
use crate::tensor::Tensor;
use crate::wavelet::{Family, WaveletSystem};

pub const ACF_MAX_LAG: usize = 40;

/// Samples an MN-DAG and synthesizes its `N×T` series with the Haar system,
/// drawing innovations from the `"synth"` stream of the config seed.
pub fn simulate(config: &GenConfig) -> Result<(MnDag, Tensor)> {
    let dag = MnDag::sample(config)?;
    let system = WaveletSystem::new(Family::Haar, dag.scales)?;
    let x = generate(&dag.mixing, &system, &mut stream(config.seed, "synth"))?;
    Ok((dag, x))
}

/// `X[t] = Σ_j Σ_k M_{j,k} z_{j,k} ψ_j[(t − k) mod T]` with `z_{j,k}` i.i.d.
/// standard normal vectors drawn in `(j, k, n)` order. Returns `N×T`.
///
/// When `M` is constant over scales and time the innovations are filtered
/// first and mixed once, which is exactly `M · generate(I)`.
pub fn generate(mixing: &Tensor, system: &WaveletSystem, rng: &mut Rng) -> Result<Tensor> {
    let (j, t, n) = field_dims(mixing)?;
    if j > system.max_scale() {
        return Err(Error::InvalidConfig(format!(
            "mixing tensor has {j} scales but the wavelet system only {}",
            system.max_scale()
        )));
    }
    let z: Vec<f64> = (0..j * t * n).map(|_| StandardNormal.sample(rng)).collect();
    let nn = n * n;
    let first = &mixing.data()[..nn];
    if mixing.data().chunks(nn).all(|s| s == first) {
        let filtered = filter_innovations(&z, j, t, n, system, None);
        return Ok(mix_series(first, &filtered));
    }
    Ok(filter_innovations(&z, j, t, n, system, Some(mixing.data())))
}

fn filter_innovations(
    z: &[f64],
    j: usize,
    t: usize,
    n: usize,
    system: &WaveletSystem,
    mixing: Option<&[f64]>,
) -> Tensor {
    let mut x = Tensor::zeros(&[n, t]);
    let xd = x.data_mut();
    let mut v = vec![0.0; n];
    for s in 0..j {
        let psi = system.filter(s);
        for k in 0..t {
            let zk = &z[(s * t + k) * n..(s * t + k + 1) * n];
            match mixing {
                Some(m) => {
                    let mk = &m[(s * t + k) * n * n..(s * t + k + 1) * n * n];
                    for (a, va) in v.iter_mut().enumerate() {
                        *va = (0..n).map(|b| mk[a * n + b] * zk[b]).sum();
                    }
                }
                None => v.copy_from_slice(zk),
            }
            for (l, &w) in psi.iter().enumerate() {
                let tt = (k + l) % t;
                for (a, va) in v.iter().enumerate() {
                    xd[a * t + tt] += w * va;
                }
            }
        }
    }
    x
}

/// `M · Z` for an `N×N` row-major matrix and an `N×T` series.
pub fn mix_series(m: &[f64], z: &Tensor) -> Tensor {
    let (n, t) = (z.shape()[0], z.shape()[1]);
    let zd = z.data();
    Tensor::from_fn(&[n, t], |i| {
        (0..n).map(|b| m[i[0] * n + b] * zd[b * t + i[1]]).sum()
    })
}

/// Biased sample autocovariance of a mean-removed series at `lag`.
pub fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let t = x.len();
    let mean = x.iter().sum::<f64>() / t as f64;
    (lag..t)
        .map(|i| (x[i] - mean) * (x[i - lag] - mean))
        .sum::<f64>()
        / t as f64
}

fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let c0 = autocovariance(x, 0);
    (0..=max_lag)
        .map(|l| {
            if c0 > 0.0 {
                autocovariance(x, l) / c0
            } else if l == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Pearson kurtosis (3 for a Gaussian).
    pub kurtosis: f64,
    pub jarque_bera: f64,
    pub jb_p_value: f64,
    /// ACF at lags `0..=40`.
    pub acf: Vec<f64>,
    /// ACF of `|x|`.
    pub abs_acf: Vec<f64>,
    /// Half-width of the 95% white-noise band, `1.96/√T`.
    pub band: f64,
}

impl SeriesStats {
    pub fn excess_kurtosis(&self) -> f64 {
        self.kurtosis - 3.0
    }

    /// Lags `1..` whose ACF falls outside the band.
    pub fn significant_lags(&self) -> usize {
        self.acf[1..].iter().filter(|a| a.abs() > self.band).count()
    }

    pub fn significant_abs_lags(&self) -> usize {
        self.abs_acf[1..]
            .iter()
            .filter(|a| a.abs() > self.band)
            .count()
    }
}

pub fn series_stats(x: &[f64]) -> Result<SeriesStats> {
    let t = x.len();
    if t < 8 {
        return Err(Error::InvalidConfig(format!(
            "statistics need at least 8 samples, got {t}"
        )));
    }
    let tf = t as f64;
    let mean = x.iter().sum::<f64>() / tf;
    let m = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / tf;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 3.0)
    };
    let jarque_bera = tf / 6.0 * (skewness * skewness + (kurtosis - 3.0).powi(2) / 4.0);
    let max_lag = ACF_MAX_LAG.min(t - 1);
    let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    Ok(SeriesStats {
        mean,
        variance: m2,
        skewness,
        kurtosis,
        jarque_bera,
        jb_p_value: (-jarque_bera / 2.0).exp(),
        acf: acf(x, max_lag),
        abs_acf: acf(&abs, max_lag),
        band: 1.96 / tf.sqrt(),
    })
}

/// Per-series statistics of an `N×T` array.
pub fn stats(values: &Tensor) -> Result<Vec<SeriesStats>> {
    let (n, t) = crate::wavelet::series_dims(values)?;
    (0..n)
        .map(|i| series_stats(&values.data()[i * t..(i + 1) * t]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::stream;
    use crate::wavelet::Family;
    use approx::assert_relative_eq;

    #[test]
    fn zero_mixing_gives_zero_series() {
        let w = WaveletSystem::new(Family::Haar, 2).unwrap();
        let x = generate(&Tensor::zeros(&[2, 64, 3, 3]), &w, &mut stream(1, "s")).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_mixing_general_path_agrees() {
        let w = WaveletSystem::new(Family::Haar, 2).unwrap();
        let m = [1.0, 0.0, 0.7, 1.0];
        let mixing = Tensor::from_fn(&[2, 32, 2, 2], |i| m[i[2] * 2 + i[3]]);
        let fast = generate(&mixing, &w, &mut stream(9, "s")).unwrap();
        let mut rng = stream(9, "s");
        let z: Vec<f64> = (0..2 * 32 * 2)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let slow = filter_innovations(&z, 2, 32, 2, &w, Some(mixing.data()));
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_impulse_is_leptokurtic() {
        let mut x = vec![0.0; 1000];
        x[500] = 10.0;
        let s = series_stats(&x).unwrap();
        assert!(s.kurtosis > 100.0);
        assert!(s.jb_p_value < 1e-12);
        assert_eq!(s.acf[0], 1.0);
        assert_eq!(s.acf.len(), 41);
    }

    #[test]
    fn short_series_rejected() {
        assert!(series_stats(&[1.0; 7]).is_err());
    }
}
