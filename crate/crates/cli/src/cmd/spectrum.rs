//! `spectrum`: wavelet spectral estimate of a bundle's series (or a CSV),
//! stored in the bundle with its metadata.

use std::path::PathBuf;

use clap::Args;
use mndag_core::spectrum::{self, EstimateConfig, SpectralEstimate};
use mndag_core::{Error, Family};

use crate::bundle::{parse_values_csv, Bundle, Manifest, TimeAxisNote, TOOLKIT_VERSION};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    /// Bundle to read; the estimate is written back into it unless `--out`
    /// is given.
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    pub bundle: Option<PathBuf>,
    /// Values CSV (first column is a time label, one column per series).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "d8")]
    pub wavelet: Family,
    /// Daniell window width; even widths are rounded up to odd.
    #[arg(long, default_value_t = spectrum::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub scales: usize,
    #[arg(long, default_value_t = spectrum::DEFAULT_FLOOR)]
    pub floor: f64,
    /// Output bundle directory; required with `--csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Largest power of two not above `t`.
pub fn pow2_floor(t: usize) -> usize {
    if t == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - t.leading_zeros())
    }
}

pub fn run(args: &SpectrumArgs) -> Result<SpectralEstimate> {
    let (mut bundle, target) = match (&args.bundle, &args.csv) {
        (Some(dir), _) => (
            Bundle::read(dir)?,
            args.out.clone().unwrap_or_else(|| dir.clone()),
        ),
        (None, Some(csv)) => {
            let out = args
                .out
                .clone()
                .ok_or_else(|| CliError::Invalid("--csv needs --out for the new bundle".into()))?;
            let bytes = std::fs::read(csv).map_err(|e| CliError::io(csv, e))?;
            let (series, values) =
                parse_values_csv(&bytes).map_err(|e| CliError::Invalid(e.to_string()))?;
            let manifest = Manifest {
                toolkit_version: TOOLKIT_VERSION.into(),
                length: values.shape()[1],
                series,
                time_axis: TimeAxisNote::new(mndag_core::stochastic::DEFAULT_AXIS_SCALE),
                generation: None,
                source: None,
                estimate: None,
                digests: Default::default(),
            };
            let bundle = Bundle {
                manifest,
                values,
                causal: None,
                spectrum: None,
                estimate: None,
            };
            (bundle, out)
        }
        (None, None) => {
            return Err(CliError::Invalid(
                "either --bundle or --csv is required".into(),
            ))
        }
    };
    let cfg = EstimateConfig {
        family: args.wavelet,
        scales: args.scales,
        width: args.width,
        floor: args.floor,
    };
    let est = spectrum::estimate(&bundle.values, &cfg).map_err(|e| match e {
        Error::BadLength(t) => CliError::Length(format!(
            "series length {t} is not a power of two; truncate to the largest power-of-two prefix ({} samples)",
            pow2_floor(t)
        )),
        other => CliError::Invalid(other.to_string()),
    })?;
    bundle.estimate = Some(est.values.clone());
    bundle.manifest.estimate = Some(est.meta.clone());
    bundle.write(&target)?;
    Ok(est)
}
