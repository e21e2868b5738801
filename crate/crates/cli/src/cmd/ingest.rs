//! `ingest`: price CSV to a bundle of log returns, truncated to the most
//! recent power-of-two stretch.

use std::path::{Path, PathBuf};

use clap::Args;
use mndag_core::Tensor;

use crate::bundle::{Bundle, Manifest, Source, TimeAxisNote, TOOLKIT_VERSION};
use crate::cmd::spectrum::pow2_floor;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// CSV with a date column followed by one price column per index.
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long, env = "MNDAG_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub names: Vec<String>,
    /// `[N, T − 1]` log returns, oldest first.
    pub values: Tensor,
    pub price_rows: usize,
}

/// Parses prices and returns `r_t = ln(P_t / P_{t−1})` per column. Rows are
/// numbered from 1 (the header is row 0) in error messages.
pub fn log_returns(bytes: &[u8]) -> Result<Returns> {
    let mut r = csv::Reader::from_reader(bytes);
    let names: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Ingest(format!("header: {e}")))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::Ingest(
            "no price columns after the date column".into(),
        ));
    }
    let mut prices: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Ingest(format!("row {row}: {e}")))?;
        if rec.len() != names.len() + 1 {
            return Err(CliError::Ingest(format!(
                "row {row}: expected {} fields, found {}",
                names.len() + 1,
                rec.len()
            )));
        }
        for (col, field) in prices.iter_mut().zip(rec.iter().skip(1)) {
            let p: f64 = field.trim().parse().map_err(|_| {
                CliError::Ingest(format!("row {row}: cannot parse price {field:?}"))
            })?;
            if !(p > 0.0) || !p.is_finite() {
                return Err(CliError::Ingest(format!(
                    "row {row}: price {p} is not strictly positive"
                )));
            }
            col.push(p);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(CliError::Ingest(format!(
            "need at least 2 price rows, found {rows}"
        )));
    }
    let t = rows - 1;
    let data: Vec<f64> = prices
        .iter()
        .flat_map(|col| col.windows(2).map(|w| (w[1] / w[0]).ln()))
        .collect();
    Ok(Returns {
        values: Tensor::new(vec![names.len(), t], data).expect("consistent shape"),
        names,
        price_rows: rows,
    })
}

/// Keeps the last `2^p` returns; reports how many were dropped.
pub fn pow2_suffix(values: &Tensor) -> (Tensor, usize) {
    let (n, t) = (values.shape()[0], values.shape()[1]);
    let keep = pow2_floor(t);
    let data = (0..n)
        .flat_map(|i| values.data()[i * t + t - keep..(i + 1) * t].iter().copied())
        .collect();
    (
        Tensor::new(vec![n, keep], data).expect("consistent shape"),
        t - keep,
    )
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub price_rows: usize,
    pub returns: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        format!(
            "ingested {} price rows: {} returns, kept the last {} (dropped {})",
            self.price_rows, self.returns, self.kept, self.dropped
        )
    }
}

pub fn run(args: &IngestArgs) -> Result<IngestReport> {
    let bytes = std::fs::read(&args.prices).map_err(|e| CliError::io(&args.prices, e))?;
    let returns = log_returns(&bytes)?;
    let total = returns.values.shape()[1];
    let (values, dropped) = pow2_suffix(&returns.values);
    let kept = values.shape()[1];
    let mut bundle = Bundle {
        manifest: Manifest {
            toolkit_version: TOOLKIT_VERSION.into(),
            series: returns.names,
            length: kept,
            time_axis: TimeAxisNote::new(mndag_core::stochastic::DEFAULT_AXIS_SCALE),
            generation: None,
            source: Some(Source {
                path: display_name(&args.prices),
                price_rows: returns.price_rows,
                returns: total,
                dropped_returns: dropped,
            }),
            estimate: None,
            digests: Default::default(),
        },
        values,
        causal: None,
        spectrum: None,
        estimate: None,
    };
    bundle.write(&args.out)?;
    Ok(IngestReport {
        price_rows: returns.price_rows,
        returns: total,
        kept,
        dropped,
    })
}

/// File name only, so manifests do not depend on where the input lived.
fn display_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_prices_give_one_return() {
        let r = log_returns(b"date,a\n2020-01-01,100\n2020-01-02,110\n").unwrap();
        assert_eq!(r.values.data(), &[(1.1f64).ln()]);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let r = log_returns(b"date,a,b\nd1,5,7\nd2,5,7\nd3,5,7\n").unwrap();
        assert!(r.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(r.values.shape(), [2, 2]);
    }

    #[test]
    fn nonpositive_price_names_row() {
        let e = log_returns(b"date,a\nd1,1\nd2,0\n").unwrap_err();
        assert_eq!(e.exit_code(), 5);
        assert!(e.to_string().contains("row 2"), "{e}");
    }

    #[test]
    fn unparsable_row_names_row() {
        let e = log_returns(b"date,a\nd1,1\nd2,2\nd3,abc\n").unwrap_err();
        assert!(e.to_string().contains("row 3"), "{e}");
    }

    #[test]
    fn suffix_of_130_rows() {
        let csv: String = std::iter::once("date,a\n".to_string())
            .chain((0..130).map(|i| format!("d{i},{}\n", 100.0 + i as f64)))
            .collect();
        let r = log_returns(csv.as_bytes()).unwrap();
        assert_eq!(r.values.shape()[1], 129);
        let (kept, dropped) = pow2_suffix(&r.values);
        assert_eq!((kept.shape()[1], dropped), (128, 1));
        assert_eq!(kept.data()[127], r.values.data()[128]);
    }
}
