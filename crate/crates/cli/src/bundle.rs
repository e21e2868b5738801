//! Dataset bundles: a directory holding a JSON manifest, the series as CSV
//! and flat little-endian `f64` tensors, each with a JSON shape header.
//!
//! The manifest records the SHA-256 digest of every payload file; reading a
//! bundle verifies them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mndag_core::spectrum::SpectrumMeta;
use mndag_core::{CausalOrdering, Family, GenConfig, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const VALUES: &str = "values.csv";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tensor payloads a bundle may carry.
pub const CAUSAL: &str = "causal";
pub const SPECTRUM: &str = "spectrum";
pub const ESTIMATE: &str = "estimate";

/// How the Gaussian-process time axis was laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAxisNote {
    pub scale: f64,
    pub mapping: String,
}

impl TimeAxisNote {
    pub fn new(scale: f64) -> Self {
        Self {
            scale,
            mapping: format!("t/T mapped onto [0, {scale}] before applying the kernel lengthscale"),
        }
    }
}

/// Provenance of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub config: GenConfig,
    pub scales: usize,
    pub ordering: CausalOrdering,
    pub theta: Vec<f64>,
    pub synthesis_wavelet: Family,
    /// RNG stream labels keyed by the config seed.
    pub streams: Vec<String>,
}

/// Provenance of ingested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub path: String,
    pub price_rows: usize,
    pub returns: usize,
    pub dropped_returns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub series: Vec<String>,
    pub length: usize,
    pub time_axis: TimeAxisNote,
    pub generation: Option<Generation>,
    pub source: Option<Source>,
    pub estimate: Option<SpectrumMeta>,
    /// File name to hex SHA-256 of its bytes.
    pub digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    dims: Vec<usize>,
    dtype: String,
    endianness: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    /// `[N, T]`
    pub values: Tensor,
    /// `[J, T, N, N]` ground-truth causal tensor.
    pub causal: Option<Tensor>,
    /// `[J, T, N, N]` ground-truth spectrum.
    pub spectrum: Option<Tensor>,
    /// `[J, T, N, N]` estimated spectrum.
    pub estimate: Option<Tensor>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    digests: &mut BTreeMap<String, String>,
) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    digests.insert(name.to_string(), digest(bytes));
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| CliError::io(&path, e))
}

pub fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn header_bytes(t: &Tensor) -> Vec<u8> {
    let h = TensorHeader {
        dims: t.shape().to_vec(),
        dtype: "f64".into(),
        endianness: "little".into(),
    };
    serde_json::to_vec_pretty(&h).expect("header serializes")
}

fn parse_tensor(header: &[u8], payload: &[u8], name: &str) -> Result<Tensor> {
    let h: TensorHeader = serde_json::from_slice(header)
        .map_err(|e| CliError::Bundle(format!("{name} header: {e}")))?;
    if h.dtype != "f64" || h.endianness != "little" {
        return Err(CliError::Bundle(format!(
            "{name}: unsupported encoding {}/{}",
            h.dtype, h.endianness
        )));
    }
    if payload.len() % 8 != 0 {
        return Err(CliError::Bundle(format!(
            "{name}: payload is not a whole number of f64 values"
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(h.dims, data).map_err(|e| CliError::Bundle(format!("{name}: {e}")))
}

/// Serializes `[N, T]` values as CSV with a leading time index column.
pub fn values_csv(values: &Tensor, names: &[String]) -> Result<Vec<u8>> {
    let (n, t) = (values.shape()[0], values.shape()[1]);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("t")
        .chain(names.iter().map(String::as_str))
        .collect();
    w.write_record(&header)
        .map_err(|e| CliError::Bundle(e.to_string()))?;
    for tt in 0..t {
        let row: Vec<String> = std::iter::once(tt.to_string())
            .chain((0..n).map(|i| values.data()[i * t + tt].to_string()))
            .collect();
        w.write_record(&row)
            .map_err(|e| CliError::Bundle(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Bundle(e.to_string()))
}

/// Parses a values CSV (first column is the time index) into names and
/// `[N, T]` values.
pub fn parse_values_csv(bytes: &[u8]) -> Result<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_reader(bytes);
    let names: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Bundle(e.to_string()))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::Bundle("values CSV has no series columns".into()));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Bundle(format!("row {}: {e}", row + 1)))?;
        if rec.len() != names.len() + 1 {
            return Err(CliError::Bundle(format!(
                "row {}: expected {} fields",
                row + 1,
                names.len() + 1
            )));
        }
        for (col, field) in columns.iter_mut().zip(rec.iter().skip(1)) {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Bundle(format!("row {}: cannot parse {field:?}", row + 1))
            })?;
            col.push(v);
        }
    }
    let t = columns[0].len();
    let n = names.len();
    let data = columns.into_iter().flatten().collect();
    let values = Tensor::new(vec![n, t], data).map_err(|e| CliError::Bundle(e.to_string()))?;
    Ok((names, values))
}

impl Bundle {
    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn t(&self) -> usize {
        self.values.shape()[1]
    }

    fn tensors(&self) -> [(&'static str, Option<&Tensor>); 3] {
        [
            (CAUSAL, self.causal.as_ref()),
            (SPECTRUM, self.spectrum.as_ref()),
            (ESTIMATE, self.estimate.as_ref()),
        ]
    }

    /// Writes every payload, refreshes the digests and writes the manifest
    /// last. Returns the manifest as written.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut digests = BTreeMap::new();
        write_file(
            dir,
            VALUES,
            &values_csv(&self.values, &self.manifest.series)?,
            &mut digests,
        )?;
        for (name, tensor) in self.tensors() {
            let (bin, json) = (format!("{name}.bin"), format!("{name}.json"));
            match tensor {
                Some(t) => {
                    write_file(dir, &json, &header_bytes(t), &mut digests)?;
                    write_file(dir, &bin, &tensor_bytes(t), &mut digests)?;
                }
                None => {
                    for f in [&bin, &json] {
                        let path = dir.join(f);
                        if path.exists() {
                            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
                        }
                    }
                }
            }
        }
        self.manifest.digests = digests;
        let manifest = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))
    }

    /// Reads a bundle and checks every payload against its recorded digest.
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&read_file(dir, MANIFEST)?)
            .map_err(|e| CliError::Bundle(format!("{}: {e}", dir.join(MANIFEST).display())))?;
        let checked = |name: &str| -> Result<Option<Vec<u8>>> {
            let Some(expected) = manifest.digests.get(name) else {
                return Ok(None);
            };
            let bytes = read_file(dir, name)?;
            if &digest(&bytes) != expected {
                return Err(CliError::Bundle(format!("digest mismatch for {name}")));
            }
            Ok(Some(bytes))
        };
        let values_bytes =
            checked(VALUES)?.ok_or_else(|| CliError::Bundle("manifest lists no values".into()))?;
        let (_, values) = parse_values_csv(&values_bytes)?;
        let tensor = |name: &str| -> Result<Option<Tensor>> {
            match (
                checked(&format!("{name}.json"))?,
                checked(&format!("{name}.bin"))?,
            ) {
                (Some(h), Some(p)) => parse_tensor(&h, &p, name).map(Some),
                (None, None) => Ok(None),
                _ => Err(CliError::Bundle(format!(
                    "{name}: header and payload must both be present"
                ))),
            }
        };
        let causal = tensor(CAUSAL)?;
        let spectrum = tensor(SPECTRUM)?;
        let estimate = tensor(ESTIMATE)?;
        Ok(Self {
            manifest,
            values,
            causal,
            spectrum,
            estimate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_csv_roundtrip_is_exact() {
        let values = Tensor::new(
            vec![2, 3],
            vec![0.1, -1e-300, 3.0, f64::MIN_POSITIVE, 1.0 / 3.0, -7.25],
        )
        .unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let (n2, v2) = parse_values_csv(&values_csv(&values, &names).unwrap()).unwrap();
        assert_eq!(n2, names);
        assert_eq!(v2, values);
    }

    #[test]
    fn tensor_payload_roundtrip() {
        let t = Tensor::from_fn(&[2, 3, 2, 2], |i| i.iter().sum::<usize>() as f64 * 0.37);
        let back = parse_tensor(&header_bytes(&t), &tensor_bytes(&t), "x").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = Tensor::zeros(&[2]);
        assert!(parse_tensor(&header_bytes(&t), &[0u8; 12], "x").is_err());
    }
}
