//! `infer`: run MN-CASTLE on a bundle and write the posterior.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mndag_core::{train, InferConfig, Posterior, Tensor};

use crate::bundle::Bundle;
use crate::error::{CliError, Result};

pub const POSTERIOR: &str = "posterior.json";
pub const TRACES: &str = "traces.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectrumSource {
    /// The estimate if the bundle has one, else the ground truth.
    Auto,
    Estimated,
    GroundTruth,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = SpectrumSource::Auto)]
    pub spectrum: SpectrumSource,
    #[arg(long, default_value_t = 600)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.64)]
    pub inducing_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub obs_scale: f64,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.999)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.99)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub posterior_samples: usize,
    /// Pinned lengthscale for time-constant spectra; `0` disables pinning.
    #[arg(long, default_value_t = 1e3)]
    pub stationary_lengthscale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to `<bundle>/inference`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl InferArgs {
    pub fn config(&self, axis_scale: f64) -> InferConfig {
        InferConfig {
            iterations: self.iterations,
            particles: self.particles,
            inducing_fraction: self.inducing_fraction,
            obs_scale: self.obs_scale,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            clip_norm: self.clip_norm,
            threshold: self.threshold,
            level: self.level,
            posterior_samples: self.posterior_samples,
            axis_scale,
            stationary_lengthscale: (self.stationary_lengthscale > 0.0)
                .then_some(self.stationary_lengthscale),
            seed: self.seed,
            ..InferConfig::default()
        }
    }
}

fn select(bundle: &Bundle, source: SpectrumSource) -> Result<&Tensor> {
    let missing = |what: &str| CliError::Invalid(format!("bundle has no {what} spectrum"));
    match source {
        SpectrumSource::Estimated => bundle.estimate.as_ref().ok_or_else(|| missing("estimated")),
        SpectrumSource::GroundTruth => bundle
            .spectrum
            .as_ref()
            .ok_or_else(|| missing("ground-truth")),
        SpectrumSource::Auto => bundle
            .estimate
            .as_ref()
            .or(bundle.spectrum.as_ref())
            .ok_or_else(|| missing("estimated or ground-truth")),
    }
}

pub fn summary(post: &Posterior) -> String {
    format!(
        "ordering={} tau_hat={:.4} directed={} undirected={}",
        post.ordering,
        post.tau_hat,
        post.directed_edges(),
        post.undirected_edges()
    )
}

/// ELBO traces as `iteration,elbo1,elbo2`.
pub fn traces_csv(post: &Posterior) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "elbo1", "elbo2"])
        .expect("in-memory write");
    for (i, (a, b)) in post.elbo1.iter().zip(&post.elbo2).enumerate() {
        w.write_record([i.to_string(), a.to_string(), b.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn run(args: &InferArgs) -> Result<Posterior> {
    let bundle = Bundle::read(&args.bundle)?;
    let shat = select(&bundle, args.spectrum)?;
    let cfg = args.config(bundle.manifest.time_axis.scale);
    cfg.validate()?;
    let post = train(&bundle.values, shat, &cfg).map_err(|e| CliError::Infer(e.to_string()))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.bundle.join("inference"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let json = serde_json::to_vec_pretty(&post).map_err(|e| CliError::Infer(e.to_string()))?;
    for (name, bytes) in [(POSTERIOR, json), (TRACES, traces_csv(&post))] {
        let path = out.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(post)
}
