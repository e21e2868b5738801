//! `bench`: the synthetic benchmark grid. Every `(τ, μ)` cell gets `seeds`
//! datasets; each is scored for MN-CASTLE, the random baseline and any
//! imported predictions.
//!
//! Jobs own their RNG streams (derived from the dataset seed), so results
//! do not depend on the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use mndag_core::metrics::{
    self, adjacency_scores, median, ordering_eval, random_graph, OrderingReport, ScaleGraph,
};
use mndag_core::spectrum::{self, EstimateConfig};
use mndag_core::stochastic::stream;
use mndag_core::{synth, train, CausalOrdering, GenConfig, InferConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmd::infer::SpectrumSource;
use crate::error::{CliError, Result};

pub const RESULTS: &str = "results.csv";
pub const DRAWS: &str = "ordering_draws.csv";
pub const PLAN: &str = "plan.json";

pub const MODEL: &str = "mn-castle";
pub const RANDOM: &str = "random";

/// Ranks at which scaled nDCG is reported.
pub const ELBO_WINDOW: usize = 50;
pub const NDCG_KS: [usize; 2] = [3, 5];

pub const DEFAULT_CELLS: &str = "0,0;0,0.5;0,0.9;0.5,0;0.5,0.5;0.5,0.9;0.9,0;0.9,0.5;0.9,0.9";

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// `τ,μ` pairs separated by `;`.
    #[arg(long, default_value = DEFAULT_CELLS)]
    pub cells: String,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value_t = 600)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub particles: usize,
    /// PL orderings drawn per dataset for the ordering scores.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    /// Spectrum fed to inference. Estimation needs a power-of-two `t`.
    #[arg(long, value_enum, default_value_t = SpectrumSource::GroundTruth)]
    pub spectrum: SpectrumSource,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// External predictions (JSON) scored alongside the built-in models.
    #[arg(long)]
    pub import: Vec<PathBuf>,
    #[arg(long, env = "MNDAG_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    /// `(τ, μ)` cells.
    pub cells: Vec<(f64, f64)>,
    pub seeds: u64,
    pub n: usize,
    pub t: usize,
    pub delta: f64,
    pub kernel_variance: f64,
    pub iterations: usize,
    pub particles: usize,
    pub draws: usize,
    pub estimated_spectrum: bool,
    pub base_seed: u64,
}

impl BenchPlan {
    pub fn from_args(args: &BenchArgs) -> Result<Self> {
        if args.spectrum == SpectrumSource::Auto {
            return Err(CliError::Invalid(
                "bench needs --spectrum estimated or ground-truth".into(),
            ));
        }
        if args.draws == 0 {
            return Err(CliError::Invalid("--draws must be positive".into()));
        }
        Ok(Self {
            cells: parse_cells(&args.cells)?,
            seeds: args.seeds,
            n: args.n,
            t: args.t,
            delta: args.delta,
            kernel_variance: mndag_core::mndag::DEFAULT_KERNEL_VARIANCE,
            iterations: args.iterations,
            particles: args.particles,
            draws: args.draws,
            estimated_spectrum: args.spectrum == SpectrumSource::Estimated,
            base_seed: args.base_seed,
        })
    }
}

/// Parses `"τ,μ;τ,μ"`.
pub fn parse_cells(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|c| !c.trim().is_empty())
        .map(|c| {
            let parts: Vec<&str> = c.split(',').map(str::trim).collect();
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| CliError::Invalid(format!("bad cell {c:?}")))
            };
            match parts.as_slice() {
                [tau, mu] => Ok((num(tau)?, num(mu)?)),
                _ => Err(CliError::Invalid(format!(
                    "cell {c:?} is not of the form tau,mu"
                ))),
            }
        })
        .collect()
}

/// Seed of one benchmark dataset, derived from the base seed and its cell.
pub fn dataset_seed(base: u64, tau: f64, mu: f64, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(format!("bench/{tau}/{mu}/{seed}").as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// One scored model on one dataset (long format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub tau: f64,
    pub mu: f64,
    pub seed: u64,
    pub dataset_seed: u64,
    pub model: String,
    pub status: String,
    pub scales: usize,
    pub p: Option<usize>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    pub directed: Option<usize>,
    pub undirected: Option<usize>,
    pub f1: Option<f64>,
    pub tpr: Option<f64>,
    pub fdr: Option<f64>,
    pub shd: Option<f64>,
    pub nnz_over_p: Option<f64>,
    pub fu: Option<f64>,
    /// Medians over the ordering draws.
    pub kendall_tau: Option<f64>,
    pub spearman: Option<f64>,
    pub ndcg3: Option<f64>,
    pub ndcg5: Option<f64>,
    pub tau_hat: Option<f64>,
    /// Step-2 ELBO averaged over the first and last `ELBO_WINDOW` iterations.
    pub elbo2_start: Option<f64>,
    pub elbo2_end: Option<f64>,
}

/// One ordering draw (long format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRow {
    pub tau: f64,
    pub mu: f64,
    pub seed: u64,
    pub model: String,
    pub draw: usize,
    pub kendall_tau: f64,
    pub spearman: f64,
    pub ndcg3: Option<f64>,
    pub ndcg5: Option<f64>,
}

/// External predictions for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedPrediction {
    pub tau: f64,
    pub mu: f64,
    pub seed: u64,
    /// Per scale, directed `[from, to]` pairs; both directions of a pair
    /// make it undirected.
    pub edges: Vec<Vec<(usize, usize)>>,
    #[serde(default)]
    pub ordering: Option<CausalOrdering>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imported {
    pub model: String,
    pub predictions: Vec<ImportedPrediction>,
}

pub fn load_import(path: &Path) -> Result<Imported> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<ResultRow>,
    pub draws: Vec<DrawRow>,
}

struct Job {
    tau: f64,
    mu: f64,
    seed: u64,
}

impl Job {
    fn row(&self, dataset_seed: u64, model: &str, scales: usize) -> ResultRow {
        ResultRow {
            tau: self.tau,
            mu: self.mu,
            seed: self.seed,
            dataset_seed,
            model: model.into(),
            status: "ok".into(),
            scales,
            p: None,
            tp: None,
            fp: None,
            directed: None,
            undirected: None,
            f1: None,
            tpr: None,
            fdr: None,
            shd: None,
            nnz_over_p: None,
            fu: None,
            kendall_tau: None,
            spearman: None,
            ndcg3: None,
            ndcg5: None,
            tau_hat: None,
            elbo2_start: None,
            elbo2_end: None,
        }
    }

    fn draws(&self, model: &str, reports: &[OrderingReport]) -> Vec<DrawRow> {
        reports
            .iter()
            .enumerate()
            .map(|(draw, r)| DrawRow {
                tau: self.tau,
                mu: self.mu,
                seed: self.seed,
                model: model.into(),
                draw,
                kendall_tau: r.kendall_tau,
                spearman: r.spearman,
                ndcg3: r.ndcg_at(3),
                ndcg5: r.ndcg_at(5),
            })
            .collect()
    }
}

fn score_edges(row: &mut ResultRow, pred: &[ScaleGraph], truth: &[ScaleGraph], n: usize) {
    match adjacency_scores(pred, truth, n) {
        Ok(s) => {
            let a = s.aggregate;
            row.p = Some(a.counts.p);
            row.tp = Some(a.counts.tp);
            row.fp = Some(a.counts.fp);
            row.directed = Some(a.counts.directed);
            row.undirected = Some(a.counts.undirected);
            row.f1 = a.f1;
            row.tpr = a.tpr;
            row.fdr = Some(a.fdr);
            row.shd = a.shd;
            row.nnz_over_p = a.nnz_over_p;
            row.fu = Some(a.fu);
        }
        Err(e) => row.status = format!("unscored: {e}"),
    }
}

fn score_orderings(row: &mut ResultRow, reports: &[OrderingReport]) {
    let med = |f: &dyn Fn(&OrderingReport) -> Option<f64>| {
        median(&reports.iter().filter_map(f).collect::<Vec<_>>())
    };
    row.kendall_tau = med(&|r| Some(r.kendall_tau));
    row.spearman = med(&|r| Some(r.spearman));
    row.ndcg3 = med(&|r| r.ndcg_at(3));
    row.ndcg5 = med(&|r| r.ndcg_at(5));
}

fn run_job(plan: &BenchPlan, job: &Job, imports: &[Imported]) -> BenchOutcome {
    let dseed = dataset_seed(plan.base_seed, job.tau, job.mu, job.seed);
    let mut out = BenchOutcome::default();
    let gen = GenConfig::new(plan.n, plan.t, job.mu, job.tau, plan.delta, dseed);
    let (dag, x) = match synth::simulate(&gen) {
        Ok(v) => v,
        Err(e) => {
            let mut row = job.row(dseed, MODEL, 0);
            row.status = format!("failed: generation: {e}");
            out.rows.push(row);
            return out;
        }
    };
    let truth: Vec<ScaleGraph> = dag
        .adjacency()
        .iter()
        .map(|a| ScaleGraph::from_adjacency(a, plan.n))
        .collect();

    let shat = if plan.estimated_spectrum {
        spectrum::estimate(&x, &EstimateConfig::default()).map(|e| e.values)
    } else {
        Ok(dag.spectrum())
    };
    let cfg = InferConfig {
        iterations: plan.iterations,
        particles: plan.particles,
        axis_scale: gen.axis_scale,
        seed: dseed,
        ..InferConfig::default()
    };
    let ks = NDCG_KS.map(|k| k.min(plan.n));
    let mut model = job.row(dseed, MODEL, dag.scales);
    let mut baseline_orders = Vec::new();
    match shat.and_then(|s| train(&x, &s, &cfg)) {
        Ok(post) => {
            score_edges(&mut model, &post.edges, &truth, plan.n);
            model.tau_hat = Some(post.tau_hat);
            if let Some((a, b)) = post.elbo2_ends(ELBO_WINDOW) {
                model.elbo2_start = Some(a);
                model.elbo2_end = Some(b);
            }
            let mut rng = stream(dseed, "ordering");
            match ordering_eval(&post.theta, &dag.ordering, plan.draws, &ks, &mut rng) {
                Ok((m, b)) => {
                    score_orderings(&mut model, &m);
                    out.draws.extend(job.draws(MODEL, &m));
                    baseline_orders = b;
                }
                Err(e) => model.status = format!("failed: ordering scores: {e}"),
            }
        }
        Err(e) => model.status = format!("failed: {e}"),
    }
    out.rows.push(model);

    let mut random = job.row(dseed, RANDOM, dag.scales);
    let (_, graphs) = random_graph(plan.n, dag.scales, &mut stream(dseed, "random"));
    score_edges(&mut random, &graphs, &truth, plan.n);
    if baseline_orders.is_empty() {
        // the model run failed before its draws; the baseline keeps its own
        let mut rng = stream(dseed, "ordering");
        let theta = vec![0.0; plan.n];
        if let Ok((_, b)) = ordering_eval(&theta, &dag.ordering, plan.draws, &ks, &mut rng) {
            baseline_orders = b;
        }
    }
    score_orderings(&mut random, &baseline_orders);
    out.draws.extend(job.draws(RANDOM, &baseline_orders));
    out.rows.push(random);

    for imp in imports {
        let mut row = job.row(dseed, &imp.model, dag.scales);
        let found = imp
            .predictions
            .iter()
            .find(|p| p.tau == job.tau && p.mu == job.mu && p.seed == job.seed);
        match found {
            Some(p) => {
                let graphs: Vec<ScaleGraph> = p
                    .edges
                    .iter()
                    .map(|edges| {
                        let mut g = ScaleGraph::new();
                        for &(from, to) in edges {
                            g.add_directed(from, to);
                        }
                        g
                    })
                    .collect();
                score_edges(&mut row, &graphs, &truth, plan.n);
                if let Some(o) = &p.ordering {
                    match metrics::ordering_report(o, &dag.ordering, &ks) {
                        Ok(r) => score_orderings(&mut row, std::slice::from_ref(&r)),
                        Err(e) => row.status = format!("unscored: {e}"),
                    }
                }
            }
            None => row.status = "missing".into(),
        }
        out.rows.push(row);
    }
    out
}

/// Runs every dataset of the plan on a pool of `jobs` workers. Output order
/// follows the plan (cell, then seed, then model).
pub fn execute(plan: &BenchPlan, imports: &[Imported], jobs: usize) -> Result<BenchOutcome> {
    let list: Vec<Job> = plan
        .cells
        .iter()
        .flat_map(|&(tau, mu)| (0..plan.seeds).map(move |seed| Job { tau, mu, seed }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Invalid(format!("worker pool: {e}")))?;
    let parts: Vec<BenchOutcome> =
        pool.install(|| list.par_iter().map(|j| run_job(plan, j, imports)).collect());
    let mut all = BenchOutcome::default();
    for p in parts {
        all.rows.extend(p.rows);
        all.draws.extend(p.draws);
    }
    Ok(all)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))
}

pub fn write_outcome(dir: &Path, plan: &BenchPlan, outcome: &BenchOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let files = [
        (RESULTS, csv_bytes(&outcome.rows)?),
        (DRAWS, csv_bytes(&outcome.draws)?),
        (
            PLAN,
            serde_json::to_vec_pretty(plan).expect("plan serializes"),
        ),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

pub fn run(args: &BenchArgs) -> Result<BenchOutcome> {
    let plan = BenchPlan::from_args(args)?;
    let imports = args
        .import
        .iter()
        .map(|p| load_import(p))
        .collect::<Result<Vec<_>>>()?;
    let outcome = execute(&plan, &imports, args.jobs)?;
    write_outcome(&args.out, &plan, &outcome)?;
    Ok(outcome)
}

/// Per-model medians of one numeric column, skipping missing values.
pub fn column_medians(
    rows: &[ResultRow],
    f: impl Fn(&ResultRow) -> Option<f64>,
) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = f(r) {
            by.entry(r.model.clone()).or_default().push(v);
        }
    }
    by.into_iter()
        .filter_map(|(k, v)| median(&v).map(|m| (k, m)))
        .collect()
}
