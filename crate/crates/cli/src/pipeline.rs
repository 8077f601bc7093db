//! The full clustering run: affinity, spectral clustering, scores, artifacts.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dssc::dsproj::{project, CostOracle, DenseCost, LsrCost, ProjectOptions, ProjectionMethod, SparseCost};
use dssc::io::{Backend, Method, RunConfig};
use dssc::jdssc::{jdssc_solve_with, objective_eq5, JdsscOptions, StopRule, TraceRow};
use dssc::metrics::{evaluate, EvalReport};
use dssc::selfexpr::{ensc_solve, lsr_dense_matrix, WoodburyCache, DEFAULT_DENSE_CAP};
use dssc::spectral::{cluster, KMeansOptions, SpectralOptions};
use dssc::{CsrMatrix, DataMatrix, StochasticAffinity};
use nalgebra::DMatrix;
use serde::Serialize;

/// Self-expressive coefficients from one of the sequential backends.
pub enum SelfExpression {
    /// Signed zero-diagonal `C` and the cost `|C|`.
    Dense { signed: DMatrix<f64>, cost: DenseCost },
    /// Sparse signed `C` and the cost `|C|`.
    Sparse { signed: CsrMatrix, cost: SparseCost },
    /// Entries computed on demand.
    Woodbury(WoodburyCache),
}

impl SelfExpression {
    pub fn compute(x: &DataMatrix, backend: Backend, eta1: f64, eta3: f64) -> Result<Self> {
        if eta3 > 0.0 && backend != Backend::Ensc {
            log::warn!("eta3 = {eta3} is ignored by the {backend} backend");
        }
        Ok(match backend {
            Backend::LsrDense => {
                let signed = lsr_dense_matrix(x, eta1, true, DEFAULT_DENSE_CAP)?;
                let cost = DenseCost::new(signed.abs())?;
                SelfExpression::Dense { signed, cost }
            }
            Backend::Ensc => {
                let signed = ensc_solve(x, eta1, eta3)?.entries;
                let cost = SparseCost::new(signed.map_values(f64::abs))?;
                SelfExpression::Sparse { signed, cost }
            }
            Backend::LsrWoodbury => SelfExpression::Woodbury(WoodburyCache::new(x, eta1)?),
        })
    }

    /// The projection cost `|C|`.
    pub fn oracle<'a>(&'a self, x: &'a DataMatrix) -> Result<Oracle<'a>> {
        Ok(match self {
            SelfExpression::Dense { cost, .. } => Oracle::Borrowed(cost),
            SelfExpression::Sparse { cost, .. } => Oracle::Borrowed(cost),
            SelfExpression::Woodbury(cache) => Oracle::Lsr(LsrCost::new(x, cache)?),
        })
    }

    /// The signed coefficients, when they are held in full.
    pub fn signed_dense(&self) -> Option<DMatrix<f64>> {
        match self {
            SelfExpression::Dense { signed, .. } => Some(signed.clone()),
            SelfExpression::Sparse { signed, .. } => Some(signed.to_dense()),
            SelfExpression::Woodbury(_) => None,
        }
    }
}

pub enum Oracle<'a> {
    Borrowed(&'a dyn CostOracle),
    Lsr(LsrCost<'a>),
}

impl Oracle<'_> {
    pub fn as_dyn(&self) -> &dyn CostOracle {
        match self {
            Oracle::Borrowed(c) => *c,
            Oracle::Lsr(c) => c,
        }
    }
}

/// Projection options resolved from a configuration for `n` points.
pub fn projection_options(cfg: &RunConfig, n: usize) -> ProjectOptions {
    ProjectOptions {
        method: cfg.method.projection.resolve(n),
        support: cfg.support.to_init(),
        ..ProjectOptions::default()
    }
}

pub fn spectral_options(cfg: &RunConfig) -> Result<SpectralOptions> {
    Ok(SpectralOptions {
        laplacian: cfg.spectral.laplacian_mode()?,
        extra_vec: cfg.spectral.extra_vec,
        kmeans: KMeansOptions {
            restarts: cfg.spectral.restarts,
            seed: cfg.spectral.seed,
            ..KMeansOptions::default()
        },
        ..SpectralOptions::default()
    })
}

/// The affinity stage on its own.
pub struct AffinityOutcome {
    pub affinity: StochasticAffinity,
    /// `None` for the joint model.
    pub projection: Option<ProjectionMethod>,
    pub converged: bool,
    /// Joint-model objective, when the coefficients are available.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

pub fn compute_affinity(cfg: &RunConfig, x: &DataMatrix, trace_every: usize) -> Result<AffinityOutcome> {
    let n = x.n_points();
    let params = cfg.params;
    match cfg.method.name {
        Method::Jdssc => {
            let opts = JdsscOptions {
                stop: StopRule {
                    tol: cfg.method.tol,
                    max_iter: cfg.method.max_iter,
                },
                trace_every,
                ..JdsscOptions::default()
            };
            let r = jdssc_solve_with(x, &params, &opts, None).context("joint model (ADMM) stage")?;
            Ok(AffinityOutcome {
                affinity: r.affinity,
                projection: None,
                converged: r.converged,
                objective: Some(r.objective),
                iterations: r.iterations,
                trace: r.trace,
            })
        }
        Method::Adssc => {
            let se = SelfExpression::compute(x, cfg.method.backend, params.eta1, params.eta3)
                .context("self-expression stage")?;
            let oracle = se.oracle(x)?;
            let opts = projection_options(cfg, n);
            let out = project(oracle.as_dyn(), params.eta2, &opts).context("projection stage")?;
            let objective = se.signed_dense().map(|c| {
                let (cp, cq) = dssc::jdssc::split_signed(&c);
                objective_eq5(&cp, &cq, &out.affinity.entries().to_dense(), x, &params)
            });
            Ok(AffinityOutcome {
                affinity: out.affinity,
                projection: Some(out.method),
                converged: true,
                objective,
                iterations: out.iterations,
                trace: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub projection: Option<String>,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub affinity_nnz: usize,
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    pub inertia: f64,
    pub eigenvalues: Vec<f64>,
    /// Scores of the chosen k-means run.
    pub metrics: Option<EvalReport>,
    /// Scores averaged over all k-means restarts.
    pub avg_metrics: Option<EvalReport>,
}

pub struct PipelineOutput {
    pub labels: Vec<usize>,
    pub affinity: StochasticAffinity,
    pub report: RunReport,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    pub avg_metrics: bool,
    pub trace_every: usize,
}

fn mean_report(reports: &[EvalReport]) -> EvalReport {
    let m = reports.len() as f64;
    let avg = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
        reports.iter().map(f).sum::<Option<f64>>().map(|s| s / m)
    };
    EvalReport {
        acc: reports.iter().map(|r| r.acc).sum::<f64>() / m,
        nmi: reports.iter().map(|r| r.nmi).sum::<f64>() / m,
        spe: avg(&|r| r.spe),
        nnz_per_col: avg(&|r| r.nnz_per_col),
    }
}

/// Affinity, spectral clustering and (with `truth`) scores.
pub fn run_pipeline(
    cfg: &RunConfig,
    x: &DataMatrix,
    truth: Option<&[usize]>,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let n = x.n_points();
    cfg.validate()?;
    cfg.params.validate(Some(n))?;
    if let Some(t) = truth {
        anyhow::ensure!(t.len() == n, "{} labels for {n} points", t.len());
    }
    let aff = compute_affinity(cfg, x, opts.trace_every)?;
    let spectral = cluster(aff.affinity.entries(), cfg.params.k, &spectral_options(cfg)?).context("spectral stage")?;
    let labels = spectral.labels.labels.clone();
    let (metrics, avg_metrics) = match truth {
        Some(t) => {
            let best = evaluate(&labels, t, Some(aff.affinity.entries()))?;
            let avg = if opts.avg_metrics {
                let all: Vec<EvalReport> = spectral
                    .restart_labels
                    .iter()
                    .map(|l| evaluate(l, t, Some(aff.affinity.entries())))
                    .collect::<dssc::Result<_>>()?;
                Some(mean_report(&all))
            } else {
                None
            };
            (Some(best), avg)
        }
        None => (None, None),
    };
    let membership = aff.affinity.report();
    let report = RunReport {
        method: cfg.method.name.to_string(),
        projection: aff.projection.map(|p| p.to_string()),
        n,
        d: x.dim(),
        k: cfg.params.k,
        converged: aff.converged,
        iterations: aff.iterations,
        objective: aff.objective,
        affinity_nnz: aff.affinity.entries().nnz(),
        max_row_dev: membership.max_row_dev,
        max_col_dev: membership.max_col_dev,
        inertia: spectral.inertia,
        eigenvalues: spectral.eigenvalues,
        metrics,
        avg_metrics,
    };
    Ok(PipelineOutput {
        labels,
        affinity: aff.affinity,
        report,
        trace: aff.trace,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    data: Option<String>,
    truth: Option<String>,
    support_seed: u64,
    spectral_seed: u64,
    /// Resolved configuration, readable by `dssc cluster --config`.
    config: String,
}

/// Writes `affinity.csv`, `labels.txt`, `report.json`, `config.toml`,
/// `manifest.json` and (if recorded) `trace.csv` to `dir`.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, out: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    dssc::io::write_sparse_affinity(&dir.join("affinity.csv"), out.affinity.entries())?;
    dssc::io::write_labels(&dir.join("labels.txt"), &out.labels)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    // The run directory is where the copy lives, not part of the run.
    let mut portable = cfg.clone();
    portable.io.out_dir = None;
    let config = portable.dump()?;
    fs::write(dir.join("config.toml"), &config)?;
    let manifest = Manifest {
        tool: "dssc",
        version: env!("CARGO_PKG_VERSION"),
        command: "cluster",
        data: cfg.io.data.as_ref().map(|p| p.display().to_string()),
        truth: cfg.io.labels.as_ref().map(|p| p.display().to_string()),
        support_seed: cfg.support.seed,
        spectral_seed: cfg.spectral.seed,
        config,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if !out.trace.is_empty() {
        let mut csv = String::from("iter,objective,y_minus_a,z_minus_xc,row_sums,col_sums,change\n");
        for t in &out.trace {
            let r = &t.residuals;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.iter, t.objective, r.y_minus_a, r.z_minus_xc, r.row_sums, r.col_sums, r.change
            ));
        }
        fs::write(dir.join("trace.csv"), csv)?;
    }
    Ok(())
}
