use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dssc::dsproj::{project, DenseCost, ProjectOptions, ProjectionMethod, SparseCost, SupportInit};
use dssc::io::{self as dio, Backend, MatrixFormat, Method, ProjectionChoice, RunConfig};
use dssc::metrics::evaluate;
use dssc::spectral::{cluster, KMeansOptions, LaplacianMode, SpectralOptions};
use dssc::DsscError;
use dssc_cli::bench::{bench_projection, ranking, to_csv, BenchOptions, Instance};
use dssc_cli::pipeline::{run_pipeline, write_artifacts, PipelineOptions, SelfExpression};
use dssc_cli::synth::{synth, SynthSpec};
use dssc_cli::tune::tune_eta2;

#[derive(Parser)]
#[command(name = "dssc", version, about = "Subspace clustering with doubly stochastic affinities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn an affinity, cluster it and write the run directory.
    Cluster(ClusterArgs),
    /// Self-expressive coefficients as sparse triplets.
    Selfexpr(SelfexprArgs),
    /// Project a nonnegative cost matrix onto the doubly stochastic matrices.
    Project(ProjectArgs),
    /// Spectral clustering of an affinity.
    Spectral(SpectralArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Sample points from a union of random subspaces.
    Synth(SynthArgs),
    /// Time the projection methods on synthetic costs.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data matrix, one point per row (csv or bin).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Input format (defaults to the file extension).
    #[arg(long)]
    format: Option<MatrixFormat>,
    /// The file holds one point per column.
    #[arg(long)]
    transpose: bool,
}

#[derive(Args)]
struct ClusterArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter preset, e.g. yaleb-jdssc (see --list-presets).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    list_presets: bool,
    #[command(flatten)]
    data: DataArgs,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    projection: Option<ProjectionChoice>,
    #[arg(long, allow_negative_numbers = true)]
    eta1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta3: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Seed for both the support initialization and k-means.
    #[arg(long)]
    seed: Option<u64>,
    /// Search for the smallest eta2 giving at most k connected components.
    #[arg(long)]
    tune_eta2: bool,
    /// Also report metrics averaged over the k-means restarts.
    #[arg(long)]
    avg_metrics: bool,
    /// Record the joint-model objective and residuals every N iterations.
    #[arg(long, default_value_t = 0)]
    trace_every: usize,
    /// Run directory for the artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelfexprArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "lsr_dense")]
    backend: Backend,
    #[arg(long, default_value_t = 10.0)]
    eta1: f64,
    #[arg(long, default_value_t = 0.0)]
    eta3: f64,
    /// Emit `|C|`, ready for `dssc project`.
    #[arg(long)]
    abs: bool,
    /// Output triplet file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Cost matrix: dense csv/bin, or triplets with --sparse.
    #[arg(long)]
    cost: PathBuf,
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    format: Option<MatrixFormat>,
    #[arg(long, allow_negative_numbers = true)]
    eta2: f64,
    #[arg(long, default_value_t = SupportInit::default().k_top)]
    support_topk: usize,
    #[arg(long, default_value_t = SupportInit::default().n_perms)]
    support_perms: usize,
    #[arg(long, default_value_t = 0)]
    support_seed: u64,
    /// Feasibility tolerance on row and column sums.
    #[arg(long, default_value_t = dssc::DEFAULT_FEASIBILITY_TOL)]
    tol: f64,
    #[arg(long, default_value = "active-set")]
    method: ProjectionMethod,
    /// Keep the diagonal out of the support.
    #[arg(long)]
    forbid_diag: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectralArgs {
    /// Affinity triplet file.
    #[arg(long)]
    affinity: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    extra_vec: bool,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    laplacian: LaplacianMode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    affinity: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    num_subspaces: usize,
    #[arg(long, default_value_t = 5)]
    subspace_dim: usize,
    #[arg(long, default_value_t = 15)]
    ambient_dim: usize,
    #[arg(long, default_value_t = 40)]
    points_per_subspace: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data file, one point per row.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<MatrixFormat>,
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Instances as kind:n, e.g. d3:500,d4:1000.
    #[arg(long, value_delimiter = ',', default_value = "d3:500,d4:1000")]
    instances: Vec<Instance>,
    #[arg(long, value_delimiter = ',', default_value = "active-set,dual,altproj")]
    methods: Vec<ProjectionMethod>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// CSV output (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status for a failed command.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DsscError>() {
            return match e {
                DsscError::NotConverged { .. } | DsscError::Diverged { .. } => 3,
                DsscError::Io(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

/// Writes `text` to `path`, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(Into::into),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_data(path: &Path, format: Option<MatrixFormat>, transpose: bool) -> Result<dssc::DataMatrix> {
    let fmt = format.unwrap_or_else(|| MatrixFormat::from_path(path));
    Ok(dio::read_matrix(path, fmt, transpose)?)
}

fn run_cluster(a: ClusterArgs) -> Result<ExitCode> {
    if a.list_presets {
        for name in dio::preset_names() {
            println!("{name}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), p) => {
            let text = fs::read_to_string(path).map_err(DsscError::from).with_context(|| format!("reading {}", path.display()))?;
            dio::parse_config(&text, p.as_deref(), &path.display().to_string())?
        }
        (None, Some(p)) => dio::preset(p)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(d) = a.data.data {
        cfg.io.data = Some(d);
    }
    if let Some(f) = a.data.format {
        cfg.io.format = f;
    } else if let Some(d) = &cfg.io.data {
        cfg.io.format = MatrixFormat::from_path(d);
    }
    cfg.io.transpose |= a.data.transpose;
    if let Some(l) = a.labels {
        cfg.io.labels = Some(l);
    }
    if let Some(o) = a.out {
        cfg.io.out_dir = Some(o);
    }
    if let Some(m) = a.method {
        cfg.method.name = m;
    }
    if let Some(b) = a.backend {
        cfg.method.backend = b;
    }
    if let Some(p) = a.projection {
        cfg.method.projection = p;
    }
    if let Some(v) = a.eta1 {
        cfg.params.eta1 = v;
    }
    if let Some(v) = a.eta2 {
        cfg.params.eta2 = v;
    }
    if let Some(v) = a.eta3 {
        cfg.params.eta3 = v;
    }
    if let Some(k) = a.k {
        cfg.params.k = k;
    }
    if let Some(s) = a.seed {
        cfg.support.seed = s;
        cfg.spectral.seed = s;
    }
    cfg.validate()?;
    cfg.check_files()?;
    let Some(data) = cfg.io.data.clone() else {
        bail!(DsscError::invalid("no data file: pass --data or set io.data"));
    };
    let x = dio::read_matrix(&data, cfg.io.format, cfg.io.transpose)?;
    let truth = cfg.io.labels.as_deref().map(dio::read_labels).transpose()?;
    if a.tune_eta2 {
        let t = tune_eta2(&cfg, &x, 8)?;
        log::info!("tuned eta2 = {:.6e} ({} components, {} solves)", t.eta2, t.components, t.steps.len());
        cfg.params.eta2 = t.eta2;
    }
    let opts = PipelineOptions {
        avg_metrics: a.avg_metrics,
        trace_every: a.trace_every,
    };
    let out = run_pipeline(&cfg, &x, truth.as_deref(), &opts)?;
    if let Some(dir) = &cfg.io.out_dir {
        write_artifacts(dir, &cfg, &out)?;
    }
    println!("{}", serde_json::to_string(&out.report)?);
    if !out.report.converged {
        log::error!("joint model did not converge in {} iterations", out.report.iterations);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_selfexpr(a: SelfexprArgs) -> Result<()> {
    let Some(path) = &a.data.data else {
        bail!(DsscError::invalid("--data is required"));
    };
    let x = read_data(path, a.data.format, a.data.transpose)?;
    let se = SelfExpression::compute(&x, a.backend, a.eta1, a.eta3)?;
    let c = match se.signed_dense() {
        Some(c) if a.abs => dssc::CsrMatrix::from_dense(&c.abs(), 0.0),
        Some(c) => dssc::CsrMatrix::from_dense(&c, 0.0),
        None => bail!(DsscError::invalid("the lsr_woodbury backend computes entries on demand; use lsr_dense or ensc")),
    };
    emit(a.out.as_deref(), &dio::format_sparse(&c))
}

fn run_project(a: ProjectArgs) -> Result<()> {
    let opts = ProjectOptions {
        method: a.method,
        support: SupportInit {
            k_top: a.support_topk,
            n_perms: a.support_perms,
            seed: a.support_seed,
            include_diagonal: !a.forbid_diag,
        },
        active_set: dssc::dsproj::ActiveSetOptions {
            feasibility_tol: a.tol,
            ..Default::default()
        },
        ..ProjectOptions::default()
    };
    let out = if a.sparse {
        let cost = SparseCost::new(dio::read_sparse_affinity(&a.cost)?)?;
        project(&cost, a.eta2, &opts)?
    } else {
        let fmt = a.format.unwrap_or_else(|| MatrixFormat::from_path(&a.cost));
        let cost = DenseCost::new(dio::read_dense(&a.cost, fmt)?)?;
        project(&cost, a.eta2, &opts)?
    };
    let rep = out.affinity.report();
    log::info!(
        "{}: {} iterations, row dev {:.2e}, col dev {:.2e}, nnz {}",
        out.method,
        out.iterations,
        rep.max_row_dev,
        rep.max_col_dev,
        out.affinity.entries().nnz()
    );
    emit(a.out.as_deref(), &dio::format_sparse(out.affinity.entries()))
}

fn run_spectral(a: SpectralArgs) -> Result<()> {
    let aff = dio::read_sparse_affinity(&a.affinity)?;
    let opts = SpectralOptions {
        laplacian: a.laplacian,
        extra_vec: a.extra_vec,
        kmeans: KMeansOptions {
            restarts: a.restarts,
            seed: a.seed,
            ..KMeansOptions::default()
        },
        ..SpectralOptions::default()
    };
    let r = cluster(&aff, a.k, &opts)?;
    emit(a.out.as_deref(), &dio::format_labels(&r.labels.labels))
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let pred = dio::read_labels(&a.pred)?;
    let truth = dio::read_labels(&a.truth)?;
    let aff = a.affinity.as_deref().map(dio::read_sparse_affinity).transpose()?;
    let rep = evaluate(&pred, &truth, aff.as_ref())?;
    println!("{}", serde_json::to_string(&rep)?);
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_subspaces: a.num_subspaces,
        subspace_dim: a.subspace_dim,
        ambient_dim: a.ambient_dim,
        points_per_subspace: a.points_per_subspace,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let (x, labels) = synth(&spec).map_err(|e| DsscError::invalid(format!("{e:#}")))?;
    let fmt = a.format.unwrap_or_else(|| MatrixFormat::from_path(&a.out));
    dio::write_matrix(&a.out, &x, fmt)?;
    if let Some(p) = &a.labels_out {
        dio::write_labels(p, &labels)?;
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let opts = BenchOptions {
        seed: a.seed,
        warmup: a.warmup,
        repeats: a.repeats,
        keep_matrices: false,
    };
    let rows = bench_projection(&a.instances, &a.methods, &opts)?;
    emit(a.out.as_deref(), &to_csv(&rows))?;
    for inst in &a.instances {
        let name = inst.to_string();
        eprintln!("{name}: {}", ranking(&rows, &name).join(" < "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dio::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Cluster(a) => run_cluster(a),
        Command::Selfexpr(a) => run_selfexpr(a).map(|_| ExitCode::SUCCESS),
        Command::Project(a) => run_project(a).map(|_| ExitCode::SUCCESS),
        Command::Spectral(a) => run_spectral(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => run_eval(a).map(|_| ExitCode::SUCCESS),
        Command::Synth(a) => run_synth(a).map(|_| ExitCode::SUCCESS),
        Command::Bench(a) => run_bench(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
