//! Projection runtime comparison on random and subspace-derived costs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dssc::dsproj::{altproj_project, project, AltProjOptions, DenseCost, ProjectOptions, ProjectionMethod};
use dssc::selfexpr::{lsr_dense_matrix, DEFAULT_DENSE_CAP};
use dssc::{validate_affinity, DsscError};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::synth::{synth, SynthSpec};

/// Sums within this of 1 count as converged.
pub const BENCH_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InstanceKind {
    /// `½(|G| + |Gᵀ|)` of a Gaussian `G`, scaled to maximum 1; `γ = 0.5`.
    D3,
    /// `|C|` of ridge self-expression (`η1 = 1`) on ten 5-dimensional
    /// subspaces of R^15; `γ = 0.01`.
    D4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Instance {
    pub kind: InstanceKind,
    pub n: usize,
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            InstanceKind::D3 => "d3",
            InstanceKind::D4 => "d4",
        };
        write!(f, "{k}:{}", self.n)
    }
}

impl FromStr for Instance {
    type Err = anyhow::Error;

    /// `d3:500`, `d4:1000`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, n) = s.split_once(':').with_context(|| format!("instance '{s}' is not <d3|d4>:<n>"))?;
        let kind = match kind {
            "d3" => InstanceKind::D3,
            "d4" => InstanceKind::D4,
            _ => bail!("unknown instance kind '{kind}' (expected d3 or d4)"),
        };
        let n: usize = n.parse().with_context(|| format!("bad size in '{s}'"))?;
        if kind == InstanceKind::D4 && (n < 20 || n % 10 != 0) {
            bail!("d4 sizes must be multiples of 10 and at least 20, got {n}");
        }
        if n < 2 {
            bail!("instance size must be >= 2");
        }
        Ok(Instance { kind, n })
    }
}

impl Instance {
    pub fn gamma(&self) -> f64 {
        match self.kind {
            InstanceKind::D3 => 0.5,
            InstanceKind::D4 => 0.01,
        }
    }

    /// The cost matrix `|C|`.
    pub fn cost(&self, seed: u64) -> Result<DMatrix<f64>> {
        match self.kind {
            InstanceKind::D3 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = DMatrix::from_fn(self.n, self.n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
                let c = (g.abs() + g.transpose().abs()) * 0.5;
                let max = c.max();
                Ok(c / max)
            }
            InstanceKind::D4 => {
                let spec = SynthSpec::ten_in_fifteen(self.n / 10, 0.0, seed);
                let (x, _) = synth(&spec)?;
                Ok(lsr_dense_matrix(&x, 1.0, true, DEFAULT_DENSE_CAP)?.abs())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance: String,
    pub n: usize,
    pub method: String,
    /// Median wall time over the timed runs.
    pub seconds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_deviation: f64,
    #[serde(skip)]
    pub matrix: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub seed: u64,
    pub warmup: usize,
    pub repeats: usize,
    /// Keep the projected matrices for cross-checking (memory heavy).
    pub keep_matrices: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 0,
            warmup: 1,
            repeats: 3,
            keep_matrices: false,
        }
    }
}

struct RunOutcome {
    iterations: usize,
    converged: bool,
    max_deviation: f64,
    matrix: DMatrix<f64>,
}

fn run_once(cost: &DenseCost, gamma: f64, method: ProjectionMethod) -> Result<RunOutcome> {
    match method {
        ProjectionMethod::AltProj => {
            let r = altproj_project(cost.matrix(), gamma, &AltProjOptions::default());
            Ok(RunOutcome {
                iterations: r.iterations,
                converged: r.converged,
                max_deviation: r.max_deviation,
                matrix: r.matrix,
            })
        }
        m => {
            let opts = ProjectOptions {
                method: m,
                ..ProjectOptions::default()
            };
            let out = match project(cost, gamma, &opts) {
                Ok(out) => out,
                Err(e @ (DsscError::NotConverged { .. } | DsscError::InfeasibleSupport { .. })) => {
                    log::warn!("{m}: {e}");
                    return Ok(RunOutcome {
                        iterations: 0,
                        converged: false,
                        max_deviation: f64::NAN,
                        matrix: DMatrix::zeros(0, 0),
                    });
                }
                Err(e) => return Err(e.into()),
            };
            let rep = validate_affinity(out.affinity.entries(), BENCH_TOL);
            Ok(RunOutcome {
                iterations: out.outer_iterations.unwrap_or(out.iterations),
                converged: rep.passed,
                max_deviation: rep.max_row_dev.max(rep.max_col_dev),
                matrix: out.affinity.entries().to_dense(),
            })
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Times every method on every instance (warmup runs, then the median of the
/// timed runs).
pub fn bench_projection(instances: &[Instance], methods: &[ProjectionMethod], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for inst in instances {
        let cost = DenseCost::new(inst.cost(opts.seed)?)?;
        for &method in methods {
            for _ in 0..opts.warmup {
                run_once(&cost, inst.gamma(), method)?;
            }
            let mut times = Vec::new();
            let mut last = None;
            for _ in 0..opts.repeats.max(1) {
                let start = Instant::now();
                let r = run_once(&cost, inst.gamma(), method)?;
                times.push(start.elapsed().as_secs_f64());
                last = Some(r);
            }
            let r = last.expect("at least one run");
            log::info!("{inst} {method}: {:.3}s", median(times.clone()));
            rows.push(BenchRow {
                instance: inst.to_string(),
                n: inst.n,
                method: method.to_string(),
                seconds: median(times),
                iterations: r.iterations,
                converged: r.converged,
                max_deviation: r.max_deviation,
                matrix: opts.keep_matrices.then_some(r.matrix),
            });
        }
    }
    Ok(rows)
}

/// CSV with one line per (instance, method).
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("instance,n,method,seconds,iterations,converged,max_deviation\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{:e}\n",
            r.instance,
            r.n,
            r.method,
            r.seconds,
            r.iterations,
            if r.converged { "yes" } else { "NC" },
            r.max_deviation
        ));
    }
    out
}

/// Methods of one instance from fastest to slowest; non-converged runs last.
pub fn ranking(rows: &[BenchRow], instance: &str) -> Vec<String> {
    let mut sel: Vec<&BenchRow> = rows.iter().filter(|r| r.instance == instance).collect();
    sel.sort_by(|a, b| b.converged.cmp(&a.converged).then(a.seconds.total_cmp(&b.seconds)));
    sel.iter().map(|r| r.method.clone()).collect()
}

/// Largest entrywise difference between converged methods of an instance
/// (needs `keep_matrices`).
pub fn max_disagreement(rows: &[BenchRow], instance: &str) -> Option<f64> {
    let mats: Vec<&DMatrix<f64>> = rows
        .iter()
        .filter(|r| r.instance == instance && r.converged)
        .filter_map(|r| r.matrix.as_ref())
        .collect();
    if mats.len() < 2 {
        return None;
    }
    let mut worst = 0.0f64;
    for a in 0..mats.len() {
        for b in a + 1..mats.len() {
            worst = worst.max((mats[a] - mats[b]).amax());
        }
    }
    Some(worst)
}
