//! Release gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p dssc-cli --release --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use dssc::dsproj::{
    project, DenseCost, DualPotentials, LsrCost, ProjectOptions, ProjectionMethod, ProjectionProblem,
};
use dssc::io::RunConfig;
use dssc::jdssc::{
    jdssc_solve_with, max_tau, objective_eq5, overlap_bound, split_signed, support_overlap, JdsscOptions, StopRule,
    SUPPORT_THRESHOLD,
};
use dssc::metrics::{hungarian, nnz_per_col};
use dssc::selfexpr::{lsr_dense_matrix, lsr_entries, WoodburyCache, DEFAULT_DENSE_CAP};
use dssc::spectral::{cluster, laplacian, KMeansOptions, LaplacianMode, SpectralOptions};
use dssc::{validate_affinity, CsrMatrix, DataMatrix, DsscParams, SupportPattern};
use dssc_cli::bench::{bench_projection, BenchOptions, Instance, InstanceKind};
use dssc_cli::pipeline::{run_pipeline, PipelineOptions};
use dssc_cli::synth::{synth, SynthSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

/// An affinity kept for the feasibility and Laplacian checks.
struct Produced {
    origin: String,
    a: CsrMatrix,
    k: usize,
}

#[derive(Default)]
struct Pool {
    produced: Vec<Produced>,
    /// Affinities small enough to cluster three times.
    clusterable: Vec<usize>,
}

impl Pool {
    fn add(&mut self, origin: impl Into<String>, a: CsrMatrix, k: usize, cluster: bool) {
        if cluster {
            self.clusterable.push(self.produced.len());
        }
        self.produced.push(Produced { origin: origin.into(), a, k });
    }
}

fn uniform_cost(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random::<f64>())
}

fn gaussian_cost(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    (g.abs() + g.transpose().abs()) * 0.5
}

fn gaussian_data(d: usize, n: usize, rng: &mut ChaCha8Rng) -> DataMatrix {
    let m = DMatrix::from_fn(d, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    DataMatrix::new(m).unwrap().unit_normalize_columns().unwrap()
}

fn log_uniform(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn with_method(method: ProjectionMethod) -> ProjectOptions {
    ProjectOptions { method, ..ProjectOptions::default() }
}

// ---------------------------------------------------------------------------
// Reference projection: exact block-coordinate ascent on the dual to find the
// support, then the optimality conditions solved exactly on it and checked
// everywhere.

/// The `t` with `Σ_k [v_k − t]_+ = 1` (water filling).
fn water_level(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    let mut level = f64::NAN;
    for (k, &x) in v.iter().enumerate() {
        sum += x;
        let t = (sum - 1.0) / (k + 1) as f64;
        if k + 1 == v.len() || v[k + 1] <= t {
            level = t;
            break;
        }
    }
    level
}

/// Potentials `f`, `g` with `Σ_{j∈S_i} (g0_ij − f_i − g_j) = 1` and likewise
/// per column. Each connected component of the support leaves one shift
/// `(f + c, g − c)` free; it is taken from the approximate potentials
/// `(f0, g0)`, which already order the components correctly.
fn solve_on_support(g0: &DMatrix<f64>, s: &[Vec<bool>], near: (&[f64], &[f64])) -> (Vec<f64>, Vec<f64>) {
    let n = g0.nrows();
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let mut b = DVector::<f64>::from_element(2 * n, -1.0);
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if s[i][j] {
                m[(i, i)] += 1.0;
                m[(n + j, n + j)] += 1.0;
                m[(i, n + j)] += 1.0;
                m[(n + j, i)] += 1.0;
                b[i] += g0[(i, j)];
                b[n + j] += g0[(i, j)];
                let (a, c) = (root(&mut parent, i), root(&mut parent, n + j));
                parent[a] = c;
            }
        }
    }
    // The null vectors are +1 on a component's rows and −1 on its columns;
    // adding their outer products makes the system definite.
    let roots: Vec<usize> = (0..2 * n).map(|k| root(&mut parent, k)).collect();
    let sign = |k: usize| if k < n { 1.0 } else { -1.0 };
    for a in 0..2 * n {
        for c in 0..2 * n {
            if roots[a] == roots[c] {
                m[(a, c)] += sign(a) * sign(c);
            }
        }
    }
    let sol = m.cholesky().expect("definite after gauge fixing").solve(&b);
    let mut f: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let mut g: Vec<f64> = sol.rows(n, n).iter().copied().collect();
    // Least-squares shift per component towards the approximate potentials.
    let mut num = vec![0.0; 2 * n];
    let mut cnt = vec![0.0; 2 * n];
    for k in 0..2 * n {
        let r = roots[k];
        num[r] += if k < n { near.0[k] - f[k] } else { g[k - n] - near.1[k - n] };
        cnt[r] += 1.0;
    }
    for k in 0..2 * n {
        let r = roots[k];
        let c = num[r] / cnt[r];
        if k < n {
            f[k] += c;
        } else {
            g[k - n] -= c;
        }
    }
    (f, g)
}

/// Euclidean projection of `cost/η2` onto the doubly stochastic matrices,
/// which is the minimizer of `−⟨cost, A⟩ + (η2/2)‖A‖²` over them.
fn reference_projection(cost: &DMatrix<f64>, eta2: f64) -> Option<DMatrix<f64>> {
    const CERT_TOL: f64 = 1e-10;
    let n = cost.nrows();
    let g0 = cost / eta2;
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut last_support: Option<Vec<Vec<bool>>> = None;
    for sweep in 1..=20_000 {
        for i in 0..n {
            for j in 0..n {
                buf[j] = g0[(i, j)] - g[j];
            }
            f[i] = water_level(&mut buf);
        }
        for j in 0..n {
            for i in 0..n {
                buf[i] = g0[(i, j)] - f[i];
            }
            g[j] = water_level(&mut buf);
        }
        if sweep % 20 != 0 {
            continue;
        }
        let support: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| g0[(i, j)] - f[i] - g[j] > 0.0).collect()).collect();
        if last_support.as_ref() == Some(&support) {
            continue;
        }
        let (f, g) = solve_on_support(&g0, &support, (&f, &g));
        let a = DMatrix::from_fn(n, n, |i, j| g0[(i, j)] - f[i] - g[j]);
        let mut ok = true;
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                ok &= if support[i][j] { v >= -CERT_TOL } else { v <= CERT_TOL };
            }
        }
        let clipped = DMatrix::from_fn(n, n, |i, j| if support[i][j] { a[(i, j)].max(0.0) } else { 0.0 });
        for i in 0..n {
            ok &= (clipped.row(i).sum() - 1.0).abs() <= 1e-9 && (clipped.column(i).sum() - 1.0).abs() <= 1e-9;
        }
        if ok {
            return Some(clipped);
        }
        last_support = Some(support);
    }
    None
}

fn criterion_1(pool: &mut Pool) -> Outcome {
    let sizes = [10, 50, 200];
    let weights = [0.01, 0.1, 1.0];
    let mut worst = [0.0f64; 3];
    let mut failures = Vec::new();
    for t in 0..100u64 {
        let n = sizes[t as usize % 3];
        let eta2 = weights[(t as usize / 3) % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
        let c = if t % 2 == 0 { uniform_cost(n, &mut rng) } else { gaussian_cost(n, &mut rng) };
        let cost = DenseCost::new(c.clone()).unwrap();
        let active = project(&cost, eta2, &with_method(ProjectionMethod::ActiveSet));
        let dual = project(&cost, eta2, &with_method(ProjectionMethod::Dual));
        let (active, dual) = match (active, dual) {
            (Ok(a), Ok(d)) => (a.affinity.into_entries(), d.affinity.into_entries()),
            (a, d) => {
                failures.push(format!("#{t}: solver error {:?} {:?}", a.err(), d.err()));
                continue;
            }
        };
        let Some(reference) = reference_projection(&c, eta2) else {
            failures.push(format!("#{t}: reference not certified"));
            continue;
        };
        let reference = CsrMatrix::from_dense(&reference, 0.0);
        let d = [
            active.max_abs_diff(&dual),
            active.max_abs_diff(&reference),
            dual.max_abs_diff(&reference),
        ];
        for (w, v) in worst.iter_mut().zip(d) {
            *w = w.max(v);
        }
        if d.iter().any(|&v| v > 1e-6) {
            failures.push(format!("#{t} (n={n}, eta2={eta2}): {:.2e} {:.2e} {:.2e}", d[0], d[1], d[2]));
        }
        pool.add(format!("c1 active #{t}"), active, 3, n <= 50);
        pool.add(format!("c1 dual #{t}"), dual, 3, false);
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "100 instances; max |active-dual| {:.1e}, |active-ref| {:.1e}, |dual-ref| {:.1e}{}",
            worst[0],
            worst[1],
            worst[2],
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

fn criterion_2(pool: &Pool) -> Outcome {
    let bad: Vec<String> = pool
        .produced
        .iter()
        .filter_map(|p| {
            let r = validate_affinity(&p.a, 1e-4);
            (!r.passed).then(|| format!("{} (row {:.1e}, col {:.1e})", p.origin, r.max_row_dev, r.max_col_dev))
        })
        .collect();
    let worst = pool
        .produced
        .iter()
        .map(|p| {
            let r = validate_affinity(&p.a, 1e-4);
            r.max_row_dev.max(r.max_col_dev)
        })
        .fold(0.0f64, f64::max);
    Outcome::new(
        bad.is_empty() && !pool.produced.is_empty(),
        format!("{} affinities, worst sum deviation {worst:.1e}{}", pool.produced.len(), if bad.is_empty() {
            String::new()
        } else {
            format!("; infeasible: {}", bad.join(", "))
        }),
    )
}

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut disjoint_overlaps = 0usize;
    let mut overlaps = 0usize;
    let mut unconverged = 0usize;
    for t in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + t);
        let d = rng.random_range(3..=5);
        let n = rng.random_range(d + 3..=12);
        let x = gaussian_data(d, n, &mut rng);
        let eta1 = log_uniform(0.2, 5.0, &mut rng);
        let disjoint = t < 100;
        let eta2 = if (100..150).contains(&t) { log_uniform(0.3, 3.0, &mut rng) } else { log_uniform(0.02, 1.0, &mut rng) };
        // Overlaps need η2·A_ij > |C_ij| + η3/η1, so half the second regime
        // drops the ℓ1 term and raises η2 to make them common.
        let factor = match t {
            0..100 => rng.random_range(1.0..2.0),
            100..150 => 0.0,
            _ => rng.random_range(0.0..0.9),
        };
        let mut params = DsscParams::new(eta1, eta2, factor * eta1 * eta2, 2);
        params.tau = 0.99 * max_tau(&x, params.rho);
        let opts = JdsscOptions {
            stop: StopRule { tol: Some(1e-8), max_iter: 2_000_000 },
            ..JdsscOptions::default()
        };
        let r = match jdssc_solve_with(&x, &params, &opts, None) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("#{t}: {e}"));
                continue;
            }
        };
        if !r.converged {
            unconverged += 1;
            failures.push(format!("#{t}: not converged ({:.1e})", r.residuals.max()));
        }
        let (cp, cq) = (&r.state.cp, &r.state.cq);
        let overlap = support_overlap(cp, cq, SUPPORT_THRESHOLD);
        if disjoint {
            disjoint_overlaps += overlap.len();
            if !overlap.is_empty() {
                failures.push(format!("#{t}: {} overlapping entries", overlap.len()));
            }
        } else {
            let bound = overlap_bound(&params);
            overlaps += overlap.len();
            for (i, j) in overlap {
                let m = cp[(i, j)].max(cq[(i, j)]);
                worst_ratio = worst_ratio.max(m / bound);
                if m >= bound + 1e-8 {
                    failures.push(format!("#{t}: ({i},{j}) = {m:.3e} vs bound {bound:.3e}"));
                }
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "100 disjoint-regime solves ({disjoint_overlaps} overlaps), 100 overlap-regime solves ({overlaps} overlaps, largest / bound {worst_ratio:.3}), {unconverged} unconverged{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn criterion_4(pool: &mut Pool) -> Outcome {
    let (x, _) = synth(&SynthSpec::ten_in_fifteen(40, 0.01, 0)).unwrap();
    let mut params = DsscParams::new(1.0, 0.05, 0.0, 10);
    let c = lsr_dense_matrix(&x, params.eta1, true, DEFAULT_DENSE_CAP).unwrap();
    let a = project(&DenseCost::new(c.abs()).unwrap(), params.eta2, &ProjectOptions::default())
        .unwrap()
        .affinity
        .into_entries();
    let (cp, cq) = split_signed(&c);
    let one_step = objective_eq5(&cp, &cq, &a.to_dense(), &x, &params);
    pool.add("c4 one-step", a, 10, true);

    params.tau = 0.99 * max_tau(&x, params.rho);
    let opts = JdsscOptions { trace_every: 1000, ..JdsscOptions::default() };
    let r = jdssc_solve_with(&x, &params, &opts, None).unwrap();
    let tail = match r.trace.as_slice() {
        [.., a, b] => a.objective - b.objective,
        _ => f64::NAN,
    };
    let gap = (one_step - r.objective) / r.objective;
    let detail = format!(
        "one-step {one_step:.6}, joint {:.6} after {} iterations (converged {}, last 1000 iterations -{tail:.1e}); gap {:.3}%",
        r.objective,
        r.iterations,
        r.converged,
        100.0 * gap
    );
    pool.add("c4 joint", r.affinity.into_entries(), 10, true);
    Outcome::new(r.converged && gap <= 0.02, detail)
}

fn criterion_5(pool: &mut Pool) -> Outcome {
    let (x, truth) = synth(&SynthSpec::ten_in_fifteen(40, 0.0, 0)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.params.k = 10;
    let out = match run_pipeline(&cfg, &x, Some(&truth), &PipelineOptions::default()) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("pipeline failed: {e:#}")),
    };
    let m = out.report.metrics.clone().expect("truth given");
    let spe = m.spe.unwrap_or(f64::NAN);
    pool.add("c5 pipeline", out.affinity.into_entries(), 10, true);
    Outcome::new(
        m.acc >= 0.99 && spe <= 0.01,
        format!(
            "defaults (eta1 {}, eta2 {}, eta3 {}): ACC {:.4}, SPE {spe:.4}, NMI {:.4}",
            cfg.params.eta1, cfg.params.eta2, cfg.params.eta3, m.acc, m.nmi
        ),
    )
}

fn criterion_6(pool: &Pool) -> Outcome {
    let modes = [LaplacianMode::Unnormalized, LaplacianMode::Symmetric, LaplacianMode::RandomWalk];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for p in &pool.produced {
        let laps: Vec<_> = modes.iter().map(|&m| laplacian(&p.a, m, 1e-4).unwrap().matrix).collect();
        let d = laps[0].max_abs_diff(&laps[1]).max(laps[0].max_abs_diff(&laps[2]));
        worst = worst.max(d);
        if d > 1e-12 {
            failures.push(format!("{}: Laplacians differ by {d:.1e}", p.origin));
        }
    }
    for &idx in &pool.clusterable {
        let p = &pool.produced[idx];
        let labels: Vec<Vec<usize>> = modes
            .iter()
            .map(|&m| {
                let opts = SpectralOptions {
                    laplacian: m,
                    kmeans: KMeansOptions { seed: 11, ..KMeansOptions::default() },
                    ..SpectralOptions::default()
                };
                cluster(&p.a, p.k, &opts).unwrap().labels.labels
            })
            .collect();
        if labels[0] != labels[1] || labels[0] != labels[2] {
            failures.push(format!("{}: labels differ between Laplacians", p.origin));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{} affinities, max Laplacian difference {worst:.1e}; labels compared on {}{}",
            pool.produced.len(),
            pool.clusterable.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn criterion_7(pool: &mut Pool) -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for n in [5, 10, 20, 30, 50] {
        for s in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + 10 * n as u64 + s);
            let c = uniform_cost(n, &mut rng);
            let neg: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| -c[(i, j)]).collect()).collect();
            let assignment = hungarian(&neg);
            let a = match project(&DenseCost::new(c).unwrap(), 1e-6, &ProjectOptions::default()) {
                Ok(o) => o.affinity.into_entries(),
                Err(e) => {
                    failures.push(format!("n={n} #{s}: {e}"));
                    continue;
                }
            };
            count += 1;
            let support: Vec<(usize, usize)> = a.iter().filter(|t| t.2 > 1e-9).map(|t| (t.0, t.1)).collect();
            let expected: Vec<(usize, usize)> = assignment.iter().enumerate().map(|(i, &j)| (i, j)).collect();
            let per_col = nnz_per_col(&a, 1e-9);
            if support != expected || per_col != 1.0 {
                failures.push(format!("n={n} #{s}: support differs from assignment (nnz/col {per_col})"));
            }
            pool.add(format!("c7 n={n} #{s}"), a, 2, n <= 20);
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{count} costs at eta2 = 1e-6{}",
            if failures.is_empty() { ", every support is the optimal assignment".to_string() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

/// Coordinate `k` of the stacked potentials `[α; β]`.
fn slot(p: &mut DualPotentials, k: usize) -> &mut f64 {
    let n = p.alpha.len();
    if k < n { &mut p.alpha[k] } else { &mut p.beta[k - n] }
}

fn criterion_8() -> Outcome {
    const H: f64 = 1e-6;
    let mut worst = 0.0f64;
    for t in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + t);
        let n = rng.random_range(3..30);
        let eta2 = log_uniform(0.1, 1.0, &mut rng);
        let cost = DenseCost::new(uniform_cost(n, &mut rng)).unwrap();
        let support = if t % 2 == 0 {
            SupportPattern::full(n, true)
        } else {
            let rows = (0..n)
                .map(|i| (0..n).filter(|&j| j == (i + 1) % n || rng.random::<f64>() < 0.4).collect())
                .collect();
            SupportPattern::new(n, rows, true).unwrap()
        };
        let p = ProjectionProblem::restricted(&cost, &support, eta2).unwrap();
        let mut pots = DualPotentials {
            alpha: (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
            beta: (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
        };
        let ev = dssc::dsproj::dual_objective_grad(&p, &pots);
        for k in 0..2 * n {
            let x0 = *slot(&mut pots, k);
            *slot(&mut pots, k) = x0 + H;
            let up = p.evaluate(&pots).objective;
            *slot(&mut pots, k) = x0 - H;
            let down = p.evaluate(&pots).objective;
            *slot(&mut pots, k) = x0;
            let fd = (up - down) / (2.0 * H);
            let g = if k < n { ev.grad_alpha[k] } else { ev.grad_beta[k - n] };
            worst = worst.max((fd - g).abs());
        }
    }
    Outcome::new(worst <= 1e-5, format!("50 problems, max |fd - grad| {worst:.2e}"))
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for t in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + t);
        let n = rng.random_range(5..=300);
        let d = rng.random_range(2..n.min(40));
        let gamma = log_uniform(0.01, 10.0, &mut rng);
        let x = gaussian_data(d, n, &mut rng);
        let support = if t % 2 == 0 {
            SupportPattern::full(n, true)
        } else {
            let rows = (0..n).map(|_| (0..n).filter(|_| rng.random::<f64>() < 0.2).collect()).collect();
            SupportPattern::new(n, rows, true).unwrap()
        };
        let cache = WoodburyCache::new(&x, gamma).unwrap();
        let got = lsr_entries(&cache, &x, &support).unwrap();
        let xtx = x.values().transpose() * x.values();
        let shifted = &xtx + DMatrix::<f64>::identity(n, n) * gamma;
        let oracle = shifted.cholesky().expect("positive definite").solve(&xtx);
        let scale = support.iter().map(|(i, j)| oracle[(i, j)].abs()).fold(0.0f64, f64::max);
        let err = got.iter().map(|(i, j, v)| (v - oracle[(i, j)]).abs()).fold(0.0f64, f64::max) / scale;
        worst = worst.max(err);
        if err >= 1e-8 {
            failures.push(format!("#{t} (n={n}, d={d}, gamma={gamma:.3}): {err:.1e}"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "50 instances, max relative error {worst:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn criterion_10(pool: &mut Pool) -> Outcome {
    let mut worst = 0usize;
    let mut failures = Vec::new();
    let mut count = 0;
    for per in [20, 50, 100] {
        for sigma in [0.0, 0.01] {
            let (x, _) = synth(&SynthSpec::ten_in_fifteen(per, sigma, per as u64)).unwrap();
            for eta1 in [1.0, 10.0] {
                let cache = WoodburyCache::new(&x, eta1).unwrap();
                let cost = LsrCost::new(&x, &cache).unwrap();
                for eta2 in [0.001, 0.01] {
                    let tag = format!("n={} sigma={sigma} eta1={eta1} eta2={eta2}", 10 * per);
                    match project(&cost, eta2, &ProjectOptions::default()) {
                        Ok(o) => {
                            let outer = o.outer_iterations.unwrap_or(usize::MAX);
                            worst = worst.max(outer);
                            if outer > 5 {
                                failures.push(format!("{tag}: {outer} outer iterations"));
                            }
                            pool.add(format!("c10 {tag}"), o.affinity.into_entries(), 10, false);
                        }
                        Err(e) => failures.push(format!("{tag}: {e}")),
                    }
                    count += 1;
                }
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{count} LSR costs, at most {worst} outer iterations{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn criterion_11(pool: &mut Pool) -> Outcome {
    let instances: Vec<Instance> = [InstanceKind::D3, InstanceKind::D4]
        .into_iter()
        .flat_map(|kind| [500, 1000].map(|n| Instance { kind, n }))
        .collect();
    let opts = BenchOptions {
        warmup: 0,
        repeats: 3,
        keep_matrices: true,
        ..BenchOptions::default()
    };
    // Alternating projections run for minutes at n = 1000; one timing is plenty.
    let once = BenchOptions { repeats: 1, keep_matrices: false, ..opts };
    let rows = bench_projection(&instances, &[ProjectionMethod::ActiveSet, ProjectionMethod::Dual], &opts)
        .and_then(|mut r| {
            r.extend(bench_projection(&instances, &[ProjectionMethod::AltProj], &once)?);
            Ok(r)
        });
    let rows = match rows {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("benchmark failed: {e:#}")),
    };
    let mut ok = true;
    let mut lines = Vec::new();
    for inst in &instances {
        let name = inst.to_string();
        let row = |m: &str| rows.iter().find(|r| r.instance == name && r.method == m).unwrap();
        let (a, d, p) = (row("active-set"), row("dual"), row("altproj"));
        let ordered = a.converged && d.converged && a.seconds < d.seconds && (!p.converged || d.seconds < p.seconds);
        ok &= ordered;
        let alt = if p.converged { format!("{:.3}s", p.seconds) } else { "NC".to_string() };
        lines.push(format!("{name} {:.3}s/{:.3}s/{alt}{}", a.seconds, d.seconds, if ordered { "" } else { " (out of order)" }));
        for r in [a, d] {
            if let Some(m) = &r.matrix {
                pool.add(format!("c11 {name} {}", r.method), CsrMatrix::from_dense(m, 0.0), 10, false);
            }
        }
    }
    Outcome::new(ok, format!("active-set/dual/altproj: {}", lines.join(", ")))
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored.
    let mut pool = Pool::default();
    let mut failed = Vec::new();
    // ACCEPTANCE_ONLY=1,4 runs a subset (criteria 2 and 6 then see fewer affinities).
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut run = |id: usize, limit: Option<f64>, f: &mut dyn FnMut() -> Outcome| {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            return;
        }
        let start = Instant::now();
        let mut out = f();
        let secs = start.elapsed().as_secs_f64();
        if let Some(l) = limit.filter(|&l| secs > l) {
            out.passed = false;
            out.detail.push_str(&format!("; over the {l:.0}s limit"));
        }
        println!(
            "criterion {id:>2}: {} {} ({secs:.1}s)",
            if out.passed { "PASS" } else { "FAIL" },
            out.detail
        );
        if !out.passed {
            failed.push(id);
        }
    };
    run(1, Some(120.0), &mut || criterion_1(&mut pool));
    run(3, None, &mut criterion_3);
    run(4, Some(600.0), &mut || criterion_4(&mut pool));
    run(5, None, &mut || criterion_5(&mut pool));
    run(7, None, &mut || criterion_7(&mut pool));
    run(8, None, &mut criterion_8);
    run(9, None, &mut criterion_9);
    run(10, None, &mut || criterion_10(&mut pool));
    run(11, None, &mut || criterion_11(&mut pool));
    run(2, None, &mut || criterion_2(&pool));
    run(6, None, &mut || criterion_6(&pool));

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        failed.sort_unstable();
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
