//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `‖∇f‖_∞` falls to this.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iter: 2000,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// The line search could not make progress (usually at roundoff level).
    Stalled,
    /// The objective went below the caller's lower bound.
    BelowBound,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizes `f` from `x0`. `eval(x, grad)` returns `f(x)` and writes the
/// gradient. If `lower_bound` is given, the run stops as soon as a value
/// below it is seen.
pub fn minimize<F>(mut eval: F, x0: Vec<f64>, opts: &LbfgsOptions, lower_bound: Option<f64>) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut f = eval(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let below = |v: f64| lower_bound.is_some_and(|b| v < b);

    let finish = |x, f, g: Vec<f64>, iterations, evaluations, status| {
        let grad_inf = inf_norm(&g);
        LbfgsResult {
            x,
            f,
            grad: g,
            grad_inf,
            iterations,
            evaluations,
            status,
        }
    };

    if below(f) {
        return finish(x, f, g, 0, evaluations, LbfgsStatus::BelowBound);
    }
    for iter in 0..opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return finish(x, f, g, iter, evaluations, LbfgsStatus::Converged);
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let initial = if history.is_empty() {
            1.0 / dot(&g, &g).sqrt().max(1e-300)
        } else {
            1.0
        };
        let search = line_search(&mut eval, &x, f, &dir, slope, initial, opts, lower_bound);
        evaluations += search.1;
        let Some(p) = search.0 else {
            if !history.is_empty() {
                // Drop curvature pairs and retry from steepest descent next round.
                history.clear();
                continue;
            }
            return finish(x, f, g, iter, evaluations, LbfgsStatus::Stalled);
        };
        if below(p.f) {
            return finish(p.x, p.f, p.g, iter + 1, evaluations, LbfgsStatus::BelowBound);
        }
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = p.x;
        f = p.f;
        g = p.g;
    }
    let status = if inf_norm(&g) <= opts.grad_tol {
        LbfgsStatus::Converged
    } else {
        LbfgsStatus::MaxIterations
    };
    finish(x, f, g, opts.max_iter, evaluations, status)
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut a = vec![0.0; history.len()];
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        a[k] = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a[k] * yi);
    }
    if let Some((s, y, _)) = history.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a[k] - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Strong-Wolfe bracketing and zoom. Returns the accepted point, or the best
/// sufficient-decrease point seen if the Wolfe curvature test never passed.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    eval: &mut F,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope0: f64,
    initial: f64,
    opts: &LbfgsOptions,
    lower_bound: Option<f64>,
) -> (Option<Point>, usize)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut evals = 0;
    let mut probe = |alpha: f64, evals: &mut usize| {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        let mut gt = vec![0.0; x.len()];
        let ft = eval(&xt, &mut gt);
        *evals += 1;
        let d = dot(&gt, dir);
        Point { alpha, f: ft, d, x: xt, g: gt }
    };
    let armijo = |p: &Point| p.f <= f0 + opts.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.d.abs() <= -opts.c2 * slope0;
    let mut best: Option<Point> = None;
    let keep_best = |p: &Point, best: &mut Option<Point>| {
        if p.f < f0 && armijo(p) && best.as_ref().is_none_or(|b| p.f < b.f) {
            *best = Some(Point {
                alpha: p.alpha,
                f: p.f,
                d: p.d,
                x: p.x.clone(),
                g: p.g.clone(),
            });
        }
    };

    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        d: slope0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut alpha = initial;
    let (mut lo, mut hi);
    loop {
        let p = probe(alpha, &mut evals);
        if !p.f.is_finite() {
            // Step left the domain of finite values; shrink.
            alpha *= 0.1;
            if evals >= opts.max_line_evals {
                return (best, evals);
            }
            continue;
        }
        if lower_bound.is_some_and(|b| p.f < b) {
            return (Some(p), evals);
        }
        if !armijo(&p) || (prev.alpha > 0.0 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return (Some(p), evals);
        }
        keep_best(&p, &mut best);
        if p.d >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        if evals >= opts.max_line_evals {
            return (best, evals);
        }
        prev = p;
        alpha *= 2.0;
    }

    // Zoom: `lo` satisfies sufficient decrease with the lowest value so far.
    while evals < opts.max_line_evals {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width <= 1e-16 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        let mut trial = cubic_min(&lo, &hi);
        let (left, right) = (a.min(b), a.max(b));
        let margin = 0.1 * width;
        if !trial.is_finite() || trial < left + margin || trial > right - margin {
            trial = 0.5 * (a + b);
        }
        let p = probe(trial, &mut evals);
        if !p.f.is_finite() || !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return (Some(p), evals);
            }
            keep_best(&p, &mut best);
            if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    if lo.alpha > 0.0 && lo.f < f0 {
        keep_best(&lo, &mut best);
    }
    (best, evals)
}

/// Minimizer of the cubic interpolating values and slopes at both ends.
fn cubic_min(a: &Point, b: &Point) -> f64 {
    let (x0, x1) = (a.alpha, b.alpha);
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (x0 - x1);
    let disc = d1 * d1 - a.d * b.d;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    x1 - (x1 - x0) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2)
}
