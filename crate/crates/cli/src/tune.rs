//! Choosing `η2` so the affinity graph has at most `k` connected components.

use anyhow::{Context, Result};
use dssc::dsproj::project;
use dssc::io::{Method, RunConfig};
use dssc::{CsrMatrix, DataMatrix, StochasticAffinity};
use serde::Serialize;

use crate::pipeline::{compute_affinity, projection_options, SelfExpression};

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    sets: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
            sets: n,
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        self.sets -= 1;
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the graph whose edges are the stored positive
/// entries (direction ignored).
pub fn connected_components(a: &CsrMatrix) -> usize {
    let mut uf = UnionFind::new(a.nrows());
    for (i, j, v) in a.iter() {
        if v > 0.0 {
            uf.union(i, j);
        }
    }
    uf.sets
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneStep {
    pub eta2: f64,
    pub components: usize,
}

pub struct TuneResult {
    pub eta2: f64,
    pub components: usize,
    pub affinity: StochasticAffinity,
    pub steps: Vec<TuneStep>,
}

/// Scales `η2` by factors of two from the configured value until the
/// component count crosses `k`, then bisects (geometrically) for
/// `bisections` steps. Returns the smallest `η2` found with at most `k`
/// components, that is the sparsest admissible affinity.
pub fn tune_eta2(cfg: &RunConfig, x: &DataMatrix, bisections: usize) -> Result<TuneResult> {
    let k = cfg.params.k;
    // The self-expression does not depend on η2; compute it once.
    let se = match cfg.method.name {
        Method::Adssc => Some(
            SelfExpression::compute(x, cfg.method.backend, cfg.params.eta1, cfg.params.eta3)
                .context("self-expression stage")?,
        ),
        Method::Jdssc => None,
    };
    let oracle = se.as_ref().map(|s| s.oracle(x)).transpose()?;
    let opts = projection_options(cfg, x.n_points());
    let mut steps = Vec::new();
    let mut solve = |eta2: f64| -> Result<(usize, StochasticAffinity)> {
        let affinity = match &oracle {
            Some(o) => project(o.as_dyn(), eta2, &opts).context("projection stage")?.affinity,
            None => {
                let mut c = cfg.clone();
                c.params.eta2 = eta2;
                compute_affinity(&c, x, 0)?.affinity
            }
        };
        let comps = connected_components(affinity.entries());
        log::info!("eta2 = {eta2:.4e}: {comps} components");
        steps.push(TuneStep { eta2, components: comps });
        Ok((comps, affinity))
    };

    const MAX_DOUBLINGS: usize = 40;
    let start = cfg.params.eta2;
    let (comps, aff) = solve(start)?;
    // `ok` has at most k components, `bad` more.
    let (mut ok, mut bad);
    if comps <= k {
        ok = (start, comps, aff);
        bad = None;
        let mut eta = start;
        for _ in 0..MAX_DOUBLINGS {
            eta /= 2.0;
            let (c, a) = solve(eta)?;
            if c > k {
                bad = Some(eta);
                break;
            }
            ok = (eta, c, a);
        }
    } else {
        bad = Some(start);
        let mut eta = start;
        let mut found = None;
        for _ in 0..MAX_DOUBLINGS {
            eta *= 2.0;
            let (c, a) = solve(eta)?;
            if c <= k {
                found = Some((eta, c, a));
                break;
            }
            bad = Some(eta);
        }
        ok = found.with_context(|| format!("no eta2 up to {eta:.3e} gives at most {k} components"))?;
    }
    if let Some(mut lo) = bad {
        for _ in 0..bisections {
            let mid = (lo * ok.0).sqrt();
            let (c, a) = solve(mid)?;
            if c <= k {
                ok = (mid, c, a);
            } else {
                lo = mid;
            }
        }
    }
    drop(solve);
    Ok(TuneResult {
        eta2: ok.0,
        components: ok.1,
        affinity: ok.2,
        steps,
    })
}
