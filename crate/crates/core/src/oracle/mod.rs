//! Exact benchmarks on tiny finite-support instances: `OPT(P,γ)` by
//! enumeration, `OPT(P)` over a γ grid, and weak-duality checks.

pub mod expr;
pub mod suite;

use std::path::Path;

use serde::Deserialize;

use crate::error::{check_dim, Error, Result};
use crate::problem::{dual_price, BoundSpec, ContextDraw, DualVector, Problem};
use crate::rng::SimRng;
pub use expr::Expr;

pub const MAX_HORIZON: usize = 6;
pub const DEFAULT_NODE_BUDGET: u128 = 200_000_000;
pub const DEFAULT_GAMMA_POINTS: usize = 1001;
pub const ARGMAX_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

/// One context: probability, revenue and the `K` cost expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyContext {
    pub prob: f64,
    pub f: Expr,
    pub c: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    name: String,
    horizon: usize,
    contexts: Vec<TinyContext>,
    grid: Vec<f64>,
    bounds: BoundSpec,
    node_budget: u128,
    rev_bound: f64,
    cost_bound: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    lo: f64,
    hi: f64,
    step: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextSpec {
    prob: f64,
    f: String,
    c: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureFile {
    name: String,
    horizon: usize,
    b: Vec<f64>,
    alpha: Vec<f64>,
    grid: GridSpec,
    node_budget: Option<u128>,
    contexts: Vec<ContextSpec>,
}

/// Decisions `lo, lo + step, …` up to `hi`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && step > 0.0) {
        return Err(Error::Config(format!(
            "bad decision grid [{lo}, {hi}] step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

impl TinyInstance {
    pub fn new(
        name: impl Into<String>,
        horizon: usize,
        contexts: Vec<TinyContext>,
        grid: Vec<f64>,
        bounds: BoundSpec,
    ) -> Result<Self> {
        if horizon == 0 || horizon > MAX_HORIZON {
            return Err(Error::Config(format!(
                "horizon {horizon} outside 1..={MAX_HORIZON}"
            )));
        }
        if contexts.is_empty() {
            return Err(Error::Config("at least one context is required".into()));
        }
        if grid.is_empty() {
            return Err(Error::Config("decision grid is empty".into()));
        }
        let total: f64 = contexts.iter().map(|c| c.prob).sum();
        if contexts.iter().any(|c| !(c.prob >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "context probabilities must be non-negative and sum to 1, got {total}"
            )));
        }
        for c in &contexts {
            check_dim(bounds.len(), c.c.len())?;
        }
        let mut rev_bound = 0.0f64;
        let mut cost_bound = 0.0f64;
        for ctx in &contexts {
            for &z in &grid {
                rev_bound = rev_bound.max(ctx.f.eval(z).abs());
                cost_bound = ctx.c.iter().fold(cost_bound, |m, e| m.max(e.eval(z).abs()));
            }
        }
        Ok(TinyInstance {
            name: name.into(),
            horizon,
            contexts,
            grid,
            bounds,
            node_budget: DEFAULT_NODE_BUDGET,
            rev_bound,
            cost_bound: cost_bound.max(f64::MIN_POSITIVE),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: FixtureFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let contexts = file
            .contexts
            .into_iter()
            .map(|c| {
                Ok(TinyContext {
                    prob: c.prob,
                    f: c.f.parse()?,
                    c: c.c.iter().map(|s| s.parse()).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = uniform_grid(file.grid.lo, file.grid.hi, file.grid.step)?;
        let bounds = BoundSpec::new(file.b, file.alpha)?;
        let mut inst = Self::new(file.name, file.horizon, contexts, grid, bounds)?;
        if let Some(budget) = file.node_budget {
            inst.node_budget = budget;
        }
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn with_node_budget(mut self, budget: u128) -> Self {
        self.node_budget = budget;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn contexts(&self) -> &[TinyContext] {
        &self.contexts
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn f(&self, w: usize, zi: usize) -> f64 {
        self.contexts[w].f.eval(self.grid[zi])
    }

    pub fn c(&self, w: usize, zi: usize) -> Vec<f64> {
        let z = self.grid[zi];
        self.contexts[w].c.iter().map(|e| e.eval(z)).collect()
    }

    /// `E_P[f(z;w)]` and `E_P[c(z;w)]` at grid point `zi`.
    fn expected(&self, zi: usize) -> (f64, Vec<f64>) {
        let k = self.bounds.len();
        let mut ef = 0.0;
        let mut ec = vec![0.0; k];
        for (w, ctx) in self.contexts.iter().enumerate() {
            ef += ctx.prob * self.f(w, zi);
            for (acc, v) in ec.iter_mut().zip(self.c(w, zi)) {
                *acc += ctx.prob * v;
            }
        }
        (ef, ec)
    }

    /// Interpolated `rev` and `cost` tables, indexed `[w][zi]`.
    fn tables(&self, gamma: f64) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let n = self.grid.len();
        let expected: Vec<(f64, Vec<f64>)> = (0..n).map(|zi| self.expected(zi)).collect();
        let mut rev = Vec::with_capacity(self.contexts.len());
        let mut cost = Vec::with_capacity(self.contexts.len());
        for w in 0..self.contexts.len() {
            rev.push(
                (0..n)
                    .map(|zi| (1.0 - gamma) * self.f(w, zi) + gamma * expected[zi].0)
                    .collect(),
            );
            cost.push(
                (0..n)
                    .map(|zi| {
                        self.c(w, zi)
                            .iter()
                            .zip(&expected[zi].1)
                            .map(|(c, e)| (1.0 - gamma) * c + gamma * e)
                            .collect()
                    })
                    .collect(),
            );
        }
        (rev, cost)
    }
}

/// Multisets of `t` contexts out of `m`, as non-decreasing index vectors, with
/// their multinomial probability.
fn multisets(probs: &[f64], t: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(m: usize, t: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(m, t, i, cur, out);
            cur.pop();
        }
    }
    let mut seqs = Vec::new();
    rec(probs.len(), t, 0, &mut Vec::new(), &mut seqs);
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    seqs.into_iter()
        .map(|s| {
            let mut counts = vec![0usize; probs.len()];
            s.iter().for_each(|&i| counts[i] += 1);
            let coef = fact(t) / counts.iter().map(|&c| fact(c)).product::<f64>();
            let p = counts
                .iter()
                .zip(probs)
                .map(|(&c, &p)| p.powi(c as i32))
                .product::<f64>();
            (s, coef * p)
        })
        .collect()
}

struct Search<'a> {
    seq: &'a [usize],
    rev: &'a [Vec<f64>],
    cost: &'a [Vec<Vec<f64>>],
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Suffix sums over remaining periods of per-context extremes.
    rev_tail: Vec<f64>,
    cost_min_tail: Vec<Vec<f64>>,
    cost_max_tail: Vec<Vec<f64>>,
    best: f64,
    nodes: u128,
    budget: u128,
}

impl Search<'_> {
    fn run(&mut self, t: usize, rev: f64, cost: &mut Vec<f64>) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Error::Capacity {
                needed: self.nodes,
                budget: self.budget,
            });
        }
        let k = cost.len();
        if t == self.seq.len() {
            let ok = (0..k).all(|j| {
                cost[j] >= self.lower[j] - FEAS_TOL && cost[j] <= self.upper[j] + FEAS_TOL
            });
            if ok && rev > self.best {
                self.best = rev;
            }
            return Ok(());
        }
        if rev + self.rev_tail[t] <= self.best {
            return Ok(());
        }
        let out_of_reach = (0..k).any(|j| {
            cost[j] + self.cost_max_tail[t][j] < self.lower[j] - FEAS_TOL
                || cost[j] + self.cost_min_tail[t][j] > self.upper[j] + FEAS_TOL
        });
        if out_of_reach {
            return Ok(());
        }
        let w = self.seq[t];
        for zi in 0..self.rev[w].len() {
            cost.iter_mut()
                .zip(&self.cost[w][zi])
                .for_each(|(a, v)| *a += v);
            let r = self.run(t + 1, rev + self.rev[w][zi], cost);
            cost.iter_mut()
                .zip(&self.cost[w][zi])
                .for_each(|(a, v)| *a -= v);
            r?;
        }
        Ok(())
    }
}

/// `OPT(P,γ)`; `-∞` when some arrival sequence of positive probability has no
/// feasible decision sequence.
pub fn opt_gamma(inst: &TinyInstance, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma = {gamma} must lie in [0, 1]")));
    }
    let (rev, cost) = inst.tables(gamma);
    let k = inst.bounds.len();
    let t_count = inst.horizon;
    let lower: Vec<f64> = (0..k)
        .map(|j| {
            inst.bounds
                .lower_target(j, t_count)
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    let upper: Vec<f64> = (0..k)
        .map(|j| inst.bounds.upper_target(j, t_count))
        .collect();
    let probs: Vec<f64> = inst.contexts.iter().map(|c| c.prob).collect();
    let mut nodes = 0u128;
    let mut total = 0.0;
    for (seq, p) in multisets(&probs, t_count) {
        if p == 0.0 {
            continue;
        }
        let mut rev_tail = vec![0.0; t_count + 1];
        let mut cmin = vec![vec![0.0; k]; t_count + 1];
        let mut cmax = vec![vec![0.0; k]; t_count + 1];
        for t in (0..t_count).rev() {
            let w = seq[t];
            rev_tail[t] =
                rev_tail[t + 1] + rev[w].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..k {
                let col = cost[w].iter().map(|c| c[j]);
                cmin[t][j] = cmin[t + 1][j] + col.clone().fold(f64::INFINITY, f64::min);
                cmax[t][j] = cmax[t + 1][j] + col.fold(f64::NEG_INFINITY, f64::max);
            }
        }
        let mut search = Search {
            seq: &seq,
            rev: &rev,
            cost: &cost,
            lower: lower.clone(),
            upper: upper.clone(),
            rev_tail,
            cost_min_tail: cmin,
            cost_max_tail: cmax,
            best: f64::NEG_INFINITY,
            nodes,
            budget: inst.node_budget,
        };
        search.run(0, 0.0, &mut vec![0.0; k])?;
        nodes = search.nodes;
        if search.best == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += p * search.best;
    }
    Ok(total)
}

/// `OPT(P)` over a uniform γ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub value: f64,
    /// Every grid γ within [`ARGMAX_TOL`] of the best value.
    pub argmax: Vec<f64>,
    pub curve: Vec<(f64, f64)>,
}

pub fn gamma_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn opt_benchmark(inst: &TinyInstance, gamma_points: usize) -> Result<Benchmark> {
    if gamma_points == 0 {
        return Err(Error::Config("gamma grid needs at least one point".into()));
    }
    let curve = gamma_grid(gamma_points)
        .into_iter()
        .map(|g| opt_gamma(inst, g).map(|v| (g, v)))
        .collect::<Result<Vec<_>>>()?;
    let value = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let argmax = curve
        .iter()
        .filter(|(_, v)| *v == value || *v >= value - ARGMAX_TOL)
        .map(|(g, _)| *g)
        .collect();
    Ok(Benchmark {
        value,
        argmax,
        curve,
    })
}

/// `D(λ) = E_P[max_z f(z;w) − λᵀc(z;w)] + p(λ)` with the max over the grid.
pub fn dual_value(inst: &TinyInstance, lambda: &DualVector) -> Result<f64> {
    let p = dual_price(lambda, &inst.bounds)?;
    let phi: f64 = inst
        .contexts
        .iter()
        .enumerate()
        .map(|(w, ctx)| {
            let best = (0..inst.grid.len())
                .map(|zi| inst.f(w, zi) - lambda.dot(&inst.c(w, zi)))
                .fold(f64::NEG_INFINITY, f64::max);
            ctx.prob * best
        })
        .sum();
    Ok(phi + p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub opt: f64,
    /// `T·D(λ)` per supplied λ.
    pub bounds: Vec<f64>,
    pub failures: usize,
    /// Index and value of the smallest bound.
    pub tightest: Option<(usize, f64)>,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn gap(&self) -> Option<f64> {
        self.tightest.map(|(_, v)| v - self.opt)
    }
}

/// Checks `OPT(P) ≤ T·D(λ)` for every λ, tolerance `1e-9`.
pub fn weak_duality_check(
    inst: &TinyInstance,
    opt: f64,
    lambdas: &[DualVector],
) -> Result<DualityReport> {
    let t = inst.horizon as f64;
    let bounds = lambdas
        .iter()
        .map(|l| dual_value(inst, l).map(|d| t * d))
        .collect::<Result<Vec<_>>>()?;
    let failures = bounds.iter().filter(|&&b| !(opt <= b + 1e-9)).count();
    let tightest =
        bounds
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some(b) if b.1 <= v => Some(b),
                _ => Some((i, v)),
            });
    Ok(DualityReport {
        opt,
        bounds,
        failures,
        tightest,
    })
}

impl Problem for TinyInstance {
    /// Context index.
    type Context = usize;
    /// Grid index.
    type Decision = usize;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn bounds(&self) -> &BoundSpec {
        &self.bounds
    }

    fn rev_bound(&self) -> f64 {
        self.rev_bound
    }

    fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    fn theta_star(&self) -> &[f64] {
        &[]
    }

    fn draw(&self, _t: usize, rng: &mut SimRng) -> ContextDraw<usize> {
        use rand::Rng;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, c) in self.contexts.iter().enumerate() {
            acc += c.prob;
            if u < acc {
                return ContextDraw::exact(i);
            }
        }
        ContextDraw::exact(self.contexts.len() - 1)
    }

    fn revenue(&self, &zi: &usize, _theta: &[f64], &w: &usize) -> f64 {
        self.f(w, zi)
    }

    fn cost(&self, &zi: &usize, _theta: &[f64], &w: &usize) -> Vec<f64> {
        self.c(w, zi)
    }

    fn oracle(&self, lambda: &DualVector, _theta: &[f64], &w: &usize) -> Result<usize> {
        (0..self.grid.len())
            .map(|zi| (zi, self.f(w, zi) - lambda.dot(&self.c(w, zi))))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(zi, _)| zi)
            .ok_or_else(|| Error::Infeasible("empty decision grid".into()))
    }

    fn digest(&self, &zi: &usize) -> String {
        crate::fmt::sig9(self.grid[zi])
    }

    fn context_id(&self, &w: &usize) -> u64 {
        w as u64
    }
}

/// Names of the bundled fixtures.
pub const FIXTURES: [&str; 5] = [
    "infinite-solutions",
    "no-solution",
    "gamma-half",
    "gamma-zero",
    "gamma-one",
];

pub fn fixture_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "infinite-solutions" => include_str!("../../fixtures/infinite-solutions.toml"),
        "no-solution" => include_str!("../../fixtures/no-solution.toml"),
        "gamma-half" => include_str!("../../fixtures/gamma-half.toml"),
        "gamma-zero" => include_str!("../../fixtures/gamma-zero.toml"),
        "gamma-one" => include_str!("../../fixtures/gamma-one.toml"),
        _ => return None,
    })
}

pub fn fixture(name: &str) -> Result<TinyInstance> {
    let src = fixture_source(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown fixture `{name}`; available: {}",
            FIXTURES.join(", ")
        ))
    })?;
    TinyInstance::from_toml(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiset_probabilities_sum_to_one() {
        let m = multisets(&[0.2, 0.3, 0.5], 4);
        assert_eq!(m.len(), 15);
        let total: f64 = m.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_endpoints() {
        let g = uniform_grid(0.0, 1.0, 0.001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 0.0);
        assert!((g[1000] - 1.0).abs() < 1e-12);
        assert_eq!(gamma_grid(1001)[500], 0.5);
    }

    #[test]
    fn bundled_fixtures_parse() {
        for name in FIXTURES {
            let f = fixture(name).unwrap();
            assert_eq!(f.name(), name);
        }
        assert!(fixture("nope").is_err());
    }

    #[test]
    fn capacity_is_reported() {
        let inst = fixture("gamma-half").unwrap().with_node_budget(10);
        assert!(matches!(opt_gamma(&inst, 0.5), Err(Error::Capacity { .. })));
    }

    #[test]
    fn rejects_bad_probabilities() {
        let ctx = |p| TinyContext {
            prob: p,
            f: Expr::Z,
            c: vec![Expr::Z],
        };
        let b = BoundSpec::new(vec![1.0], vec![0.5]).unwrap();
        assert!(TinyInstance::new("x", 1, vec![ctx(0.5), ctx(0.6)], vec![0.0], b.clone()).is_err());
        assert!(TinyInstance::new("x", 7, vec![ctx(1.0)], vec![0.0], b.clone()).is_err());
        assert!(TinyInstance::new("x", 1, vec![ctx(1.0)], vec![], b).is_err());
    }
}
