//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use pacer_core::oracle::TinyInstance;
use pacer_core::problem::Problem;

/// Minimizes a convex `f` on `[lo, hi]` by repeated 41-point grid refinement.
pub fn grid_argmin(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const POINTS: usize = 41;
    let (floor, ceil) = (lo, hi);
    for _ in 0..80 {
        let step = (hi - lo) / (POINTS - 1) as f64;
        let (best, _) = (0..POINTS)
            .map(|i| {
                let x = lo + step * i as f64;
                (i, f(x))
            })
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        let x = lo + step * best as f64;
        lo = (x - step).max(floor);
        hi = (x + step).min(ceil);
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Best total of any subset of periods whose action count `n` satisfies
/// `T/2 ≤ ρn ≤ T`, by trying all `2^T` subsets.
pub fn brute_knapsack(m: &[f64], rho: f64) -> Option<f64> {
    let t = m.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << t) {
        let n = mask.count_ones() as f64;
        if !(rho * n >= t as f64 * 0.5 && rho * n <= t as f64) {
            continue;
        }
        let v: f64 = (0..t).filter(|i| mask >> i & 1 == 1).map(|i| m[i]).sum();
        if best.is_none_or(|b| v > b) {
            best = Some(v);
        }
    }
    best
}

fn feasible(inst: &TinyInstance, cost: &[f64]) -> bool {
    let b = inst.bounds();
    (0..b.len()).all(|k| {
        let lo = b
            .lower_target(k, inst.horizon())
            .unwrap_or(f64::NEG_INFINITY);
        cost[k] >= lo - 1e-9 && cost[k] <= b.upper_target(k, inst.horizon()) + 1e-9
    })
}

/// Best feasible total over every decision tuple, with per-period revenue and cost tables.
fn best_tuple(
    inst: &TinyInstance,
    rev: &dyn Fn(usize, usize) -> f64,
    cost: &dyn Fn(usize, usize) -> Vec<f64>,
) -> f64 {
    let t = inst.horizon();
    let g = inst.grid().len();
    let k = inst.bounds().len();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; t];
    loop {
        let mut r = 0.0;
        let mut c = vec![0.0; k];
        for (period, &zi) in idx.iter().enumerate() {
            r += rev(period, zi);
            for (acc, v) in c.iter_mut().zip(cost(period, zi)) {
                *acc += v;
            }
        }
        if feasible(inst, &c) && r > best {
            best = r;
        }
        let mut p = 0;
        loop {
            if p == t {
                return best;
            }
            idx[p] += 1;
            if idx[p] < g {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// `E[hindsight optimum]` over every ordered arrival sequence.
pub fn expected_hindsight(inst: &TinyInstance) -> f64 {
    let t = inst.horizon();
    let m = inst.contexts().len();
    let mut total = 0.0;
    for code in 0..m.pow(t as u32) {
        let seq: Vec<usize> = (0..t).map(|i| code / m.pow(i as u32) % m).collect();
        let prob: f64 = seq.iter().map(|&w| inst.contexts()[w].prob).product();
        if prob == 0.0 {
            continue;
        }
        let v = best_tuple(inst, &|p, zi| inst.f(seq[p], zi), &|p, zi| {
            inst.c(seq[p], zi)
        });
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        total += prob * v;
    }
    total
}

/// The program with every context replaced by its expectation.
pub fn expectation_program(inst: &TinyInstance) -> f64 {
    let ctx = inst.contexts();
    let ef = |zi: usize| {
        ctx.iter()
            .enumerate()
            .map(|(w, x)| x.prob * inst.f(w, zi))
            .sum::<f64>()
    };
    let ec = |zi: usize| {
        let mut c = vec![0.0; inst.bounds().len()];
        for (w, x) in ctx.iter().enumerate() {
            for (acc, v) in c.iter_mut().zip(inst.c(w, zi)) {
                *acc += x.prob * v;
            }
        }
        c
    };
    best_tuple(inst, &|_, zi| ef(zi), &|_, zi| ec(zi))
}
