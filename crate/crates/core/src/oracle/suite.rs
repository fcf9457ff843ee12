//! The bundled fixture checks, runnable from the command line.

use rand::Rng;

use super::{
    dual_value, fixture, gamma_grid, opt_benchmark, opt_gamma, weak_duality_check, Benchmark,
    TinyInstance, FIXTURES,
};
use crate::error::Result;
use crate::problem::{BoundSpec, Cone, DualVector, Problem};
use crate::rng::{self, Stream};

/// Values from the fixture grid are compared to analytic ones at this tolerance.
pub const GRID_TOL: f64 = 1e-3;
pub const CONSTANT_TOL: f64 = 1e-6;
pub const WEAK_DUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub gamma_points: usize,
    pub random_lambdas: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            gamma_points: super::DEFAULT_GAMMA_POINTS,
            random_lambdas: 50,
            seed: 0,
        }
    }
}

/// `n` duals drawn uniformly from `[-2, 2]` per coordinate, folded onto `[0, 2]`
/// on non-negative coordinates.
pub fn random_lambdas(bounds: &BoundSpec, n: usize, seed: u64) -> Result<Vec<DualVector>> {
    let mut rng = rng::stream(seed, Stream::Learner);
    let cones = bounds.cones();
    (0..n)
        .map(|_| {
            let l = cones
                .iter()
                .map(|c| {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if *c == Cone::NonNeg {
                        v.abs()
                    } else {
                        v
                    }
                })
                .collect();
            DualVector::for_bounds(bounds, l)
        })
        .collect()
}

/// Same instance with upper bounds pushed far away and lower bounds unchanged.
pub fn without_upper_bounds(inst: &TinyInstance) -> Result<TinyInstance> {
    const SCALE: f64 = 1e6;
    let b = inst.bounds().b().iter().map(|v| v * SCALE).collect();
    let alpha = inst.bounds().alpha().iter().map(|a| a / SCALE).collect();
    TinyInstance::new(
        inst.name(),
        inst.horizon(),
        inst.contexts().to_vec(),
        inst.grid().to_vec(),
        BoundSpec::new(b, alpha)?,
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol
}

fn fixture_checks(name: &str, inst: &TinyInstance, bench: &Benchmark) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let at = |g: f64| -> Result<f64> { opt_gamma(inst, g) };
    match name {
        "gamma-half" => {
            let half = at(0.5)?;
            let one = at(1.0)?;
            out.push(Check::new(
                "gamma-half: OPT(P,0.5) = 1/6",
                close(half, 1.0 / 6.0, GRID_TOL),
                format!("{half}"),
            ));
            out.push(Check::new(
                "gamma-half: OPT(P,1) = 0",
                close(one, 0.0, GRID_TOL),
                format!("{one}"),
            ));
            let unique =
                bench.argmax.iter().all(|g| close(*g, 0.5, GRID_TOL)) && !bench.argmax.is_empty();
            out.push(Check::new(
                "gamma-half: argmax is {0.5}",
                unique,
                format!("{:?}", bench.argmax),
            ));
        }
        "no-solution" => {
            let finite = bench
                .curve
                .iter()
                .filter(|(_, v)| *v != f64::NEG_INFINITY)
                .count();
            out.push(Check::new(
                "no-solution: OPT(P,γ) = -inf on the whole grid",
                finite == 0,
                format!("{finite} of {} grid points finite", bench.curve.len()),
            ));
        }
        "infinite-solutions" => {
            let lo = bench
                .curve
                .iter()
                .map(|c| c.1)
                .fold(f64::INFINITY, f64::min);
            let hi = bench
                .curve
                .iter()
                .map(|c| c.1)
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(Check::new(
                "infinite-solutions: OPT(P,γ) constant in γ",
                lo.is_finite() && hi - lo <= CONSTANT_TOL,
                format!("range [{lo}, {hi}]"),
            ));
        }
        "gamma-zero" | "gamma-one" => {
            let target = if name == "gamma-zero" { 0.0 } else { 1.0 };
            out.push(Check::new(
                format!("{name}: argmax contains {target}"),
                bench.argmax.contains(&target),
                format!("{:?}", bench.argmax),
            ));
        }
        _ => {}
    }
    Ok(out)
}

/// Minimum of `T·D(λ)` over 601 points of `[-3, 3]` (or `[0, 3]`); single-resource
/// instances only.
fn dual_line_search(inst: &TinyInstance) -> Result<Option<f64>> {
    let bounds = inst.bounds();
    if bounds.len() != 1 {
        return Ok(None);
    }
    let lo = if bounds.cones()[0] == Cone::NonNeg {
        0.0
    } else {
        -3.0
    };
    let t = inst.horizon() as f64;
    let mut best = f64::INFINITY;
    for i in 0..=600 {
        let l = lo + (3.0 - lo) * i as f64 / 600.0;
        best = best.min(t * dual_value(inst, &DualVector::for_bounds(bounds, vec![l])?)?);
    }
    Ok(Some(best))
}

/// Runs every bundled fixture check.
pub fn run_suite(opts: SuiteOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (i, name) in FIXTURES.iter().enumerate() {
        let inst = fixture(name)?;
        let bench = opt_benchmark(&inst, opts.gamma_points)?;
        checks.extend(fixture_checks(name, &inst, &bench)?);

        let lambdas = random_lambdas(inst.bounds(), opts.random_lambdas, opts.seed + i as u64)?;
        let mut all = vec![DualVector::zeros(inst.bounds())];
        all.extend(lambdas);
        let report = weak_duality_check(&inst, bench.value, &all)?;
        checks.push(Check::new(
            format!("{name}: weak duality on {} duals", all.len()),
            report.passed(),
            format!(
                "{} failures, OPT {}, tightest {:?}",
                report.failures, report.opt, report.tightest
            ),
        ));
        if let Some(min) = dual_line_search(&inst)? {
            checks.push(Check::new(
                format!("{name}: line-searched dual bound"),
                bench.value <= min + WEAK_DUALITY_TOL,
                format!("OPT {} vs min T·D {min}", bench.value),
            ));
        }

        let relaxed = without_upper_bounds(&inst)?;
        let mut same = true;
        for g in gamma_grid(101) {
            let (a, b) = (opt_gamma(&inst, g)?, opt_gamma(&relaxed, g)?);
            same &= a == b || (a - b).abs() <= WEAK_DUALITY_TOL;
        }
        checks.push(Check::new(
            format!("{name}: upper bounds are slack"),
            same,
            "OPT(P,γ) unchanged on 101 γ without upper bounds".into(),
        ));
    }
    Ok(checks)
}
