//! Domain types shared by every benchmark: cost bounds, dual vectors, the
//! problem abstraction and the two formulas every dual method needs (the
//! dual price `p(λ)` and the stochastic dual subgradient).

use std::fmt::Debug;

use crate::error::{check_dim, Error, Result};
use crate::rng::SimRng;

/// Sentinel for "no lower bound" on a cost coordinate.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Slack allowed when checking evaluated values against `f̄` and `C̄`.
const BOUND_SLACK: f64 = 1e-9;

/// Per-period budget rates `b` and lower-bound fractions `α`.
///
/// Over a horizon `T` the cumulative cost of coordinate `k` must land in
/// `[T α_k b_k, T b_k]`; `α_k = NEG_INF` drops the lower side.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSpec {
    b: Vec<f64>,
    alpha: Vec<f64>,
}

impl BoundSpec {
    pub fn new(b: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        check_dim(b.len(), alpha.len())?;
        if b.is_empty() {
            return Err(Error::Config(
                "at least one cost coordinate is required".into(),
            ));
        }
        for (k, &bk) in b.iter().enumerate() {
            if !(bk.is_finite() && bk > 0.0) {
                return Err(Error::Config(format!("b[{k}] = {bk} must be positive")));
            }
        }
        for (k, &a) in alpha.iter().enumerate() {
            if a != NEG_INF && !(-1.0..1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "alpha[{k}] = {a} must lie in [-1, 1) or be -inf"
                )));
            }
        }
        Ok(BoundSpec { b, alpha })
    }

    /// Upper bounds only.
    pub fn upper_only(b: Vec<f64>) -> Result<Self> {
        let alpha = vec![NEG_INF; b.len()];
        Self::new(b, alpha)
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn b_lo(&self) -> f64 {
        self.b.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn b_hi(&self) -> f64 {
        self.b.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn has_lower(&self, k: usize) -> bool {
        self.alpha[k] != NEG_INF
    }

    /// Feasible cone of each dual coordinate.
    pub fn cones(&self) -> Vec<Cone> {
        (0..self.len())
            .map(|k| {
                if self.has_lower(k) {
                    Cone::Free
                } else {
                    Cone::NonNeg
                }
            })
            .collect()
    }

    /// `T α_k b_k`, or `None` when coordinate `k` has no lower bound.
    pub fn lower_target(&self, k: usize, horizon: usize) -> Option<f64> {
        self.has_lower(k)
            .then(|| horizon as f64 * self.alpha[k] * self.b[k])
    }

    pub fn upper_target(&self, k: usize, horizon: usize) -> f64 {
        horizon as f64 * self.b[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Free,
    NonNeg,
}

/// Dual multipliers, one per cost coordinate, each constrained to its cone.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    lambda: Vec<f64>,
    cone: Vec<Cone>,
}

impl DualVector {
    pub fn new(lambda: Vec<f64>, cone: Vec<Cone>) -> Result<Self> {
        check_dim(cone.len(), lambda.len())?;
        for (k, (&l, &c)) in lambda.iter().zip(&cone).enumerate() {
            if !l.is_finite() {
                return Err(Error::Domain(format!("lambda[{k}] = {l} is not finite")));
            }
            if c == Cone::NonNeg && l < 0.0 {
                return Err(Error::Domain(format!(
                    "lambda[{k}] = {l} < 0 on a non-negative coordinate"
                )));
            }
        }
        Ok(DualVector { lambda, cone })
    }

    /// Dual vector with the cones implied by `bounds`.
    pub fn for_bounds(bounds: &BoundSpec, lambda: Vec<f64>) -> Result<Self> {
        Self::new(lambda, bounds.cones())
    }

    pub fn zeros(bounds: &BoundSpec) -> Self {
        DualVector {
            lambda: vec![0.0; bounds.len()],
            cone: bounds.cones(),
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn cone(&self) -> &[Cone] {
        &self.cone
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.lambda.iter().zip(v).map(|(l, x)| l * x).sum()
    }

    /// Checks that the cone signature agrees with `bounds`.
    pub fn check_against(&self, bounds: &BoundSpec) -> Result<()> {
        check_dim(bounds.len(), self.len())?;
        for k in 0..self.len() {
            if self.lambda[k] < 0.0 && !bounds.has_lower(k) {
                return Err(Error::Domain(format!(
                    "lambda[{k}] = {} < 0 but coordinate {k} has no lower bound",
                    self.lambda[k]
                )));
            }
        }
        Ok(())
    }
}

/// A context draw together with the zero-mean noise added to observed revenue.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDraw<W> {
    pub context: W,
    pub noise: f64,
}

impl<W> ContextDraw<W> {
    pub fn exact(context: W) -> Self {
        ContextDraw {
            context,
            noise: 0.0,
        }
    }
}

/// One constrained online revenue problem.
///
/// Implementors are immutable after construction; all randomness comes in
/// through the explicitly passed RNG.
pub trait Problem: Sync {
    type Context: Send + Sync;
    type Decision: Clone + PartialEq + Debug + Send;

    fn horizon(&self) -> usize;
    fn bounds(&self) -> &BoundSpec;
    /// Upper bound `f̄` on the true revenue.
    fn rev_bound(&self) -> f64;
    /// Upper bound `C̄` on `‖c(z;θ,w)‖∞`, also the minimum remaining budget.
    fn cost_bound(&self) -> f64;
    fn theta_star(&self) -> &[f64];

    /// Context of period `t` (0-based).
    fn draw(&self, t: usize, rng: &mut SimRng) -> ContextDraw<Self::Context>;

    fn revenue(&self, z: &Self::Decision, theta: &[f64], w: &Self::Context) -> f64;
    fn cost(&self, z: &Self::Decision, theta: &[f64], w: &Self::Context) -> Vec<f64>;

    /// A maximizer of `f(z;θ,w) − λᵀc(z;θ,w)` over the decision set, with
    /// ties broken towards the lowest index.
    fn oracle(
        &self,
        lambda: &DualVector,
        theta: &[f64],
        w: &Self::Context,
    ) -> Result<Self::Decision>;

    /// Regression features of the observed revenue, when the decision yields an observation.
    fn features(&self, _z: &Self::Decision, _w: &Self::Context) -> Option<Vec<f64>> {
        None
    }

    /// Short printable summary of a decision.
    fn digest(&self, z: &Self::Decision) -> String;

    fn context_id(&self, _w: &Self::Context) -> u64 {
        0
    }
}

/// `p(λ) = Σ_k b_k([λ_k]_+ − α_k[−λ_k]_+)`.
pub fn dual_price(lambda: &DualVector, bounds: &BoundSpec) -> Result<f64> {
    lambda.check_against(bounds)?;
    let mut p = 0.0;
    for (k, &l) in lambda.lambda().iter().enumerate() {
        let b = bounds.b()[k];
        if l >= 0.0 {
            p += b * l;
        } else {
            p -= b * bounds.alpha()[k] * (-l);
        }
    }
    Ok(p)
}

/// `g̃_k = −c_k + b_k(1(λ_k ≥ 0) + α_k 1(λ_k < 0))` from an estimated cost vector.
pub fn subgradient_from_cost(
    lambda: &DualVector,
    cost_est: &[f64],
    bounds: &BoundSpec,
) -> Result<Vec<f64>> {
    lambda.check_against(bounds)?;
    check_dim(bounds.len(), cost_est.len())?;
    Ok(lambda
        .lambda()
        .iter()
        .zip(cost_est)
        .enumerate()
        .map(|(k, (&l, &c))| {
            let rate = if l >= 0.0 {
                bounds.b()[k]
            } else {
                bounds.alpha()[k] * bounds.b()[k]
            };
            rate - c
        })
        .collect())
}

/// Stochastic subgradient of `D(·;θ)` at `λ`, where `z` is the oracle output for `(λ, θ, w)`.
pub fn stochastic_subgradient<P: Problem + ?Sized>(
    problem: &P,
    lambda: &DualVector,
    z: &P::Decision,
    theta: &[f64],
    w: &P::Context,
) -> Result<Vec<f64>> {
    let c = checked_cost(problem, z, theta, w)?;
    subgradient_from_cost(lambda, &c, problem.bounds())
}

/// `f(z;θ,w) − λᵀc(z;θ,w)`.
pub fn lagrangian<P: Problem + ?Sized>(
    problem: &P,
    lambda: &DualVector,
    z: &P::Decision,
    theta: &[f64],
    w: &P::Context,
) -> f64 {
    problem.revenue(z, theta, w) - lambda.dot(&problem.cost(z, theta, w))
}

/// Evaluates `c(z;θ,w)` and checks `‖c‖∞ ≤ C̄`.
pub fn checked_cost<P: Problem + ?Sized>(
    problem: &P,
    z: &P::Decision,
    theta: &[f64],
    w: &P::Context,
) -> Result<Vec<f64>> {
    let c = problem.cost(z, theta, w);
    check_dim(problem.bounds().len(), c.len())?;
    let cap = problem.cost_bound() * (1.0 + BOUND_SLACK) + BOUND_SLACK;
    if let Some((k, v)) = c.iter().enumerate().find(|(_, v)| !(v.abs() <= cap)) {
        return Err(Error::Invariant(format!(
            "|c_{k}| = {} exceeds cost bound {}",
            v.abs(),
            problem.cost_bound()
        )));
    }
    Ok(c)
}

/// Evaluates the true revenue `f(z;θ*,w)` and checks it against `f̄`.
pub fn checked_true_revenue<P: Problem + ?Sized>(
    problem: &P,
    z: &P::Decision,
    w: &P::Context,
) -> Result<f64> {
    let f = problem.revenue(z, problem.theta_star(), w);
    let cap = problem.rev_bound() * (1.0 + BOUND_SLACK) + BOUND_SLACK;
    if !(f <= cap) {
        return Err(Error::Invariant(format!(
            "revenue {f} exceeds revenue bound {}",
            problem.rev_bound()
        )));
    }
    Ok(f)
}
