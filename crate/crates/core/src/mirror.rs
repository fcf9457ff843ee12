//! Reference-function geometry and the dual mirror descent step
//! `λ⁺ = argmin_{λ∈Λ} λᵀg + V_h(λ, λ')/η`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::problem::{BoundSpec, Cone, DualVector};

/// Starting point of the entropy geometry, which excludes zero.
pub const ENTROPY_START: f64 = 1e-3;

const KKT_TOL: f64 = 1e-9;

/// `h(λ) = λᵀQλ` with `Q` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    q: DMatrix<f64>,
    diagonal: bool,
    sigma1: f64,
}

impl Quadratic {
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(v) = diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!(
                "quadratic diagonal entry {v} must be positive"
            )));
        }
        let sigma1 = 2.0 * diag.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Quadratic {
            q: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            diagonal: true,
            sigma1,
        })
    }

    /// General `Q`. Non-diagonal matrices are accepted only with `allow_dense`.
    pub fn dense(q: DMatrix<f64>, allow_dense: bool) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Config(
                "quadratic reference matrix must be square".into(),
            ));
        }
        let n = q.nrows();
        let mut diagonal = true;
        for i in 0..n {
            for j in 0..n {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * (1.0 + q[(i, j)].abs()) {
                    return Err(Error::Config(
                        "quadratic reference matrix must be symmetric".into(),
                    ));
                }
                if i != j && q[(i, j)] != 0.0 {
                    diagonal = false;
                }
            }
        }
        if !diagonal && !allow_dense {
            return Err(Error::Config(
                "non-diagonal Q makes h non-separable; enable general_quadratic to use it".into(),
            ));
        }
        if q.clone().cholesky().is_none() {
            return Err(Error::Config(
                "quadratic reference matrix is not positive definite".into(),
            ));
        }
        let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
        Ok(Quadratic {
            q,
            diagonal,
            sigma1: 2.0 * min_eig,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    fn dim(&self) -> usize {
        self.q.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceFunction {
    /// `h(λ) = ½‖λ‖²`; the step is projected subgradient descent.
    Euclidean,
    Quadratic(Quadratic),
    /// `h(λ) = Σ λ_k log λ_k`; the step is a multiplicative update.
    /// Only valid when every coordinate is upper-bound only.
    Entropy {
        sigma1: f64,
    },
}

impl ReferenceFunction {
    pub fn entropy() -> Self {
        ReferenceFunction::Entropy { sigma1: 1.0 }
    }

    pub fn sigma1(&self) -> f64 {
        match self {
            ReferenceFunction::Euclidean => 1.0,
            ReferenceFunction::Quadratic(q) => q.sigma1,
            ReferenceFunction::Entropy { sigma1 } => *sigma1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceFunction::Euclidean => "euclidean",
            ReferenceFunction::Quadratic(_) => "quadratic",
            ReferenceFunction::Entropy { .. } => "entropy",
        }
    }

    /// Checks that the geometry is usable with these bounds.
    pub fn validate(&self, bounds: &BoundSpec) -> Result<()> {
        match self {
            ReferenceFunction::Euclidean => Ok(()),
            ReferenceFunction::Quadratic(q) => check_dim(bounds.len(), q.dim()),
            ReferenceFunction::Entropy { sigma1 } => {
                if !(*sigma1 > 0.0) {
                    return Err(Error::Config(
                        "entropy strong convexity constant must be positive".into(),
                    ));
                }
                if (0..bounds.len()).any(|k| bounds.has_lower(k)) {
                    return Err(Error::Config(
                        "entropy geometry requires every alpha_k = -inf".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `λ¹`: zero, or `ENTROPY_START·1` for the entropy geometry.
    pub fn initial_point(&self, bounds: &BoundSpec) -> DualVector {
        match self {
            ReferenceFunction::Entropy { .. } => {
                DualVector::for_bounds(bounds, vec![ENTROPY_START; bounds.len()])
                    .expect("positive start")
            }
            _ => DualVector::zeros(bounds),
        }
    }

    fn check_domain(&self, lambda: &[f64]) -> Result<()> {
        match self {
            ReferenceFunction::Euclidean => Ok(()),
            ReferenceFunction::Quadratic(q) => check_dim(q.dim(), lambda.len()),
            ReferenceFunction::Entropy { .. } => match lambda.iter().find(|l| !(**l > 0.0)) {
                Some(l) => Err(Error::Domain(format!(
                    "entropy geometry needs lambda > 0, got {l}"
                ))),
                None => Ok(()),
            },
        }
    }

    pub fn value(&self, lambda: &[f64]) -> Result<f64> {
        self.check_domain(lambda)?;
        Ok(match self {
            ReferenceFunction::Euclidean => 0.5 * lambda.iter().map(|l| l * l).sum::<f64>(),
            ReferenceFunction::Quadratic(q) => {
                let v = DVector::from_column_slice(lambda);
                v.dot(&(&q.q * &v))
            }
            ReferenceFunction::Entropy { .. } => lambda.iter().map(|l| l * l.ln()).sum(),
        })
    }

    pub fn gradient(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(lambda)?;
        Ok(match self {
            ReferenceFunction::Euclidean => lambda.to_vec(),
            ReferenceFunction::Quadratic(q) => {
                let v = DVector::from_column_slice(lambda);
                (2.0 * (&q.q * v)).as_slice().to_vec()
            }
            ReferenceFunction::Entropy { .. } => lambda.iter().map(|l| l.ln() + 1.0).collect(),
        })
    }
}

/// Constant step `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    eta: f64,
}

impl StepSchedule {
    pub fn fixed(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Config(format!("step size {eta} must be positive")));
        }
        Ok(StepSchedule { eta })
    }

    /// `η = γ_step / √T`.
    pub fn scaled(gamma_step: f64, horizon: usize) -> Result<Self> {
        Self::fixed(gamma_step / (horizon.max(1) as f64).sqrt())
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Bregman divergence `V_h(λ, λ') = h(λ) − h(λ') − ∇h(λ')ᵀ(λ − λ')`.
pub fn bregman(h: &ReferenceFunction, lambda: &[f64], prev: &[f64]) -> Result<f64> {
    check_dim(lambda.len(), prev.len())?;
    h.check_domain(lambda)?;
    h.check_domain(prev)?;
    Ok(match h {
        ReferenceFunction::Euclidean => {
            0.5 * lambda
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
        ReferenceFunction::Quadratic(q) => {
            let d =
                DVector::from_iterator(lambda.len(), lambda.iter().zip(prev).map(|(a, b)| a - b));
            d.dot(&(&q.q * &d))
        }
        ReferenceFunction::Entropy { .. } => lambda
            .iter()
            .zip(prev)
            .map(|(&a, &b)| a * (a / b).ln() - a + b)
            .sum::<f64>()
            .max(0.0),
    })
}

/// One dual mirror descent step from `lambda` along subgradient `g`.
pub fn dual_step(
    h: &ReferenceFunction,
    lambda: &DualVector,
    g: &[f64],
    eta: f64,
) -> Result<DualVector> {
    check_dim(lambda.len(), g.len())?;
    if let Some(v) = g.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "subgradient entry {v} is not finite"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("step size {eta} must be positive")));
    }
    h.check_domain(lambda.lambda())?;
    let prev = lambda.lambda();
    let cone = lambda.cone();
    let next: Vec<f64> = match h {
        ReferenceFunction::Euclidean => (0..prev.len())
            .map(|k| project(prev[k] - eta * g[k], cone[k]))
            .collect(),
        ReferenceFunction::Quadratic(q) if q.diagonal => (0..prev.len())
            .map(|k| project(prev[k] - eta * g[k] / (2.0 * q.q[(k, k)]), cone[k]))
            .collect(),
        ReferenceFunction::Quadratic(q) => dense_quadratic_step(q, prev, cone, g, eta)?,
        ReferenceFunction::Entropy { .. } => {
            if cone.contains(&Cone::Free) {
                return Err(Error::Domain("entropy step on a free coordinate".into()));
            }
            let next: Vec<f64> = prev
                .iter()
                .zip(g)
                .map(|(l, gk)| l * (-eta * gk).exp())
                .collect();
            if let Some(v) = next.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Numeric(format!(
                    "multiplicative update left the domain ({v})"
                )));
            }
            next
        }
    };
    DualVector::new(next, cone.to_vec())
}

fn project(v: f64, cone: Cone) -> f64 {
    match cone {
        Cone::Free => v,
        Cone::NonNeg => v.max(0.0),
    }
}

/// Minimizes `λᵀg + (λ−λ')ᵀQ(λ−λ')/η` over the cone by exact coordinate
/// minimization; the objective is strongly convex so the sweep converges.
fn dense_quadratic_step(
    q: &Quadratic,
    prev: &[f64],
    cone: &[Cone],
    g: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let n = prev.len();
    let qm = &q.q;
    let p = DVector::from_column_slice(prev);
    let gv = DVector::from_column_slice(g);
    let chol = qm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("quadratic reference matrix lost definiteness".into()))?;
    let mut x = &p - chol.solve(&gv) * (0.5 * eta);
    if cone.iter().all(|c| *c == Cone::Free) {
        return Ok(x.as_slice().to_vec());
    }
    for k in 0..n {
        x[k] = project(x[k], cone[k]);
    }
    // gradient of the step objective: g + 2Q(x − λ')/η; diagonal of its Hessian: 2Q_kk/η
    let scale = 1.0 + p.amax() + eta * gv.amax();
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for k in 0..n {
            let mut qd = 0.0;
            for j in 0..n {
                qd += qm[(k, j)] * (x[j] - p[j]);
            }
            let grad = g[k] + 2.0 * qd / eta;
            let curv = 2.0 * qm[(k, k)] / eta;
            let xk = project(x[k] - grad / curv, cone[k]);
            moved = moved.max((xk - x[k]).abs());
            x[k] = xk;
        }
        if moved <= 1e-15 * scale {
            return Ok(x.as_slice().to_vec());
        }
    }
    Err(Error::Numeric(
        "quadratic dual step did not converge".into(),
    ))
}

/// Checks the first-order optimality of a step: `∇h(λ⁺) ≥ ∇h(λ') − ηg`
/// coordinate-wise, with equality on free coordinates and where `λ⁺_k > 0`.
pub fn check_step_optimality(
    h: &ReferenceFunction,
    prev: &DualVector,
    g: &[f64],
    eta: f64,
    next: &DualVector,
) -> Result<()> {
    let grad_next = h.gradient(next.lambda())?;
    let grad_prev = h.gradient(prev.lambda())?;
    for k in 0..next.len() {
        let target = grad_prev[k] - eta * g[k];
        let tol = KKT_TOL * (1.0 + grad_prev[k].abs() + (eta * g[k]).abs());
        let gap = grad_next[k] - target;
        let active = next.cone()[k] == Cone::NonNeg && next.lambda()[k] == 0.0;
        let ok = if active {
            gap >= -tol
        } else {
            gap.abs() <= tol
        };
        if !ok {
            return Err(Error::Invariant(format!(
                "mirror step optimality fails on coordinate {k}: grad h(next) = {}, grad h(prev) - eta g = {target}",
                grad_next[k]
            )));
        }
    }
    Ok(())
}
