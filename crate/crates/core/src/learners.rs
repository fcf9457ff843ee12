//! Parameter learners: the plug-in that produces `θ^t` from past observations.
//!
//! All regression-based learners share one accumulator: `B = I + Σ x xᵀ` over
//! periods where an action was taken, and `Σ x r`. The least-squares estimate
//! is `θ̂ = B⁻¹ Σ x r`, kept current through rank-one updates of `B⁻¹` with a
//! full refactorization every [`REFACTOR_EVERY`] updates.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::SimRng;

pub const REFACTOR_EVERY: usize = 64;
pub const DEFAULT_RIDGE_PENALTY: f64 = 0.001;
pub const DEFAULT_PERTURB_SCALE: f64 = 0.3;
/// Thompson scale when observed revenue carries no extra noise.
pub const NOISELESS_NU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Known,
    LeastSquares,
    Ridge,
    RidgePerturb,
    Thompson,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::LeastSquares,
        LearnerKind::Thompson,
        LearnerKind::Ridge,
        LearnerKind::RidgePerturb,
        LearnerKind::Known,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Known => "known",
            LearnerKind::LeastSquares => "least_squares",
            LearnerKind::Ridge => "ridge",
            LearnerKind::RidgePerturb => "ridge_perturb",
            LearnerKind::Thompson => "thompson",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Known => "Known parameter",
            LearnerKind::LeastSquares => "Least squares",
            LearnerKind::Ridge => "Ridge regression",
            LearnerKind::RidgePerturb => "Ridge + perturbation",
            LearnerKind::Thompson => "Thompson sampling",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "known" => Ok(LearnerKind::Known),
            "least_squares" | "lsq" => Ok(LearnerKind::LeastSquares),
            "ridge" => Ok(LearnerKind::Ridge),
            "ridge_perturb" => Ok(LearnerKind::RidgePerturb),
            "thompson" => Ok(LearnerKind::Thompson),
            other => Err(Error::Config(format!("unknown learner kind `{other}`"))),
        }
    }
}

/// Learner configuration as it appears in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Thompson scale; derived from the revenue noise level when absent.
    pub nu: Option<f64>,
    pub ridge_penalty: f64,
    pub perturb_scale: f64,
    /// Actions answered by plain least squares before the ridge solve takes over;
    /// defaults to `√T/2`.
    pub warm_start_actions: Option<f64>,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            kind: LearnerKind::Thompson,
            nu: None,
            ridge_penalty: DEFAULT_RIDGE_PENALTY,
            perturb_scale: DEFAULT_PERTURB_SCALE,
            warm_start_actions: None,
        }
    }
}

impl LearnerSpec {
    pub fn of(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn build(&self, theta_star: &[f64], horizon: usize, rev_noise: f64) -> Result<Learner> {
        let p = theta_star.len();
        if self.kind == LearnerKind::Known {
            return Ok(Learner::known(theta_star.to_vec()));
        }
        if !(self.ridge_penalty > 0.0) {
            return Err(Error::Config("ridge penalty must be positive".into()));
        }
        let nu = self
            .nu
            .unwrap_or_else(|| thompson_nu(rev_noise, horizon, p));
        if !(nu >= 0.0) {
            return Err(Error::Config(format!(
                "thompson scale {nu} must be non-negative"
            )));
        }
        let warm = self
            .warm_start_actions
            .unwrap_or_else(|| (horizon as f64).sqrt() / 2.0);
        Ok(Learner::regression(
            self.kind,
            p,
            nu,
            self.ridge_penalty,
            self.perturb_scale,
            warm,
        ))
    }
}

/// `ν = 0.1` without revenue noise, else `(rev_err/10)·√(log T · n)`.
pub fn thompson_nu(rev_noise: f64, horizon: usize, n: usize) -> f64 {
    if rev_noise == 0.0 {
        NOISELESS_NU
    } else {
        rev_noise / 10.0 * ((horizon as f64).ln() * n as f64).sqrt()
    }
}

/// Features of the chosen action and the revenue observed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Learner {
    kind: LearnerKind,
    theta_star: Vec<f64>,
    gram: DMatrix<f64>,
    b_inv: DMatrix<f64>,
    response: DVector<f64>,
    theta_hat: DVector<f64>,
    actions: usize,
    since_refactor: usize,
    nu: f64,
    ridge_penalty: f64,
    perturb_scale: f64,
    warm_start: f64,
    ridge_cache: Option<DVector<f64>>,
    cov_factor: Option<DMatrix<f64>>,
}

impl Learner {
    /// Always answers `θ*`.
    pub fn known(theta_star: Vec<f64>) -> Self {
        let mut l = Learner::regression(
            LearnerKind::Known,
            theta_star.len(),
            0.0,
            DEFAULT_RIDGE_PENALTY,
            0.0,
            0.0,
        );
        l.theta_star = theta_star;
        l
    }

    fn regression(
        kind: LearnerKind,
        p: usize,
        nu: f64,
        ridge_penalty: f64,
        perturb_scale: f64,
        warm_start: f64,
    ) -> Self {
        let start = if p == 0 { 0.0 } else { 1.0 / (p as f64).sqrt() };
        Learner {
            kind,
            theta_star: Vec::new(),
            gram: DMatrix::zeros(p, p),
            b_inv: DMatrix::identity(p, p),
            response: DVector::zeros(p),
            theta_hat: DVector::from_element(p, start),
            actions: 0,
            since_refactor: 0,
            nu,
            ridge_penalty,
            perturb_scale,
            warm_start,
            ridge_cache: None,
            cov_factor: None,
        }
    }

    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn theta_hat(&self) -> &[f64] {
        self.theta_hat.as_slice()
    }

    /// `B = I + Σ x xᵀ`.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) + &self.gram
    }

    pub fn design_inverse(&self) -> &DMatrix<f64> {
        &self.b_inv
    }

    /// Half-width of the uniform perturbation added by `RidgePerturb`.
    pub fn perturbation_scale(&self) -> f64 {
        self.perturb_scale / (self.actions.max(1) as f64).sqrt()
    }

    fn in_ridge_phase(&self) -> bool {
        (self.actions as f64) >= self.warm_start
    }

    /// Incorporates one period; `None` means no action was taken and is a no-op.
    pub fn update(&mut self, obs: Option<&Observation>) -> Result<()> {
        let Some(obs) = obs else { return Ok(()) };
        if self.kind == LearnerKind::Known {
            return Ok(());
        }
        check_dim(self.dim(), obs.features.len())?;
        let x = DVector::from_column_slice(&obs.features);
        self.gram.ger(1.0, &x, &x, 1.0);
        self.response.axpy(obs.reward, &x, 1.0);
        self.actions += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        } else {
            let bx = &self.b_inv * &x;
            let denom = 1.0 + x.dot(&bx);
            self.b_inv.ger(-1.0 / denom, &bx, &bx, 1.0);
        }
        self.theta_hat = &self.b_inv * &self.response;
        self.ridge_cache = None;
        self.cov_factor = None;
        Ok(())
    }

    fn refactor(&mut self) -> Result<()> {
        let chol = self
            .design()
            .cholesky()
            .ok_or_else(|| Error::Numeric("design matrix lost positive definiteness".into()))?;
        self.b_inv = chol.inverse();
        self.since_refactor = 0;
        Ok(())
    }

    fn ridge_solution(&mut self) -> Result<&DVector<f64>> {
        if self.ridge_cache.is_none() {
            let p = self.dim();
            let m = &self.gram + DMatrix::identity(p, p) * self.ridge_penalty;
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
            self.ridge_cache = Some(chol.solve(&self.response));
        }
        Ok(self.ridge_cache.as_ref().expect("filled above"))
    }

    /// Produces `θ^t`.
    pub fn emit(&mut self, rng: &mut SimRng) -> Result<Vec<f64>> {
        match self.kind {
            LearnerKind::Known => Ok(self.theta_star.clone()),
            LearnerKind::LeastSquares => Ok(self.theta_hat.as_slice().to_vec()),
            LearnerKind::Thompson => {
                if self.nu == 0.0 {
                    return Ok(self.theta_hat.as_slice().to_vec());
                }
                if self.cov_factor.is_none() {
                    let chol = self.b_inv.clone().cholesky().ok_or_else(|| {
                        Error::Numeric("posterior covariance factorization failed".into())
                    })?;
                    self.cov_factor = Some(chol.l());
                }
                let l = self.cov_factor.as_ref().expect("filled above");
                let xi = DVector::from_iterator(
                    self.dim(),
                    (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                Ok((&self.theta_hat + l * xi * self.nu).as_slice().to_vec())
            }
            LearnerKind::Ridge | LearnerKind::RidgePerturb => {
                if !self.in_ridge_phase() {
                    return Ok(self.theta_hat.as_slice().to_vec());
                }
                let perturb = self.kind == LearnerKind::RidgePerturb;
                let scale = self.perturbation_scale();
                let mut theta = self.ridge_solution()?.as_slice().to_vec();
                if perturb && scale > 0.0 {
                    for v in &mut theta {
                        *v += rng.random_range(-scale..scale);
                    }
                }
                Ok(theta)
            }
        }
    }
}
