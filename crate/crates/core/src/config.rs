//! Experiment configuration files (TOML). Every key has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditSetup, NoiseLevels, DEFAULT_RHO};
use crate::bidding::{Depletion, MarketSpec, Policy, SimSettings, DEFAULT_BATCH};
use crate::controller::{EpisodeSettings, HaltMode};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::metrics::NoisePair;
use crate::mirror::{Quadratic, ReferenceFunction, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    #[default]
    Bandits,
    Bidding,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    #[default]
    Euclidean,
    Quadratic,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub kind: GeometryKind,
    /// Diagonal of `Q` for the quadratic geometry.
    pub q_diagonal: Vec<f64>,
    /// Strong convexity constant reported for the entropy geometry.
    pub entropy_sigma1: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            kind: GeometryKind::Euclidean,
            q_diagonal: vec![1.0],
            entropy_sigma1: 1.0,
        }
    }
}

impl Geometry {
    pub fn build(&self) -> Result<ReferenceFunction> {
        Ok(match self.kind {
            GeometryKind::Euclidean => ReferenceFunction::Euclidean,
            GeometryKind::Quadratic => {
                ReferenceFunction::Quadratic(Quadratic::diagonal(&self.q_diagonal)?)
            }
            GeometryKind::Entropy => ReferenceFunction::Entropy {
                sigma1: self.entropy_sigma1,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub d: usize,
    pub n: usize,
    pub horizon: usize,
    pub rho: f64,
    /// One comparison-table column per pair.
    pub noise: Vec<NoisePair>,
    pub learners: Vec<LearnerKind>,
    /// `η = gamma_step / √T`.
    pub gamma_step: f64,
    pub geometry: Geometry,
    /// Hyperparameters shared by all learners; `kind` is ignored here.
    pub learner: LearnerSpec,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            d: 5,
            n: 10,
            horizon: 1000,
            rho: DEFAULT_RHO,
            noise: [
                (0.0, 0.0),
                (0.1, 0.0),
                (0.5, 0.0),
                (0.0, 0.1),
                (0.1, 0.1),
                (0.5, 0.1),
            ]
            .map(|(revenue, context)| NoisePair { revenue, context })
            .to_vec(),
            learners: LearnerKind::ALL.to_vec(),
            gamma_step: 1.0,
            geometry: Geometry::default(),
            learner: LearnerSpec::default(),
        }
    }
}

impl BanditConfig {
    pub fn setup(&self, kind: LearnerKind, noise: NoisePair) -> Result<BanditSetup> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::Config("d and n must be at least 1".into()));
        }
        Ok(BanditSetup {
            d: self.d,
            n: self.n,
            horizon: self.horizon,
            rho: self.rho,
            noise: NoiseLevels::new(noise.revenue, noise.context)?,
            learner: LearnerSpec {
                kind,
                ..self.learner.clone()
            },
        })
    }

    pub fn episode(&self) -> Result<EpisodeSettings> {
        Ok(EpisodeSettings {
            h: self.geometry.build()?,
            schedule: StepSchedule::scaled(self.gamma_step, self.horizon)?,
            halt: HaltMode::Episode,
            initial: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepletionKind {
    Episode,
    PerClient,
    #[default]
    OverspendOnce,
}

impl From<DepletionKind> for Depletion {
    fn from(d: DepletionKind) -> Self {
        match d {
            DepletionKind::Episode => Depletion::Episode,
            DepletionKind::PerClient => Depletion::PerClient,
            DepletionKind::OverspendOnce => Depletion::OverspendOnce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiddingConfig {
    pub market: MarketSpec,
    /// Fixed dual step size.
    pub eta: f64,
    pub batch: usize,
    pub depletion: DepletionKind,
    /// Greedy multipliers tried by the sweep.
    pub gammas: Vec<f64>,
    /// Auction log CSV; a synthetic corpus is generated when absent.
    pub logs: Option<PathBuf>,
}

impl Default for BiddingConfig {
    fn default() -> Self {
        BiddingConfig {
            market: MarketSpec::default(),
            eta: 5.0,
            batch: DEFAULT_BATCH,
            depletion: DepletionKind::OverspendOnce,
            gammas: (0..=25).map(|i| 0.25 + 0.05 * i as f64).collect(),
            logs: None,
        }
    }
}

impl BiddingConfig {
    pub fn settings(&self) -> SimSettings {
        SimSettings {
            batch: self.batch,
            depletion: self.depletion.into(),
        }
    }

    pub fn dual_policy(&self) -> Result<Policy> {
        Policy::dual(self.eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub name: String,
    pub gamma_points: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            name: "gamma-half".into(),
            gamma_points: crate::oracle::DEFAULT_GAMMA_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub n_sims: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bandits: BanditConfig,
    pub bidding: BiddingConfig,
    pub fixture: FixtureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: Benchmark::Bandits,
            n_sims: 100,
            seed: 0,
            out_dir: PathBuf::from("out"),
            bandits: BanditConfig::default(),
            bidding: BiddingConfig::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(Error::Config("n_sims must be at least 1".into()));
        }
        if self.bandits.horizon == 0 {
            return Err(Error::Config("bandits.horizon must be at least 1".into()));
        }
        if self.bandits.learners.is_empty() || self.bandits.noise.is_empty() {
            return Err(Error::Config(
                "bandits needs at least one learner and one noise pair".into(),
            ));
        }
        if let Some(p) = &self.bidding.logs {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "bid log {} does not exist",
                    p.display()
                )));
            }
        }
        if self.bidding.batch == 0 {
            return Err(Error::Config("bidding.batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn defaults_toml() -> String {
        toml::to_string_pretty(&ExperimentConfig::default()).expect("default config serializes")
    }
}
