//! The online loop: learner update, context arrival, primal decision, budget
//! accounting and stopping, dual subgradient and mirror step, in that order.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::learners::{Learner, Observation};
use crate::mirror::{check_step_optimality, dual_step, ReferenceFunction, StepSchedule};
use crate::problem::{
    checked_cost, checked_true_revenue, subgradient_from_cost, DualVector, Problem,
};
use crate::rng::{self, SimRng, Stream};

const SAFETY_SLACK: f64 = 1e-9;

/// What happens when a remaining budget runs low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HaltMode {
    /// Stop the episode as soon as some remaining budget drops below `C̄`.
    #[default]
    Episode,
    /// Keep going until some budget has been exceeded once, then stop.
    OverspendOnce,
}

#[derive(Debug, Clone)]
pub struct EpisodeSettings {
    pub h: ReferenceFunction,
    pub schedule: StepSchedule,
    pub halt: HaltMode,
    /// Started from `h.initial_point` when absent.
    pub initial: Option<DualVector>,
}

impl EpisodeSettings {
    pub fn new(h: ReferenceFunction, schedule: StepSchedule) -> Self {
        EpisodeSettings {
            h,
            schedule,
            halt: HaltMode::Episode,
            initial: None,
        }
    }
}

/// Remaining budget per cost coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLedger {
    remaining: Vec<f64>,
    spent: Vec<f64>,
    tau: Option<usize>,
    halted: bool,
}

impl BudgetLedger {
    pub fn new(total: Vec<f64>) -> Self {
        let k = total.len();
        BudgetLedger {
            remaining: total,
            spent: vec![0.0; k],
            tau: None,
            halted: false,
        }
    }

    pub fn remaining(&self) -> &[f64] {
        &self.remaining
    }

    pub fn spent(&self) -> &[f64] {
        &self.spent
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn tau(&self) -> Option<usize> {
        self.tau
    }

    /// Charges period `t` (1-based) and applies the stopping rule. Returns `true` on halt.
    pub fn charge(&mut self, t: usize, cost: &[f64], cost_bound: f64, mode: HaltMode) -> bool {
        for ((r, s), c) in self.remaining.iter_mut().zip(&mut self.spent).zip(cost) {
            *r -= c;
            *s += c;
        }
        let stop = match mode {
            HaltMode::Episode => self.remaining.iter().any(|r| *r < cost_bound),
            HaltMode::OverspendOnce => self.remaining.iter().any(|r| *r < 0.0),
        };
        self.tau = Some(t);
        if stop {
            self.halted = true;
        }
        stop
    }
}

/// One executed period.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub context_id: u64,
    pub theta_digest: u64,
    pub lambda: Vec<f64>,
    pub decision: String,
    pub rev_true: f64,
    pub rev_obs: f64,
    pub cost_true: Vec<f64>,
    pub cost_est: Vec<f64>,
    pub remaining: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub horizon: usize,
    pub records: Vec<TraceRecord>,
    pub halted: bool,
    /// `max_t ‖∇h(λ^t)‖∞` over executed periods.
    pub max_grad_h: f64,
}

impl RunTrace {
    /// Realized stopping time `τ_A`.
    pub fn tau(&self) -> usize {
        self.records.len()
    }

    pub fn summarize(&self, problem: &impl Problem) -> RunReport {
        let bounds = problem.bounds();
        let k = bounds.len();
        let mut spend = vec![0.0; k];
        let mut gap = vec![0.0; k];
        let mut learn_dual = 0.0;
        let mut revenue = 0.0;
        let mut revenue_observed = 0.0;
        let mut by_period = Vec::with_capacity(self.records.len());
        for r in &self.records {
            revenue += r.rev_true;
            revenue_observed += r.rev_obs;
            by_period.push(r.rev_true);
            for j in 0..k {
                spend[j] += r.cost_true[j];
                let d = r.cost_true[j] - r.cost_est[j];
                gap[j] += d;
                learn_dual += d * r.lambda[j];
            }
        }
        let violation = (0..k)
            .map(|j| match bounds.lower_target(j, self.horizon) {
                Some(target) => (target - spend[j]).max(0.0),
                None => 0.0,
            })
            .collect();
        RunReport {
            seed: self.seed,
            horizon: self.horizon,
            tau: self.tau(),
            halted: self.halted,
            revenue,
            revenue_observed,
            upper_target: (0..k)
                .map(|j| bounds.upper_target(j, self.horizon))
                .collect(),
            spend,
            violation,
            max_grad_h: self.max_grad_h,
            learn_dual_term: learn_dual,
            learn_cost_gap: gap.iter().fold(0.0, |m, v| m.max(v.abs())),
            revenue_by_period: by_period,
        }
    }

    /// One row per period: `t, lambda_1..K, z_digest, rev_true, rev_obs,
    /// cost_true_1..K, cost_est_1..K, remaining_1..K`.
    pub fn write_csv<W: Write>(&self, k: usize, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|j| format!("lambda_{j}")));
        header.extend(["z_digest", "rev_true", "rev_obs"].map(String::from));
        header.extend((1..=k).map(|j| format!("cost_true_{j}")));
        header.extend((1..=k).map(|j| format!("cost_est_{j}")));
        header.extend((1..=k).map(|j| format!("remaining_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.lambda.iter().map(|v| sig9(*v)));
            row.push(r.decision.clone());
            row.push(sig9(r.rev_true));
            row.push(sig9(r.rev_obs));
            row.extend(r.cost_true.iter().map(|v| sig9(*v)));
            row.extend(r.cost_est.iter().map(|v| sig9(*v)));
            row.extend(r.remaining.iter().map(|v| sig9(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub horizon: usize,
    pub tau: usize,
    pub halted: bool,
    /// `Σ_t f(z^t;θ*,w^t)`.
    pub revenue: f64,
    pub revenue_observed: f64,
    pub spend: Vec<f64>,
    pub upper_target: Vec<f64>,
    /// `[Tα_k b_k − spend_k]_+`, zero without a lower bound.
    pub violation: Vec<f64>,
    pub max_grad_h: f64,
    /// `Σ_t (c(z^t;θ*,w^t) − c(z^t;θ^t,w^t))ᵀλ^t`.
    pub learn_dual_term: f64,
    /// `‖Σ_t c(z^t;θ*,w^t) − c(z^t;θ^t,w^t)‖∞`.
    pub learn_cost_gap: f64,
    pub revenue_by_period: Vec<f64>,
}

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn digest_f64s(v: &[f64]) -> u64 {
    fnv1a(v.iter().flat_map(|x| x.to_bits().to_le_bytes()))
}

/// Runs one episode. Deterministic in `seed`.
pub fn run_episode<P: Problem>(
    problem: &P,
    learner: &mut Learner,
    settings: &EpisodeSettings,
    seed: u64,
) -> Result<RunTrace> {
    let mut arrivals = rng::stream(seed, Stream::Arrivals);
    let mut learner_rng = rng::stream(seed, Stream::Learner);
    run_episode_with(
        problem,
        learner,
        settings,
        seed,
        &mut arrivals,
        &mut learner_rng,
    )
}

fn run_episode_with<P: Problem>(
    problem: &P,
    learner: &mut Learner,
    settings: &EpisodeSettings,
    seed: u64,
    arrivals: &mut SimRng,
    learner_rng: &mut SimRng,
) -> Result<RunTrace> {
    let bounds = problem.bounds();
    let horizon = problem.horizon();
    let k = bounds.len();
    let cbar = problem.cost_bound();
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if learner.dim() != problem.theta_star().len() {
        return Err(Error::Dimension {
            expected: problem.theta_star().len(),
            got: learner.dim(),
        });
    }
    settings.h.validate(bounds)?;
    let mut lambda = match &settings.initial {
        Some(l) => {
            l.check_against(bounds)?;
            l.clone()
        }
        None => settings.h.initial_point(bounds),
    };
    let eta = settings.schedule.eta();
    let mut ledger = BudgetLedger::new((0..k).map(|j| bounds.upper_target(j, horizon)).collect());
    let mut records = Vec::with_capacity(horizon);
    let mut max_grad_h = 0.0f64;

    for t in 0..horizon {
        let grad = settings.h.gradient(lambda.lambda())?;
        max_grad_h = grad.iter().fold(max_grad_h, |m, v| m.max(v.abs()));

        let theta = learner.emit(learner_rng)?;
        let draw = problem.draw(t, arrivals);
        let w = &draw.context;
        let z = problem.oracle(&lambda, &theta, w)?;

        let cost_true = checked_cost(problem, &z, problem.theta_star(), w)?;
        let rev_true = checked_true_revenue(problem, &z, w)?;
        let rev_obs = rev_true + draw.noise;
        let stop = ledger.charge(t + 1, &cost_true, cbar, settings.halt);
        let observation = problem.features(&z, w).map(|features| Observation {
            features,
            reward: rev_obs,
        });
        learner.update(observation.as_ref())?;
        let cost_est = checked_cost(problem, &z, &theta, w)?;

        records.push(TraceRecord {
            t: t + 1,
            context_id: problem.context_id(w),
            theta_digest: digest_f64s(&theta),
            lambda: lambda.lambda().to_vec(),
            decision: problem.digest(&z),
            rev_true,
            rev_obs,
            cost_true,
            cost_est: cost_est.clone(),
            remaining: ledger.remaining().to_vec(),
        });
        if stop {
            break;
        }

        let g = subgradient_from_cost(&lambda, &cost_est, bounds)?;
        let next = dual_step(&settings.h, &lambda, &g, eta)?;
        check_step_optimality(&settings.h, &lambda, &g, eta, &next)?;
        lambda = next;
    }

    if settings.halt == HaltMode::Episode {
        for j in 0..k {
            let cap = bounds.upper_target(j, horizon);
            let spent = ledger.spent()[j];
            if spent > cap * (1.0 + 1e-12) + SAFETY_SLACK {
                return Err(Error::Invariant(format!(
                    "cumulative cost {spent} on coordinate {j} exceeds budget {cap}"
                )));
            }
        }
    }

    Ok(RunTrace {
        seed,
        horizon,
        records,
        halted: ledger.halted(),
        max_grad_h,
    })
}

/// How a batch of independent runs is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Serial,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise serial.
    #[default]
    Parallel,
}

/// Runs `n_sims` independent jobs with seeds `base + i`, preserving order.
/// Per-run failures are returned in place rather than aborting the batch.
pub fn run_seeds<T, F>(n_sims: usize, seed_base: u64, exec: Exec, job: F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if n_sims == 0 {
        return Err(Error::Config("n_sims must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_sims).map(|i| rng::run_seed(seed_base, i)).collect();
    Ok(match exec {
        Exec::Serial => seeds.into_iter().map(&job).collect(),
        Exec::Parallel => parallel_map(seeds, &job),
    })
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(
    seeds: Vec<u64>,
    job: &F,
) -> Vec<Result<T>> {
    use rayon::prelude::*;
    seeds.into_par_iter().map(job).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(
    seeds: Vec<u64>,
    job: &F,
) -> Vec<Result<T>> {
    seeds.into_iter().map(job).collect()
}

/// Builds a problem and learner per seed, runs an episode and summarizes it.
pub fn run_batch<P, F>(
    factory: F,
    settings: &EpisodeSettings,
    n_sims: usize,
    seed_base: u64,
    exec: Exec,
) -> Result<Vec<Result<RunReport>>>
where
    P: Problem,
    F: Fn(u64) -> Result<(P, Learner)> + Sync + Send,
{
    run_seeds(n_sims, seed_base, exec, |seed| {
        let (problem, mut learner) = factory(seed)?;
        let trace = run_episode(&problem, &mut learner, settings, seed)?;
        Ok(trace.summarize(&problem))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{BoundSpec, ContextDraw};

    /// Every period costs `unit` on one coordinate; the only decision is "spend".
    struct Flat {
        bounds: BoundSpec,
        horizon: usize,
        unit: f64,
    }

    impl Problem for Flat {
        type Context = ();
        type Decision = bool;
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn bounds(&self) -> &BoundSpec {
            &self.bounds
        }
        fn rev_bound(&self) -> f64 {
            1.0
        }
        fn cost_bound(&self) -> f64 {
            1.0
        }
        fn theta_star(&self) -> &[f64] {
            &[]
        }
        fn draw(&self, _t: usize, _rng: &mut SimRng) -> ContextDraw<()> {
            ContextDraw::exact(())
        }
        fn revenue(&self, z: &bool, _: &[f64], _: &()) -> f64 {
            if *z {
                1.0
            } else {
                0.0
            }
        }
        fn cost(&self, z: &bool, _: &[f64], _: &()) -> Vec<f64> {
            vec![if *z { self.unit } else { 0.0 }]
        }
        fn oracle(&self, _: &DualVector, _: &[f64], _: &()) -> Result<bool> {
            Ok(true)
        }
        fn digest(&self, z: &bool) -> String {
            z.to_string()
        }
    }

    fn settings() -> EpisodeSettings {
        EpisodeSettings::new(
            ReferenceFunction::Euclidean,
            StepSchedule::fixed(0.1).unwrap(),
        )
    }

    #[test]
    fn unit_cost_ledger_step_through() {
        // remaining after t: 5 - t; the rule fires first when 5 - t < 1, i.e. t = 5
        let p = Flat {
            bounds: BoundSpec::upper_only(vec![1.0]).unwrap(),
            horizon: 5,
            unit: 1.0,
        };
        let trace = run_episode(&p, &mut Learner::known(vec![]), &settings(), 0).unwrap();
        assert_eq!(trace.tau(), 5);
        assert!(trace.halted);
        let rep = trace.summarize(&p);
        assert_eq!(rep.spend, vec![5.0]);
        let remaining: Vec<f64> = trace.records.iter().map(|r| r.remaining[0]).collect();
        assert_eq!(remaining, vec![4.0, 3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn early_halt_when_cost_exceeds_rate() {
        // b = 0.5, T = 6: budget 3, unit costs; remaining 2, 1, 0 -> halts at t = 3
        let p = Flat {
            bounds: BoundSpec::upper_only(vec![0.5]).unwrap(),
            horizon: 6,
            unit: 1.0,
        };
        let trace = run_episode(&p, &mut Learner::known(vec![]), &settings(), 0).unwrap();
        assert_eq!(trace.tau(), 3);
        assert!(trace.summarize(&p).spend[0] <= 3.0);
    }

    #[test]
    fn zero_cost_runs_full_horizon() {
        let p = Flat {
            bounds: BoundSpec::new(vec![1.0], vec![0.5]).unwrap(),
            horizon: 7,
            unit: 0.0,
        };
        let trace = run_episode(&p, &mut Learner::known(vec![]), &settings(), 0).unwrap();
        assert_eq!(trace.tau(), 7);
        assert!(!trace.halted);
        let rep = trace.summarize(&p);
        assert_eq!(rep.spend, vec![0.0]);
        assert_eq!(rep.violation, vec![3.5]);
        assert_eq!(trace.records.last().unwrap().remaining, vec![7.0]);
    }

    #[test]
    fn overspend_once_mode_exceeds_by_one_period() {
        let p = Flat {
            bounds: BoundSpec::upper_only(vec![0.5]).unwrap(),
            horizon: 10,
            unit: 1.0,
        };
        let mut s = settings();
        s.halt = HaltMode::OverspendOnce;
        let trace = run_episode(&p, &mut Learner::known(vec![]), &s, 0).unwrap();
        // budget 5: remaining goes 4,3,2,1,0,-1 and stops there
        assert_eq!(trace.tau(), 6);
    }

    #[test]
    fn trace_csv_layout() {
        let p = Flat {
            bounds: BoundSpec::upper_only(vec![1.0]).unwrap(),
            horizon: 2,
            unit: 0.25,
        };
        let trace = run_episode(&p, &mut Learner::known(vec![]), &settings(), 0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,lambda_1,z_digest,rev_true,rev_obs,cost_true_1,cost_est_1,remaining_1"
        );
        assert_eq!(lines[1], "1,0,true,1,1,0.25,0.25,1.75");
        // λ² = [0 − 0.1·(1 − 0.25)]_+ = 0
        assert_eq!(lines[2], "2,0,true,1,1,0.25,0.25,1.5");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn batch_rejects_zero_sims() {
        let r = run_seeds(0, 0, Exec::Serial, Ok);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn batch_collects_failures_in_place() {
        let out = run_seeds(4, 10, Exec::Parallel, |s| {
            if s == 12 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(s)
            }
        })
        .unwrap();
        assert_eq!(out.len(), 4);
        assert!(out[2].is_err());
        assert_eq!(*out[3].as_ref().unwrap(), 13);
    }
}
