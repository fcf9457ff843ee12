//! Linear contextual bandits with a two-sided bound on the number of actions.
//!
//! Each period shows a `d × n` matrix `W^t`; playing arm `i` earns
//! `W^t_iᵀθ*` (observed with noise) and costs `ρ`. Total cost must land in
//! `[T/2, T]`, i.e. one resource with `b = 1`, `α = 0.5`.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::controller::{run_episode, run_seeds, EpisodeSettings, Exec, RunReport};
use crate::error::{check_dim, Error, Result};
use crate::learners::LearnerSpec;
use crate::problem::{BoundSpec, ContextDraw, DualVector, Problem};
use crate::rng::{self, SimRng, Stream};

pub const DEFAULT_RHO: f64 = 4.0;
const LOWER_FRACTION: f64 = 0.5;

/// Noise levels: half-widths of the uniform terms added to `W^t` entries and
/// to observed revenue.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseLevels {
    pub context: f64,
    pub revenue: f64,
}

impl NoiseLevels {
    pub fn new(revenue: f64, context: f64) -> Result<Self> {
        for (name, v) in [("revenue", revenue), ("context", context)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} noise {v} must be a non-negative number"
                )));
            }
        }
        Ok(NoiseLevels { context, revenue })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    d: usize,
    n: usize,
    /// Row-major `d × n`, unit-norm rows.
    w: Vec<f64>,
    theta_star: Vec<f64>,
    rho: f64,
    noise: NoiseLevels,
    horizon: usize,
    bounds: BoundSpec,
    seed: u64,
}

/// Realized context: `None` when `W^t = W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditContext {
    perturbed: Option<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl BanditInstance {
    /// Builds an instance from explicit data; rows of `w` and `theta_star` are taken as given.
    pub fn from_parts(
        w: Vec<Vec<f64>>,
        theta_star: Vec<f64>,
        rho: f64,
        noise: NoiseLevels,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = theta_star.len();
        if w.is_empty() || n == 0 {
            return Err(Error::Config("bandit instance needs d, n >= 1".into()));
        }
        for row in &w {
            check_dim(n, row.len())?;
        }
        if !(rho >= 0.5 && rho.is_finite()) {
            return Err(Error::Config(format!(
                "action cost rho = {rho} must be at least 0.5 for the lower bound to be attainable"
            )));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let d = w.len();
        Ok(BanditInstance {
            d,
            n,
            w: w.into_iter().flatten().collect(),
            theta_star,
            rho,
            noise,
            horizon,
            bounds: BoundSpec::new(vec![1.0], vec![LOWER_FRACTION])?,
            seed,
        })
    }

    /// Draws `W` and `θ*` with i.i.d. `U(−0.5, 0.5)` entries and normalizes rows and `θ*`.
    pub fn generate(
        d: usize,
        n: usize,
        horizon: usize,
        rho: f64,
        noise: NoiseLevels,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Config("bandit instance needs d, n >= 1".into()));
        }
        let mut rng = rng::stream(seed, Stream::Instance);
        let mut draw = |len: usize| {
            let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            normalize(&mut v);
            v
        };
        let theta = draw(n);
        let w = (0..d).map(|_| draw(n)).collect();
        Self::from_parts(w, theta, rho, noise, horizon, seed)
    }

    pub fn arms(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn noise(&self) -> NoiseLevels {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn row<'a>(&'a self, w: &'a BanditContext, i: usize) -> &'a [f64] {
        match &w.perturbed {
            Some(m) => &m[i * self.n..(i + 1) * self.n],
            None => self.mean_row(i),
        }
    }

    /// `argmax_i W^t_iᵀθ` (lowest index on ties) and its value.
    pub fn best_arm(&self, theta: &[f64], w: &BanditContext) -> (usize, f64) {
        (0..self.d).map(|i| (i, dot(self.row(w, i), theta))).fold(
            (0, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
    }

    /// `max_i W^t_iᵀθ*` for every period of the arrival stream under `seed`,
    /// including periods after a run would have halted.
    pub fn realized_maxima(&self, seed: u64) -> Vec<f64> {
        let mut arrivals = rng::stream(seed, Stream::Arrivals);
        (0..self.horizon)
            .map(|t| {
                let draw = self.draw(t, &mut arrivals);
                self.best_arm(&self.theta_star, &draw.context).1
            })
            .collect()
    }

    /// Writes `W` and `θ*` as CSV blocks under a seed header. Values round-trip exactly.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# seed={} d={} n={} rho={}",
            self.seed, self.d, self.n, self.rho
        )?;
        writeln!(out, "[W]")?;
        for i in 0..self.d {
            let row: Vec<String> = self.mean_row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        writeln!(out, "[theta_star]")?;
        let row: Vec<String> = self.theta_star.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(","))
    }

    /// Reads a dump back. Noise levels and horizon are not part of the dump.
    pub fn load<R: BufRead>(input: R, noise: NoiseLevels, horizon: usize) -> Result<Self> {
        let mut seed = None;
        let mut rho = DEFAULT_RHO;
        let mut w = Vec::new();
        let mut theta = None;
        let mut block = "";
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("seed", v)) => seed = Some(parse_num::<u64>(v, lineno)?),
                        Some(("rho", v)) => rho = parse_num::<f64>(v, lineno)?,
                        _ => {}
                    }
                }
                continue;
            }
            match line {
                "[W]" => block = "W",
                "[theta_star]" => block = "theta",
                _ => {
                    let row = line
                        .split(',')
                        .map(|v| parse_num::<f64>(v.trim(), lineno))
                        .collect::<Result<Vec<_>>>()?;
                    match block {
                        "W" => w.push(row),
                        "theta" => theta = Some(row),
                        _ => {
                            return Err(Error::Parse(format!(
                                "line {}: data outside a block",
                                lineno + 1
                            )))
                        }
                    }
                }
            }
        }
        let theta = theta.ok_or_else(|| Error::Parse("missing [theta_star] block".into()))?;
        Self::from_parts(w, theta, rho, noise, horizon, seed.unwrap_or(0))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {}: cannot parse `{s}`", lineno + 1)))
}

impl Problem for BanditInstance {
    type Context = BanditContext;
    /// Arm played, or `None` for no action.
    type Decision = Option<usize>;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn bounds(&self) -> &BoundSpec {
        &self.bounds
    }

    fn rev_bound(&self) -> f64 {
        1.0 + self.noise.context * (self.n as f64).sqrt()
    }

    fn cost_bound(&self) -> f64 {
        self.rho
    }

    fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn draw(&self, _t: usize, rng: &mut SimRng) -> ContextDraw<BanditContext> {
        let s = self.noise.context;
        let perturbed =
            (s > 0.0).then(|| self.w.iter().map(|v| v + rng.random_range(-s..s)).collect());
        let r = self.noise.revenue;
        let noise = if r > 0.0 {
            rng.random_range(-r..r)
        } else {
            0.0
        };
        ContextDraw {
            context: BanditContext { perturbed },
            noise,
        }
    }

    fn revenue(&self, z: &Option<usize>, theta: &[f64], w: &BanditContext) -> f64 {
        z.map_or(0.0, |i| dot(self.row(w, i), theta))
    }

    fn cost(&self, z: &Option<usize>, _theta: &[f64], _w: &BanditContext) -> Vec<f64> {
        vec![if z.is_some() { self.rho } else { 0.0 }]
    }

    /// Plays the best arm when its value beats the dual price `λρ`. Over the capped
    /// simplex the objective is linear, so a vertex is optimal.
    fn oracle(
        &self,
        lambda: &DualVector,
        theta: &[f64],
        w: &BanditContext,
    ) -> Result<Option<usize>> {
        check_dim(1, lambda.len())?;
        check_dim(self.n, theta.len())?;
        let (arm, value) = self.best_arm(theta, w);
        Ok((value - lambda.lambda()[0] * self.rho > 0.0).then_some(arm))
    }

    fn features(&self, z: &Option<usize>, w: &BanditContext) -> Option<Vec<f64>> {
        z.map(|i| self.row(w, i).to_vec())
    }

    fn digest(&self, z: &Option<usize>) -> String {
        z.map_or_else(|| "-".to_string(), |i| i.to_string())
    }
}

/// Best hindsight action schedule for sorted per-period values.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub value: f64,
    pub i_max: usize,
    pub sorted: Vec<f64>,
}

/// Admissible action counts `[⌈T/(2ρ)⌉, min(T, ⌊T/ρ⌋)]`.
pub fn action_range(horizon: usize, rho: f64) -> (usize, usize) {
    let t = horizon as f64;
    let lo = (t / (2.0 * rho)).ceil() as usize;
    let hi = ((t / rho).floor() as usize).min(horizon);
    (lo, hi)
}

/// Hindsight optimum given the per-period best values `m_t = max_i W^t_iᵀθ*`:
/// take the `i_max` largest, with `i_max` chosen over the admissible counts.
pub fn hindsight_opt(maxima: &[f64], rho: f64) -> Result<KnapsackSolution> {
    let horizon = maxima.len();
    let (lo, hi) = action_range(horizon, rho);
    if lo > hi {
        return Err(Error::Infeasible(format!(
            "no integer action count in [{lo}, {hi}] for T = {horizon}, rho = {rho}"
        )));
    }
    let mut sorted = maxima.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut best = (f64::NEG_INFINITY, lo);
    for (i, m) in sorted.iter().enumerate().take(hi) {
        prefix += m;
        let count = i + 1;
        if count >= lo && prefix > best.0 {
            best = (prefix, count);
        }
    }
    if lo == 0 && best.0 < 0.0 {
        best = (0.0, 0);
    }
    Ok(KnapsackSolution {
        value: best.0,
        i_max: best.1,
        sorted,
    })
}

/// Knobs of one bandit experiment cell.
#[derive(Debug, Clone)]
pub struct BanditSetup {
    pub d: usize,
    pub n: usize,
    pub horizon: usize,
    pub rho: f64,
    pub noise: NoiseLevels,
    pub learner: LearnerSpec,
}

/// One bandit run and its hindsight benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRun {
    pub report: RunReport,
    pub hindsight: f64,
}

impl BanditSetup {
    pub fn instance(&self, seed: u64) -> Result<BanditInstance> {
        BanditInstance::generate(self.d, self.n, self.horizon, self.rho, self.noise, seed)
    }

    pub fn run(&self, settings: &EpisodeSettings, seed: u64) -> Result<BanditRun> {
        let instance = self.instance(seed)?;
        let mut learner =
            self.learner
                .build(instance.theta_star(), self.horizon, self.noise.revenue)?;
        let trace = run_episode(&instance, &mut learner, settings, seed)?;
        let hindsight = hindsight_opt(&instance.realized_maxima(seed), self.rho)?.value;
        Ok(BanditRun {
            report: trace.summarize(&instance),
            hindsight,
        })
    }

    /// Seeds `base + i`; the same seed yields the same instance and arrivals for every learner.
    pub fn run_batch(
        &self,
        settings: &EpisodeSettings,
        n_sims: usize,
        seed_base: u64,
        exec: Exec,
    ) -> Result<Vec<Result<BanditRun>>> {
        run_seeds(n_sims, seed_base, exec, |seed| self.run(settings, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Learner, LearnerKind};
    use crate::mirror::{ReferenceFunction, StepSchedule};

    fn quiet() -> NoiseLevels {
        NoiseLevels::default()
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let a = BanditInstance::generate(4, 3, 10, 4.0, quiet(), 9).unwrap();
        assert_eq!(
            a,
            BanditInstance::generate(4, 3, 10, 4.0, quiet(), 9).unwrap()
        );
        assert_ne!(
            a,
            BanditInstance::generate(4, 3, 10, 4.0, quiet(), 10).unwrap()
        );
        for i in 0..4 {
            assert!((dot(a.mean_row(i), a.mean_row(i)) - 1.0).abs() < 1e-12);
        }
        assert!((dot(a.theta_star(), a.theta_star()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_instance_is_plus_minus_one() {
        for seed in 0..20 {
            let a = BanditInstance::generate(1, 1, 5, 4.0, quiet(), seed).unwrap();
            assert_eq!(a.mean_row(0)[0].abs(), 1.0);
            assert_eq!(a.theta_star()[0].abs(), 1.0);
        }
    }

    #[test]
    fn rho_below_half_is_rejected() {
        assert!(matches!(
            BanditInstance::generate(2, 2, 10, 0.4, quiet(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn oracle_examples() {
        let inst = BanditInstance::from_parts(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![0.3, 0.6],
            4.0,
            quiet(),
            10,
            0,
        )
        .unwrap();
        let w = BanditContext { perturbed: None };
        let lam = |v: f64| DualVector::for_bounds(inst.bounds(), vec![v]).unwrap();
        // ties between arms 1 and 2 go to 1
        assert_eq!(inst.oracle(&lam(0.0), &[0.3, 0.6], &w).unwrap(), Some(1));
        // 0.6 - 4·0.15 = 0 is not strictly profitable
        assert_eq!(inst.oracle(&lam(0.15), &[0.3, 0.6], &w).unwrap(), None);
        assert_eq!(inst.oracle(&lam(1e6), &[0.3, 0.6], &w).unwrap(), None);
        // a negative price makes even a negative arm worth playing
        assert_eq!(inst.oracle(&lam(-0.5), &[-0.3, -0.6], &w).unwrap(), Some(0));
    }

    #[test]
    fn knapsack_examples() {
        let sol = hindsight_opt(&[0.1, 0.9, 0.0, 0.7, 0.2, 0.3, 0.0, 0.1], 4.0).unwrap();
        assert_eq!(sol.i_max, 2);
        assert!((sol.value - 1.6).abs() < 1e-15);

        let neg = [-0.5, -0.25, -1.0, -0.125];
        let sol = hindsight_opt(&neg, 0.5).unwrap();
        assert_eq!(sol.i_max, 4);
        assert_eq!(sol.value, -1.875);
    }

    #[test]
    fn knapsack_reports_infeasible_range() {
        // T = 1, rho = 2: ⌈1/4⌉ = 1 > ⌊1/2⌋ = 0
        assert!(matches!(
            hindsight_opt(&[1.0], 2.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn dump_round_trips() {
        let a = BanditInstance::generate(3, 4, 10, 4.0, quiet(), 77).unwrap();
        let mut buf = Vec::new();
        a.dump(&mut buf).unwrap();
        let b = BanditInstance::load(buf.as_slice(), quiet(), 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn realized_maxima_match_the_run() {
        let noise = NoiseLevels::new(0.1, 0.1).unwrap();
        let inst = BanditInstance::generate(3, 2, 40, 4.0, noise, 5).unwrap();
        let settings = EpisodeSettings::new(
            ReferenceFunction::Euclidean,
            StepSchedule::scaled(1.0, 40).unwrap(),
        );
        let mut learner = Learner::known(inst.theta_star().to_vec());
        let trace = run_episode(&inst, &mut learner, &settings, 5).unwrap();
        let maxima = inst.realized_maxima(5);
        for r in &trace.records {
            if r.decision != "-" {
                // known θ* plays the realized best arm
                assert!((r.rev_true - maxima[r.t - 1]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn paired_seeds_share_instances_across_learners() {
        let setup = |kind| BanditSetup {
            d: 3,
            n: 3,
            horizon: 50,
            rho: 4.0,
            noise: quiet(),
            learner: LearnerSpec::of(kind),
        };
        let a = setup(LearnerKind::Known).instance(3).unwrap();
        let b = setup(LearnerKind::Thompson).instance(3).unwrap();
        assert_eq!(a, b);
    }
}
