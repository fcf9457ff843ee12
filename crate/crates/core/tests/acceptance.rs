//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::time::Instant;

use pacer_core::bandit::{hindsight_opt, BanditInstance, BanditSetup, NoiseLevels};
use pacer_core::bidding::{Depletion, MarketSpec, Policy, SimReport, SimSettings, DEFAULT_BATCH};
use pacer_core::controller::{EpisodeSettings, Exec, RunReport};
use pacer_core::learners::{LearnerKind, LearnerSpec};
use pacer_core::metrics::compute_regret;
use pacer_core::mirror::{
    check_step_optimality, dual_step, Quadratic, ReferenceFunction, StepSchedule,
};
use pacer_core::oracle::{self, opt_benchmark, opt_gamma, suite, weak_duality_check, FIXTURES};
use pacer_core::problem::{Cone, DualVector, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u8,
    passed: bool,
    summary: String,
}

struct Suite {
    outcomes: Vec<Outcome>,
    /// `(spend, T·b)` of every episode-mode run, for criterion 4.
    spends: Vec<(f64, f64)>,
    /// Mirror steps taken inside controller runs; each was checked in place.
    controller_steps: usize,
}

impl Suite {
    fn record(&mut self, id: u8, passed: bool, summary: String, started: Instant) {
        let line = format!(
            "{} criterion {id}: {summary} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        println!("{line}");
        self.outcomes.push(Outcome {
            id,
            passed,
            summary,
        });
    }

    fn note_bandit_runs(&mut self, reports: &[RunReport]) {
        for r in reports {
            self.spends.push((r.spend[0], r.upper_target[0]));
            self.controller_steps += r.tau;
        }
    }

    fn note_sims(&mut self, reports: &[SimReport]) {
        for r in reports {
            for c in &r.clients {
                self.spends.push((c.spend, c.budget));
            }
        }
    }
}

fn unwrap_all<T>(runs: Vec<pacer_core::Result<T>>) -> Vec<T> {
    runs.into_iter().map(|r| r.expect("run failed")).collect()
}

/// `max/min < 2`, treating an all-zero series as constant.
fn within_factor_two(v: &[f64]) -> bool {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 && lo == 0.0 {
        return true;
    }
    lo > 0.0 && hi / lo < 2.0
}

fn criterion_1(s: &mut Suite) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    let mut cases = 0;
    for horizon in [4usize, 8, 12, 16] {
        for rho in [1.0, 2.0, 4.0] {
            for _ in 0..100 {
                let d = rng.random_range(1..5);
                let n = rng.random_range(1..6);
                let seed = rng.random();
                let inst =
                    BanditInstance::generate(d, n, horizon, rho, NoiseLevels::default(), seed)
                        .unwrap();
                let maxima = inst.realized_maxima(seed);
                let fast = hindsight_opt(&maxima, rho).map(|k| k.value).ok();
                // Enumerate on the descending order so both sides add in the same order.
                let mut sorted = maxima.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let brute = common::brute_knapsack(&sorted, rho);
                cases += 1;
                if fast != brute {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    s.record(
        1,
        mismatches == 0 && secs < 5.0,
        format!("knapsack oracle vs 2^T enumeration: {mismatches} mismatches in {cases} instances, {secs:.2}s (< 5s)"),
        t0,
    );
}

fn criterion_2(s: &mut Suite) {
    let t0 = Instant::now();
    let half = oracle::fixture("gamma-half").unwrap();
    let (h05, h1) = (
        opt_gamma(&half, 0.5).unwrap(),
        opt_gamma(&half, 1.0).unwrap(),
    );
    let ok_half = (h05 - 1.0 / 6.0).abs() <= 1e-3 && h1.abs() <= 1e-3;

    let none = opt_benchmark(&oracle::fixture("no-solution").unwrap(), 1001).unwrap();
    let finite = none
        .curve
        .iter()
        .filter(|(_, v)| *v != f64::NEG_INFINITY)
        .count();

    let inf = opt_benchmark(&oracle::fixture("infinite-solutions").unwrap(), 1001).unwrap();
    let lo = inf.curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let hi = inf
        .curve
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok_inf = lo.is_finite() && hi - lo <= 1e-6;

    s.record(
        2,
        ok_half && finite == 0 && ok_inf && none.curve.len() == 1001,
        format!(
            "OPT(P,0.5) = {h05:.6} (1/6), OPT(P,1) = {h1:.6}; no-solution finite at {finite}/1001 gammas; \
             infinite-solutions range {:.2e}",
            hi - lo
        ),
        t0,
    );
}

fn criterion_3(s: &mut Suite) {
    let t0 = Instant::now();
    let mut failures = 0;
    let mut checked = 0;
    for (i, name) in FIXTURES.iter().enumerate() {
        let inst = oracle::fixture(name).unwrap();
        let opt = opt_benchmark(&inst, 1001).unwrap().value;
        let lambdas = suite::random_lambdas(inst.bounds(), 50, 900 + i as u64).unwrap();
        let report = weak_duality_check(&inst, opt, &lambdas).unwrap();
        failures += report.failures;
        checked += lambdas.len();
    }
    s.record(
        3,
        failures == 0 && checked == 50 * FIXTURES.len(),
        format!(
            "OPT(P) <= T·D(lambda) + 1e-9: {failures} failures over {checked} duals on {} fixtures",
            FIXTURES.len()
        ),
        t0,
    );
}

fn known_setup(horizon: usize) -> BanditSetup {
    BanditSetup {
        d: 5,
        n: 10,
        horizon,
        rho: 4.0,
        noise: NoiseLevels::default(),
        learner: LearnerSpec::of(LearnerKind::Known),
    }
}

fn criteria_5_and_6(s: &mut Suite) {
    let t0 = Instant::now();
    let seeds = 50;
    let grid = [1000usize, 4000, 10_000, 16_000];
    let mut rel_at_10k = 0.0;
    let mut regret = Vec::new();
    let mut violation = Vec::new();
    for &t in &grid {
        let setup = known_setup(t);
        let settings = EpisodeSettings::new(
            ReferenceFunction::Euclidean,
            StepSchedule::scaled(1.0, t).unwrap(),
        );
        let runs = unwrap_all(
            setup
                .run_batch(&settings, seeds, 5_000, Exec::Parallel)
                .unwrap(),
        );
        let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
        let hindsight: Vec<f64> = runs.iter().map(|r| r.hindsight).collect();
        s.note_bandit_runs(&reports);
        let agg = compute_regret(&reports, &hindsight).unwrap();
        if t == 10_000 {
            rel_at_10k = agg.relative_revenue_mean;
        } else {
            regret.push(agg.regret_mean / (t as f64).sqrt());
            violation.push(agg.violation_per_sqrt_t);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok5 = rel_at_10k >= 0.98 && within_factor_two(&regret) && secs < 120.0;
    s.record(
        5,
        ok5,
        format!(
            "known theta, d=5 n=10: relative revenue {rel_at_10k:.4} at T=10000 (>= 0.98); \
             regret/sqrt(T) at T=1000,4000,16000 = {:.4?} (factor < 2); {secs:.1}s (< 120s)",
            regret
        ),
        t0,
    );
    s.record(
        6,
        within_factor_two(&violation),
        format!(
            "lower-bound violation/sqrt(T) at T=1000,4000,16000 = {violation:.4?} (factor < 2)"
        ),
        t0,
    );
}

fn criterion_7(s: &mut Suite) {
    let t0 = Instant::now();
    let horizon = 5000;
    let relative = |kind: LearnerKind, rn: f64, cn: f64, s: &mut Suite| -> f64 {
        let setup = BanditSetup {
            d: 25,
            n: 25,
            horizon,
            rho: 4.0,
            noise: NoiseLevels::new(rn, cn).unwrap(),
            learner: LearnerSpec::of(kind),
        };
        let settings = EpisodeSettings::new(
            ReferenceFunction::Euclidean,
            StepSchedule::scaled(1.0, horizon).unwrap(),
        );
        let runs = unwrap_all(
            setup
                .run_batch(&settings, 20, 7_000, Exec::Parallel)
                .unwrap(),
        );
        let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
        let hindsight: Vec<f64> = runs.iter().map(|r| r.hindsight).collect();
        s.note_bandit_runs(&reports);
        compute_regret(&reports, &hindsight)
            .unwrap()
            .relative_revenue_mean
    };
    let ts0 = relative(LearnerKind::Thompson, 0.0, 0.0, s);
    let ls0 = relative(LearnerKind::LeastSquares, 0.0, 0.0, s);
    let ridge = relative(LearnerKind::Ridge, 0.5, 0.1, s);
    let ts = relative(LearnerKind::Thompson, 0.5, 0.1, s);
    let secs = t0.elapsed().as_secs_f64();
    s.record(
        7,
        ts0 > ls0 && ridge >= 2.0 * ts && secs < 600.0,
        format!(
            "d=n=25 T=5000: noiseless thompson {ts0:.3} > least squares {ls0:.3}; \
             noise (0.5, 0.1) ridge {ridge:.3} >= 2 x thompson {ts:.3}; {secs:.0}s (< 600s)"
        ),
        t0,
    );
}

fn criterion_8(s: &mut Suite) {
    let t0 = Instant::now();
    let market = MarketSpec::default().generate(2024).unwrap();
    let settings = SimSettings {
        batch: DEFAULT_BATCH,
        depletion: Depletion::PerClient,
    };
    let seeds = 50;
    let dual = unwrap_all(
        market
            .run_batch(
                &Policy::dual(5.0).unwrap(),
                settings,
                seeds,
                0,
                Exec::Parallel,
            )
            .unwrap(),
    );
    let mean_profit = |r: &[SimReport]| r.iter().map(|x| x.profit).sum::<f64>() / r.len() as f64;
    let dual_profit = mean_profit(&dual);
    let in_range: f64 =
        dual.iter().map(SimReport::fraction_in_range).sum::<f64>() / dual.len() as f64;
    s.note_sims(&dual);

    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=25 {
        let gamma = 0.25 + 0.05 * i as f64;
        let runs = unwrap_all(
            market
                .run_batch(
                    &Policy::greedy(gamma).unwrap(),
                    settings,
                    seeds,
                    0,
                    Exec::Parallel,
                )
                .unwrap(),
        );
        s.note_sims(&runs);
        let p = mean_profit(&runs);
        if p > best.0 {
            best = (p, gamma);
        }
    }
    s.record(
        8,
        dual_profit >= best.0 && in_range >= 0.9,
        format!(
            "K=20, 20000 auctions, 50 seeds: dual profit {dual_profit:.1} >= best greedy {:.1} (gamma {:.2}); \
             clients in [0.95, 1] utilization {:.1}% (>= 90%)",
            best.0,
            best.1,
            100.0 * in_range
        ),
        t0,
    );
}

/// Episode-halt bidding runs, so criterion 4 also covers the bidding benchmark.
fn episode_mode_bidding(s: &mut Suite) {
    let market = MarketSpec::default().generate(77).unwrap();
    let settings = SimSettings {
        batch: DEFAULT_BATCH,
        depletion: Depletion::Episode,
    };
    for policy in [Policy::dual(5.0).unwrap(), Policy::greedy(1.0).unwrap()] {
        let runs = unwrap_all(
            market
                .run_batch(&policy, settings, 10, 0, Exec::Parallel)
                .unwrap(),
        );
        s.note_sims(&runs);
    }
}

fn criterion_4(s: &mut Suite) {
    let t0 = Instant::now();
    let worst = s
        .spends
        .iter()
        .map(|(spend, cap)| spend - cap)
        .fold(f64::NEG_INFINITY, f64::max);
    let violations = s.spends.iter().filter(|(spend, cap)| spend > cap).count();
    s.record(
        4,
        violations == 0 && !s.spends.is_empty(),
        format!(
            "spend <= T·b on {} (run, resource) pairs across bandit and bidding runs: {violations} violations, \
             max spend - cap {worst:.3}",
            s.spends.len()
        ),
        t0,
    );
}

fn criterion_9(s: &mut Suite) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let geometries = [
        ReferenceFunction::Euclidean,
        ReferenceFunction::Quadratic(Quadratic::diagonal(&[1.7]).unwrap()),
        ReferenceFunction::entropy(),
    ];
    let mut worst: f64 = 0.0;
    let mut kkt_failures = 0;
    let mut cases = 0;
    for h in &geometries {
        for _ in 0..200 {
            let entropy = matches!(h, ReferenceFunction::Entropy { .. });
            let cone = if entropy || rng.random_bool(0.5) {
                Cone::NonNeg
            } else {
                Cone::Free
            };
            let prev: f64 = match cone {
                Cone::NonNeg if entropy => rng.random_range(0.01..3.0),
                Cone::NonNeg => rng.random_range(0.0..3.0),
                Cone::Free => rng.random_range(-3.0..3.0),
            };
            let g: f64 = rng.random_range(-2.0..2.0);
            let eta: f64 = rng.random_range(0.01..1.5);
            let lam = DualVector::new(vec![prev], vec![cone]).unwrap();
            let next = dual_step(h, &lam, &[g], eta).unwrap();
            if check_step_optimality(h, &lam, &[g], eta, &next).is_err() {
                kkt_failures += 1;
            }
            let obj = |l: f64| {
                let v = match h {
                    ReferenceFunction::Euclidean => 0.5 * (l - prev).powi(2),
                    ReferenceFunction::Quadratic(q) => q.matrix()[(0, 0)] * (l - prev).powi(2),
                    ReferenceFunction::Entropy { .. } => l * (l / prev).ln() - l + prev,
                };
                l * g + v / eta
            };
            let reach = 2.0 * prev.abs() * (eta * g.abs()).exp() + 4.0 * eta * g.abs() + 5.0;
            let lo = match cone {
                Cone::NonNeg if entropy => 1e-12,
                Cone::NonNeg => 0.0,
                Cone::Free => -reach,
            };
            let grid = common::grid_argmin(obj, lo, reach);
            worst = worst.max((next.lambda()[0] - grid).abs());
            cases += 1;
        }
    }
    s.record(
        9,
        worst <= 1e-6 && kkt_failures == 0,
        format!(
            "dual_step vs grid search on {cases} cases (200 per geometry): max gap {worst:.2e} (<= 1e-6); \
             gradient inequality: {kkt_failures} failures here, checked on all {} controller steps",
            s.controller_steps
        ),
        t0,
    );
}

#[test]
fn acceptance_criteria() {
    let mut s = Suite {
        outcomes: Vec::new(),
        spends: Vec::new(),
        controller_steps: 0,
    };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    criteria_5_and_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    episode_mode_bidding(&mut s);
    criterion_4(&mut s);
    criterion_9(&mut s);

    s.outcomes.sort_by_key(|o| o.id);
    let failed: Vec<String> = s
        .outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("criterion {}: {}", o.id, o.summary))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        s.outcomes.len() - failed.len(),
        s.outcomes.len()
    );
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}
