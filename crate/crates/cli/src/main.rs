use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pacer_core::bidding::{BidLog, Depletion, Policy, SimReport};
use pacer_core::config::{DepletionKind, ExperimentConfig};
use pacer_core::controller::Exec;
use pacer_core::learners::LearnerKind;
use pacer_core::metrics::{self, Entry, Format};
use pacer_core::oracle::{self, suite};
use pacer_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "pacer",
    version,
    about = "Dual mirror descent pacing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Constrained linear contextual bandits, every learner × noise pair.
    Bandits {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run a single learner instead of the configured list.
        #[arg(long)]
        learner: Option<LearnerKind>,
        #[arg(long = "T", alias = "horizon")]
        horizon: Option<usize>,
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seeds one after another instead of on the thread pool.
        #[arg(long)]
        serial: bool,
    },
    /// Second-price bidding for several clients on a log or a synthetic corpus.
    Bidding {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyArg::Dual)]
        policy: PolicyArg,
        /// Greedy bid multiplier.
        #[arg(long)]
        gamma: Option<f64>,
        /// Dual step size.
        #[arg(long)]
        eta: Option<f64>,
        /// Auction log CSV (`auction_id,mp,r_1,...`).
        #[arg(long)]
        logs: Option<PathBuf>,
        /// Number of simulations.
        #[arg(long)]
        seeds: Option<usize>,
        /// Base seed; also seeds the synthetic corpus.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        depletion: Option<DepletionArg>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
    },
    /// Writes the synthetic auction corpus as a log CSV.
    Logs {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact OPT(P,γ) curve of a bundled tiny instance.
    Fixture {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = oracle::DEFAULT_GAMMA_POINTS)]
        gamma_points: usize,
        /// Optional CSV of the γ curve.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the fixture and weak-duality checks.
    Verify {
        #[arg(long, default_value_t = oracle::DEFAULT_GAMMA_POINTS)]
        gamma_points: usize,
        #[arg(long, default_value_t = 50)]
        lambdas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Configuration helpers.
    Config {
        #[arg(long)]
        print_defaults: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Dual,
    Greedy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DepletionArg {
    Episode,
    PerClient,
    OverspendOnce,
}

impl From<DepletionArg> for DepletionKind {
    fn from(d: DepletionArg) -> Self {
        match d {
            DepletionArg::Episode => DepletionKind::Episode,
            DepletionArg::PerClient => DepletionKind::PerClient,
            DepletionArg::OverspendOnce => DepletionKind::OverspendOnce,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn exec(serial: bool) -> Exec {
    if serial {
        Exec::Serial
    } else {
        Exec::Parallel
    }
}

/// Fails the batch on the first run error, preferring invariant violations.
fn collect<T>(runs: Vec<Result<T>>) -> Result<Vec<T>> {
    if let Some(pos) = runs
        .iter()
        .position(|r| r.as_ref().is_err_and(Error::is_invariant))
    {
        return Err(runs
            .into_iter()
            .nth(pos)
            .and_then(|r| r.err())
            .expect("error at position"));
    }
    runs.into_iter().collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn bandits(mut cfg: ExperimentConfig, learner: Option<LearnerKind>, serial: bool) -> Result<()> {
    if let Some(l) = learner {
        cfg.bandits.learners = vec![l];
    }
    cfg.validate()?;
    let b = &cfg.bandits;
    let settings = b.episode()?;
    let mut entries = Vec::new();
    for &kind in &b.learners {
        for &noise in &b.noise {
            let setup = b.setup(kind, noise)?;
            let runs = collect(setup.run_batch(&settings, cfg.n_sims, cfg.seed, exec(serial))?)?;
            let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
            let hindsight: Vec<f64> = runs.iter().map(|r| r.hindsight).collect();
            entries.push(Entry {
                learner: kind.label().to_string(),
                noise,
                report: metrics::compute_regret(&reports, &hindsight)?,
            });
        }
    }
    let mut written = metrics::emit_report(&entries, Format::Csv, &cfg.out_dir)?;
    written.extend(metrics::emit_report(&entries, Format::Text, &cfg.out_dir)?);
    print!("{}", metrics::comparison_table(&entries));
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn bidding_summary(reports: &[(u64, SimReport)]) -> String {
    let mut s = String::from(
        "seed,profit,wins,negative_profit_wins,auctions_processed,fraction_in_range\n",
    );
    for (seed, r) in reports {
        s.push_str(&format!(
            "{seed},{},{},{},{},{}\n",
            pacer_core::fmt::sig9(r.profit),
            r.wins,
            r.negative_profit_wins,
            r.auctions_processed,
            pacer_core::fmt::sig9(r.fraction_in_range())
        ));
    }
    s
}

fn bidding(
    cfg: &ExperimentConfig,
    policy: PolicyArg,
    gamma: Option<f64>,
    serial: bool,
) -> Result<()> {
    let bc = &cfg.bidding;
    let policy = match policy {
        PolicyArg::Dual => bc.dual_policy()?,
        PolicyArg::Greedy => Policy::greedy(
            gamma.ok_or_else(|| Error::Config("--policy greedy needs --gamma".into()))?,
        )?,
    };
    let market = match &bc.logs {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            bc.market.from_log(BidLog::read_csv(file)?, cfg.seed)?
        }
        None => bc.market.generate(cfg.seed)?,
    };
    let settings = bc.settings();
    let runs = collect(market.run_batch(&policy, settings, cfg.n_sims, cfg.seed, exec(serial))?)?;
    let seeded: Vec<(u64, SimReport)> = runs
        .into_iter()
        .enumerate()
        .map(|(i, r)| (pacer_core::rng::run_seed(cfg.seed, i), r))
        .collect();

    if settings.depletion == Depletion::Episode {
        for (seed, r) in &seeded {
            if let Some(c) = r.clients.iter().find(|c| c.spend > c.budget) {
                return Err(Error::Invariant(format!(
                    "seed {seed}: spend {} exceeds budget {}",
                    c.spend, c.budget
                )));
            }
        }
    }

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("bidding_summary.csv"), &bidding_summary(&seeded))?;
    for (seed, r) in &seeded {
        let path = dir.join(format!("clients_{seed}.csv"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        r.write_csv(io::BufWriter::new(file))
            .map_err(|e| Error::io(&path, e))?;
    }
    let n = seeded.len() as f64;
    let profit = seeded.iter().map(|(_, r)| r.profit).sum::<f64>() / n;
    let in_range = seeded
        .iter()
        .map(|(_, r)| r.fraction_in_range())
        .sum::<f64>()
        / n;
    println!("simulations: {}", seeded.len());
    println!("mean profit: {profit:.4}");
    println!("mean fraction of clients in range: {in_range:.4}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn write_logs(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let market = cfg.bidding.market.generate(cfg.seed)?;
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    market.log.write_csv(io::BufWriter::new(file))?;
    eprintln!("wrote {} auctions to {}", market.log.len(), out.display());
    Ok(())
}

/// Collapses sorted grid points into `lo..hi` runs for display.
fn ranges(points: &[f64], step: f64) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let mut j = i;
        while j + 1 < points.len() && points[j + 1] - points[j] <= step * 1.5 {
            j += 1;
        }
        parts.push(if i == j {
            format!("{}", points[i])
        } else {
            format!("{}..{}", points[i], points[j])
        });
        i = j + 1;
    }
    format!("{{{}}}", parts.join(", "))
}

fn fixture(name: &str, gamma_points: usize, out: Option<&Path>) -> Result<()> {
    let inst = oracle::fixture(name)?;
    let bench = oracle::opt_benchmark(&inst, gamma_points)?;
    let step = if gamma_points > 1 {
        1.0 / (gamma_points - 1) as f64
    } else {
        1.0
    };
    println!("fixture: {name}");
    println!("OPT(P): {}", bench.value);
    println!("argmax gamma: {}", ranges(&bench.argmax, step));
    if let Some(path) = out {
        let mut s = String::from("gamma,opt\n");
        for (g, v) in &bench.curve {
            s.push_str(&format!(
                "{},{}\n",
                pacer_core::fmt::sig9(*g),
                pacer_core::fmt::sig9(*v)
            ));
        }
        write_text(path, &s)?;
    }
    Ok(())
}

fn verify(opts: suite::SuiteOptions) -> Result<()> {
    let checks = suite::run_suite(opts)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{tag} {} ({})", c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Invariant(format!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    let _ = writeln!(out, "all {} checks passed", checks.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bandits {
            config,
            learner,
            horizon,
            sims,
            seed,
            out,
            serial,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = horizon {
                cfg.bandits.horizon = t;
            }
            if let Some(n) = sims {
                cfg.n_sims = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            bandits(cfg, learner, serial)
        }
        Command::Bidding {
            config,
            policy,
            gamma,
            eta,
            logs,
            seeds,
            seed,
            depletion,
            out,
            serial,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = eta {
                cfg.bidding.eta = e;
            }
            if logs.is_some() {
                cfg.bidding.logs = logs;
            }
            if let Some(n) = seeds {
                cfg.n_sims = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = depletion {
                cfg.bidding.depletion = d.into();
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.validate()?;
            bidding(&cfg, policy, gamma, serial)
        }
        Command::Logs { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            write_logs(&cfg, &out)
        }
        Command::Fixture {
            name,
            gamma_points,
            out,
        } => fixture(&name, gamma_points, out.as_deref()),
        Command::Verify {
            gamma_points,
            lambdas,
            seed,
        } => verify(suite::SuiteOptions {
            gamma_points,
            random_lambdas: lambdas,
            seed,
        }),
        Command::Config { print_defaults } => {
            if !print_defaults {
                return Err(Error::Config("nothing to do; try --print-defaults".into()));
            }
            print!("{}", ExperimentConfig::defaults_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invariant() { 2 } else { 1 })
        }
    }
}
