//! Centralized second-price bidding on behalf of `K` clients with per-client
//! spend floors and caps.
//!
//! Auction `t` reveals the value `r_k` of the slot to every client and,
//! after bidding, the highest competing bid `mp`. A bid `z ≥ mp` wins: client
//! `k` pays `r_k` to the bidder, the bidder pays `mp` to the seller.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};

use crate::controller::{run_seeds, Exec};
use crate::error::{check_dim, Error, Result};
use crate::fmt::sig9;
use crate::mirror::{check_step_optimality, dual_step, ReferenceFunction, StepSchedule};
use crate::problem::{subgradient_from_cost, BoundSpec, ContextDraw, DualVector, Problem};
use crate::rng::{self, SimRng, Stream};

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_ALPHA: f64 = 0.95;

/// Auction records: `mp` and the `K` client values per auction.
#[derive(Debug, Clone, PartialEq)]
pub struct BidLog {
    clients: usize,
    ids: Vec<u64>,
    mp: Vec<f64>,
    /// Row-major `T × K`.
    values: Vec<f64>,
}

impl BidLog {
    pub fn new(clients: usize) -> Self {
        BidLog {
            clients,
            ids: Vec::new(),
            mp: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, id: u64, mp: f64, r: &[f64]) -> Result<()> {
        check_dim(self.clients, r.len())?;
        if !(mp.is_finite() && mp >= 0.0) {
            return Err(Error::Config(format!(
                "auction {id}: mp = {mp} must be a non-negative number"
            )));
        }
        if let Some(v) = r.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!(
                "auction {id}: value {v} must be a non-negative number"
            )));
        }
        self.ids.push(id);
        self.mp.push(mp);
        self.values.extend_from_slice(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mp.is_empty()
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn id(&self, t: usize) -> u64 {
        self.ids[t]
    }

    pub fn mp(&self, t: usize) -> f64 {
        self.mp[t]
    }

    pub fn values(&self, t: usize) -> &[f64] {
        &self.values[t * self.clients..(t + 1) * self.clients]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Copy with every value of client `k` multiplied by `q[k]`.
    pub fn scaled(&self, q: &[f64]) -> Result<BidLog> {
        check_dim(self.clients, q.len())?;
        let values = self
            .values
            .chunks(self.clients)
            .flat_map(|row| row.iter().zip(q).map(|(r, s)| r * s))
            .collect();
        Ok(BidLog {
            values,
            ..self.clone()
        })
    }

    /// Columns `auction_id, mp, r_1..r_K`.
    pub fn read_csv<R: Read>(input: R) -> Result<BidLog> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        if headers.len() < 3 || &headers[0] != "auction_id" || &headers[1] != "mp" {
            return Err(Error::Parse(
                "bid log header must be auction_id,mp,r_1..r_K".into(),
            ));
        }
        let mut log = BidLog::new(headers.len() - 2);
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |i: usize| -> Result<f64> {
                rec[i].trim().parse().map_err(|_| {
                    Error::Parse(format!("record {}: bad number `{}`", line + 1, &rec[i]))
                })
            };
            let id: u64 = rec[0].trim().parse().map_err(|_| {
                Error::Parse(format!("record {}: bad auction id `{}`", line + 1, &rec[0]))
            })?;
            let r = (2..rec.len()).map(field).collect::<Result<Vec<_>>>()?;
            log.push(id, field(1)?, &r)?;
        }
        Ok(log)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["auction_id".to_string(), "mp".to_string()];
        header.extend((1..=self.clients).map(|k| format!("r_{k}")));
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for t in 0..self.len() {
            let mut row = vec![self.ids[t].to_string(), format!("{:?}", self.mp[t])];
            row.extend(self.values(t).iter().map(|v| format!("{v:?}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Client budgets and spend floors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientBook {
    budgets: Vec<f64>,
    alpha: Vec<f64>,
}

impl ClientBook {
    pub fn new(budgets: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        check_dim(budgets.len(), alpha.len())?;
        if let Some(b) = budgets.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::Config(format!("client budget {b} must be positive")));
        }
        Ok(ClientBook { budgets, alpha })
    }

    pub fn uniform_alpha(budgets: Vec<f64>, alpha: f64) -> Result<Self> {
        let k = budgets.len();
        Self::new(budgets, vec![alpha; k])
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }

    /// Per-auction rates `b_k = budget_k / T`.
    pub fn bounds(&self, auctions: usize) -> Result<BoundSpec> {
        let t = auctions as f64;
        BoundSpec::new(
            self.budgets.iter().map(|b| b / t).collect(),
            self.alpha.clone(),
        )
    }
}

/// A submitted bid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub client: Option<usize>,
    pub amount: f64,
}

impl Bid {
    pub const NONE: Bid = Bid {
        client: None,
        amount: 0.0,
    };
}

/// Dual-adjusted bid: `k* = argmax_k r_k(1 − λ_k)` over eligible clients, bidding the
/// adjusted value when it is non-negative.
pub fn bid_oracle(lambda: &[f64], r: &[f64], eligible: Option<&[bool]>) -> Bid {
    let best = r
        .iter()
        .zip(lambda)
        .enumerate()
        .filter(|(k, _)| eligible.is_none_or(|e| e[*k]))
        .map(|(k, (rk, lk))| (k, rk * (1.0 - lk)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    match best {
        Some((k, v)) if v >= 0.0 => Bid {
            client: Some(k),
            amount: v,
        },
        _ => Bid::NONE,
    }
}

/// Bids `γ r_{k*}` for the highest-value client among those still eligible.
pub fn greedy_baseline(gamma: f64, r: &[f64], eligible: &[bool]) -> Bid {
    let best = r.iter().enumerate().filter(|(k, _)| eligible[*k]).fold(
        None,
        |best: Option<(usize, f64)>, (k, &v)| match best {
            Some(b) if b.1 >= v => Some(b),
            _ => Some((k, v)),
        },
    );
    best.map_or(Bid::NONE, |(k, v)| Bid {
        client: Some(k),
        amount: gamma * v,
    })
}

/// When a client stops being served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Depletion {
    /// The whole simulation stops once some remaining budget drops below `C̄`.
    Episode,
    /// A client stops being served once its remaining budget drops below `C̄`.
    PerClient,
    /// A client may overspend during one batch and is dropped after it.
    #[default]
    OverspendOnce,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Dual {
        h: ReferenceFunction,
        schedule: StepSchedule,
    },
    Greedy {
        gamma: f64,
    },
}

impl Policy {
    pub fn dual(eta: f64) -> Result<Self> {
        Ok(Policy::Dual {
            h: ReferenceFunction::Euclidean,
            schedule: StepSchedule::fixed(eta)?,
        })
    }

    pub fn greedy(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!(
                "greedy multiplier {gamma} must be positive"
            )));
        }
        Ok(Policy::Greedy { gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub batch: usize,
    pub depletion: Depletion,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            batch: DEFAULT_BATCH,
            depletion: Depletion::OverspendOnce,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub budget: f64,
    pub spend: f64,
    pub alpha: f64,
    /// Auction (1-based) after which the client was no longer served.
    pub depletion_period: Option<usize>,
}

impl ClientOutcome {
    pub fn utilization(&self) -> f64 {
        self.spend / self.budget
    }

    /// Spend inside `[α·budget, budget]`.
    pub fn in_range(&self) -> bool {
        let u = self.utilization();
        u >= self.alpha && u <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub profit: f64,
    pub wins: usize,
    pub negative_profit_wins: usize,
    pub auctions_processed: usize,
    pub halted: bool,
    pub clients: Vec<ClientOutcome>,
    /// Final duals; empty for the greedy policy.
    pub lambda: Vec<f64>,
    /// Per client: 1 if it was dropped after overspending in a batch.
    pub overshoot_events: Vec<usize>,
}

impl SimReport {
    pub fn fraction_in_range(&self) -> f64 {
        self.clients.iter().filter(|c| c.in_range()).count() as f64 / self.clients.len() as f64
    }

    /// Columns `client_id, budget, spend, utilization, depletion_period`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "client_id,budget,spend,utilization,depletion_period")?;
        for (k, c) in self.clients.iter().enumerate() {
            let dep = c
                .depletion_period
                .map_or_else(String::new, |p| p.to_string());
            writeln!(
                out,
                "{k},{},{},{},{dep}",
                sig9(c.budget),
                sig9(c.spend),
                sig9(c.utilization())
            )?;
        }
        Ok(())
    }
}

/// Replays `log` under `policy`. Within a batch the duals are frozen; after it
/// one mirror step is taken with the batch-averaged subgradient.
pub fn run_auction_sim(
    log: &BidLog,
    policy: &Policy,
    book: &ClientBook,
    settings: SimSettings,
) -> Result<SimReport> {
    if log.is_empty() {
        return Err(Error::Config("bid log is empty".into()));
    }
    if settings.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    check_dim(log.clients(), book.len())?;
    let k_count = log.clients();
    let horizon = log.len();
    let bounds = book.bounds(horizon)?;
    let cbar = log.max_value();

    let mut lambda = match policy {
        Policy::Dual { h, .. } => {
            h.validate(&bounds)?;
            Some(h.initial_point(&bounds))
        }
        Policy::Greedy { .. } => None,
    };
    let mut spend = vec![0.0; k_count];
    let mut eligible = vec![true; k_count];
    let mut depleted_at: Vec<Option<usize>> = vec![None; k_count];
    let mut overshoots = vec![0usize; k_count];
    let mut profit = 0.0;
    let mut wins = 0;
    let mut negative = 0;
    let mut processed = 0;
    let mut halted = false;
    let remaining = |k: usize, spend: &[f64]| book.budgets()[k] - spend[k];

    'batches: for start in (0..horizon).step_by(settings.batch) {
        let end = (start + settings.batch).min(horizon);
        let mut g_sum = vec![0.0; k_count];
        let mut cost = vec![0.0; k_count];
        for t in start..end {
            let r = log.values(t);
            let bid = match (policy, &lambda) {
                (Policy::Dual { .. }, Some(l)) => bid_oracle(l.lambda(), r, Some(&eligible)),
                (Policy::Greedy { gamma }, _) => greedy_baseline(*gamma, r, &eligible),
                _ => unreachable!("dual policy always carries duals"),
            };
            cost.iter_mut().for_each(|c| *c = 0.0);
            if let Some(k) = bid.client {
                let mp = log.mp(t);
                if bid.amount >= mp {
                    wins += 1;
                    profit += r[k] - mp;
                    if r[k] < mp {
                        negative += 1;
                    }
                    spend[k] += r[k];
                    cost[k] = r[k];
                }
            }
            processed += 1;
            let stop = match settings.depletion {
                Depletion::Episode => (0..k_count).any(|k| remaining(k, &spend) < cbar),
                Depletion::PerClient => {
                    for k in 0..k_count {
                        if eligible[k] && remaining(k, &spend) < cbar {
                            eligible[k] = false;
                            depleted_at[k] = Some(t + 1);
                        }
                    }
                    false
                }
                Depletion::OverspendOnce => false,
            };
            if stop {
                halted = true;
                for (k, at) in depleted_at.iter_mut().enumerate() {
                    if remaining(k, &spend) < cbar {
                        *at = Some(t + 1);
                    }
                }
                break 'batches;
            }
            if let Some(l) = &lambda {
                let g = subgradient_from_cost(l, &cost, &bounds)?;
                g_sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
        }
        if settings.depletion == Depletion::OverspendOnce {
            for k in 0..k_count {
                if eligible[k] && remaining(k, &spend) < 0.0 {
                    eligible[k] = false;
                    depleted_at[k] = Some(end);
                    overshoots[k] += 1;
                }
            }
        }
        if let (Policy::Dual { h, schedule }, Some(l)) = (policy, &lambda) {
            let n = (end - start) as f64;
            let g: Vec<f64> = g_sum.iter().map(|v| v / n).collect();
            let next = dual_step(h, l, &g, schedule.eta())?;
            check_step_optimality(h, l, &g, schedule.eta(), &next)?;
            lambda = Some(next);
        }
    }

    if settings.depletion != Depletion::OverspendOnce {
        for (k, (s, b)) in spend.iter().zip(book.budgets()).enumerate() {
            if *s > b * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "client {k} spent {s} over budget {b}",
                )));
            }
        }
    }

    let clients = (0..k_count)
        .map(|k| ClientOutcome {
            budget: book.budgets()[k],
            spend: spend[k],
            alpha: book.alpha()[k],
            depletion_period: depleted_at[k],
        })
        .collect();
    Ok(SimReport {
        profit,
        wins,
        negative_profit_wins: negative,
        auctions_processed: processed,
        halted,
        clients,
        lambda: lambda.map(|l| l.lambda().to_vec()).unwrap_or_default(),
        overshoot_events: overshoots,
    })
}

/// Per client, what it would spend bidding truthfully with nobody else on the
/// bidder's side: `Σ_t r_k 1(r_k ≥ mp)`.
pub fn standalone_spend(log: &BidLog) -> Vec<f64> {
    let mut spend = vec![0.0; log.clients()];
    for t in 0..log.len() {
        let mp = log.mp(t);
        for (s, &r) in spend.iter_mut().zip(log.values(t)) {
            if r >= mp {
                *s += r;
            }
        }
    }
    spend
}

/// Parameters of the synthetic auction corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSpec {
    pub clients: usize,
    pub auctions: usize,
    /// Conversion probabilities are `Beta(κμ_k, κ(1−μ_k))`; `κ = 0` makes them equal `μ_k`.
    pub concentration: f64,
    /// `μ_k ~ U(mean_lo, mean_hi)`, fixed per client.
    pub mean_lo: f64,
    pub mean_hi: f64,
    /// `mp ~ LogNormal(mp_log_mean, mp_log_sd)`.
    pub mp_log_mean: f64,
    pub mp_log_sd: f64,
    /// Budget of client `k` is `m_k/K` times its standalone truthful spend, `m_k ~ U(lo, hi)`.
    pub budget_lo: f64,
    pub budget_hi: f64,
    /// Spend floor fraction shared by every client.
    pub alpha: f64,
    /// `q_k ~ U(q_lo, q_hi)` per simulation.
    pub q_lo: f64,
    pub q_hi: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        MarketSpec {
            clients: 20,
            auctions: 20_000,
            concentration: 8.0,
            mean_lo: 0.15,
            mean_hi: 0.35,
            mp_log_mean: -1.6,
            mp_log_sd: 0.5,
            budget_lo: 0.3,
            budget_hi: 0.9,
            alpha: DEFAULT_ALPHA,
            q_lo: 0.5,
            q_hi: 1.5,
        }
    }
}

/// A generated corpus: base values (conversion probabilities), prices, and
/// client budget multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub log: BidLog,
    pub budget_multipliers: Vec<f64>,
    pub alpha: f64,
    pub q_range: (f64, f64),
}

impl MarketSpec {
    fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.auctions == 0 {
            return Err(Error::Config(
                "market needs at least one client and one auction".into(),
            ));
        }
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(self.mean_lo, self.mean_hi) && self.mean_lo > 0.0 && self.mean_hi < 1.0) {
            return Err(Error::Config(
                "conversion means must satisfy 0 < mean_lo <= mean_hi < 1".into(),
            ));
        }
        if !(ordered(self.budget_lo, self.budget_hi) && self.budget_lo > 0.0) {
            return Err(Error::Config(
                "budget multipliers must satisfy 0 < lo <= hi".into(),
            ));
        }
        if !(ordered(self.q_lo, self.q_hi) && self.q_lo > 0.0) {
            return Err(Error::Config(
                "q range must satisfy 0 < q_lo <= q_hi".into(),
            ));
        }
        if !(self.concentration >= 0.0 && self.mp_log_sd >= 0.0) {
            return Err(Error::Config(
                "concentration and mp_log_sd must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<Market> {
        self.validate()?;
        let mut rng = rng::stream(seed, Stream::Instance);
        let k = self.clients;
        let means: Vec<f64> = (0..k)
            .map(|_| uniform(&mut rng, self.mean_lo, self.mean_hi))
            .collect();
        let multipliers = (0..k)
            .map(|_| uniform(&mut rng, self.budget_lo, self.budget_hi))
            .collect();
        let betas = if self.concentration > 0.0 {
            Some(
                means
                    .iter()
                    .map(|m| Beta::new(self.concentration * m, self.concentration * (1.0 - m)))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("beta parameters: {e}")))?,
            )
        } else {
            None
        };
        let mp_dist = LogNormal::new(self.mp_log_mean, self.mp_log_sd)
            .map_err(|e| Error::Config(format!("lognormal parameters: {e}")))?;
        let mut arrivals = rng::stream(seed, Stream::Arrivals);
        let mut log = BidLog::new(k);
        let mut row = vec![0.0; k];
        for t in 0..self.auctions {
            let mp = mp_dist.sample(&mut arrivals);
            for (j, r) in row.iter_mut().enumerate() {
                *r = betas
                    .as_ref()
                    .map_or(means[j], |b| b[j].sample(&mut arrivals));
            }
            log.push(t as u64, mp, &row)?;
        }
        Ok(Market {
            log,
            budget_multipliers: multipliers,
            alpha: self.alpha,
            q_range: (self.q_lo, self.q_hi),
        })
    }
}

impl MarketSpec {
    /// Wraps an external log; budget multipliers still come from `seed`.
    pub fn from_log(&self, log: BidLog, seed: u64) -> Result<Market> {
        self.validate()?;
        if log.is_empty() {
            return Err(Error::Config("bid log has no auctions".into()));
        }
        let mut rng = rng::stream(seed, Stream::Instance);
        let budget_multipliers = (0..log.clients())
            .map(|_| uniform(&mut rng, self.budget_lo, self.budget_hi))
            .collect();
        Ok(Market {
            log,
            budget_multipliers,
            alpha: self.alpha,
            q_range: (self.q_lo, self.q_hi),
        })
    }
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Per-client payment multipliers `q_k` of one simulation.
pub fn draw_payments(clients: usize, range: (f64, f64), seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Stream::Payments);
    (0..clients)
        .map(|_| uniform(&mut rng, range.0, range.1))
        .collect()
}

impl Market {
    /// The log and budgets of simulation `seed`: values scaled by the drawn `q`,
    /// budgets set from the standalone spend of the scaled log.
    pub fn simulation(&self, seed: u64) -> Result<(BidLog, ClientBook)> {
        let q = draw_payments(self.log.clients(), self.q_range, seed);
        let log = self.log.scaled(&q)?;
        let floor = log.max_value().max(f64::MIN_POSITIVE);
        let share = 1.0 / log.clients() as f64;
        let budgets = standalone_spend(&log)
            .iter()
            .zip(&self.budget_multipliers)
            .map(|(s, m)| (s * m * share).max(floor))
            .collect();
        Ok((log, ClientBook::uniform_alpha(budgets, self.alpha)?))
    }

    /// Runs `policy` on simulations `seed_base + i`.
    pub fn run_batch(
        &self,
        policy: &Policy,
        settings: SimSettings,
        n_sims: usize,
        seed_base: u64,
        exec: Exec,
    ) -> Result<Vec<Result<SimReport>>> {
        run_seeds(n_sims, seed_base, exec, |seed| {
            let (log, book) = self.simulation(seed)?;
            run_auction_sim(&log, policy, &book, settings)
        })
    }
}

/// The bidding problem in the generic online template, one auction per period,
/// for use with the episode controller.
#[derive(Debug, Clone)]
pub struct BiddingProblem<'a> {
    log: &'a BidLog,
    bounds: BoundSpec,
    cbar: f64,
}

impl<'a> BiddingProblem<'a> {
    pub fn new(log: &'a BidLog, book: &ClientBook) -> Result<Self> {
        check_dim(log.clients(), book.len())?;
        if log.is_empty() {
            return Err(Error::Config("bid log is empty".into()));
        }
        Ok(BiddingProblem {
            log,
            bounds: book.bounds(log.len())?,
            cbar: log.max_value().max(f64::MIN_POSITIVE),
        })
    }
}

impl Problem for BiddingProblem<'_> {
    type Context = usize;
    type Decision = Bid;

    fn horizon(&self) -> usize {
        self.log.len()
    }

    fn bounds(&self) -> &BoundSpec {
        &self.bounds
    }

    fn rev_bound(&self) -> f64 {
        self.cbar
    }

    fn cost_bound(&self) -> f64 {
        self.cbar
    }

    fn theta_star(&self) -> &[f64] {
        &[]
    }

    fn draw(&self, t: usize, _rng: &mut SimRng) -> ContextDraw<usize> {
        ContextDraw::exact(t)
    }

    fn revenue(&self, z: &Bid, _theta: &[f64], &t: &usize) -> f64 {
        match z.client {
            Some(k) if z.amount >= self.log.mp(t) => self.log.values(t)[k] - self.log.mp(t),
            _ => 0.0,
        }
    }

    fn cost(&self, z: &Bid, _theta: &[f64], &t: &usize) -> Vec<f64> {
        let mut c = vec![0.0; self.log.clients()];
        if let Some(k) = z.client {
            if z.amount >= self.log.mp(t) {
                c[k] = self.log.values(t)[k];
            }
        }
        c
    }

    fn oracle(&self, lambda: &DualVector, _theta: &[f64], &t: &usize) -> Result<Bid> {
        Ok(bid_oracle(lambda.lambda(), self.log.values(t), None))
    }

    fn digest(&self, z: &Bid) -> String {
        match z.client {
            Some(k) => format!("{k}@{}", sig9(z.amount)),
            None => "-".into(),
        }
    }

    fn context_id(&self, &t: &usize) -> u64 {
        self.log.id(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(rows: &[(f64, &[f64])]) -> BidLog {
        let mut log = BidLog::new(rows[0].1.len());
        for (i, (mp, r)) in rows.iter().enumerate() {
            log.push(i as u64, *mp, r).unwrap();
        }
        log
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(
            bid_oracle(&[0.0, 0.0], &[2.0, 3.0], None),
            Bid {
                client: Some(1),
                amount: 3.0
            }
        );
        assert_eq!(bid_oracle(&[1.5, 2.0], &[2.0, 3.0], None), Bid::NONE);
        assert_eq!(
            bid_oracle(&[0.0, 0.5], &[2.0, 3.0], None),
            Bid {
                client: Some(0),
                amount: 2.0
            }
        );
        // equal adjusted values: lowest index wins
        assert_eq!(bid_oracle(&[0.0, 0.0], &[1.0, 1.0], None).client, Some(0));
        assert_eq!(
            bid_oracle(&[0.0, 0.0], &[2.0, 3.0], Some(&[true, false])).client,
            Some(0)
        );
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(
            greedy_baseline(0.5, &[4.0, 1.0], &[true, true]),
            Bid {
                client: Some(0),
                amount: 2.0
            }
        );
        assert_eq!(greedy_baseline(1.0, &[4.0, 1.0], &[true, true]).amount, 4.0);
        assert_eq!(
            greedy_baseline(1.0, &[4.0, 1.0], &[false, false]),
            Bid::NONE
        );
        assert_eq!(
            greedy_baseline(1.0, &[4.0, 1.0], &[false, true]).client,
            Some(1)
        );
    }

    #[test]
    fn never_winning_log_has_no_spend() {
        let log = log_of(&[(1e9, &[1.0, 2.0]), (1e9, &[3.0, 0.5])]);
        let book = ClientBook::uniform_alpha(vec![10.0, 10.0], 0.95).unwrap();
        let rep = run_auction_sim(
            &log,
            &Policy::greedy(1.0).unwrap(),
            &book,
            SimSettings::default(),
        )
        .unwrap();
        assert_eq!(rep.profit, 0.0);
        assert!(rep.clients.iter().all(|c| c.spend == 0.0));
    }

    #[test]
    fn free_slots_give_full_value() {
        let rows: Vec<(f64, Vec<f64>)> = (1..=10).map(|i| (0.0, vec![i as f64 * 0.1])).collect();
        let mut log = BidLog::new(1);
        for (i, (mp, r)) in rows.iter().enumerate() {
            log.push(i as u64, *mp, r).unwrap();
        }
        let book = ClientBook::uniform_alpha(vec![100.0], 0.95).unwrap();
        let rep = run_auction_sim(
            &log,
            &Policy::greedy(1.0).unwrap(),
            &book,
            SimSettings::default(),
        )
        .unwrap();
        assert!((rep.profit - 5.5).abs() < 1e-12);
    }

    #[test]
    fn scripted_dual_path() {
        // batch 5, eta 1, b = 1.5/10 = 0.15 per auction.
        // batch 1 at λ = 0: truthful; wins auctions with mp ≤ r.
        let rows: [(f64, &[f64]); 10] = [
            (0.1, &[0.5]),
            (0.6, &[0.5]),
            (0.2, &[0.3]),
            (0.0, &[0.2]),
            (0.4, &[0.4]),
            (0.1, &[0.5]),
            (0.3, &[0.5]),
            (0.05, &[0.1]),
            (0.0, &[0.4]),
            (0.2, &[0.2]),
        ];
        let log = log_of(&rows);
        let book = ClientBook::uniform_alpha(vec![1.5], 0.5).unwrap();
        let settings = SimSettings {
            batch: 5,
            depletion: Depletion::OverspendOnce,
        };
        let rep = run_auction_sim(&log, &Policy::dual(1.0).unwrap(), &book, settings).unwrap();
        // batch 1 wins t = 0, 2, 3, 4: spend 0.5+0.3+0.2+0.4 = 1.4, profit 0.4+0.1+0.2+0 = 0.7.
        // g = 0.15 − 1.4/5 = −0.13 → λ = 0.13; bids become 0.87 r.
        // batch 2: 0.435 ≥ 0.1 win (+0.4), 0.435 ≥ 0.3 win (+0.2), 0.087 ≥ 0.05 win (+0.05),
        // 0.348 ≥ 0 win (+0.4), 0.174 < 0.2 lose. Spend after 1.4 + 1.5 = 2.9 > 1.5.
        let expected_profit = 0.7 + 0.4 + 0.2 + 0.05 + 0.4;
        assert!(
            (rep.profit - expected_profit).abs() < 1e-12,
            "{}",
            rep.profit
        );
        assert!((rep.clients[0].spend - 2.9).abs() < 1e-12);
        assert_eq!(rep.clients[0].depletion_period, Some(10));
        // second step: g = 0.15 − 1.5/5 = −0.15 → λ = 0.28
        assert!((rep.lambda[0] - 0.28).abs() < 1e-12);
    }

    #[test]
    fn per_client_mode_never_overspends() {
        let market = MarketSpec {
            clients: 4,
            auctions: 2000,
            ..Default::default()
        }
        .generate(1)
        .unwrap();
        for seed in 0..3 {
            let (log, book) = market.simulation(seed).unwrap();
            for policy in [Policy::dual(0.5).unwrap(), Policy::greedy(1.2).unwrap()] {
                let rep = run_auction_sim(
                    &log,
                    &policy,
                    &book,
                    SimSettings {
                        batch: 64,
                        depletion: Depletion::PerClient,
                    },
                )
                .unwrap();
                for c in &rep.clients {
                    assert!(c.spend <= c.budget);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let market = MarketSpec {
            clients: 3,
            auctions: 50,
            ..Default::default()
        }
        .generate(3)
        .unwrap();
        let mut buf = Vec::new();
        market.log.write_csv(&mut buf).unwrap();
        let back = BidLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, market.log);
    }

    #[test]
    fn zero_variance_values_are_constant() {
        let market = MarketSpec {
            clients: 3,
            auctions: 20,
            concentration: 0.0,
            ..Default::default()
        }
        .generate(4)
        .unwrap();
        let first = market.log.values(0).to_vec();
        assert!((1..20).all(|t| market.log.values(t) == first.as_slice()));
    }

    #[test]
    fn payments_average_one() {
        let q: Vec<f64> = (0..100u64)
            .flat_map(|s| draw_payments(100, (0.5, 1.5), s))
            .collect();
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(q.iter().all(|v| (0.5..1.5).contains(v)));
    }

    #[test]
    fn generation_is_seeded() {
        let spec = MarketSpec {
            clients: 2,
            auctions: 30,
            ..Default::default()
        };
        assert_eq!(spec.generate(8).unwrap(), spec.generate(8).unwrap());
        assert_ne!(spec.generate(8).unwrap().log, spec.generate(9).unwrap().log);
    }
}
