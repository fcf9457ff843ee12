//! Aggregation of run reports against hindsight benchmarks, and report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::controller::RunReport;
use crate::error::{Error, Result};
use crate::fmt::sig9;

pub const MOVING_WINDOW: usize = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub runs: usize,
    pub horizon: usize,
    pub relative_revenue_mean: f64,
    pub relative_revenue_std: f64,
    /// Mean of `hindsight − revenue`.
    pub regret_mean: f64,
    /// Mean over runs of `Σ_k [Tα_k b_k − spend_k]_+`.
    pub violation_mean: f64,
    pub violation_per_sqrt_t: f64,
    pub tau_mean: f64,
    /// Windowed mean of the run-averaged per-period revenue.
    pub moving_average: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `window`-period trailing means; `T − window + 1` points, none when `T < window`.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() - window + 1);
    let mut acc: f64 = series[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..series.len() {
        acc += series[i] - series[i - window];
        out.push(acc / window as f64);
    }
    out
}

/// Relative revenue `Σf / OPT` per run, plus violation and stopping statistics.
pub fn compute_regret(reports: &[RunReport], hindsight: &[f64]) -> Result<AggregateReport> {
    if reports.len() != hindsight.len() {
        return Err(Error::Mismatch(format!(
            "{} run reports but {} hindsight values",
            reports.len(),
            hindsight.len()
        )));
    }
    if reports.is_empty() {
        return Err(Error::Mismatch("no runs to aggregate".into()));
    }
    let horizon = reports[0].horizon;
    if reports.iter().any(|r| r.horizon != horizon) {
        return Err(Error::Mismatch("runs have different horizons".into()));
    }
    if let Some(h) = hindsight.iter().find(|h| !(h.is_finite() && **h != 0.0)) {
        return Err(Error::Domain(format!(
            "hindsight value {h} cannot normalize revenue"
        )));
    }
    let ratios: Vec<f64> = reports
        .iter()
        .zip(hindsight)
        .map(|(r, h)| r.revenue / h)
        .collect();
    let regrets: Vec<f64> = reports
        .iter()
        .zip(hindsight)
        .map(|(r, h)| h - r.revenue)
        .collect();
    let violations: Vec<f64> = reports.iter().map(|r| r.violation.iter().sum()).collect();
    let taus: Vec<f64> = reports.iter().map(|r| r.tau as f64).collect();

    let mut per_period = vec![0.0; horizon];
    for r in reports {
        for (acc, v) in per_period.iter_mut().zip(&r.revenue_by_period) {
            *acc += v;
        }
    }
    let n = reports.len() as f64;
    per_period.iter_mut().for_each(|v| *v /= n);

    let violation_mean = mean(&violations);
    Ok(AggregateReport {
        runs: reports.len(),
        horizon,
        relative_revenue_mean: mean(&ratios),
        relative_revenue_std: std_dev(&ratios),
        regret_mean: mean(&regrets),
        violation_mean,
        violation_per_sqrt_t: violation_mean / (horizon as f64).sqrt(),
        tau_mean: mean(&taus),
        moving_average: moving_average(&per_period, MOVING_WINDOW),
    })
}

/// Revenue and context noise half-widths of one table column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePair {
    pub revenue: f64,
    pub context: f64,
}

impl NoisePair {
    pub fn label(&self) -> String {
        if self.revenue == 0.0 && self.context == 0.0 {
            "0.0".into()
        } else {
            format!("({}, {})", self.revenue, self.context)
        }
    }
}

/// One aggregated cell: a learner under one noise setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub learner: String,
    pub noise: NoisePair,
    pub report: AggregateReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Text,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "text" | "txt" => Ok(Format::Text),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

const SUMMARY_COLUMNS: [&str; 12] = [
    "learner",
    "rev_noise",
    "ctx_noise",
    "runs",
    "horizon",
    "relative_revenue_mean",
    "relative_revenue_std",
    "regret_mean",
    "violation_mean",
    "violation_per_sqrt_t",
    "tau_mean",
    "moving_average_points",
];

fn summary_csv(entries: &[Entry]) -> String {
    let mut s = SUMMARY_COLUMNS.join(",");
    s.push('\n');
    for e in entries {
        let r = &e.report;
        let row = [
            e.learner.clone(),
            sig9(e.noise.revenue),
            sig9(e.noise.context),
            r.runs.to_string(),
            r.horizon.to_string(),
            sig9(r.relative_revenue_mean),
            sig9(r.relative_revenue_std),
            sig9(r.regret_mean),
            sig9(r.violation_mean),
            sig9(r.violation_per_sqrt_t),
            sig9(r.tau_mean),
            r.moving_average.len().to_string(),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn moving_average_csv(entries: &[Entry]) -> String {
    let mut s = String::from("tick");
    for e in entries {
        s.push_str(&format!(
            ",{} {}",
            e.learner,
            e.noise.label().replace(',', ";")
        ));
    }
    s.push('\n');
    let len = entries
        .iter()
        .map(|e| e.report.moving_average.len())
        .max()
        .unwrap_or(0);
    for i in 0..len {
        s.push_str(&(i + 1).to_string());
        for e in entries {
            s.push(',');
            if let Some(v) = e.report.moving_average.get(i) {
                s.push_str(&sig9(*v));
            }
        }
        s.push('\n');
    }
    s
}

/// Learners as rows, noise pairs as columns, mean relative revenue in percent.
pub fn comparison_table(entries: &[Entry]) -> String {
    let mut learners: Vec<&str> = Vec::new();
    let mut columns: Vec<NoisePair> = Vec::new();
    for e in entries {
        if !learners.contains(&e.learner.as_str()) {
            learners.push(&e.learner);
        }
        if !columns.contains(&e.noise) {
            columns.push(e.noise);
        }
    }
    let width = learners.iter().map(|l| l.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<width$}", "learner");
    for c in &columns {
        s.push_str(&format!(" | {:>10}", c.label()));
    }
    s.push('\n');
    s.push_str(&"-".repeat(width + columns.len() * 13));
    s.push('\n');
    for l in &learners {
        s.push_str(&format!("{l:<width$}"));
        for c in &columns {
            let cell = entries
                .iter()
                .find(|e| e.learner == *l && e.noise == *c)
                .map_or_else(
                    || "-".to_string(),
                    |e| format!("{:.1}%", 100.0 * e.report.relative_revenue_mean),
                );
            s.push_str(&format!(" | {cell:>10}"));
        }
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the report into `dir`; returns the paths written.
pub fn emit_report(entries: &[Entry], format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = match format {
        Format::Csv => vec![
            (dir.join("summary.csv"), summary_csv(entries)),
            (dir.join("moving_average.csv"), moving_average_csv(entries)),
        ],
        Format::Text => vec![(dir.join("summary.txt"), comparison_table(entries))],
    };
    for (path, text) in &files {
        write_file(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
