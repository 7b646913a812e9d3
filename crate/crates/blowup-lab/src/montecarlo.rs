//! Seeded, schedule-independent Monte Carlo sweeps and the explosion-time
//! estimators.
//!
//! Every (eps, replica) cell derives its own counter-based stream from the
//! sweep seed, so the sample table is bit-identical for any worker count.
//! This module owns the only worker pool; statistics always run
//! single-threaded on the merged table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_sde, Outcome, SdeConfig};
use crate::model::{ModelParams, State};
use crate::phase::{escape_single, DomainG};
use crate::rng::RandomStream;

/// Which experiment each replica runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Explosion time of the perturbed system from `u0`.
    ExplosionTime,
    /// Exit from the auxiliary domain, then explosion.
    ExitFromG(DomainG),
}

/// A full sweep specification; two identical specs produce bit-identical
/// sample tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub params: ModelParams,
    /// Noise levels, conventionally decreasing.
    pub eps_list: Vec<f64>,
    pub n_replicas: u32,
    pub u0: Vec<f64>,
    pub seed: u64,
    pub sde: SdeConfig,
    pub experiment: ExperimentKind,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::InvalidParameter("eps_list must be nonempty".into()));
        }
        if self.eps_list.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidParameter(
                "eps values must be finite and >= 0".into(),
            ));
        }
        if self.n_replicas < 2 {
            return Err(Error::InvalidParameter("need at least 2 replicas".into()));
        }
        if self.u0.len() != self.params.d {
            return Err(Error::DimensionMismatch {
                expected: self.params.d,
                got: self.u0.len(),
            });
        }
        self.sde.validate(&self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Exploded,
    Converged,
    Survived,
    Failed,
}

/// One replica row. Censored rows keep the cap in `steps`/outcome and leave
/// the time fields empty; they are never silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub eps: f64,
    pub eps_index: u32,
    pub replica: u32,
    pub outcome: OutcomeKind,
    pub tau_hat: Option<f64>,
    pub exit_time: Option<f64>,
    pub exit_in_partial1: Option<bool>,
    pub steps: u64,
}

/// Merged sweep output, ordered by (eps index, replica) regardless of the
/// execution schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    pub t_cap: f64,
    pub rows: Vec<SampleRow>,
}

pub const SAMPLES_CSV_HEADER: &str = "eps,replica,outcome,tau_hat,exit_time,exit_in_partial1,steps";

impl SampleTable {
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{SAMPLES_CSV_HEADER}")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
            let flag = r.exit_in_partial1.map_or(String::new(), |b| b.to_string());
            let outcome = match r.outcome {
                OutcomeKind::Exploded => "exploded",
                OutcomeKind::Converged => "converged",
                OutcomeKind::Survived => "survived",
                OutcomeKind::Failed => "failed",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.eps,
                r.replica,
                outcome,
                opt(r.tau_hat),
                opt(r.exit_time),
                flag,
                r.steps
            )?;
        }
        Ok(())
    }

    /// Parse a table written by [`SampleTable::write_csv`]. `t_cap` is not
    /// part of the schema; pass the sweep's cap for censoring-aware
    /// estimators.
    pub fn parse_csv(text: &str, t_cap: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty file".into()))?;
        if header.trim() != SAMPLES_CSV_HEADER {
            return Err(Error::Schema(format!(
                "expected header '{SAMPLES_CSV_HEADER}', got '{header}'"
            )));
        }
        let mut rows = Vec::new();
        let mut eps_seen: Vec<f64> = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Schema(format!("line {}: expected 7 fields", k + 2)));
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("line {}: bad {what} '{s}'", k + 2)))
            };
            let eps = parse_f(fields[0], "eps")?;
            let eps_index = match eps_seen.iter().position(|e| *e == eps) {
                Some(i) => i as u32,
                None => {
                    eps_seen.push(eps);
                    (eps_seen.len() - 1) as u32
                }
            };
            let outcome = match fields[2] {
                "exploded" => OutcomeKind::Exploded,
                "converged" => OutcomeKind::Converged,
                "survived" => OutcomeKind::Survived,
                "failed" => OutcomeKind::Failed,
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: bad outcome '{other}'",
                        k + 2
                    )))
                }
            };
            let opt_f = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f(s, what).map(Some)
                }
            };
            rows.push(SampleRow {
                eps,
                eps_index,
                replica: fields[1]
                    .parse()
                    .map_err(|_| Error::Schema(format!("line {}: bad replica", k + 2)))?,
                outcome,
                tau_hat: opt_f(fields[3], "tau_hat")?,
                exit_time: opt_f(fields[4], "exit_time")?,
                exit_in_partial1: match fields[5] {
                    "" => None,
                    "true" => Some(true),
                    "false" => Some(false),
                    other => {
                        return Err(Error::Schema(format!(
                            "line {}: bad exit_in_partial1 '{other}'",
                            k + 2
                        )))
                    }
                },
                steps: fields[6]
                    .parse()
                    .map_err(|_| Error::Schema(format!("line {}: bad steps", k + 2)))?,
            });
        }
        Ok(SampleTable { t_cap, rows })
    }

    pub fn eps_levels(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.eps) {
                out.push(r.eps);
            }
        }
        out
    }

    fn rows_for(&self, eps: f64) -> impl Iterator<Item = &SampleRow> {
        self.rows.iter().filter(move |r| r.eps == eps)
    }
}

/// Run every (eps, replica) cell on the current worker pool and merge in
/// deterministic order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SampleTable> {
    spec.validate()?;
    let cells: Vec<(u32, u32)> = (0..spec.eps_list.len() as u32)
        .flat_map(|ei| (0..spec.n_replicas).map(move |r| (ei, r)))
        .collect();
    let rows: Vec<SampleRow> = cells
        .par_iter()
        .map(|&(eps_index, replica)| run_cell(spec, eps_index, replica))
        .collect();
    Ok(SampleTable {
        t_cap: spec.sde.t_cap,
        rows,
    })
}

fn run_cell(spec: &SweepSpec, eps_index: u32, replica: u32) -> SampleRow {
    let eps = spec.eps_list[eps_index as usize];
    let mut stream = RandomStream::for_replica(spec.seed, eps_index, replica);
    let mut row = SampleRow {
        eps,
        eps_index,
        replica,
        outcome: OutcomeKind::Failed,
        tau_hat: None,
        exit_time: None,
        exit_in_partial1: None,
        steps: 0,
    };
    match &spec.experiment {
        ExperimentKind::ExplosionTime => {
            match integrate_sde(
                &spec.params,
                &State::Finite(spec.u0.clone()),
                eps,
                &spec.sde,
                &mut stream,
            ) {
                Ok((outcome, rec)) => {
                    row.steps = rec.steps;
                    fill_outcome(&mut row, outcome);
                }
                Err(_) => row.outcome = OutcomeKind::Failed,
            }
        }
        ExperimentKind::ExitFromG(g) => {
            match escape_single(&spec.params, g, &spec.u0, eps, &spec.sde, &mut stream) {
                Ok(run) => {
                    row.steps = run.steps;
                    row.exit_time = run.exit_time;
                    row.exit_in_partial1 = run.exit_in_partial1;
                    fill_outcome(&mut row, run.outcome);
                }
                Err(_) => row.outcome = OutcomeKind::Failed,
            }
        }
    }
    row
}

fn fill_outcome(row: &mut SampleRow, outcome: Outcome) {
    match outcome {
        Outcome::Exploded { tau_hat } => {
            row.outcome = OutcomeKind::Exploded;
            row.tau_hat = Some(tau_hat);
        }
        Outcome::Converged { .. } => row.outcome = OutcomeKind::Converged,
        Outcome::Survived { .. } => row.outcome = OutcomeKind::Survived,
    }
}

/// Empirical `1 - 1/e` quantile: the smallest order statistic whose rank
/// reaches `ceil(N (1 - 1/e))`. Matches the infimum form of the time-scale
/// definition.
pub fn estimate_beta(samples: &[f64]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = 1.0 - (-1.0f64).exp();
    let rank = (samples.len() as f64 * q).ceil() as usize;
    Some(sorted[rank.max(1) - 1])
}

/// Censoring-aware variant: censored rows participate only if every cap
/// exceeds the candidate quantile, so an optimistic cap can never bias the
/// estimate; otherwise the estimate is reported absent.
pub fn estimate_beta_censored(observed: &[f64], caps: &[f64]) -> Option<f64> {
    let n = observed.len() + caps.len();
    if n < 2 || observed.len() < 2 {
        return None;
    }
    let q = 1.0 - (-1.0f64).exp();
    let rank = (n as f64 * q).ceil() as usize;
    let mut sorted = observed.to_vec();
    sorted.sort_by(f64::total_cmp);
    if rank > sorted.len() {
        return None;
    }
    let candidate = sorted[rank.max(1) - 1];
    if caps.iter().all(|cap| *cap >= candidate) {
        Some(candidate)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub delta_hat: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `log beta` against `eps^{-2}`; the slope estimates the
/// barrier.
pub fn fit_exponent(eps: &[f64], beta: &[f64]) -> Result<ExponentFit> {
    if eps.len() != beta.len() || eps.len() < 3 {
        return Err(Error::InvalidParameter(
            "exponent fit needs at least 3 (eps, beta) pairs".into(),
        ));
    }
    if eps.iter().any(|e| !(*e > 0.0)) || beta.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::InvalidParameter(
            "exponent fit requires positive finite inputs".into(),
        ));
    }
    let xs: Vec<f64> = eps.iter().map(|e| 1.0 / (e * e)).collect();
    let ys: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "eps levels must be distinct".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(ExponentFit {
        delta_hat: slope,
        intercept,
        r2,
    })
}

/// Kolmogorov-Smirnov sup-distance between the empirical law of the
/// (already normalized) samples and the unit exponential.
pub fn ks_exp1(normalized: &[f64]) -> f64 {
    assert!(!normalized.is_empty(), "ks_exp1 requires a nonempty sample");
    let mut sorted = normalized.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = 1.0 - (-x).exp();
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi.abs()).max(lo.abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    /// All resamples produced the same value (constant input).
    pub degenerate: bool,
}

/// Percentile bootstrap with resamples drawn from the provided seeded
/// stream, so intervals are reproducible.
pub fn bootstrap_interval(
    samples: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    b: usize,
    level: f64,
    stream: &mut RandomStream,
) -> Result<BootstrapInterval> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("bootstrap needs samples".into()));
    }
    if b < 200 {
        return Err(Error::InvalidParameter("bootstrap needs B >= 200".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter("level must lie in (0, 1)".into()));
    }
    let n = samples.len();
    let mut stats = Vec::with_capacity(b);
    let mut resample = vec![0.0; n];
    for _ in 0..b {
        for slot in resample.iter_mut() {
            let idx = (stream.next_u64() % n as u64) as usize;
            *slot = samples[idx];
        }
        stats.push(statistic(&resample));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let idx = ((b as f64 * q).floor() as usize).min(b - 1);
        stats[idx]
    };
    let lo = pick(tail);
    let hi = pick(1.0 - tail);
    Ok(BootstrapInterval {
        lo,
        hi,
        degenerate: lo == hi,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerEpsStats {
    pub eps: f64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub beta_hat: Option<f64>,
    pub ks_exp1: Option<f64>,
    pub censored: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub per_eps: Vec<PerEpsStats>,
    pub delta_hat: Option<f64>,
    pub r2: Option<f64>,
    pub intervals: Option<SummaryIntervals>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryIntervals {
    pub delta_hat: (f64, f64),
}

/// Primary observable of a row: explosion time for explosion sweeps, exit
/// time for domain sweeps.
fn row_time(row: &SampleRow) -> Option<f64> {
    row.exit_time.or(row.tau_hat)
}

/// Single-threaded statistics over the merged table. The barrier estimate
/// and its bootstrap interval appear only with at least 3 usable eps levels.
pub fn summarize(table: &SampleTable, seed: u64) -> SummaryStats {
    let mut per_eps = Vec::new();
    for eps in table.eps_levels() {
        let mut observed = Vec::new();
        let mut caps = Vec::new();
        for row in table.rows_for(eps) {
            match row.outcome {
                OutcomeKind::Survived => caps.push(table.t_cap),
                OutcomeKind::Failed => {}
                _ => {
                    if let Some(t) = row_time(row) {
                        observed.push(t);
                    }
                }
            }
        }
        observed.sort_by(f64::total_cmp);
        let censored = caps.len();
        // a mean over censored data would be biased low; report absent
        let mean = if observed.is_empty() || censored > 0 {
            None
        } else {
            Some(observed.iter().sum::<f64>() / observed.len() as f64)
        };
        let median = if observed.is_empty() {
            None
        } else if censored < observed.len() {
            // the median is identified as long as censoring stays below half
            let all = observed.len() + censored;
            let idx = all / 2;
            if idx < observed.len() {
                Some(observed[idx])
            } else {
                None
            }
        } else {
            None
        };
        let beta_hat = estimate_beta_censored(&observed, &caps);
        let ks = beta_hat.and_then(|b| {
            if censored == 0 && !observed.is_empty() && b > 0.0 {
                let normalized: Vec<f64> = observed.iter().map(|t| t / b).collect();
                Some(ks_exp1(&normalized))
            } else {
                None
            }
        });
        per_eps.push(PerEpsStats {
            eps,
            mean,
            median,
            beta_hat,
            ks_exp1: ks,
            censored,
        });
    }

    let usable: Vec<(f64, f64)> = per_eps
        .iter()
        .filter_map(|s| s.beta_hat.map(|b| (s.eps, b)))
        .filter(|(_, b)| *b > 0.0)
        .collect();
    let (delta_hat, r2, intervals) = if usable.len() >= 3 {
        let eps: Vec<f64> = usable.iter().map(|(e, _)| *e).collect();
        let betas: Vec<f64> = usable.iter().map(|(_, b)| *b).collect();
        match fit_exponent(&eps, &betas) {
            Ok(fit) => {
                let interval = bootstrap_delta_interval(table, &eps, seed);
                (Some(fit.delta_hat), Some(fit.r2), interval)
            }
            Err(_) => (None, None, None),
        }
    } else {
        (None, None, None)
    };

    SummaryStats {
        per_eps,
        delta_hat,
        r2,
        intervals,
    }
}

/// Bootstrap the barrier estimate by resampling replicas within each eps
/// level and refitting.
fn bootstrap_delta_interval(
    table: &SampleTable,
    eps_levels: &[f64],
    seed: u64,
) -> Option<SummaryIntervals> {
    let per_eps_times: Vec<Vec<f64>> = eps_levels
        .iter()
        .map(|eps| {
            table
                .rows_for(*eps)
                .filter_map(row_time)
                .collect::<Vec<f64>>()
        })
        .collect();
    if per_eps_times.iter().any(|v| v.len() < 2) {
        return None;
    }
    let b = 400;
    let mut stream = RandomStream::for_replica(seed, u32::MAX, 0);
    let mut deltas = Vec::with_capacity(b);
    for _ in 0..b {
        let mut betas = Vec::with_capacity(eps_levels.len());
        for times in &per_eps_times {
            let n = times.len();
            let resample: Vec<f64> = (0..n)
                .map(|_| times[(stream.next_u64() % n as u64) as usize])
                .collect();
            match estimate_beta(&resample) {
                Some(v) if v > 0.0 => betas.push(v),
                _ => return None,
            }
        }
        match fit_exponent(eps_levels, &betas) {
            Ok(fit) => deltas.push(fit.delta_hat),
            Err(_) => return None,
        }
    }
    deltas.sort_by(f64::total_cmp);
    let lo = deltas[(b as f64 * 0.025) as usize];
    let hi = deltas[((b as f64 * 0.975) as usize).min(b - 1)];
    Some(SummaryIntervals {
        delta_hat: (lo, hi),
    })
}
