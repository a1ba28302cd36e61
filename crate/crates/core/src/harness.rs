//! Monte Carlo rank-recovery experiments.
//!
//! Each replication draws a fresh random stable DGP, simulates it for every
//! sample size, runs the full AIC/BIC grid search, and records the chosen
//! pairs. Summaries report per-dimension mean, population standard
//! deviation and frequency of the correct rank.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{random_mecm_spec, simulate, DgpSpec};
use crate::error::{MecmError, Result};
use crate::estimator::FitOptions;
use crate::model::RankPair;
use crate::selection::{select_ranks, Criterion};

/// SplitMix64-style mixing of a base seed with an index path. Seeds for
/// index `i` never depend on how many other indices are used.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &i| mix(acc ^ mix(i)))
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| MecmError::InvalidConfig(format!("thread pool: {e}"))),
    }
}

/// DGP settings shared by every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpTemplate {
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub burn_in: usize,
    pub snr: f64,
}

impl Default for DgpTemplate {
    fn default() -> Self {
        Self {
            n1: 3,
            n2: 4,
            p: 0,
            burn_in: 100,
            snr: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub dgp: DgpTemplate,
    pub true_ranks: RankPair,
    pub t_values: Vec<usize>,
    pub n_reps: usize,
    pub fit_p: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(MecmError::InvalidConfig("n_reps must be at least 1".into()));
        }
        if self.t_values.is_empty() {
            return Err(MecmError::InvalidConfig("t_values is empty".into()));
        }
        self.true_ranks.validate(self.dgp.n1, self.dgp.n2)?;
        let n = self.dgp.n1 * self.dgp.n2;
        for &t in &self.t_values {
            // the unrestricted least-squares initializer needs K regressors
            if t < self.fit_p + 2 + 1 + n * (1 + self.fit_p) {
                return Err(MecmError::InsufficientSample {
                    t,
                    required: self.fit_p + 3 + n * (1 + self.fit_p),
                });
            }
        }
        self.fit.validate()
    }

    fn dgp_spec(&self, rep: usize, t_len: usize) -> DgpSpec {
        DgpSpec {
            n1: self.dgp.n1,
            n2: self.dgp.n2,
            ranks: self.true_ranks,
            p: self.dgp.p,
            t_len,
            burn_in: self.dgp.burn_in,
            snr: self.dgp.snr,
            seed: derive_seed(self.base_seed, &[rep as u64]),
        }
    }
}

/// Outcome of one replication at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub t: usize,
    pub dgp_seed: u64,
    pub sim_seed: u64,
    pub aic: Option<RankPair>,
    pub bic: Option<RankPair>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn selected(&self, criterion: Criterion) -> Option<RankPair> {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: Criterion,
    pub t: usize,
    pub avg_rank: (f64, f64),
    pub std_rank: (f64, f64),
    pub freq_correct: (f64, f64),
    pub joint_freq_correct: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub true_ranks: RankPair,
    pub dgp_p: usize,
    pub fit_p: usize,
    pub summaries: Vec<CriterionSummary>,
    pub replications: Vec<ReplicationRecord>,
}

impl MonteCarloReport {
    pub fn summary(&self, criterion: Criterion, t: usize) -> Option<&CriterionSummary> {
        self.summaries
            .iter()
            .find(|s| s.criterion == criterion && s.t == t)
    }
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates replication records into per-(criterion, T) summaries, in the
/// order AIC, BIC for each sample size. Failed replications are excluded.
pub fn summarize(
    records: &[ReplicationRecord],
    true_ranks: RankPair,
    t_values: &[usize],
) -> Vec<CriterionSummary> {
    let mut out = Vec::new();
    for &t in t_values {
        for criterion in Criterion::ALL {
            let at_t: Vec<&ReplicationRecord> = records.iter().filter(|r| r.t == t).collect();
            let picks: Vec<RankPair> = at_t.iter().filter_map(|r| r.selected(criterion)).collect();
            let failures = at_t.len() - picks.len();
            let n = picks.len();
            let (avg_rank, std_rank, freq_correct, joint) = if n == 0 {
                ((f64::NAN, f64::NAN), (f64::NAN, f64::NAN), (f64::NAN, f64::NAN), f64::NAN)
            } else {
                let r1: Vec<f64> = picks.iter().map(|r| r.r1 as f64).collect();
                let r2: Vec<f64> = picks.iter().map(|r| r.r2 as f64).collect();
                let (m1, s1) = population_stats(&r1);
                let (m2, s2) = population_stats(&r2);
                let hits = |f: &dyn Fn(&RankPair) -> bool| {
                    picks.iter().filter(|r| f(r)).count() as f64 / n as f64
                };
                (
                    (m1, m2),
                    (s1, s2),
                    (hits(&|r| r.r1 == true_ranks.r1), hits(&|r| r.r2 == true_ranks.r2)),
                    hits(&|r| *r == true_ranks),
                )
            };
            out.push(CriterionSummary {
                criterion,
                t,
                avg_rank,
                std_rank,
                freq_correct,
                joint_freq_correct: joint,
                successes: n,
                failures,
            });
        }
    }
    out
}

/// Runs one replication at one sample size.
pub fn run_replication(config: &MonteCarloConfig, rep: usize, t: usize) -> ReplicationRecord {
    let spec = config.dgp_spec(rep, t);
    let sim_seed = derive_seed(config.base_seed, &[rep as u64, t as u64]);
    let mut record = ReplicationRecord {
        rep,
        t,
        dgp_seed: spec.seed,
        sim_seed,
        aic: None,
        bic: None,
        error: None,
    };
    let fit_opts = FitOptions {
        seed: sim_seed,
        ..config.fit.clone()
    };
    let outcome = random_mecm_spec(&spec)
        .and_then(|params| simulate(&params, t, spec.burn_in, sim_seed))
        .and_then(|series| select_ranks(&series, config.fit_p, &fit_opts));
    match outcome {
        Ok(report) => {
            record.aic = Some(report.chosen_aic);
            record.bic = Some(report.chosen_bic);
        }
        Err(e) => {
            warn!("replication {rep} (T={t}) failed: {e}");
            record.error = Some(e.to_string());
        }
    }
    record
}

/// Runs all replications and aggregates them. Deterministic in `base_seed`
/// regardless of scheduling.
pub fn run_montecarlo(config: &MonteCarloConfig) -> Result<MonteCarloReport> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.n_reps)
        .flat_map(|rep| config.t_values.iter().map(move |&t| (rep, t)))
        .collect();
    let mut records: Vec<ReplicationRecord> = jobs
        .into_par_iter()
        .map(|(rep, t)| run_replication(config, rep, t))
        .collect();
    records.sort_by_key(|r| (r.rep, r.t));
    info!(
        "true ranks {}: {} replications finished",
        config.true_ranks,
        records.len()
    );
    Ok(MonteCarloReport {
        true_ranks: config.true_ranks,
        dgp_p: config.dgp.p,
        fit_p: config.fit_p,
        summaries: summarize(&records, config.true_ranks, &config.t_values),
        replications: records,
    })
}

/// Renders reports as an aligned text table with the columns True Rank,
/// Method, Average Ranks, Standard Deviation and Frequency Correct.
pub fn render_table(reports: &[MonteCarloReport]) -> String {
    let header = ["True Rank", "Method", "Average Ranks", "Standard Deviation", "Frequency Correct"];
    let mut rows: Vec<[String; 5]> = Vec::new();
    for report in reports {
        for (i, s) in report.summaries.iter().enumerate() {
            let pair = |v: (f64, f64)| format!("({:.2}, {:.2})", v.0, v.1);
            let mut method = format!("{} ({})", s.criterion, s.t);
            if s.failures > 0 {
                method.push_str(&format!(" [{} failed]", s.failures));
            }
            rows.push([
                if i == 0 { report.true_ranks.to_string() } else { String::new() },
                method,
                pair(s.avg_rank),
                pair(s.std_rank),
                pair(s.freq_correct),
            ]);
        }
    }
    let widths: Vec<usize> = (0..5)
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[&str]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
        out.push('\n');
    }
    out
}
