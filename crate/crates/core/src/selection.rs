//! Information criteria and exhaustive rank-grid search.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MecmError, Result};
use crate::estimator::{fit, FitOptions};
use crate::harness::derive_seed;
use crate::linalg::MatrixSeries;
use crate::model::{effective_params, RankPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    pub const ALL: [Criterion; 2] = [Criterion::Aic, Criterion::Bic];
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Criterion::Aic => write!(f, "AIC"),
            Criterion::Bic => write!(f, "BIC"),
        }
    }
}

/// `(AIC, BIC) = (−2L + 2ψ, −2L + ln(T)ψ)`.
pub fn information_criteria(loglik: f64, psi: usize, t: usize) -> (f64, f64) {
    let psi = psi as f64;
    (-2.0 * loglik + 2.0 * psi, -2.0 * loglik + (t as f64).ln() * psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub ranks: RankPair,
    pub psi: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the cell failed to fit; such cells never win.
    pub error: Option<String>,
}

impl GridEntry {
    pub fn value(&self, criterion: Criterion) -> Option<f64> {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub entries: Vec<GridEntry>,
    pub chosen_aic: RankPair,
    pub chosen_bic: RankPair,
    pub p: usize,
    /// Sample size used in BIC's `ln(T)`: the `T − p − 1` likelihood terms.
    pub t_eff: usize,
}

impl SelectionReport {
    pub fn chosen(&self, criterion: Criterion) -> RankPair {
        match criterion {
            Criterion::Aic => self.chosen_aic,
            Criterion::Bic => self.chosen_bic,
        }
    }

    pub fn entry(&self, ranks: RankPair) -> Option<&GridEntry> {
        self.entries.iter().find(|e| e.ranks == ranks)
    }
}

/// Minimizer of `criterion` over fitted cells; ties go to the smaller
/// `r1 + r2`, then the smaller `r1`.
pub fn argmin(entries: &[GridEntry], criterion: Criterion) -> Option<RankPair> {
    entries
        .iter()
        .filter_map(|e| e.value(criterion).map(|v| (v, e.ranks)))
        .filter(|(v, _)| v.is_finite())
        .min_by(|(va, a), (vb, b)| {
            va.total_cmp(vb)
                .then((a.r1 + a.r2).cmp(&(b.r1 + b.r2)))
                .then(a.r1.cmp(&b.r1))
        })
        .map(|(_, r)| r)
}

/// Fits every pair in `{1..N₁} x {1..N₂}` and picks the AIC and BIC
/// minimizers.
pub fn select_ranks(series: &MatrixSeries, p: usize, opts: &FitOptions) -> Result<SelectionReport> {
    opts.validate()?;
    series.require_len_for_lag(p)?;
    let (n1, n2) = (series.n1(), series.n2());
    let t_eff = series.len() - p - 1;
    let entries: Vec<GridEntry> = RankPair::grid(n1, n2)
        .into_par_iter()
        .map(|ranks| {
            let psi = effective_params(ranks, p, n1, n2).expect("grid ranks are valid");
            let cell_opts = FitOptions {
                seed: derive_seed(opts.seed, &[ranks.r1 as u64, ranks.r2 as u64]),
                ..opts.clone()
            };
            match fit(series, ranks, p, &cell_opts) {
                Ok(res) => {
                    let (aic, bic) = information_criteria(res.loglik, psi, t_eff);
                    GridEntry {
                        ranks,
                        psi,
                        loglik: Some(res.loglik),
                        aic: Some(aic),
                        bic: Some(bic),
                        converged: res.converged,
                        iterations: res.iterations,
                        error: None,
                    }
                }
                Err(e) => {
                    warn!("rank pair {ranks} failed to fit: {e}");
                    GridEntry {
                        ranks,
                        psi,
                        loglik: None,
                        aic: None,
                        bic: None,
                        converged: false,
                        iterations: 0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let chosen = |c| {
        argmin(&entries, c).ok_or_else(|| {
            entries
                .iter()
                .find_map(|e| e.error.clone())
                .map(MecmError::InvalidConfig)
                .unwrap_or_else(|| MecmError::InvalidConfig("empty rank grid".into()))
        })
    };
    let chosen_aic = chosen(Criterion::Aic)?;
    let chosen_bic = chosen(Criterion::Bic)?;
    Ok(SelectionReport {
        entries,
        chosen_aic,
        chosen_bic,
        p,
        t_eff,
    })
}
