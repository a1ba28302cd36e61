//! JSON report types and plain-text rendering.

use mecm::selection::SelectionReport;
use mecm::{Criterion, FitResult, MatNormSpec, MecmParams, RankPair};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::layout::PanelLayout;

/// Row-major nested arrays, the readable JSON form of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rows(pub Vec<Vec<f64>>);

impl From<&DMatrix<f64>> for Rows {
    fn from(m: &DMatrix<f64>) -> Self {
        Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

impl Rows {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let nrows = self.0.len();
        let ncols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != ncols) {
            return Err(CliError::Usage("ragged matrix in report".into()));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| self.0[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub ranks: RankPair,
    pub p: usize,
    pub d: Rows,
    pub u1: Rows,
    pub u2: Rows,
    pub u3: Rows,
    pub u4: Rows,
    pub phi1: Vec<Rows>,
    pub phi2: Vec<Rows>,
    pub sigma1: Rows,
    pub sigma2: Rows,
}

impl From<&MecmParams> for ParamsReport {
    fn from(p: &MecmParams) -> Self {
        Self {
            ranks: p.ranks,
            p: p.p,
            d: (&p.d).into(),
            u1: (&p.u1).into(),
            u2: (&p.u2).into(),
            u3: (&p.u3).into(),
            u4: (&p.u4).into(),
            phi1: p.phi1.iter().map(Rows::from).collect(),
            phi2: p.phi2.iter().map(Rows::from).collect(),
            sigma1: p.sigma.sigma1().into(),
            sigma2: p.sigma.sigma2().into(),
        }
    }
}

impl ParamsReport {
    pub fn to_params(&self) -> Result<MecmParams> {
        let phi = |v: &[Rows]| v.iter().map(Rows::to_matrix).collect::<Result<Vec<_>>>();
        Ok(MecmParams::new(
            self.d.to_matrix()?,
            self.u1.to_matrix()?,
            self.u2.to_matrix()?,
            self.u3.to_matrix()?,
            self.u4.to_matrix()?,
            phi(&self.phi1)?,
            phi(&self.phi2)?,
            MatNormSpec::new(self.sigma1.to_matrix()?, self.sigma2.to_matrix()?)?,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ParamsReport,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance_at_floor: bool,
    pub n_obs: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub seed: u64,
    pub invocation: String,
}

impl FitReport {
    pub fn new(res: &FitResult, n_obs: usize, layout: &PanelLayout, seed: u64, invocation: &str) -> Self {
        Self {
            params: (&res.params).into(),
            loglik: res.loglik,
            iterations: res.iterations,
            converged: res.converged,
            covariance_at_floor: res.covariance_at_floor,
            n_obs,
            row_labels: layout.row_labels.clone(),
            col_labels: layout.col_labels.clone(),
            seed,
            invocation: invocation.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOutput {
    pub report: SelectionReport,
    pub seed: u64,
    pub invocation: String,
}

fn aligned(rows: &[Vec<String>], right_from: usize) -> String {
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let w = widths[c];
                if c >= right_from {
                    format!("{s:>w$}")
                } else {
                    format!("{s:<w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Labelled matrix with three decimals.
pub fn render_matrix(title: &str, m: &DMatrix<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let mut rows = vec![std::iter::once(String::new()).chain(col_labels.iter().cloned()).collect::<Vec<_>>()];
    for i in 0..m.nrows() {
        let label = row_labels.get(i).cloned().unwrap_or_else(|| (i + 1).to_string());
        rows.push(std::iter::once(label).chain(m.row(i).iter().map(|v| format!("{v:.3}"))).collect());
    }
    format!("{title}\n{}", aligned(&rows, 1))
}

fn indices(n: usize) -> Vec<String> {
    (1..=n).map(|k| k.to_string()).collect()
}

/// Estimates with row factors labelled by row names and column factors by
/// column names.
pub fn render_fit(report: &FitReport, params: &MecmParams) -> String {
    let rl = &report.row_labels;
    let cl = &report.col_labels;
    let (r1, r2) = (params.ranks.r1, params.ranks.r2);
    let mut out = format!(
        "MECM({}) ranks {}  T = {}  log-likelihood = {:.4}  iterations = {}  converged = {}\n\n",
        params.p, params.ranks, report.n_obs, report.loglik, report.iterations, report.converged
    );
    let blocks = [
        render_matrix("U3 (row cointegrating vectors)", &params.u3, rl, &indices(r1)),
        render_matrix("U4 (column cointegrating vectors)", &params.u4, cl, &indices(r2)),
        render_matrix("U1 (row adjustment)", &params.u1, rl, &indices(r1)),
        render_matrix("U2 (column adjustment)", &params.u2, cl, &indices(r2)),
        render_matrix("D (drift)", &params.d, rl, cl),
        render_matrix("Sigma1 (row covariance)", params.sigma.sigma1(), rl, rl),
        render_matrix("Sigma2 (column covariance)", params.sigma.sigma2(), cl, cl),
    ];
    out.push_str(&blocks.join("\n"));
    for j in 0..params.p {
        out.push('\n');
        out.push_str(&render_matrix(&format!("Phi1 lag {}", j + 1), &params.phi1[j], rl, rl));
        out.push('\n');
        out.push_str(&render_matrix(&format!("Phi2 lag {}", j + 1), &params.phi2[j], cl, cl));
    }
    out
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Full grid table followed by the chosen pair(s).
pub fn render_selection(report: &SelectionReport, criteria: &[Criterion]) -> String {
    let mut rows = vec![["r1", "r2", "psi", "loglik", "AIC", "BIC", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for e in &report.entries {
        let mark = |c: Criterion, v: Option<f64>| {
            let s = opt(v, 3);
            if report.chosen(c) == e.ranks && criteria.contains(&c) {
                format!("{s}*")
            } else {
                format!("{s} ")
            }
        };
        rows.push(vec![
            e.ranks.r1.to_string(),
            e.ranks.r2.to_string(),
            e.psi.to_string(),
            opt(e.loglik, 3),
            mark(Criterion::Aic, e.aic),
            mark(Criterion::Bic, e.bic),
            match &e.error {
                Some(_) => "failed".to_string(),
                None => e.converged.to_string(),
            },
        ]);
    }
    let mut out = format!("MECM({}) rank grid, effective T = {}\n", report.p, report.t_eff);
    out.push_str(&aligned(&rows, 0));
    for &c in criteria {
        out.push_str(&format!("chosen by {c}: {}\n", report.chosen(c)));
    }
    out
}
