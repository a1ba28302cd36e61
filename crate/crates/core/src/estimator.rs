//! Maximum-likelihood estimation of a MECM at fixed ranks.
//!
//! The likelihood depends on the data only through the cross-moments of
//! `Δy_t` and the stacked regressors `z_t = [1, y_{t−1}, Δy_{t−1}, …, Δy_{t−p}]`,
//! so every evaluation and gradient costs `O(N²K)` regardless of `T`.
//!
//! The optimizer cycles over parameter blocks in the order
//! `D, U₁, U₃, Σ₁, U₂, U₄, Σ₂, (Φ₁ⱼ, Φ₂ⱼ)ⱼ`, taking a line-searched ascent
//! step along each block's (optionally preconditioned) gradient and
//! renormalizing `U₃`, `Σ₁`, `U₄` and `Φ₁ⱼ` after their updates. A step is
//! accepted only if the likelihood, evaluated after normalization, does not
//! decrease.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MecmError, Result};
use crate::linalg::{
    chol_log_det, contract_inner, contract_outer, kron, nearest_kronecker, project_spd,
    spd_cholesky, standard_normal_matrix, unvec, vec, MatNormSpec, MatrixSeries,
};
use crate::model::{
    normalize_identification, normalize_phi, normalize_sigma, normalize_u3, normalize_u4,
    MecmParams, RankPair,
};

/// Direction used for each block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    /// Gradient scaled by the inverse block curvature: the exact block
    /// Hessian for mean blocks and `Σ ∇ Σ` for covariance blocks. A unit
    /// step is the exact block maximizer.
    Scaled,
    /// Raw gradient.
    Plain,
}

/// Backtracking line-search configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rule: StepRule,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl StepControl {
    pub fn scaled() -> Self {
        Self {
            rule: StepRule::Scaled,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            max_backtracks: 30,
        }
    }

    pub fn plain() -> Self {
        Self {
            rule: StepRule::Plain,
            initial_step: 1e-2,
            backtrack_factor: 0.5,
            max_backtracks: 30,
        }
    }
}

impl Default for StepControl {
    fn default() -> Self {
        Self::scaled()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub step: StepControl,
    /// Stop when a full sweep raises the likelihood by less than this.
    pub tol: f64,
    /// Also stop when the increase relative to `1 + |L|` falls below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Number of starts; starts after the first perturb the initializer.
    pub n_starts: usize,
    pub perturb_scale: f64,
    pub seed: u64,
    /// Eigenvalue floor applied when projecting covariance updates.
    pub sigma_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            step: StepControl::default(),
            tol: 0.01,
            rel_tol: 1e-8,
            max_iter: 500,
            n_starts: 1,
            perturb_scale: 0.1,
            seed: 0,
            sigma_floor: 1e-8,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MecmError::InvalidConfig(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.step.backtrack_factor > 0.0 && self.step.backtrack_factor < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.step.initial_step > 0.0) {
            return bad("initial step must be positive");
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MecmParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Likelihood at the start and after every sweep.
    pub loglik_trace: Vec<f64>,
    /// Whether a covariance eigenvalue sat at the floor at the end, i.e. the
    /// likelihood is unbounded on this data.
    pub covariance_at_floor: bool,
}

/// Partial gradients of the log-likelihood, one per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
    pub u4: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub phi1: Vec<DMatrix<f64>>,
    pub phi2: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    D,
    U1,
    U2,
    U3,
    U4,
    Sigma1,
    Sigma2,
    Phi1(usize),
    Phi2(usize),
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::D => write!(f, "D"),
            Block::U1 => write!(f, "U1"),
            Block::U2 => write!(f, "U2"),
            Block::U3 => write!(f, "U3"),
            Block::U4 => write!(f, "U4"),
            Block::Sigma1 => write!(f, "Sigma1"),
            Block::Sigma2 => write!(f, "Sigma2"),
            Block::Phi1(j) => write!(f, "Phi1[{}]", j + 1),
            Block::Phi2(j) => write!(f, "Phi2[{}]", j + 1),
        }
    }
}

/// Update order of one sweep.
pub fn sweep_order(p: usize) -> Vec<Block> {
    let mut order = vec![
        Block::D,
        Block::U1,
        Block::U3,
        Block::Sigma1,
        Block::U2,
        Block::U4,
        Block::Sigma2,
    ];
    for j in 0..p {
        order.push(Block::Phi1(j));
        order.push(Block::Phi2(j));
    }
    order
}

/// Columns `Δy_t` and `z_t = (1, y_{t−1}, Δy_{t−1}, …, Δy_{t−p})` over the
/// effective sample.
fn regression_data(series: &MatrixSeries, p: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    series.require_len_for_lag(p)?;
    let n = series.n1() * series.n2();
    let k = 1 + n + p * n;
    let y: Vec<DVector<f64>> = series.iter().map(vec).collect();
    let dy: Vec<DVector<f64>> = y.windows(2).map(|w| &w[1] - &w[0]).collect();
    let t_eff = series.len() - p - 1;
    let mut lhs = DMatrix::zeros(n, t_eff);
    let mut z = DMatrix::zeros(k, t_eff);
    for (col, t) in (p + 1..series.len()).enumerate() {
        lhs.column_mut(col).copy_from(&dy[t - 1]);
        z[(0, col)] = 1.0;
        z.view_mut((1, col), (n, 1)).copy_from(&y[t - 1]);
        for j in 1..=p {
            z.view_mut((1 + j * n, col), (n, 1)).copy_from(&dy[t - 1 - j]);
        }
    }
    Ok((lhs, z))
}

/// Cross-moments of the regression `Δy_t = C z_t + e_t`.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    n1: usize,
    n2: usize,
    p: usize,
    t_eff: usize,
    m00: DMatrix<f64>,
    m01: DMatrix<f64>,
    m11: DMatrix<f64>,
}

impl SufficientStats {
    pub fn new(series: &MatrixSeries, p: usize) -> Result<Self> {
        let (lhs, z) = regression_data(series, p)?;
        Ok(Self {
            n1: series.n1(),
            n2: series.n2(),
            p,
            t_eff: lhs.ncols(),
            m00: &lhs * lhs.transpose(),
            m01: &lhs * z.transpose(),
            m11: &z * z.transpose(),
        })
    }

    pub fn t_eff(&self) -> usize {
        self.t_eff
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn n(&self) -> usize {
        self.n1 * self.n2
    }

    /// Stacked coefficients `C = [vec(D), Π, Φ₁, …, Φ_p]`.
    pub fn coefficients(&self, params: &MecmParams) -> DMatrix<f64> {
        let n = self.n();
        let mut c = DMatrix::zeros(n, 1 + n + self.p * n);
        c.column_mut(0).copy_from(&vec(&params.d));
        c.view_mut((0, 1), (n, n)).copy_from(&params.pi());
        for j in 0..self.p {
            c.view_mut((0, 1 + (j + 1) * n), (n, n))
                .copy_from(&kron(&params.phi2[j], &params.phi1[j]));
        }
        c
    }

    /// Residual cross-product `Σ_t r_t r_tᵀ` for coefficients `c`.
    pub fn residual_cross(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let x = c * self.m01.transpose();
        let s = &self.m00 - &x - x.transpose() + c * &self.m11 * c.transpose();
        (&s + s.transpose()) * 0.5
    }

    /// Log-likelihood (up to the `2π` constant). Returns `-∞` when a
    /// covariance is not positive definite.
    pub fn loglik(&self, params: &MecmParams) -> f64 {
        match self.precision(&params.sigma) {
            Some(prec) => {
                let s = self.residual_cross(&self.coefficients(params));
                self.loglik_with(&prec, &s)
            }
            None => f64::NEG_INFINITY,
        }
    }

    fn loglik_with(&self, prec: &Precision, s: &DMatrix<f64>) -> f64 {
        let t = self.t_eff as f64;
        -0.5 * t * (self.n2 as f64 * prec.logdet1 + self.n1 as f64 * prec.logdet2)
            - 0.5 * prec.omega_inv.dot(s)
    }

    fn precision(&self, sigma: &MatNormSpec) -> Option<Precision> {
        let c1 = spd_cholesky(sigma.sigma1(), "Sigma1").ok()?;
        let c2 = spd_cholesky(sigma.sigma2(), "Sigma2").ok()?;
        let inv1 = c1.inverse();
        let inv2 = c2.inverse();
        Some(Precision {
            logdet1: chol_log_det(&c1),
            logdet2: chol_log_det(&c2),
            omega_inv: kron(&inv2, &inv1),
            inv1,
            inv2,
        })
    }

    /// Gradient of the log-likelihood with respect to one block.
    pub fn block_gradient(&self, params: &MecmParams, block: Block) -> Result<DMatrix<f64>> {
        let prec = self
            .precision(&params.sigma)
            .ok_or_else(|| MecmError::NotPositiveDefinite("covariance".into()))?;
        let c = self.coefficients(params);
        Ok(self.block_gradient_with(params, block, &prec, &c))
    }

    fn block_gradient_with(
        &self,
        params: &MecmParams,
        block: Block,
        prec: &Precision,
        c: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let (n1, n2, n) = (self.n1, self.n2, self.n());
        let t = self.t_eff as f64;
        let coef_grad = || &prec.omega_inv * (&self.m01 - c * &self.m11);
        match block {
            Block::D => unvec(&coef_grad().column(0).into_owned(), n1, n2),
            Block::U1 | Block::U3 | Block::U2 | Block::U4 => {
                let g = coef_grad();
                let g_pi = g.view((0, 1), (n, n)).into_owned();
                match block {
                    Block::U1 => contract_outer(&g_pi, &params.col_longrun(), n1) * &params.u3,
                    Block::U3 => contract_outer(&g_pi, &params.col_longrun(), n1).transpose() * &params.u1,
                    Block::U2 => contract_inner(&g_pi, &params.row_longrun(), n2) * &params.u4,
                    _ => contract_inner(&g_pi, &params.row_longrun(), n2).transpose() * &params.u2,
                }
            }
            Block::Phi1(j) | Block::Phi2(j) => {
                let g = coef_grad();
                let g_phi = g.view((0, 1 + (j + 1) * n), (n, n)).into_owned();
                match block {
                    Block::Phi1(_) => contract_outer(&g_phi, &params.phi2[j], n1),
                    _ => contract_inner(&g_phi, &params.phi1[j], n2),
                }
            }
            Block::Sigma1 => {
                let s = self.residual_cross(c);
                let s1 = contract_outer(&s, &prec.inv2, n1);
                let g = &prec.inv1 * s1 * &prec.inv1 * 0.5 - &prec.inv1 * (0.5 * t * n2 as f64);
                (&g + g.transpose()) * 0.5
            }
            Block::Sigma2 => {
                let s = self.residual_cross(c);
                let s2 = contract_inner(&s, &prec.inv1, n2);
                let g = &prec.inv2 * s2 * &prec.inv2 * 0.5 - &prec.inv2 * (0.5 * t * n1 as f64);
                (&g + g.transpose()) * 0.5
            }
        }
    }

    /// Negative Hessian of the log-likelihood with respect to a mean block,
    /// together with the block's entries in column-major order. Each mean
    /// block enters `C` linearly, so this is exact.
    fn mean_block_curvature(
        &self,
        params: &MecmParams,
        block: Block,
        prec: &Precision,
    ) -> DMatrix<f64> {
        let n = self.n();
        let (offset, width) = match block {
            Block::D => (0, 1),
            Block::Phi1(j) | Block::Phi2(j) => (1 + (j + 1) * n, n),
            _ => (1, n),
        };
        let (rows, cols) = block_shape(params, block);
        let a1 = params.row_longrun();
        let a2 = params.col_longrun();
        let jac: Vec<DMatrix<f64>> = (0..rows * cols)
            .map(|idx| {
                let mut e = DMatrix::zeros(rows, cols);
                e[(idx % rows, idx / rows)] = 1.0;
                match block {
                    Block::D => DMatrix::from_column_slice(rows * cols, 1, e.as_slice()),
                    Block::U1 => kron(&a2, &(e * params.u3.transpose())),
                    Block::U3 => kron(&a2, &(&params.u1 * e.transpose())),
                    Block::U2 => kron(&(e * params.u4.transpose()), &a1),
                    Block::U4 => kron(&(&params.u2 * e.transpose()), &a1),
                    Block::Phi1(j) => kron(&params.phi2[j], &e),
                    Block::Phi2(j) => kron(&e, &params.phi1[j]),
                    Block::Sigma1 | Block::Sigma2 => unreachable!("covariance blocks are not linear"),
                }
            })
            .collect();
        let m11 = self.m11.view((offset, offset), (width, width));
        let weighted: Vec<DMatrix<f64>> = jac.iter().map(|jb| &prec.omega_inv * jb * m11).collect();
        let k = jac.len();
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = jac[a].dot(&weighted[b]);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        h
    }

    /// All block gradients at `params`.
    pub fn gradients(&self, params: &MecmParams) -> Result<Gradients> {
        let prec = self
            .precision(&params.sigma)
            .ok_or_else(|| MecmError::NotPositiveDefinite("covariance".into()))?;
        let c = self.coefficients(params);
        let g = |b| self.block_gradient_with(params, b, &prec, &c);
        Ok(Gradients {
            d: g(Block::D),
            u1: g(Block::U1),
            u2: g(Block::U2),
            u3: g(Block::U3),
            u4: g(Block::U4),
            sigma1: g(Block::Sigma1),
            sigma2: g(Block::Sigma2),
            phi1: (0..self.p).map(|j| g(Block::Phi1(j))).collect(),
            phi2: (0..self.p).map(|j| g(Block::Phi2(j))).collect(),
        })
    }
}

struct Precision {
    logdet1: f64,
    logdet2: f64,
    inv1: DMatrix<f64>,
    inv2: DMatrix<f64>,
    omega_inv: DMatrix<f64>,
}

fn block_shape(params: &MecmParams, block: Block) -> (usize, usize) {
    let m = block_ref(params, block);
    m.shape()
}

fn block_ref(params: &MecmParams, block: Block) -> &DMatrix<f64> {
    match block {
        Block::D => &params.d,
        Block::U1 => &params.u1,
        Block::U2 => &params.u2,
        Block::U3 => &params.u3,
        Block::U4 => &params.u4,
        Block::Sigma1 => params.sigma.sigma1(),
        Block::Sigma2 => params.sigma.sigma2(),
        Block::Phi1(j) => &params.phi1[j],
        Block::Phi2(j) => &params.phi2[j],
    }
}

/// Analytic partial gradients of the log-likelihood of `params` on `series`.
/// Covariance gradients are the symmetric matrices `∂L/∂Σ` obtained by
/// treating entries as independent.
pub fn gradients(params: &MecmParams, series: &MatrixSeries) -> Result<Gradients> {
    params.validate()?;
    SufficientStats::new(series, params.p)?.gradients(params)
}

/// Starting values: least squares for the unstructured VECM, nearest
/// Kronecker product projection of each coefficient matrix, truncated SVD of
/// the long-run factors, identity covariances and `D = 0`, then
/// identification normalization.
pub fn initialize(series: &MatrixSeries, ranks: RankPair, p: usize) -> Result<MecmParams> {
    let (n1, n2) = (series.n1(), series.n2());
    ranks.validate(n1, n2)?;
    let (lhs, z) = regression_data(series, p)?;
    let n = n1 * n2;
    if lhs.ncols() < z.nrows() {
        warn!(
            "only {} effective observations for {} least-squares regressors",
            lhs.ncols(),
            z.nrows()
        );
    }
    let coef = least_squares(&lhs, &z)?;

    let pi = coef.view((0, 1), (n, n)).into_owned();
    let (a2, a1) = nearest_kronecker(&pi, (n2, n2), (n1, n1))?;
    let (u1, u3) = truncated_factors(&a1, ranks.r1);
    let (u2, u4) = truncated_factors(&a2, ranks.r2);

    let mut phi1 = Vec::with_capacity(p);
    let mut phi2 = Vec::with_capacity(p);
    for j in 0..p {
        let b = coef.view((0, 1 + (j + 1) * n), (n, n)).into_owned();
        let (f2, f1) = nearest_kronecker(&b, (n2, n2), (n1, n1))?;
        phi1.push(f1);
        phi2.push(f2);
    }
    let params = MecmParams::new(
        DMatrix::zeros(n1, n2),
        u1,
        u2,
        u3,
        u4,
        phi1,
        phi2,
        MatNormSpec::identity(n1, n2),
    )?;
    normalize_identification(&params)
}

/// Unrestricted least squares `lhs ≈ C z` through the SVD of the
/// row-equilibrated regressors. Rejects regressors whose normal matrix has
/// condition number above `1e12`.
fn least_squares(lhs: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = z.nrows();
    let scale = DVector::from_fn(k, |i, _| {
        let norm = z.row(i).norm();
        if norm > 0.0 {
            1.0 / norm
        } else {
            0.0
        }
    });
    let eq = DMatrix::from_fn(z.ncols(), k, |t, i| z[(i, t)] * scale[i]);
    let svd = eq.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = if z.ncols() >= k { svd.singular_values.min() } else { 0.0 };
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition.is_finite() && condition < 1e12) {
        return Err(MecmError::DegenerateRegressors { condition });
    }
    let sol = svd
        .solve(&lhs.transpose(), 0.0)
        .map_err(|_| MecmError::DegenerateRegressors { condition })?;
    Ok(DMatrix::from_fn(lhs.nrows(), k, |i, j| sol[(j, i)] * scale[j]))
}

/// Rank-`r` factorization `a ≈ left · rightᵀ` from the truncated SVD, with
/// the singular values on the left factor.
fn truncated_factors(a: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut left = DMatrix::zeros(a.nrows(), r);
    let mut right = DMatrix::zeros(a.ncols(), r);
    for (c, &i) in order.iter().take(r).enumerate() {
        left.set_column(c, &(u.column(i) * svd.singular_values[i]));
        right.set_column(c, &v_t.row(i).transpose());
    }
    (left, right)
}

struct Optimizer<'a> {
    stats: &'a SufficientStats,
    opts: &'a FitOptions,
}

impl Optimizer<'_> {
    /// One line-searched update of `block`. Returns whether a step was
    /// accepted and whether the accepted covariance hit the eigenvalue floor.
    fn update_block(
        &self,
        params: &mut MecmParams,
        current: &mut f64,
        block: Block,
        iteration: usize,
    ) -> Result<(bool, bool)> {
        let prec = self
            .stats
            .precision(&params.sigma)
            .ok_or_else(|| MecmError::Estimation {
                block: block.to_string(),
                iteration,
            })?;
        let c = self.stats.coefficients(params);
        let grad = self.stats.block_gradient_with(params, block, &prec, &c);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(MecmError::Estimation {
                block: block.to_string(),
                iteration,
            });
        }
        if grad.amax() == 0.0 {
            return Ok((false, false));
        }
        let direction = self.direction(params, block, &prec, &grad);
        let step = &self.opts.step;
        let mut eta = step.initial_step;
        for _ in 0..=step.max_backtracks {
            if let Some((candidate, clamped)) = self.candidate(params, block, &direction, eta) {
                let value = self.stats.loglik(&candidate);
                if value.is_finite() && value >= *current {
                    *params = candidate;
                    *current = value;
                    return Ok((true, clamped));
                }
            }
            eta *= step.backtrack_factor;
        }
        Ok((false, false))
    }

    fn direction(
        &self,
        params: &MecmParams,
        block: Block,
        prec: &Precision,
        grad: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        if self.opts.step.rule == StepRule::Plain {
            return grad.clone();
        }
        match block {
            Block::Sigma1 | Block::Sigma2 => {
                let other = if block == Block::Sigma1 {
                    self.stats.n2
                } else {
                    self.stats.n1
                };
                let sigma = block_ref(params, block);
                sigma * grad * sigma * (2.0 / (self.stats.t_eff as f64 * other as f64))
            }
            _ => {
                let h = self.stats.mean_block_curvature(params, block, prec);
                let k = h.nrows();
                let ridge = 1e-10 * (h.trace() / k as f64).abs() + f64::MIN_POSITIVE;
                let g = vec(grad);
                let solved = (h + DMatrix::identity(k, k) * ridge)
                    .cholesky()
                    .map(|ch| ch.solve(&g))
                    .filter(|d| d.iter().all(|v| v.is_finite()));
                match solved {
                    Some(d) => unvec(&d, grad.nrows(), grad.ncols()),
                    None => grad.clone(),
                }
            }
        }
    }

    fn candidate(
        &self,
        params: &MecmParams,
        block: Block,
        direction: &DMatrix<f64>,
        eta: f64,
    ) -> Option<(MecmParams, bool)> {
        let mut cand = params.clone();
        let mut clamped = false;
        match block {
            Block::D => cand.d += direction * eta,
            Block::U1 => cand.u1 += direction * eta,
            Block::U2 => cand.u2 += direction * eta,
            Block::U3 => {
                cand.u3 += direction * eta;
                normalize_u3(&mut cand).ok()?;
            }
            Block::U4 => {
                cand.u4 += direction * eta;
                normalize_u4(&mut cand).ok()?;
            }
            Block::Sigma1 => {
                // floor relative to the norm that normalization divides out,
                // then keep Σ₂ above the floor after it absorbs the scale
                let raw = params.sigma.sigma1() + direction * eta;
                let floor = self.opts.sigma_floor * raw.norm();
                let (s1, c1) = project_spd(&raw, floor);
                cand.sigma = MatNormSpec::new(s1, params.sigma.sigma2().clone()).ok()?;
                normalize_sigma(&mut cand).ok()?;
                let (s2, c2) = project_spd(cand.sigma.sigma2(), self.opts.sigma_floor);
                if c2 {
                    cand.sigma = MatNormSpec::new(cand.sigma.sigma1().clone(), s2).ok()?;
                }
                clamped = c1 || c2;
            }
            Block::Sigma2 => {
                let (s2, c) = project_spd(&(params.sigma.sigma2() + direction * eta), self.opts.sigma_floor);
                clamped = c;
                cand.sigma = MatNormSpec::new(params.sigma.sigma1().clone(), s2).ok()?;
            }
            Block::Phi1(j) => {
                cand.phi1[j] += direction * eta;
                normalize_phi(&mut cand, j);
            }
            Block::Phi2(j) => cand.phi2[j] += direction * eta,
        }
        if block_ref(&cand, block).iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((cand, clamped))
    }

    fn run(&self, start: MecmParams) -> Result<FitResult> {
        let mut params = start;
        let mut current = self.stats.loglik(&params);
        if !current.is_finite() {
            return Err(MecmError::Estimation {
                block: "initial values".into(),
                iteration: 0,
            });
        }
        let mut trace = vec![current];
        let (mut floor1, mut floor2) = (false, false);
        let mut converged = false;
        let mut iterations = 0;
        let order = sweep_order(params.p);
        for s in 1..=self.opts.max_iter {
            iterations = s;
            let previous = current;
            for &block in &order {
                let (accepted, clamped) = self.update_block(&mut params, &mut current, block, s)?;
                if accepted {
                    match block {
                        Block::Sigma1 => floor1 = clamped,
                        Block::Sigma2 => floor2 = clamped,
                        _ => {}
                    }
                }
            }
            trace.push(current);
            let increase = current - previous;
            debug!("sweep {s}: loglik {current:.6} (+{increase:.3e})");
            // At the covariance floor the likelihood has no finite maximum.
            if !(floor1 || floor2)
                && (increase < self.opts.tol || increase / (1.0 + current.abs()) < self.opts.rel_tol)
            {
                converged = true;
                break;
            }
        }
        Ok(FitResult {
            params,
            loglik: current,
            iterations,
            converged,
            loglik_trace: trace,
            covariance_at_floor: floor1 || floor2,
        })
    }
}

/// Fits from explicit starting values, which must satisfy the
/// identification restrictions.
pub fn fit_from(
    series: &MatrixSeries,
    start: MecmParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    start.validate()?;
    let stats = SufficientStats::new(series, start.p)?;
    Optimizer { stats: &stats, opts }.run(start)
}

/// Maximum-likelihood fit at fixed ranks and lag order.
pub fn fit(series: &MatrixSeries, ranks: RankPair, p: usize, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let init = initialize(series, ranks, p)?;
    let stats = SufficientStats::new(series, p)?;
    let optimizer = Optimizer { stats: &stats, opts };
    if opts.n_starts == 1 {
        return optimizer.run(init);
    }
    let results: Vec<Result<FitResult>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|start| {
            if start == 0 {
                optimizer.run(init.clone())
            } else {
                let seed = crate::harness::derive_seed(opts.seed, &[start as u64]);
                optimizer.run(perturb(&init, opts.perturb_scale, seed)?)
            }
        })
        .collect();
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(fr) => {
                if best.as_ref().is_none_or(|b| fr.loglik > b.loglik) {
                    best = Some(fr);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start"))
}

/// Random relative perturbation of the mean parameters.
fn perturb(params: &MecmParams, scale: f64, seed: u64) -> Result<MecmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |m: &DMatrix<f64>| {
        let rms = (m.norm_squared() / m.len().max(1) as f64).sqrt().max(1e-3);
        m + standard_normal_matrix(&mut rng, m.nrows(), m.ncols()) * (scale * rms)
    };
    let mut out = params.clone();
    out.u1 = jitter(&params.u1);
    out.u2 = jitter(&params.u2);
    out.u3 = jitter(&params.u3);
    out.u4 = jitter(&params.u4);
    out.phi1 = params.phi1.iter().map(&mut jitter).collect();
    out.phi2 = params.phi2.iter().map(&mut jitter).collect();
    normalize_identification(&out)
}
