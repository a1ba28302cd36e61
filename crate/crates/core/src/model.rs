//! MECM parameters, identification, parameter counts, residuals and the
//! log-likelihood.
//!
//! The model for an `n1 x n2` series is
//!
//! ```text
//! ΔY_t = D + U₁U₃ᵀ Y_{t−1} U₄U₂ᵀ + Σⱼ Φ₁ⱼ ΔY_{t−j} Φ₂ⱼᵀ + E_t,
//! E_t ~ MN(0, Σ₁, Σ₂)
//! ```
//!
//! which vectorizes to a VECM with `α = U₂ ⊗ U₁`, `β = U₄ ⊗ U₃` and
//! `Φⱼ = Φ₂ⱼ ⊗ Φ₁ⱼ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MecmError, Result};
use crate::linalg::{chol_log_det, kron, mahalanobis_trace, vec, MatNormSpec, MatrixSeries};

/// Row and column cointegration ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankPair {
    pub r1: usize,
    pub r2: usize,
}

impl RankPair {
    pub fn new(r1: usize, r2: usize) -> Self {
        Self { r1, r2 }
    }

    /// Checks `1 ≤ r1 ≤ n1` and `1 ≤ r2 ≤ n2`.
    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        if self.r1 == 0 || self.r1 > n1 || self.r2 == 0 || self.r2 > n2 {
            return Err(MecmError::InvalidRank {
                r1: self.r1,
                r2: self.r2,
                n1,
                n2,
            });
        }
        Ok(())
    }

    /// All pairs in `{1..n1} x {1..n2}`, `r1` varying slowest.
    pub fn grid(n1: usize, n2: usize) -> Vec<RankPair> {
        (1..=n1)
            .flat_map(|r1| (1..=n2).map(move |r2| RankPair::new(r1, r2)))
            .collect()
    }
}

impl std::fmt::Display for RankPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.r1, self.r2)
    }
}

/// Effective number of parameters, excluding the constant:
/// `r₁(2N₁ − r₁) + r₂(2N₂ − r₂) + p(N₁² + N₂²)`.
pub fn effective_params(ranks: RankPair, p: usize, n1: usize, n2: usize) -> Result<usize> {
    ranks.validate(n1, n2)?;
    let (r1, r2) = (ranks.r1, ranks.r2);
    Ok(r1 * (2 * n1 - r1) + r2 * (2 * n2 - r2) + p * (n1 * n1 + n2 * n2))
}

/// Parameter count of an unrestricted VECM of dimension `n`, rank `r` and
/// `p` lagged differences: `r(2n − r) + p n²`.
pub fn vecm_param_count(n: usize, r: usize, p: usize) -> Result<usize> {
    if r > n {
        return Err(MecmError::InvalidRank {
            r1: r,
            r2: 0,
            n1: n,
            n2: 0,
        });
    }
    Ok(r * (2 * n - r) + p * n * n)
}

/// Parameters of a MECM(p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MecmParams {
    pub d: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
    pub u4: DMatrix<f64>,
    pub phi1: Vec<DMatrix<f64>>,
    pub phi2: Vec<DMatrix<f64>>,
    pub sigma: MatNormSpec,
    pub ranks: RankPair,
    pub p: usize,
}

impl MecmParams {
    /// Builds and validates a parameter set. Dimensions are taken from `d`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: DMatrix<f64>,
        u1: DMatrix<f64>,
        u2: DMatrix<f64>,
        u3: DMatrix<f64>,
        u4: DMatrix<f64>,
        phi1: Vec<DMatrix<f64>>,
        phi2: Vec<DMatrix<f64>>,
        sigma: MatNormSpec,
    ) -> Result<Self> {
        let params = Self {
            ranks: RankPair::new(u1.ncols(), u2.ncols()),
            p: phi1.len(),
            d,
            u1,
            u2,
            u3,
            u4,
            phi1,
            phi2,
            sigma,
        };
        params.validate()?;
        Ok(params)
    }

    /// All-zero mean parameters with identity covariances.
    pub fn zeros(n1: usize, n2: usize, ranks: RankPair, p: usize) -> Self {
        Self {
            d: DMatrix::zeros(n1, n2),
            u1: DMatrix::zeros(n1, ranks.r1),
            u2: DMatrix::zeros(n2, ranks.r2),
            u3: DMatrix::zeros(n1, ranks.r1),
            u4: DMatrix::zeros(n2, ranks.r2),
            phi1: vec![DMatrix::zeros(n1, n1); p],
            phi2: vec![DMatrix::zeros(n2, n2); p],
            sigma: MatNormSpec::identity(n1, n2),
            ranks,
            p,
        }
    }

    pub fn n1(&self) -> usize {
        self.d.nrows()
    }

    pub fn n2(&self) -> usize {
        self.d.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.n1(), self.n2());
        let (r1, r2) = (self.ranks.r1, self.ranks.r2);
        self.ranks.validate(n1, n2)?;
        let shape = |name: &str, m: &DMatrix<f64>, want: (usize, usize)| {
            if m.shape() != want {
                Err(MecmError::DimensionMismatch(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    m.shape()
                )))
            } else if m.iter().any(|x| !x.is_finite()) {
                Err(MecmError::NonFinite(name.to_string()))
            } else {
                Ok(())
            }
        };
        shape("D", &self.d, (n1, n2))?;
        shape("U1", &self.u1, (n1, r1))?;
        shape("U2", &self.u2, (n2, r2))?;
        shape("U3", &self.u3, (n1, r1))?;
        shape("U4", &self.u4, (n2, r2))?;
        if self.phi1.len() != self.p || self.phi2.len() != self.p {
            return Err(MecmError::DimensionMismatch(format!(
                "expected {} lag matrices per dimension, got {} and {}",
                self.p,
                self.phi1.len(),
                self.phi2.len()
            )));
        }
        for (j, (a, b)) in self.phi1.iter().zip(&self.phi2).enumerate() {
            shape(&format!("Phi1[{}]", j + 1), a, (n1, n1))?;
            shape(&format!("Phi2[{}]", j + 1), b, (n2, n2))?;
        }
        if self.sigma.n1() != n1 || self.sigma.n2() != n2 {
            return Err(MecmError::DimensionMismatch(
                "covariance dimensions do not match the mean parameters".into(),
            ));
        }
        Ok(())
    }

    /// `U₁U₃ᵀ` (`n1 x n1`).
    pub fn row_longrun(&self) -> DMatrix<f64> {
        &self.u1 * self.u3.transpose()
    }

    /// `U₂U₄ᵀ` (`n2 x n2`).
    pub fn col_longrun(&self) -> DMatrix<f64> {
        &self.u2 * self.u4.transpose()
    }

    /// The vectorized long-run matrix `Π = αβᵀ = (U₂U₄ᵀ) ⊗ (U₁U₃ᵀ)`.
    pub fn pi(&self) -> DMatrix<f64> {
        kron(&self.col_longrun(), &self.row_longrun())
    }

    /// Conditional mean of `ΔY_t` given `Y_{t−1}` and the lagged differences
    /// `lags[j] = ΔY_{t−1−j}`.
    pub fn conditional_mean(&self, y_prev: &DMatrix<f64>, lags: &[&DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = &self.d + &self.u1 * (self.u3.transpose() * y_prev * &self.u4) * self.u2.transpose();
        for (j, lag) in lags.iter().enumerate().take(self.p) {
            m += &self.phi1[j] * *lag * self.phi2[j].transpose();
        }
        m
    }

    fn check_series(&self, series: &MatrixSeries) -> Result<()> {
        if series.n1() != self.n1() || series.n2() != self.n2() {
            return Err(MecmError::DimensionMismatch(format!(
                "series is {}x{}, parameters are {}x{}",
                series.n1(),
                series.n2(),
                self.n1(),
                self.n2()
            )));
        }
        series.require_len_for_lag(self.p)
    }
}

/// Residuals `E_t` for `t = p+1, …, T−1` (0-based), `T − p − 1` in total.
pub fn residuals(params: &MecmParams, series: &MatrixSeries) -> Result<Vec<DMatrix<f64>>> {
    params.check_series(series)?;
    let p = params.p;
    let dy = series.diff();
    // dy[t-1] = ΔY_t
    Ok((p + 1..series.len())
        .map(|t| {
            let lags: Vec<&DMatrix<f64>> = (1..=p).map(|j| &dy[t - 1 - j]).collect();
            &dy[t - 1] - params.conditional_mean(series.get(t - 1), &lags)
        })
        .collect())
}

/// Log-likelihood up to the `2π` constant, summed over the `T − p − 1`
/// effective observations:
/// `Σ_t [−(N₂/2) log|Σ₁| − (N₁/2) log|Σ₂| − ½ tr(Σ₁⁻¹ E_t Σ₂⁻¹ E_tᵀ)]`.
pub fn log_likelihood(params: &MecmParams, series: &MatrixSeries) -> Result<f64> {
    let res = residuals(params, series)?;
    let (c1, c2) = params.sigma.choleskys()?;
    let (n1, n2) = (params.n1() as f64, params.n2() as f64);
    let per_obs_det = -0.5 * n2 * chol_log_det(&c1) - 0.5 * n1 * chol_log_det(&c2);
    let quad: f64 = res.iter().map(|e| mahalanobis_trace(e, &c1, &c2)).sum();
    Ok(res.len() as f64 * per_obs_det - 0.5 * quad)
}

/// Rescales `U₃` so its top `r₁ x r₁` block is the identity, absorbing the
/// inverse transform into `U₁` so `U₁U₃ᵀ` is unchanged.
pub fn normalize_u3(params: &mut MecmParams) -> Result<()> {
    let (u1, u3) = normalize_pair(&params.u1, &params.u3, "U3")?;
    params.u1 = u1;
    params.u3 = u3;
    Ok(())
}

/// Same as [`normalize_u3`] for `U₄` / `U₂`.
pub fn normalize_u4(params: &mut MecmParams) -> Result<()> {
    let (u2, u4) = normalize_pair(&params.u2, &params.u4, "U4")?;
    params.u2 = u2;
    params.u4 = u4;
    Ok(())
}

fn normalize_pair(
    adjust: &DMatrix<f64>,
    coint: &DMatrix<f64>,
    factor: &'static str,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = coint.ncols();
    let top = coint.view((0, 0), (r, r)).clone_owned();
    let lu = top.clone().lu();
    let scale = top.amax();
    let det = lu.determinant();
    let inv = match lu.try_inverse() {
        Some(inv) if det.is_finite() && det.abs() > 1e-12 * scale.powi(r as i32) && scale > 0.0 => inv,
        _ => return Err(MecmError::SingularTopBlock { factor, size: r }),
    };
    let mut coint_new = coint * &inv;
    // exact identity on the normalized block
    coint_new
        .view_mut((0, 0), (r, r))
        .copy_from(&DMatrix::identity(r, r));
    let adjust_new = adjust * top.transpose();
    Ok((adjust_new, coint_new))
}

/// Scales `Σ₁` to unit Frobenius norm, moving the scale into `Σ₂`.
pub fn normalize_sigma(params: &mut MecmParams) -> Result<()> {
    let c = params.sigma.sigma1().norm();
    if !(c.is_finite() && c > 0.0) {
        return Err(MecmError::NotPositiveDefinite("Sigma1".into()));
    }
    params.sigma = MatNormSpec::new(params.sigma.sigma1() / c, params.sigma.sigma2() * c)?;
    Ok(())
}

/// Scales `Φ₁ⱼ` to unit Frobenius norm, moving the scale into `Φ₂ⱼ`.
/// A zero `Φ₁ⱼ` is left as is.
pub fn normalize_phi(params: &mut MecmParams, j: usize) {
    let c = params.phi1[j].norm();
    if c.is_finite() && c > 0.0 {
        params.phi1[j] /= c;
        params.phi2[j] *= c;
    }
}

/// Applies all identification restrictions with compensating transforms, so
/// the likelihood is unchanged.
pub fn normalize_identification(params: &MecmParams) -> Result<MecmParams> {
    let mut out = params.clone();
    normalize_u3(&mut out)?;
    normalize_u4(&mut out)?;
    normalize_sigma(&mut out)?;
    for j in 0..out.p {
        normalize_phi(&mut out, j);
    }
    Ok(out)
}

/// The restricted VECM implied by a MECM.
#[derive(Debug, Clone, PartialEq)]
pub struct VecmForm {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub phis: Vec<DMatrix<f64>>,
}

impl VecmForm {
    /// Vectorized residuals `Δy_t − d − αβᵀ y_{t−1} − Σⱼ Φⱼ Δy_{t−j}` over
    /// the same effective sample as [`residuals`].
    pub fn residuals(&self, d: &DMatrix<f64>, series: &MatrixSeries) -> Vec<DVector<f64>> {
        let p = self.phis.len();
        let pi = &self.alpha * self.beta.transpose();
        let dvec = vec(d);
        let y: Vec<DVector<f64>> = series.iter().map(vec).collect();
        let dy: Vec<DVector<f64>> = y.windows(2).map(|w| &w[1] - &w[0]).collect();
        (p + 1..y.len())
            .map(|t| {
                let mut r = &dy[t - 1] - &dvec - &pi * &y[t - 1];
                for (j, phi) in self.phis.iter().enumerate() {
                    r -= phi * &dy[t - 2 - j];
                }
                r
            })
            .collect()
    }
}

/// `α = U₂ ⊗ U₁`, `β = U₄ ⊗ U₃`, `Φⱼ = Φ₂ⱼ ⊗ Φ₁ⱼ`.
pub fn to_vecm(params: &MecmParams) -> VecmForm {
    VecmForm {
        alpha: kron(&params.u2, &params.u1),
        beta: kron(&params.u4, &params.u3),
        phis: params
            .phi1
            .iter()
            .zip(&params.phi2)
            .map(|(a, b)| kron(b, a))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(n: usize, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn parameter_counts() {
        let r = |a, b| RankPair::new(a, b);
        assert_eq!(effective_params(r(1, 1), 2, 3, 4).unwrap(), 62);
        assert_eq!(effective_params(r(3, 4), 0, 3, 4).unwrap(), 25);
        assert_eq!(effective_params(r(1, 1), 0, 3, 4).unwrap(), 12);
        assert!(effective_params(r(4, 1), 0, 3, 4).is_err());
        assert!(effective_params(r(0, 1), 0, 3, 4).is_err());
        assert_eq!(vecm_param_count(12, 1, 2).unwrap(), 311);
        assert_eq!(vecm_param_count(12, 0, 0).unwrap(), 0);
        assert_eq!(vecm_param_count(12, 12, 1).unwrap(), 288);
        assert!(vecm_param_count(12, 13, 0).is_err());
    }

    #[test]
    fn psi_strictly_increasing() {
        let (n1, n2) = (3, 4);
        for p in 0..3 {
            for ranks in RankPair::grid(n1, n2) {
                let base = effective_params(ranks, p, n1, n2).unwrap();
                if ranks.r1 < n1 {
                    let up = RankPair::new(ranks.r1 + 1, ranks.r2);
                    assert!(effective_params(up, p, n1, n2).unwrap() > base);
                }
                if ranks.r2 < n2 {
                    let up = RankPair::new(ranks.r1, ranks.r2 + 1);
                    assert!(effective_params(up, p, n1, n2).unwrap() > base);
                }
                assert!(effective_params(ranks, p + 1, n1, n2).unwrap() > base);
            }
        }
    }

    fn small_series() -> MatrixSeries {
        let data = (0..6)
            .map(|t| DMatrix::from_fn(3, 4, |i, j| ((t * 7 + i * 3 + j) % 5) as f64 - 2.0 + 0.1 * t as f64))
            .collect();
        MatrixSeries::new(data).unwrap()
    }

    #[test]
    fn zero_model_residuals_are_differences() {
        let s = small_series();
        let params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 1);
        let res = residuals(&params, &s).unwrap();
        let dy = s.diff();
        assert_eq!(res.len(), s.len() - 2);
        for (k, r) in res.iter().enumerate() {
            assert_eq!(r, &dy[k + 1]);
        }
    }

    #[test]
    fn unit_vector_factors_pick_single_entry() {
        let s = small_series();
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u1 = unit(3, 0);
        params.u3 = unit(3, 0);
        params.u2 = unit(4, 0);
        params.u4 = unit(4, 0);
        let res = residuals(&params, &s).unwrap();
        let dy = s.diff();
        for (k, r) in res.iter().enumerate() {
            let mut expected = dy[k].clone();
            expected[(0, 0)] -= s.get(k)[(0, 0)];
            assert!((r - expected).amax() < 1e-15);
        }
    }

    #[test]
    fn likelihood_of_zero_residuals() {
        // T = 2, p = 0 gives one effective observation
        let y = DMatrix::from_element(3, 4, 1.0);
        let s = MatrixSeries::new(vec![y.clone(), y]).unwrap();
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        assert_relative_eq!(log_likelihood(&params, &s).unwrap(), 0.0, epsilon = 1e-15);
        params.sigma = MatNormSpec::new(DMatrix::identity(3, 3), DMatrix::identity(4, 4) * 2.0).unwrap();
        assert_relative_eq!(log_likelihood(&params, &s).unwrap(), -6.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_scalar_top_block() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u3 = DMatrix::from_column_slice(3, 1, &[2.0, 4.0, 6.0]);
        params.u1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        params.u4 = unit(4, 0);
        params.u2 = unit(4, 1);
        let before = params.row_longrun();
        let out = normalize_identification(&params).unwrap();
        assert_eq!(out.u3.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(out.u1.as_slice(), &[2.0, 0.0, 0.0]);
        assert!((out.row_longrun() - before).amax() < 1e-15);
    }

    #[test]
    fn normalize_sigma_moves_scale() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u3 = unit(3, 0);
        params.u4 = unit(4, 0);
        params.sigma = MatNormSpec::new(DMatrix::identity(3, 3) * 2.0, DMatrix::identity(4, 4)).unwrap();
        let out = normalize_identification(&params).unwrap();
        let s3 = 3f64.sqrt();
        assert!((out.sigma.sigma1() - DMatrix::identity(3, 3) / s3).amax() < 1e-15);
        assert!((out.sigma.sigma2() - DMatrix::identity(4, 4) * (2.0 * s3)).amax() < 1e-14);
        assert!((out.sigma.vec_covariance() - params.sigma.vec_covariance()).amax() < 1e-14);
    }

    #[test]
    fn singular_top_block_is_reported() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u3 = unit(3, 1);
        params.u4 = unit(4, 0);
        match normalize_identification(&params) {
            Err(MecmError::SingularTopBlock { factor, .. }) => assert_eq!(factor, "U3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vecm_of_unit_factors() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u1 = unit(3, 0);
        params.u3 = unit(3, 0);
        params.u2 = unit(4, 0);
        params.u4 = unit(4, 0);
        let v = to_vecm(&params);
        assert_eq!(v.alpha, unit(12, 0));
        assert_eq!(v.beta, unit(12, 0));
        assert!(v.phis.is_empty());
    }
}
