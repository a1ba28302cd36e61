//! Matrix-series container, vec/Kronecker utilities and the matrix-normal
//! distribution.
//!
//! All vectorization is column-major, so that
//! `vec(A X Bᵀ) = (B ⊗ A) vec(X)` holds exactly. This is the identity that
//! turns the matrix error correction model into a restricted VECM.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MecmError, Result};

/// Symmetry tolerance used when validating covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// An ordered sequence of `T` real `n1 x n2` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSeries {
    data: Vec<DMatrix<f64>>,
    n1: usize,
    n2: usize,
}

impl MatrixSeries {
    /// Builds a series, checking that every matrix has the same shape and
    /// that all entries are finite.
    pub fn new(data: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| MecmError::InsufficientSample { t: 0, required: 1 })?;
        let (n1, n2) = first.shape();
        if n1 == 0 || n2 == 0 {
            return Err(MecmError::DimensionMismatch(
                "matrices must have at least one row and column".into(),
            ));
        }
        for (t, m) in data.iter().enumerate() {
            if m.shape() != (n1, n2) {
                return Err(MecmError::DimensionMismatch(format!(
                    "observation {t} has shape {:?}, expected ({n1}, {n2})",
                    m.shape()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(MecmError::NonFinite(format!("observation {t}")));
            }
        }
        Ok(Self { data, n1, n2 })
    }

    /// Builds a series from vectorized observations `vec(Y_t)`.
    pub fn from_vecs(vecs: &[DVector<f64>], n1: usize, n2: usize) -> Result<Self> {
        let data = vecs
            .iter()
            .map(|v| {
                if v.len() != n1 * n2 {
                    Err(MecmError::DimensionMismatch(format!(
                        "vector of length {} cannot be reshaped to {n1}x{n2}",
                        v.len()
                    )))
                } else {
                    Ok(unvec(v, n1, n2))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(data)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, t: usize) -> &DMatrix<f64> {
        &self.data[t]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.data.iter()
    }

    /// First differences `ΔY_t = Y_t − Y_{t−1}` for `t = 1..T`; length `T − 1`.
    pub fn diff(&self) -> Vec<DMatrix<f64>> {
        self.data.windows(2).map(|w| &w[1] - &w[0]).collect()
    }

    /// The retained tail of the series starting at observation `start`.
    pub fn slice_from(&self, start: usize) -> Result<Self> {
        Self::new(self.data[start.min(self.data.len())..].to_vec())
    }

    /// Fails unless the series supports a lag-`p` model (`T ≥ p + 2`).
    pub fn require_len_for_lag(&self, p: usize) -> Result<()> {
        if self.len() < p + 2 {
            return Err(MecmError::InsufficientSample {
                t: self.len(),
                required: p + 2,
            });
        }
        Ok(())
    }
}

/// Column-major stacking: `out[i + j * n1] = m[(i, j)]`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, n1: usize, n2: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n1, n2, v.as_slice())
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Gradient of `<G, B ⊗ A>` with respect to `A` (`n1 x n1`), where `G` is
/// `n1 n2 x n1 n2` and `B` is `n2 x n2`.
pub fn contract_outer(g: &DMatrix<f64>, b: &DMatrix<f64>, n1: usize) -> DMatrix<f64> {
    let n2 = b.nrows();
    debug_assert_eq!(g.shape(), (n1 * n2, n1 * n2));
    let mut out = DMatrix::zeros(n1, n1);
    for l in 0..n2 {
        for j in 0..n2 {
            let w = b[(j, l)];
            if w != 0.0 {
                out += g.view((j * n1, l * n1), (n1, n1)) * w;
            }
        }
    }
    out
}

/// Gradient of `<G, B ⊗ A>` with respect to `B` (`n2 x n2`), where `A` is
/// `n1 x n1`.
pub fn contract_inner(g: &DMatrix<f64>, a: &DMatrix<f64>, n2: usize) -> DMatrix<f64> {
    let n1 = a.nrows();
    debug_assert_eq!(g.shape(), (n1 * n2, n1 * n2));
    DMatrix::from_fn(n2, n2, |j, l| g.view((j * n1, l * n1), (n1, n1)).dot(a))
}

/// Nearest Kronecker product in Frobenius norm: returns `(b, a)` with
/// `b` of shape `b_shape`, `a` of shape `a_shape`, minimizing
/// `‖m − b ⊗ a‖_F`. Uses the rank-one SVD of the block rearrangement whose
/// rows are `vec(block_{j,l})ᵀ`.
pub fn nearest_kronecker(
    m: &DMatrix<f64>,
    b_shape: (usize, usize),
    a_shape: (usize, usize),
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, q) = b_shape;
    let (r, s) = a_shape;
    if m.shape() != (p * r, q * s) {
        return Err(MecmError::DimensionMismatch(format!(
            "cannot split a {:?} matrix into {b_shape:?} ⊗ {a_shape:?}",
            m.shape()
        )));
    }
    let mut rearranged = DMatrix::zeros(p * q, r * s);
    for l in 0..q {
        for j in 0..p {
            let block = m.view((j * r, l * s), (r, s));
            for (c, v) in block.iter().enumerate() {
                rearranged[(j + l * p, c)] = *v;
            }
        }
    }
    let svd = rearranged.svd(true, true);
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let root = sigma.max(0.0).sqrt();
    let b = DMatrix::from_column_slice(p, q, (u.column(idx) * root).as_slice());
    let a_vec: Vec<f64> = v_t.row(idx).iter().map(|x| x * root).collect();
    let a = DMatrix::from_column_slice(r, s, &a_vec);
    Ok((b, a))
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= SYMMETRY_TOL * scale))
}

/// Cholesky factorization after a symmetry check; fails on non-SPD input.
pub fn spd_cholesky(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    if !is_symmetric(m) || m.iter().any(|x| !x.is_finite()) {
        return Err(MecmError::NotPositiveDefinite(name.to_string()));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| MecmError::NotPositiveDefinite(name.to_string()))
}

/// `log |m|` from a Cholesky factor.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetrizes `m` and floors its eigenvalues at `floor`. The flag reports
/// whether any eigenvalue was raised to the floor.
pub fn project_spd(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut clamped = false;
    let vals = eig.eigenvalues.map(|v| {
        if v.is_nan() || v < floor {
            clamped = true;
            floor
        } else {
            v
        }
    });
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&vals) * q.transpose();
    ((&rebuilt + rebuilt.transpose()) * 0.5, clamped)
}

/// Row and column covariances of a matrix-normal law:
/// `E ~ MN(0, Σ₁, Σ₂) ⇔ vec(E) ~ N(0, Σ₂ ⊗ Σ₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatNormSpec {
    sigma1: DMatrix<f64>,
    sigma2: DMatrix<f64>,
}

impl MatNormSpec {
    pub fn new(sigma1: DMatrix<f64>, sigma2: DMatrix<f64>) -> Result<Self> {
        spd_cholesky(&sigma1, "Sigma1")?;
        spd_cholesky(&sigma2, "Sigma2")?;
        Ok(Self { sigma1, sigma2 })
    }

    pub fn identity(n1: usize, n2: usize) -> Self {
        Self {
            sigma1: DMatrix::identity(n1, n1),
            sigma2: DMatrix::identity(n2, n2),
        }
    }

    pub fn sigma1(&self) -> &DMatrix<f64> {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &DMatrix<f64> {
        &self.sigma2
    }

    pub fn n1(&self) -> usize {
        self.sigma1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.sigma2.nrows()
    }

    /// The covariance of `vec(E)`.
    pub fn vec_covariance(&self) -> DMatrix<f64> {
        kron(&self.sigma2, &self.sigma1)
    }

    pub(crate) fn choleskys(&self) -> Result<(Cholesky<f64, Dyn>, Cholesky<f64, Dyn>)> {
        Ok((
            spd_cholesky(&self.sigma1, "Sigma1")?,
            spd_cholesky(&self.sigma2, "Sigma2")?,
        ))
    }
}

/// `tr(Σ₁⁻¹ E Σ₂⁻¹ Eᵀ)` via triangular solves.
pub(crate) fn mahalanobis_trace(
    e: &DMatrix<f64>,
    c1: &Cholesky<f64, Dyn>,
    c2: &Cholesky<f64, Dyn>,
) -> f64 {
    let l1 = c1.l();
    let l2 = c2.l();
    let x = l1
        .solve_lower_triangular(e)
        .expect("Cholesky factor has a positive diagonal");
    let y = l2
        .solve_lower_triangular(&x.transpose())
        .expect("Cholesky factor has a positive diagonal");
    y.norm_squared()
}

/// Full matrix-normal log-density, including the `2π` constant.
pub fn matnorm_logpdf(e: &DMatrix<f64>, spec: &MatNormSpec) -> Result<f64> {
    let (n1, n2) = (spec.n1(), spec.n2());
    if e.shape() != (n1, n2) {
        return Err(MecmError::DimensionMismatch(format!(
            "residual shape {:?} does not match covariance dims ({n1}, {n2})",
            e.shape()
        )));
    }
    let (c1, c2) = spec.choleskys()?;
    let n = (n1 * n2) as f64;
    Ok(-0.5 * n * (2.0 * PI).ln()
        - 0.5 * n2 as f64 * chol_log_det(&c1)
        - 0.5 * n1 as f64 * chol_log_det(&c2)
        - 0.5 * mahalanobis_trace(e, &c1, &c2))
}

/// Draws `L₁ Z L₂ᵀ` where `Z` is filled column-major with i.i.d. standard
/// normals and `L₁`, `L₂` are the Cholesky factors of `Σ₁`, `Σ₂`.
pub fn matnorm_sample<R: Rng + ?Sized>(rng: &mut R, spec: &MatNormSpec) -> Result<DMatrix<f64>> {
    let (c1, c2) = spec.choleskys()?;
    Ok(sample_with_factors(rng, &c1.l(), &c2.l()))
}

pub(crate) fn sample_with_factors<R: Rng + ?Sized>(
    rng: &mut R,
    l1: &DMatrix<f64>,
    l2: &DMatrix<f64>,
) -> DMatrix<f64> {
    let z = standard_normal_matrix(rng, l1.nrows(), l2.nrows());
    l1 * z * l2.transpose()
}

/// An `nrows x ncols` matrix of i.i.d. standard normals, filled column-major.
pub fn standard_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    nrows: usize,
    ncols: usize,
) -> DMatrix<f64> {
    let values: Vec<f64> = (0..nrows * ncols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_column_slice(nrows, ncols, &values)
}
