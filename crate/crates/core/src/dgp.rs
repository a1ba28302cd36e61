//! Random stable MECM data-generating processes.
//!
//! Simulation runs on the companion form of the state
//! `x_t = (βᵀy_t, Δy_t, …, Δy_{t−p+1})`:
//!
//! ```text
//! A = [ I + βᵀα   βᵀΦ₁ … βᵀΦ_p ]
//!     [ α         Φ₁   … Φ_p   ]
//!     [ 0         I    …  0    ]   (lag shift rows, p ≥ 2)
//! ```
//!
//! For `p ≤ 1` this is the two-block form `[[I + βᵀα, βᵀB], [α, B]]`. A
//! spectral radius below one makes `βᵀy_t` and `Δy_t` stationary, so the
//! levels are I(1) with `r₁r₂` cointegrating relations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MecmError, Result};
use crate::linalg::{sample_with_factors, standard_normal_matrix, unvec, vec, MatNormSpec, MatrixSeries};
use crate::model::{to_vecm, MecmParams, RankPair};

/// Redraws allowed before a DGP is declared unreachable.
pub const MAX_DGP_ATTEMPTS: usize = 100;

/// Acceptance band of [`variance_window_ratio`] for a stationary series.
pub const BOUNDED_VARIANCE_RANGE: (f64, f64) = (0.2, 5.0);

/// Relative scales of the short-run factors tried for each draw.
pub const SHORT_RUN_SCALES: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

/// Window length used by [`variance_window_ratio`].
pub const VARIANCE_WINDOW: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n1: usize,
    pub n2: usize,
    pub ranks: RankPair,
    pub p: usize,
    pub t_len: usize,
    pub burn_in: usize,
    /// Target spectral radius of the companion matrix.
    pub snr: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(n1: usize, n2: usize, ranks: RankPair, p: usize, t_len: usize, seed: u64) -> Self {
        Self {
            n1,
            n2,
            ranks,
            p,
            t_len,
            burn_in: 100,
            snr: 0.7,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ranks.validate(self.n1, self.n2)?;
        if !(self.snr > 0.0 && self.snr < 1.0) {
            return Err(MecmError::InvalidConfig(format!(
                "snr must lie in (0, 1), got {}",
                self.snr
            )));
        }
        if self.t_len == 0 {
            return Err(MecmError::InvalidConfig("t_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompanionForm {
    pub a: DMatrix<f64>,
    /// Dimension of `βᵀy_t` (`r₁r₂`).
    pub coint_dim: usize,
    /// Dimension of `Δy_t` (`N₁N₂`).
    pub n: usize,
    pub p: usize,
}

impl CompanionForm {
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    fn diff_lags(&self) -> usize {
        self.p.max(1)
    }
}

/// Drops indices whose row or column is identically zero. Each such index
/// carries a zero eigenvalue and the remaining principal submatrix keeps the
/// rest of the spectrum.
fn deflate_zero_lines(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut keep: Vec<usize> = (0..a.nrows()).collect();
    loop {
        let zero = keep.iter().position(|&k| {
            keep.iter().all(|&j| a[(k, j)] == 0.0) || keep.iter().all(|&j| a[(j, k)] == 0.0)
        });
        match zero {
            Some(pos) => {
                keep.remove(pos);
            }
            None => break,
        }
    }
    a.select_rows(&keep).select_columns(&keep)
}

/// Largest eigenvalue modulus, with zero rows and columns deflated first.
/// Returns NaN if the eigensolver fails.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let a = deflate_zero_lines(a);
    if a.is_empty() {
        return 0.0;
    }
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    match m.eigenvalues() {
        Ok(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}

/// Assembles the companion matrix from the VECM expansion of `params`.
pub fn build_companion(params: &MecmParams) -> CompanionForm {
    let vecm = to_vecm(params);
    let r = vecm.beta.ncols();
    let n = vecm.alpha.nrows();
    let p = params.p;
    let lags = p.max(1);
    let size = r + lags * n;
    let bt = vecm.beta.transpose();
    let mut a = DMatrix::zeros(size, size);
    a.view_mut((0, 0), (r, r))
        .copy_from(&(DMatrix::identity(r, r) + &bt * &vecm.alpha));
    a.view_mut((r, 0), (n, r)).copy_from(&vecm.alpha);
    for (j, phi) in vecm.phis.iter().enumerate() {
        a.view_mut((0, r + j * n), (r, n)).copy_from(&(&bt * phi));
        a.view_mut((r, r + j * n), (n, n)).copy_from(phi);
    }
    for j in 1..p {
        a.view_mut((r + j * n, r + (j - 1) * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
    }
    CompanionForm {
        a,
        coint_dim: r,
        n,
        p,
    }
}

/// Orthonormal `n x r` factor: the Q of a standard-normal matrix.
fn orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, r: usize) -> DMatrix<f64> {
    standard_normal_matrix(rng, n, r).qr().q()
}

/// Rotates the columns of an orthonormal adjustment factor (keeping its
/// span) so that `cointᵀ · adjust` is `sign` times a symmetric positive
/// semidefinite matrix.
fn align_adjustment(adjust: &DMatrix<f64>, coint: &DMatrix<f64>, sign: f64) -> DMatrix<f64> {
    let m = coint.transpose() * adjust;
    let svd = m.svd(true, true);
    let rot = svd.u.expect("requested U") * svd.v_t.expect("requested Vᵀ");
    adjust * rot.transpose() * sign
}

fn scaled(base: &MecmParams, s: f64) -> MecmParams {
    let mut out = base.clone();
    out.u1 *= s;
    out
}

/// Finds the smallest adjustment scale `s` at which the companion spectral
/// radius falls to `target`. Returns `(s, radius)` or the smallest radius
/// seen on failure.
fn calibrate_scale(base: &MecmParams, target: f64) -> std::result::Result<(f64, f64), f64> {
    let radius = |s: f64| build_companion(&scaled(base, s)).spectral_radius();
    let mut lo = 0.0;
    let mut s = 1e-3;
    let mut best = f64::INFINITY;
    while s <= 1e3 {
        let r = radius(s);
        best = best.min(r);
        if r <= target {
            let mut hi = s;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if radius(mid) <= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok((hi, radius(hi)));
        }
        lo = s;
        s *= 1.1;
    }
    Err(best)
}

/// Draws a random stable MECM. `U₁…U₄` are orthonormal Q factors of
/// standard-normal draws (the adjustment factors rotated within their
/// column spaces so that `U₃ᵀU₁ ⪰ 0` and `U₄ᵀU₂ ⪯ 0`) and `Φ` factors are
/// random orthogonal matrices. `Φ₁ⱼ` is scaled by `b·snr²` for the first `b`
/// in [`SHORT_RUN_SCALES`] at which `U₁` can then be scaled so the companion
/// spectral radius equals `spec.snr`. Covariances are identity, `D = 0`.
/// Draws that cannot reach the target are rejected and redrawn.
pub fn random_mecm_spec(spec: &DgpSpec) -> Result<MecmParams> {
    spec.validate()?;
    let (n1, n2) = (spec.n1, spec.n2);
    let RankPair { r1, r2 } = spec.ranks;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut best = f64::INFINITY;
    for _ in 0..MAX_DGP_ATTEMPTS {
        let u3 = orthonormal(&mut rng, n1, r1);
        let u4 = orthonormal(&mut rng, n2, r2);
        let u1 = align_adjustment(&orthonormal(&mut rng, n1, r1), &u3, 1.0);
        let u2 = align_adjustment(&orthonormal(&mut rng, n2, r2), &u4, -1.0);
        let phi1: Vec<_> = (0..spec.p).map(|_| orthonormal(&mut rng, n1, n1)).collect();
        let phi2: Vec<_> = (0..spec.p).map(|_| orthonormal(&mut rng, n2, n2)).collect();
        let base = MecmParams::new(
            DMatrix::zeros(n1, n2),
            u1,
            u2,
            u3,
            u4,
            phi1,
            phi2,
            MatNormSpec::identity(n1, n2),
        )?;
        let short_run = if spec.p == 0 { &SHORT_RUN_SCALES[..1] } else { &SHORT_RUN_SCALES[..] };
        for &b in short_run {
            let mut candidate = base.clone();
            for phi in &mut candidate.phi1 {
                *phi *= b * spec.snr * spec.snr;
            }
            match calibrate_scale(&candidate, spec.snr) {
                Ok((s, radius)) if radius > 0.0 && radius < 1.0 => return Ok(scaled(&candidate, s)),
                Ok((_, radius)) | Err(radius) => best = best.min(radius),
            }
        }
    }
    Err(MecmError::UnstableDgp {
        attempts: MAX_DGP_ATTEMPTS,
        best_radius: best,
    })
}

/// Starting point of a simulation: `Y₀` and `ΔY₀, ΔY₋₁, …` (`p` lags).
#[derive(Debug, Clone)]
pub struct InitialState {
    pub y0: DMatrix<f64>,
    pub lagged_diffs: Vec<DMatrix<f64>>,
}

impl InitialState {
    pub fn zeros(n1: usize, n2: usize, p: usize) -> Self {
        Self {
            y0: DMatrix::zeros(n1, n2),
            lagged_diffs: vec![DMatrix::zeros(n1, n2); p],
        }
    }
}

/// Levels `Y_1, …` and the companion states behind them.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub levels: Vec<DMatrix<f64>>,
    pub states: Vec<DVector<f64>>,
}

impl SimulatedPath {
    /// `βᵀ vec(Y_t)` as carried in the companion state.
    pub fn coint_state(&self, coint_dim: usize) -> Vec<DVector<f64>> {
        self.states.iter().map(|x| x.rows(0, coint_dim).into_owned()).collect()
    }
}

/// Iterates the companion recursion for `steps` periods with innovations
/// `innovation(t)`; the constant `D` is added to every innovation.
pub fn simulate_from<F>(
    params: &MecmParams,
    init: &InitialState,
    steps: usize,
    mut innovation: F,
) -> SimulatedPath
where
    F: FnMut(usize) -> DMatrix<f64>,
{
    let comp = build_companion(params);
    let vecm = to_vecm(params);
    let (r, n) = (comp.coint_dim, comp.n);
    let (n1, n2) = (params.n1(), params.n2());
    let bt = vecm.beta.transpose();
    let dvec = vec(&params.d);

    let mut x = DVector::zeros(comp.a.nrows());
    x.rows_mut(0, r).copy_from(&(&bt * vec(&init.y0)));
    for (j, lag) in init.lagged_diffs.iter().enumerate().take(comp.diff_lags()) {
        x.rows_mut(r + j * n, n).copy_from(&vec(lag));
    }

    let mut y = vec(&init.y0);
    let mut levels = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let u = vec(&innovation(t)) + &dvec;
        let mut next = &comp.a * &x;
        next.rows_mut(0, r).axpy(1.0, &(&bt * &u), 1.0);
        next.rows_mut(r, n).axpy(1.0, &u, 1.0);
        y += next.rows(r, n);
        levels.push(unvec(&y, n1, n2));
        states.push(next.clone());
        x = next;
    }
    SimulatedPath { levels, states }
}

/// Simulates `burn_in + t_len` periods from a zero state with matrix-normal
/// innovations and returns the last `t_len` levels with their companion
/// states.
pub fn simulate_with_states(
    params: &MecmParams,
    t_len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(MatrixSeries, Vec<DVector<f64>>)> {
    params.validate()?;
    let radius = build_companion(params).spectral_radius();
    if !(radius < 1.0) {
        return Err(MecmError::UnstableCompanion(radius));
    }
    let (c1, c2) = params.sigma.choleskys()?;
    let (l1, l2) = (c1.l(), c2.l());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = InitialState::zeros(params.n1(), params.n2(), params.p);
    let path = simulate_from(params, &init, burn_in + t_len, |_| {
        sample_with_factors(&mut rng, &l1, &l2)
    });
    let levels = path.levels[burn_in..].to_vec();
    let states = path.states[burn_in..].to_vec();
    Ok((MatrixSeries::new(levels)?, states))
}

/// Simulated levels after discarding `burn_in` observations.
pub fn simulate(params: &MecmParams, t_len: usize, burn_in: usize, seed: u64) -> Result<MatrixSeries> {
    simulate_with_states(params, t_len, burn_in, seed).map(|(s, _)| s)
}

/// Draws a DGP from `spec` and simulates it; the innovation seed is derived
/// from `spec.seed`.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<(MecmParams, MatrixSeries)> {
    let params = random_mecm_spec(spec)?;
    let series = simulate(
        &params,
        spec.t_len,
        spec.burn_in,
        crate::harness::derive_seed(spec.seed, &[0x5eed]),
    )?;
    Ok((params, series))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Total variance over the mean within-window variance, using consecutive
/// windows of [`VARIANCE_WINDOW`] observations (a trailing partial window is
/// dropped). Stays near one for a stationary series and grows with the
/// sample for a random walk. NaN with fewer than two windows.
pub fn variance_window_ratio(x: &[f64]) -> f64 {
    let windows = x.len() / VARIANCE_WINDOW;
    if windows < 2 {
        return f64::NAN;
    }
    let used = &x[..windows * VARIANCE_WINDOW];
    let within = used.chunks_exact(VARIANCE_WINDOW).map(variance).sum::<f64>() / windows as f64;
    variance(used) / within
}

/// Whether [`variance_window_ratio`] lies in [`BOUNDED_VARIANCE_RANGE`].
pub fn has_bounded_variance(x: &[f64]) -> bool {
    let r = variance_window_ratio(x);
    r >= BOUNDED_VARIANCE_RANGE.0 && r <= BOUNDED_VARIANCE_RANGE.1
}

/// Largest over smallest within-window variance across `windows` equal
/// windows.
pub fn window_variance_spread(x: &[f64], windows: usize) -> f64 {
    let w = x.len() / windows.max(1);
    if w < 2 {
        return f64::NAN;
    }
    let vars: Vec<f64> = x
        .chunks_exact(w)
        .map(variance)
        .collect();
    let max = vars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vars.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_companion() {
        let params = MecmParams::zeros(3, 4, RankPair::new(1, 2), 1);
        let comp = build_companion(&params);
        let size = 2 + 12;
        let mut expected = DMatrix::zeros(size, size);
        expected.view_mut((0, 0), (2, 2)).fill_with_identity();
        assert_eq!(comp.a, expected);
    }

    #[test]
    fn scalar_block_structure() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u1 = DMatrix::from_column_slice(3, 1, &[-0.5, 0.2, 0.1]);
        params.u2 = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.3, 0.0]);
        params.u3 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        params.u4 = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let comp = build_companion(&params);
        let v = to_vecm(&params);
        let a = (v.beta.transpose() * &v.alpha)[(0, 0)];
        assert!((comp.a[(0, 0)] - (1.0 + a)).abs() < 1e-15);
        assert_eq!(comp.a.view((1, 0), (12, 1)).into_owned(), v.alpha);
        assert_eq!(comp.a.view((0, 1), (13, 12)).amax(), 0.0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = DgpSpec::new(3, 4, RankPair::new(4, 1), 0, 100, 1);
        assert!(random_mecm_spec(&spec).is_err());
        spec.ranks = RankPair::new(1, 1);
        spec.snr = 1.2;
        assert!(random_mecm_spec(&spec).is_err());
    }

    #[test]
    fn calibrated_radius_hits_target() {
        for (seed, ranks, p) in [(1, (1, 1), 0), (2, (3, 4), 0), (3, (1, 4), 1), (4, (3, 1), 1)] {
            let spec = DgpSpec::new(3, 4, RankPair::new(ranks.0, ranks.1), p, 100, seed);
            let params = random_mecm_spec(&spec).unwrap();
            let radius = build_companion(&params).spectral_radius();
            assert!((radius - 0.7).abs() < 1e-8, "radius {radius}");
            let u3tu3 = params.u3.transpose() * &params.u3;
            assert!((u3tu3 - DMatrix::identity(ranks.0, ranks.0)).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_stays_at_origin() {
        let spec = DgpSpec::new(3, 4, RankPair::new(1, 1), 1, 50, 5);
        let params = random_mecm_spec(&spec).unwrap();
        let path = simulate_from(&params, &InitialState::zeros(3, 4, 1), 60, |_| DMatrix::zeros(3, 4));
        assert!(path.levels.iter().all(|y| y.amax() == 0.0));
    }

    #[test]
    fn unstable_companion_rejected() {
        let mut params = MecmParams::zeros(3, 4, RankPair::new(1, 1), 0);
        params.u1[(0, 0)] = 1.0;
        params.u2[(0, 0)] = 1.0;
        params.u3[(0, 0)] = 1.0;
        params.u4[(0, 0)] = 1.0;
        assert!(matches!(
            simulate(&params, 10, 0, 1),
            Err(MecmError::UnstableCompanion(_))
        ));
    }

    #[test]
    fn window_statistics() {
        let flat: Vec<f64> = (0..400).map(|t| ((t * 37) % 11) as f64).collect();
        assert!(has_bounded_variance(&flat));
        let trend: Vec<f64> = (0..400).map(|t| t as f64).collect();
        assert!(!has_bounded_variance(&trend));
        assert!(window_variance_spread(&flat, 4) < 1.5);
    }
}
