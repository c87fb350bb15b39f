//! Covariance-based activity detection.
//!
//! The columns of `Y` are i.i.d. `CN(0, Σ)` with
//! `Σ(γ) = Σ_k γ_k s_k s_kᴴ + σ² I`, so the log-likelihood is
//!
//! ```text
//! ℓ(γ) = −M log det(π Σ) − tr(Σ⁻¹ Y Yᴴ)
//! ```
//!
//! and depends on `Y` only through `Σ̂ = Y Yᴴ / M`. Coordinate `k` is
//! maximised exactly: with `u = Σ⁻¹ s_k`, `a = s_kᴴ u` and `b = uᴴ Σ̂ u`,
//! moving `γ_k` by `d` changes the likelihood by
//!
//! ```text
//! Δℓ(d) = −M [ log(1 + d a) − d b / (1 + d a) ]
//! ```
//!
//! whose only stationary point is `d = (b − a) / a²`; the nonnegativity
//! constraint clips it to `d* = max((b − a)/a², −γ_k)`. `Σ⁻¹` is then refreshed
//! with a rank-one update, so a full sweep costs `O(N L²)`.

use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::{rng, Complex64, ComplexMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Config(String),
    #[error("covariance matrix is not numerically positive definite (diagonal ratio {diag_ratio:.3e})")]
    Singular { diag_ratio: f64 },
    #[error("rank-one update denominator {denominator:.3e} is too small; re-factorize")]
    IllConditioned { denominator: f64 },
    #[error("numerical failure in pass {pass}, coordinate {coordinate}: {source}")]
    Numerical {
        pass: usize,
        coordinate: usize,
        #[source]
        source: Box<CovError>,
    },
}

/// Smallest admissible `|1 + d sᴴ Σ⁻¹ s|` for a rank-one update.
pub const MIN_DENOMINATOR: f64 = 1e-12;

/// Sample covariance `Y Yᴴ / M`.
pub fn sample_covariance(y: &ComplexMatrix) -> ComplexMatrix {
    let m = y.ncols().max(1) as f64;
    (y * y.adjoint()) / Complex64::new(m, 0.0)
}

/// `Σ = S diag(γ) Sᴴ + σ² I`.
pub fn covariance_matrix(gamma: &[f64], s: &ComplexMatrix, sigma2: f64) -> ComplexMatrix {
    let l = s.nrows();
    let mut sigma = ComplexMatrix::identity(l, l) * Complex64::new(sigma2, 0.0);
    for (k, &g) in gamma.iter().enumerate() {
        if g != 0.0 {
            let col = s.column(k);
            sigma.gerc(Complex64::new(g, 0.0), &col, &col, Complex64::new(1.0, 0.0));
        }
    }
    sigma
}

fn check_inputs(gamma_len: usize, y: &ComplexMatrix, s: &ComplexMatrix, sigma2: f64) -> Result<(), CovError> {
    if y.nrows() != s.nrows() {
        return Err(CovError::Dimension(format!(
            "Y has {} rows, S has {}",
            y.nrows(),
            s.nrows()
        )));
    }
    if gamma_len != s.ncols() {
        return Err(CovError::Dimension(format!(
            "gamma has {} entries, S has {} columns",
            gamma_len,
            s.ncols()
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(CovError::Config(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(())
}

/// Fixed inputs of one detection problem.
#[derive(Debug, Clone)]
pub struct CovProblem<'a> {
    pub s: &'a ComplexMatrix,
    pub sample_cov: ComplexMatrix,
    pub sigma2: f64,
    pub n_antennas: usize,
}

impl<'a> CovProblem<'a> {
    pub fn new(y: &ComplexMatrix, s: &'a ComplexMatrix, sigma2: f64) -> Result<Self, CovError> {
        check_inputs(s.ncols(), y, s, sigma2)?;
        Ok(Self {
            s,
            sample_cov: sample_covariance(y),
            sigma2,
            n_antennas: y.ncols(),
        })
    }

    /// Exact log-likelihood via a Cholesky factorisation of `Σ`.
    pub fn log_likelihood(&self, gamma: &[f64]) -> Result<f64, CovError> {
        if gamma.iter().any(|&g| !(g >= 0.0)) {
            return Err(CovError::Config("gamma must be elementwise nonnegative".into()));
        }
        let sigma = covariance_matrix(gamma, self.s, self.sigma2);
        let l = sigma.nrows() as f64;
        let chol = cholesky(&sigma)?;
        let factor = chol.l();
        let log_det: f64 = 2.0 * factor.diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        // tr(Σ⁻¹ Σ̂) = tr(L⁻¹ Σ̂ L⁻ᴴ)
        let inv_sample = chol.solve(&self.sample_cov);
        let trace: f64 = inv_sample.diagonal().iter().map(|v| v.re).sum();
        let m = self.n_antennas as f64;
        Ok(-m * (l * std::f64::consts::PI.ln() + log_det + trace))
    }
}

fn cholesky(sigma: &ComplexMatrix) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>, CovError> {
    sigma.clone().cholesky().ok_or_else(|| {
        let diag: Vec<f64> = sigma.diagonal().iter().map(|v| v.re).collect();
        let max = diag.iter().cloned().fold(f64::MIN, f64::max);
        let min = diag.iter().cloned().fold(f64::MAX, f64::min);
        CovError::Singular { diag_ratio: max / min }
    })
}

/// `log p(Y | γ)` for noise variance `σ² > 0`.
pub fn log_likelihood(gamma: &[f64], y: &ComplexMatrix, s: &ComplexMatrix, sigma2: f64) -> Result<f64, CovError> {
    check_inputs(gamma.len(), y, s, sigma2)?;
    CovProblem::new(y, s, sigma2)?.log_likelihood(gamma)
}

/// `(Σ + d s sᴴ)⁻¹` from `Σ⁻¹` by the Sherman-Morrison identity.
pub fn rank_one_inverse_update(sigma_inv: &ComplexMatrix, s: &DVector<Complex64>, d: f64) -> Result<ComplexMatrix, CovError> {
    if d == 0.0 {
        return Ok(sigma_inv.clone());
    }
    let u = sigma_inv * s;
    let denom = Complex64::new(1.0, 0.0) + s.dotc(&u) * d;
    if denom.norm() < MIN_DENOMINATOR {
        return Err(CovError::IllConditioned { denominator: denom.norm() });
    }
    let mut out = sigma_inv.clone();
    // Σ⁻¹ s sᴴ Σ⁻¹ = u (Σ⁻ᴴ s)ᴴ; Σ⁻¹ is Hermitian so the right factor is u.
    let right = sigma_inv.adjoint() * s;
    out.gerc(-Complex64::new(d, 0.0) / denom, &u, &right, Complex64::new(1.0, 0.0));
    Ok(out)
}

fn fresh_inverse(gamma: &[f64], s: &ComplexMatrix, sigma2: f64) -> Result<ComplexMatrix, CovError> {
    let sigma = covariance_matrix(gamma, s, sigma2);
    Ok(cholesky(&sigma)?.inverse())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma: Vec<f64>,
    pub loglik: f64,
    /// Completed sweeps.
    pub passes: usize,
    /// Maintained `Σ(γ)⁻¹`.
    pub sigma_inv: ComplexMatrix,
    /// Times the maintained inverse was rebuilt from scratch.
    pub refactorizations: usize,
}

impl GammaEstimate {
    /// `γ = 0`, `Σ⁻¹ = I / σ²`.
    pub fn zero(problem: &CovProblem<'_>) -> Self {
        let (l, n) = problem.s.shape();
        let m = problem.n_antennas as f64;
        let trace: f64 = problem.sample_cov.diagonal().iter().map(|v| v.re).sum();
        Self {
            gamma: vec![0.0; n],
            loglik: -m * (l as f64 * (std::f64::consts::PI * problem.sigma2).ln() + trace / problem.sigma2),
            passes: 0,
            sigma_inv: ComplexMatrix::identity(l, l) / Complex64::new(problem.sigma2, 0.0),
            refactorizations: 0,
        }
    }
}

/// Closed-form step `d*` for coordinate `k` and the matching likelihood gain.
pub fn coordinate_step(k: usize, state: &GammaEstimate, problem: &CovProblem<'_>) -> (f64, f64) {
    let s_k = problem.s.column(k);
    let u = &state.sigma_inv * s_k;
    let a = s_k.dotc(&u).re;
    let b = u.dotc(&(&problem.sample_cov * &u)).re;
    if !(a > 0.0) {
        return (0.0, 0.0);
    }
    let d = ((b - a) / (a * a)).max(-state.gamma[k]);
    let m = problem.n_antennas as f64;
    let one = 1.0 + d * a;
    let gain = -m * (one.ln() - d * b / one);
    (d, gain)
}

/// Exact maximisation of the likelihood along coordinate `k`.
/// Returns the likelihood increment.
pub fn coordinate_update(k: usize, state: &mut GammaEstimate, problem: &CovProblem<'_>) -> Result<f64, CovError> {
    let (d, gain) = coordinate_step(k, state, problem);
    if d == 0.0 {
        return Ok(0.0);
    }
    let new_gamma = (state.gamma[k] + d).max(0.0);
    let s_k = problem.s.column(k).into_owned();
    match rank_one_inverse_update(&state.sigma_inv, &s_k, d) {
        Ok(inv) if inv.diagonal().iter().all(|v| v.re > 0.0 && v.re.is_finite()) => {
            state.sigma_inv = inv;
            state.gamma[k] = new_gamma;
        }
        _ => {
            warn!("coordinate {k}: rank-one update lost positive definiteness, re-factorizing");
            state.gamma[k] = new_gamma;
            state.sigma_inv = fresh_inverse(&state.gamma, problem.s, problem.sigma2)?;
            state.refactorizations += 1;
        }
    }
    state.loglik += gain;
    Ok(gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    /// Fresh uniformly random permutation per pass.
    Random { seed: u64 },
    Cyclic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovOptions {
    pub max_passes: usize,
    /// Stop when a sweep gains less than `tol · max(1, |ℓ|)`.
    pub tol: f64,
    pub order: SweepOrder,
    /// Record the likelihood after every coordinate update.
    pub record_trace: bool,
    /// Compare the maintained inverse against a fresh one after each sweep.
    pub verify_inverse: bool,
}

impl Default for CovOptions {
    fn default() -> Self {
        Self {
            max_passes: 30,
            tol: 1e-7,
            order: SweepOrder::Random { seed: 0 },
            record_trace: false,
            verify_inverse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovRun {
    pub estimate: GammaEstimate,
    /// Likelihood after each update (only with `record_trace`).
    pub trace: Vec<f64>,
    /// Max-abs gap between maintained and fresh inverse per sweep (only with `verify_inverse`).
    pub inverse_drift: Vec<f64>,
}

pub fn coordinate_descent(
    y: &ComplexMatrix,
    s: &ComplexMatrix,
    sigma2: f64,
    opts: &CovOptions,
) -> Result<CovRun, CovError> {
    let problem = CovProblem::new(y, s, sigma2)?;
    let n = s.ncols();
    let mut state = GammaEstimate::zero(&problem);
    let mut trace = Vec::new();
    let mut inverse_drift = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffler = match opts.order {
        SweepOrder::Random { seed } => Some(rng(seed)),
        SweepOrder::Cyclic => None,
    };
    if opts.record_trace {
        trace.push(state.loglik);
    }
    for pass in 0..opts.max_passes {
        if let Some(r) = shuffler.as_mut() {
            order.shuffle(r);
        }
        let mut sweep_gain = 0.0;
        for &k in &order {
            let gain = coordinate_update(k, &mut state, &problem).map_err(|e| CovError::Numerical {
                pass,
                coordinate: k,
                source: Box::new(e),
            })?;
            sweep_gain += gain;
            if opts.record_trace {
                trace.push(state.loglik);
            }
        }
        state.passes = pass + 1;
        if opts.verify_inverse {
            let fresh = fresh_inverse(&state.gamma, s, sigma2)?;
            inverse_drift.push((&fresh - &state.sigma_inv).iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
        if sweep_gain < opts.tol * state.loglik.abs().max(1.0) {
            break;
        }
    }
    state.loglik = problem.log_likelihood(&state.gamma)?;
    Ok(CovRun {
        estimate: state,
        trace,
        inverse_drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportRule {
    /// `γ̂_n > threshold`.
    Absolute(f64),
    /// `γ̂_n > rho · σ²`.
    RelativeToNoise { rho: f64, sigma2: f64 },
    /// The `k` largest strictly positive entries (ties broken by lower index).
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportDecision {
    pub active: Vec<bool>,
    pub rule: SupportRule,
}

pub fn detect_support(gamma: &[f64], rule: SupportRule) -> SupportDecision {
    let active = match rule {
        SupportRule::Absolute(t) => gamma.iter().map(|&g| g > t).collect(),
        SupportRule::RelativeToNoise { rho, sigma2 } => gamma.iter().map(|&g| g > rho * sigma2).collect(),
        SupportRule::TopK(k) => {
            let mut idx: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] > 0.0).collect();
            idx.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
            let mut active = vec![false; gamma.len()];
            for &i in idx.iter().take(k) {
                active[i] = true;
            }
            active
        }
    };
    SupportDecision { active, rule }
}
