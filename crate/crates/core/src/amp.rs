//! Multiple-measurement-vector AMP for row-sparse recovery of `X = Γ^{1/2} H`.
//!
//! Starting from `X⁰ = 0`, `Z⁰ = Y` the recursion is
//!
//! ```text
//! R^t     = Sᴴ Z^t + X^t
//! X^{t+1} = η(R^t)                                   (row-wise)
//! Z^{t+1} = Y − S X^{t+1} + (N/L) Z^t ⟨η'(R^t)⟩
//! ```
//!
//! Every denoiser here is a row shrinkage `η(r) = c(‖r‖²) r`, so its Jacobian
//! is available in closed form. With the Wirtinger convention
//! `∂/∂r = ½(∂/∂x − i ∂/∂y)` and row vectors, the derivative matrix of one row
//! is `D[j][i] = ∂η_i/∂r_j = c δ_ij + c'(‖r‖²) r_i conj(r_j)`, and `⟨η'⟩` is the
//! `M×M` average of `D` over the `N` rows. For `M = 1` this reduces to the
//! usual complex-AMP divergence `½(∂η_re/∂x + ∂η_im/∂y)`.
//!
//! The effective noise level is `τ_t² = ‖Z^t‖²_F / (L M)` per complex entry.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::model::{Activation, Complex64, ComplexMatrix, LargeScale, PreambleScheme, SystemConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AmpDiagnostics {
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub tau: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid AMP configuration: {0}")]
    Config(String),
    #[error("non-finite values at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        partial: Box<AmpDiagnostics>,
    },
}

/// Bernoulli-activity prior with a discrete large-scale gain law and
/// `CN(0, I)` channel rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MmsePrior {
    pub activity: f64,
    /// `(gain, probability)` atoms; probabilities sum to one.
    pub gains: Vec<(f64, f64)>,
}

/// Number of equiprobable atoms used to discretise a lognormal gain law.
pub const LOGNORMAL_ATOMS: usize = 16;

impl MmsePrior {
    pub fn unit(activity: f64) -> Self {
        Self {
            activity,
            gains: vec![(1.0, 1.0)],
        }
    }

    /// Prior implied by a system configuration. Fixed-K activation maps to
    /// `p = K / N`; lognormal gains are discretised at the midpoints of
    /// [`LOGNORMAL_ATOMS`] equiprobable bins.
    pub fn from_config(config: &SystemConfig) -> Self {
        let activity = match config.activation {
            Activation::Fixed(k) => k as f64 / config.n_users as f64,
            Activation::Probability(p) => p,
        };
        let gains = match &config.large_scale {
            LargeScale::Unit => vec![(1.0, 1.0)],
            LargeScale::Fixed(g) => {
                let w = 1.0 / g.len() as f64;
                g.iter().map(|&x| (x, w)).collect()
            }
            LargeScale::LogNormal { mean_db, std_db } => {
                let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
                let w = 1.0 / LOGNORMAL_ATOMS as f64;
                (0..LOGNORMAL_ATOMS)
                    .map(|i| {
                        let z = std_normal.inverse_cdf((i as f64 + 0.5) * w);
                        (10f64.powf((mean_db + std_db * z) / 10.0), w)
                    })
                    .collect()
            }
        };
        Self { activity, gains }
    }

    fn validate(&self) -> Result<(), AmpError> {
        if !(0.0..=1.0).contains(&self.activity) {
            return Err(AmpError::Config(format!("activity probability {} outside [0, 1]", self.activity)));
        }
        if self.gains.is_empty() || self.gains.iter().any(|&(g, w)| !(g >= 0.0 && (0.0..=1.0).contains(&w))) {
            return Err(AmpError::Config("gain atoms need g >= 0 and weights in [0, 1]".into()));
        }
        Ok(())
    }

    /// Mean signal energy per complex entry, `p E[g]`.
    pub fn signal_power(&self) -> f64 {
        self.activity * self.gains.iter().map(|&(g, w)| g * w).sum::<f64>()
    }
}

/// Default `alpha` for [`DenoiserSpec::soft_for_antennas`]; calibrated on
/// small-`L` instances where it minimised support errors.
pub const DEFAULT_SOFT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    /// Row-ℓ2 group soft threshold with threshold `theta · τ`.
    SoftThreshold { theta: f64 },
    /// Posterior mean under an [`MmsePrior`].
    Mmse(MmsePrior),
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<(), AmpError> {
        match self {
            DenoiserSpec::SoftThreshold { theta } if !(*theta >= 0.0) => {
                Err(AmpError::Config(format!("soft threshold theta must be >= 0, got {theta}")))
            }
            DenoiserSpec::Mmse(prior) => prior.validate(),
            _ => Ok(()),
        }
    }

    /// Soft threshold tuned for `M` antennas: `θ = alpha · sqrt(M)`.
    pub fn soft_for_antennas(alpha: f64, m: usize) -> Self {
        DenoiserSpec::SoftThreshold {
            theta: alpha * (m as f64).sqrt(),
        }
    }
}

/// Shrinkage factor `c` and its derivative `dc/d‖r‖²` for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowShrink {
    pub c: f64,
    pub dc: f64,
}

impl RowShrink {
    /// `(1/M) tr D`, the scalar contribution of this row to `⟨η'⟩`.
    pub fn divergence(&self, q: f64, m: usize) -> f64 {
        self.c + self.dc * q / m as f64
    }

    /// The full `M×M` Wirtinger derivative matrix `D` of this row.
    pub fn jacobian(&self, row: &[Complex64]) -> ComplexMatrix {
        let m = row.len();
        ComplexMatrix::from_fn(m, m, |j, i| {
            let diag = if i == j { self.c } else { 0.0 };
            Complex64::new(diag, 0.0) + row[i] * row[j].conj() * self.dc
        })
    }
}

const TINY_VAR: f64 = 1e-300;

/// A denoiser specialised to one noise level.
#[derive(Debug, Clone)]
enum Prepared {
    Soft { lambda: f64 },
    Mmse(MmseAtNoise),
}

#[derive(Debug, Clone)]
struct MmseAtNoise {
    /// Null component first: (log weight, variance, β).
    comps: Vec<(f64, f64, f64)>,
    degenerate: bool,
    activity: f64,
}

impl MmseAtNoise {
    fn new(prior: &MmsePrior, tau2: f64, m: usize) -> Self {
        let mf = m as f64;
        let degenerate = tau2 <= TINY_VAR;
        let t2 = tau2.max(TINY_VAR);
        let mut comps = Vec::with_capacity(prior.gains.len() + 1);
        let p = prior.activity;
        let null_w = 1.0 - p;
        comps.push((if null_w > 0.0 { null_w.ln() - mf * t2.ln() } else { f64::NEG_INFINITY }, t2, 0.0));
        for &(g, w) in &prior.gains {
            let v = g + t2;
            let lw = p * w;
            comps.push((
                if lw > 0.0 { lw.ln() - mf * v.ln() } else { f64::NEG_INFINITY },
                v,
                g / v,
            ));
        }
        Self {
            comps,
            degenerate,
            activity: p,
        }
    }

    /// Posterior component probabilities for a row with energy `q`.
    fn posterior(&self, q: f64, out: &mut Vec<f64>) {
        out.clear();
        let mut best = f64::NEG_INFINITY;
        for &(lw, v, _) in &self.comps {
            let l = lw - q / v;
            out.push(l);
            if l > best {
                best = l;
            }
        }
        if best == f64::NEG_INFINITY {
            let n = out.len() as f64;
            out.iter_mut().for_each(|x| *x = 1.0 / n);
            return;
        }
        let mut sum = 0.0;
        for x in out.iter_mut() {
            *x = (*x - best).exp();
            sum += *x;
        }
        out.iter_mut().for_each(|x| *x /= sum);
    }

    fn shrink(&self, q: f64, scratch: &mut Vec<f64>) -> RowShrink {
        if self.degenerate {
            // Noiseless observation: any nonzero row is the signal itself.
            let any_gain = self.activity > 0.0 && self.comps[1..].iter().any(|&(lw, _, b)| lw > f64::NEG_INFINITY && b > 0.0);
            return RowShrink {
                c: if any_gain { 1.0 } else { 0.0 },
                dc: 0.0,
            };
        }
        self.posterior(q, scratch);
        let inv_mean: f64 = scratch.iter().zip(&self.comps).map(|(p, &(_, v, _))| p / v).sum();
        let mut c = 0.0;
        let mut dc = 0.0;
        for (p, &(_, v, beta)) in scratch.iter().zip(&self.comps) {
            c += p * beta;
            dc += beta * p * (inv_mean - 1.0 / v);
        }
        RowShrink { c, dc }
    }

    fn activity_posterior(&self, q: f64, scratch: &mut Vec<f64>) -> f64 {
        if self.degenerate {
            return if q > 0.0 { 1.0 } else { 0.0 };
        }
        self.posterior(q, scratch);
        1.0 - scratch[0]
    }
}

impl Prepared {
    fn new(spec: &DenoiserSpec, tau: f64, m: usize) -> Self {
        match spec {
            DenoiserSpec::SoftThreshold { theta } => Prepared::Soft { lambda: theta * tau },
            DenoiserSpec::Mmse(prior) => Prepared::Mmse(MmseAtNoise::new(prior, tau * tau, m)),
        }
    }

    fn shrink(&self, q: f64, scratch: &mut Vec<f64>) -> RowShrink {
        match self {
            Prepared::Soft { lambda } => {
                let norm = q.sqrt();
                if norm <= *lambda || norm == 0.0 {
                    RowShrink { c: 0.0, dc: 0.0 }
                } else {
                    RowShrink {
                        c: 1.0 - lambda / norm,
                        dc: lambda / (2.0 * q * norm),
                    }
                }
            }
            Prepared::Mmse(m) => m.shrink(q, scratch),
        }
    }
}

/// Denoises one row at effective noise level `tau` (standard deviation per
/// complex entry). Returns the denoised row and its shrinkage derivative.
pub fn denoise_row(row: &[Complex64], spec: &DenoiserSpec, tau: f64) -> (Vec<Complex64>, RowShrink) {
    let prepared = Prepared::new(spec, tau.max(0.0), row.len());
    let q: f64 = row.iter().map(|v| v.norm_sqr()).sum();
    let shrink = prepared.shrink(q, &mut Vec::new());
    (row.iter().map(|v| v * shrink.c).collect(), shrink)
}

/// Posterior probability that a row belongs to an active user.
pub fn activity_posterior(row: &[Complex64], prior: &MmsePrior, tau: f64) -> f64 {
    let q: f64 = row.iter().map(|v| v.norm_sqr()).sum();
    MmseAtNoise::new(prior, tau * tau, row.len()).activity_posterior(q, &mut Vec::new())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// `N×M` estimate `X^t`.
    pub x: ComplexMatrix,
    /// `L×M` corrected residual `Z^t`.
    pub z: ComplexMatrix,
    pub t: usize,
    /// `τ_t = sqrt(‖Z^t‖² / (L M))`.
    pub tau: f64,
    /// Denoiser input `R^{t-1}` that produced `X^t` (absent at `t = 0`).
    pub last_input: Option<ComplexMatrix>,
    /// Noise level the last denoising step used.
    pub last_tau: f64,
    /// `⟨η'⟩` (`M×M`) used in the Onsager term of the last step.
    pub onsager: ComplexMatrix,
}

fn tau_of(z: &ComplexMatrix) -> f64 {
    (z.norm_squared() / (z.nrows() * z.ncols()) as f64).sqrt()
}

impl AmpState {
    pub fn initial(y: &ComplexMatrix, n_users: usize) -> Self {
        let m = y.ncols();
        Self {
            x: ComplexMatrix::zeros(n_users, m),
            z: y.clone(),
            t: 0,
            tau: tau_of(y),
            last_input: None,
            last_tau: 0.0,
            onsager: ComplexMatrix::zeros(m, m),
        }
    }
}

fn check_dims(y: &ComplexMatrix, s: &ComplexMatrix) -> Result<(), AmpError> {
    if y.nrows() != s.nrows() {
        return Err(AmpError::Dimension(format!(
            "Y has {} rows but S has {} rows",
            y.nrows(),
            s.nrows()
        )));
    }
    if y.ncols() == 0 || s.ncols() == 0 || y.nrows() == 0 {
        return Err(AmpError::Dimension("empty Y or S".into()));
    }
    Ok(())
}

/// One MMV-AMP step.
pub fn amp_iterate(
    state: &AmpState,
    y: &ComplexMatrix,
    s: &ComplexMatrix,
    spec: &DenoiserSpec,
) -> Result<AmpState, AmpError> {
    check_dims(y, s)?;
    let (l, n) = s.shape();
    let m = y.ncols();
    if state.x.shape() != (n, m) || state.z.shape() != (l, m) {
        return Err(AmpError::Dimension(format!(
            "state shapes X {:?}, Z {:?} do not match N={n}, L={l}, M={m}",
            state.x.shape(),
            state.z.shape()
        )));
    }
    let tau = state.tau;
    let r = s.ad_mul(&state.z) + &state.x;
    let prepared = Prepared::new(spec, tau, m);
    let mut scratch = Vec::new();
    let mut x_next = r.clone();
    let mut dcs = DVector::<f64>::zeros(n);
    let mut c_sum = 0.0;
    for i in 0..n {
        let q: f64 = r.row(i).iter().map(|v| v.norm_sqr()).sum();
        let sh = prepared.shrink(q, &mut scratch);
        x_next.row_mut(i).iter_mut().for_each(|v| *v *= sh.c);
        dcs[i] = sh.dc;
        c_sum += sh.c;
    }
    // ⟨D⟩ = mean(c) I + (1/N) Rᴴ diag(dc) R
    let mut weighted = r.clone();
    for i in 0..n {
        let w = dcs[i];
        weighted.row_mut(i).iter_mut().for_each(|v| *v *= w);
    }
    let mut onsager = r.ad_mul(&weighted) / Complex64::new(n as f64, 0.0);
    let c_mean = c_sum / n as f64;
    for j in 0..m {
        onsager[(j, j)] += Complex64::new(c_mean, 0.0);
    }
    let ratio = Complex64::new(n as f64 / l as f64, 0.0);
    let z_next = y - s * &x_next + (&state.z * &onsager) * ratio;
    let next = AmpState {
        tau: tau_of(&z_next),
        x: x_next,
        z: z_next,
        t: state.t + 1,
        last_input: Some(r),
        last_tau: tau,
        onsager,
    };
    if !next.tau.is_finite() || next.x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(AmpError::NonFinite {
            iteration: next.t,
            partial: Box::new(AmpDiagnostics {
                iterations: state.t,
                residual_norms: Vec::new(),
                tau: vec![state.tau],
            }),
        });
    }
    Ok(next)
}

/// Hard activity decision applied to the final AMP iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionRule {
    /// Active iff `‖x̂_n‖² > rho · M · τ²`, with `τ` the noise level of the
    /// last denoising step.
    RowEnergy { rho: f64 },
    /// Active iff the posterior activity probability of the last denoiser
    /// input row exceeds `threshold` (MMSE denoiser only).
    Posterior { threshold: f64 },
    /// Posterior rule at 0.5 for MMSE, row energy with the default `rho` otherwise.
    Auto,
}

/// Default `rho` of the row-energy rule.
pub const DEFAULT_ROW_ENERGY_RHO: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpOptions {
    pub max_iter: usize,
    pub stop_tol: f64,
    pub detection: DetectionRule,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            stop_tol: 1e-6,
            detection: DetectionRule::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpResult {
    pub x_hat: ComplexMatrix,
    pub support: Vec<bool>,
    pub iterations: usize,
    /// `‖Z^t‖_F` after each iteration.
    pub residual_norms: Vec<f64>,
    /// `τ_0, τ_1, …, τ_T`.
    pub tau: Vec<f64>,
    /// Relative change `‖X^{t+1} − X^t‖_F / ‖X^t‖_F` at the last step.
    pub last_change: f64,
}

pub fn run_amp(
    y: &ComplexMatrix,
    s: &ComplexMatrix,
    spec: &DenoiserSpec,
    opts: &AmpOptions,
) -> Result<AmpResult, AmpError> {
    check_dims(y, s)?;
    spec.validate()?;
    if opts.max_iter == 0 {
        return Err(AmpError::Config("max_iter must be at least 1".into()));
    }
    let n = s.ncols();
    let mut state = AmpState::initial(y, n);
    let mut residual_norms = Vec::new();
    let mut taus = vec![state.tau];
    let mut last_change = f64::INFINITY;
    while state.t < opts.max_iter {
        let next = match amp_iterate(&state, y, s, spec) {
            Ok(next) => next,
            Err(AmpError::NonFinite { iteration, .. }) => {
                return Err(AmpError::NonFinite {
                    iteration,
                    partial: Box::new(AmpDiagnostics {
                        iterations: state.t,
                        residual_norms,
                        tau: taus,
                    }),
                })
            }
            Err(e) => return Err(e),
        };
        let diff = (&next.x - &state.x).norm();
        let prev = state.x.norm();
        residual_norms.push(next.z.norm());
        taus.push(next.tau);
        state = next;
        last_change = if prev > 0.0 {
            diff / prev
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if last_change < opts.stop_tol {
            break;
        }
    }
    let support = detect(&state, spec, opts.detection);
    Ok(AmpResult {
        x_hat: state.x,
        support,
        iterations: state.t,
        residual_norms,
        tau: taus,
        last_change,
    })
}

fn detect(state: &AmpState, spec: &DenoiserSpec, rule: DetectionRule) -> Vec<bool> {
    let m = state.x.ncols();
    let rule = match (rule, spec) {
        (DetectionRule::Auto, DenoiserSpec::Mmse(_)) => DetectionRule::Posterior { threshold: 0.5 },
        (DetectionRule::Auto, _) => DetectionRule::RowEnergy {
            rho: DEFAULT_ROW_ENERGY_RHO,
        },
        (r, _) => r,
    };
    match (rule, spec) {
        (DetectionRule::Posterior { threshold }, DenoiserSpec::Mmse(prior)) => {
            let Some(r) = state.last_input.as_ref() else {
                return vec![false; state.x.nrows()];
            };
            let at = MmseAtNoise::new(prior, state.last_tau * state.last_tau, m);
            let mut scratch = Vec::new();
            r.row_iter()
                .map(|row| {
                    let q: f64 = row.iter().map(|v| v.norm_sqr()).sum();
                    at.activity_posterior(q, &mut scratch) > threshold
                })
                .collect()
        }
        (DetectionRule::RowEnergy { rho }, _) | (DetectionRule::Posterior { threshold: rho }, _) => {
            let floor = rho * m as f64 * state.last_tau * state.last_tau;
            state
                .x
                .row_iter()
                .map(|row| {
                    let e: f64 = row.iter().map(|v| v.norm_sqr()).sum();
                    e > floor
                })
                .collect()
        }
        (DetectionRule::Auto, _) => unreachable!("resolved above"),
    }
}

/// Scalar state-evolution prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvolution {
    /// `τ_0², …, τ_T²`.
    pub tau2: Vec<f64>,
    /// Predicted per-entry MSE of `X^1, …, X^T`.
    pub mse: Vec<f64>,
}

/// Simpson nodes on the standardised `Gamma(M, 1)` variable.
const SE_INTERVALS: usize = 4000;

/// Per-entry MSE `E‖η(x + τw) − x‖² / M` of a row-shrinkage denoiser,
/// evaluated by deterministic quadrature over the row energy `‖r‖²`.
///
/// Conditioned on an active row with gain `g`, `r ~ CN(0, (g + τ²) I)` and
/// `E[‖x − c r‖² | r] = M g τ²/(g + τ²) + (β − c)² ‖r‖²` with `β = g/(g + τ²)`;
/// for an inactive row it is `c² ‖r‖²`. `‖r‖² / v` is `Gamma(M, 1)`.
pub fn denoiser_mse(spec: &DenoiserSpec, prior: &MmsePrior, tau2: f64, m: usize) -> f64 {
    let prepared = Prepared::new(spec, tau2.sqrt(), m);
    let mf = m as f64;
    let mut scratch = Vec::new();
    let mut expect = |v: f64, f: &mut dyn FnMut(f64, RowShrink) -> f64| -> f64 {
        if v <= TINY_VAR {
            return 0.0;
        }
        let upper = mf + 14.0 * mf.sqrt() + 40.0;
        let h = upper / SE_INTERVALS as f64;
        let ln_norm = ln_gamma(mf);
        let mut acc = 0.0;
        for i in 0..=SE_INTERVALS {
            let u = i as f64 * h;
            let density = if u == 0.0 {
                if m == 1 { 1.0 } else { 0.0 }
            } else {
                ((mf - 1.0) * u.ln() - u - ln_norm).exp()
            };
            let weight = if i == 0 || i == SE_INTERVALS {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let q = v * u;
            let sh = prepared.shrink(q, &mut scratch);
            acc += weight * density * f(q, sh);
        }
        acc * h / 3.0
    };
    let p = prior.activity;
    let mut total = 0.0;
    if p < 1.0 {
        total += (1.0 - p) * expect(tau2, &mut |q, sh| sh.c * sh.c * q);
    }
    if p > 0.0 {
        for &(g, w) in &prior.gains {
            if g <= 0.0 || w <= 0.0 {
                continue;
            }
            let v = g + tau2;
            let beta = g / v;
            let residual = expect(v, &mut |q, sh| (beta - sh.c).powi(2) * q);
            total += p * w * (mf * g * tau2 / v + residual);
        }
    }
    total / mf
}

/// `τ²_{t+1} = σ² + (N/L) mse(τ_t)` from `τ_0² = σ² + (N/L) p E[g]`.
pub fn state_evolution(config: &SystemConfig, spec: &DenoiserSpec, iterations: usize) -> Result<StateEvolution, AmpError> {
    if config.preamble_scheme != PreambleScheme::IidGaussian {
        return Err(AmpError::Config("state evolution requires i.i.d. Gaussian preambles".into()));
    }
    config.validate().map_err(|e| AmpError::Config(e.to_string()))?;
    spec.validate()?;
    let prior = MmsePrior::from_config(config);
    let ratio = config.n_users as f64 / config.preamble_len as f64;
    let sigma2 = config.noise_var;
    let mut tau2 = vec![sigma2 + ratio * prior.signal_power()];
    let mut mse = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let e = denoiser_mse(spec, &prior, *tau2.last().expect("non-empty"), config.n_antennas);
        mse.push(e);
        tau2.push(sigma2 + ratio * e);
    }
    Ok(StateEvolution { tau2, mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Instance, SystemConfig};
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn soft_threshold_dead_zone_and_identity() {
        let row = vec![c(0.3, 0.4), c(0.0, 0.0)];
        let spec = DenoiserSpec::SoftThreshold { theta: 1.0 };
        let (out, sh) = denoise_row(&row, &spec, 0.5);
        assert!(out.iter().all(|v| v.norm() == 0.0));
        assert_eq!(sh.c, 0.0);
        let (out, _) = denoise_row(&row, &DenoiserSpec::SoftThreshold { theta: 0.0 }, 3.0);
        assert_eq!(out, row);
        let (out, _) = denoise_row(&[c(0.0, 0.0); 3], &spec, 0.0);
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn soft_threshold_shrinks_row_norm() {
        let row = vec![c(3.0, 0.0), c(0.0, 4.0)];
        let (out, _) = denoise_row(&row, &DenoiserSpec::SoftThreshold { theta: 2.0 }, 1.0);
        let norm: f64 = out.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mmse_with_certain_activity_and_no_noise_is_identity() {
        let row = vec![c(0.7, -1.2), c(0.1, 0.3), c(-2.0, 0.5)];
        let spec = DenoiserSpec::Mmse(MmsePrior::unit(1.0));
        let (out, _) = denoise_row(&row, &spec, 0.0);
        assert_eq!(out, row);
        // Small but nonzero noise approaches the identity continuously.
        let (out, _) = denoise_row(&row, &spec, 1e-6);
        for (a, b) in out.iter().zip(&row) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    /// Posterior mean of a Bernoulli-Gaussian scalar by brute-force 2-D
    /// quadrature over the complex plane.
    fn posterior_mean_by_quadrature(r: Complex64, p: f64, g: f64, tau2: f64) -> Complex64 {
        let lik = |x: Complex64| (-(r - x).norm_sqr() / tau2).exp() / (std::f64::consts::PI * tau2);
        let prior = |x: Complex64| (-x.norm_sqr() / g).exp() / (std::f64::consts::PI * g);
        let half = 8.0;
        let n = 800;
        let h = 2.0 * half / n as f64;
        let mut num = Complex64::new(0.0, 0.0);
        let mut den_cont = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = Complex64::new(-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h);
                let w = lik(x) * prior(x) * h * h;
                num += x * w;
                den_cont += w;
            }
        }
        num * p / (p * den_cont + (1.0 - p) * lik(Complex64::new(0.0, 0.0)))
    }

    #[test]
    fn mmse_matches_numerical_posterior() {
        let prior = MmsePrior { activity: 0.3, gains: vec![(1.5, 1.0)] };
        let spec = DenoiserSpec::Mmse(prior);
        let tau2: f64 = 0.4;
        for r in [c(0.2, -0.1), c(1.0, 0.7), c(-2.0, 1.5)] {
            let (out, _) = denoise_row(&[r], &spec, tau2.sqrt());
            let oracle = posterior_mean_by_quadrature(r, 0.3, 1.5, tau2);
            assert!((out[0] - oracle).norm() < 1e-6, "{:?} vs {:?}", out[0], oracle);
        }
    }

    fn eta(spec: &DenoiserSpec, row: &[Complex64], tau: f64) -> Vec<Complex64> {
        denoise_row(row, spec, tau).0
    }

    #[test]
    fn analytic_jacobian_matches_wirtinger_finite_differences() {
        let row = vec![c(0.8, -0.3), c(-0.2, 1.1), c(0.5, 0.4)];
        let specs = [
            DenoiserSpec::SoftThreshold { theta: 0.9 },
            DenoiserSpec::Mmse(MmsePrior {
                activity: 0.2,
                gains: vec![(0.5, 0.5), (2.0, 0.5)],
            }),
        ];
        let tau = 0.6;
        let h = 1e-6;
        for spec in &specs {
            let (_, sh) = denoise_row(&row, spec, tau);
            let jac = sh.jacobian(&row);
            for j in 0..row.len() {
                let mut plus_re = row.clone();
                plus_re[j] += c(h, 0.0);
                let mut minus_re = row.clone();
                minus_re[j] -= c(h, 0.0);
                let mut plus_im = row.clone();
                plus_im[j] += c(0.0, h);
                let mut minus_im = row.clone();
                minus_im[j] -= c(0.0, h);
                let (a, b, cc, d) = (
                    eta(spec, &plus_re, tau),
                    eta(spec, &minus_re, tau),
                    eta(spec, &plus_im, tau),
                    eta(spec, &minus_im, tau),
                );
                for i in 0..row.len() {
                    let dx = (a[i] - b[i]) / (2.0 * h);
                    let dy = (cc[i] - d[i]) / (2.0 * h);
                    let wirtinger = (dx - c(0.0, 1.0) * dy) * 0.5;
                    assert!((jac[(j, i)] - wirtinger).norm() < 1e-6, "{spec:?} ({j},{i})");
                }
            }
        }
    }

    #[test]
    fn identity_preambles_recover_in_one_step() {
        let n = 32;
        let mut cfg = SystemConfig::new(n, n, 4, 8, 0.0);
        cfg.preamble_scheme = crate::model::PreambleScheme::Orthonormal;
        let inst = Instance::generate(&cfg, 3).unwrap();
        let s = ComplexMatrix::identity(n, n);
        let y = s.clone() * inst.x_true();
        let spec = DenoiserSpec::SoftThreshold { theta: 0.0 };
        let state = amp_iterate(&AmpState::initial(&y, n), &y, &s, &spec).unwrap();
        assert!((&state.x - inst.x_true()).norm() < 1e-12);
        let opts = AmpOptions {
            max_iter: 1,
            ..AmpOptions::default()
        };
        let res = run_amp(&y, &s, &spec, &opts).unwrap();
        assert_eq!(res.support, inst.activity.active);
    }

    #[test]
    fn onsager_identity_holds_each_step() {
        let cfg = SystemConfig::new(120, 40, 3, 6, 0.01);
        let inst = Instance::generate(&cfg, 17).unwrap();
        let (y, s) = (&inst.received.y, &inst.book.matrix);
        for spec in [DenoiserSpec::soft_for_antennas(1.2, 3), DenoiserSpec::Mmse(MmsePrior::from_config(&cfg))] {
            let mut state = AmpState::initial(y, 120);
            for _ in 0..8 {
                let next = amp_iterate(&state, y, s, &spec).unwrap();
                let lhs = &next.z + s * &next.x - (&state.z * &next.onsager) * Complex64::new(3.0, 0.0);
                assert!((lhs - y).norm() <= 1e-10 * y.norm());
                assert_eq!(next.t, state.t + 1);
                state = next;
            }
        }
    }

    #[test]
    fn zero_signal_gives_empty_support() {
        let s = crate::model::random_complex_matrix(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 10, 30, 0.1);
        let y = ComplexMatrix::zeros(10, 2);
        for spec in [DenoiserSpec::soft_for_antennas(1.0, 2), DenoiserSpec::Mmse(MmsePrior::unit(0.1))] {
            let res = run_amp(&y, &s, &spec, &AmpOptions::default()).unwrap();
            assert!(res.support.iter().all(|&a| !a));
            assert_eq!(res.residual_norms.len(), res.iterations);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = ComplexMatrix::identity(4, 4);
        let y = ComplexMatrix::zeros(5, 2);
        assert!(matches!(
            run_amp(&y, &s, &DenoiserSpec::SoftThreshold { theta: 1.0 }, &AmpOptions::default()),
            Err(AmpError::Dimension(_))
        ));
        let y = ComplexMatrix::zeros(4, 2);
        let opts = AmpOptions { max_iter: 0, ..AmpOptions::default() };
        assert!(run_amp(&y, &s, &DenoiserSpec::SoftThreshold { theta: 1.0 }, &opts).is_err());
        assert!(run_amp(&y, &s, &DenoiserSpec::SoftThreshold { theta: -1.0 }, &AmpOptions::default()).is_err());
    }

    #[test]
    fn non_finite_input_reports_iteration() {
        let s = ComplexMatrix::identity(4, 4);
        let mut y = ComplexMatrix::zeros(4, 1);
        y[(0, 0)] = c(f64::NAN, 0.0);
        match run_amp(&y, &s, &DenoiserSpec::SoftThreshold { theta: 1.0 }, &AmpOptions::default()) {
            Err(AmpError::NonFinite { iteration, partial }) => {
                assert_eq!(iteration, 1);
                assert_eq!(partial.iterations, 0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn state_evolution_without_users_stays_at_noise() {
        let mut cfg = SystemConfig::new(100, 20, 4, 0, 0.05);
        cfg.activation = Activation::Probability(0.0);
        let se = state_evolution(&cfg, &DenoiserSpec::Mmse(MmsePrior::from_config(&cfg)), 5).unwrap();
        assert!(se.tau2.iter().all(|&t| (t - 0.05).abs() < 1e-15));
        // A soft threshold passes some pure-noise rows, so its floor sits above σ².
        let se = state_evolution(&cfg, &DenoiserSpec::soft_for_antennas(1.0, 4), 5).unwrap();
        assert!(se.tau2.iter().all(|&t| t >= 0.05));
        cfg.preamble_scheme = crate::model::PreambleScheme::Orthonormal;
        cfg.n_users = 10;
        assert!(state_evolution(&cfg, &DenoiserSpec::soft_for_antennas(1.0, 4), 3).is_err());
    }

    #[test]
    fn state_evolution_is_monotone_for_mmse() {
        let cfg = SystemConfig::new(2000, 400, 16, 100, 10f64.powf(-1.5));
        let spec = DenoiserSpec::Mmse(MmsePrior::from_config(&cfg));
        let se = state_evolution(&cfg, &spec, 12).unwrap();
        for w in se.tau2.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", se.tau2);
        }
        assert!(*se.tau2.last().unwrap() >= cfg.noise_var);
    }

    #[test]
    fn denoiser_mse_matches_monte_carlo() {
        use crate::model::complex_normal;
        let prior = MmsePrior { activity: 0.1, gains: vec![(1.0, 1.0)] };
        let m = 4;
        let tau2: f64 = 0.3;
        for spec in [DenoiserSpec::Mmse(prior.clone()), DenoiserSpec::soft_for_antennas(1.1, m)] {
            let predicted = denoiser_mse(&spec, &prior, tau2, m);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let trials = 200_000;
            let mut acc = 0.0;
            for _ in 0..trials {
                use rand::Rng;
                let active = rng.random::<f64>() < prior.activity;
                let x: Vec<Complex64> = (0..m)
                    .map(|_| if active { complex_normal(&mut rng, 1.0) } else { c(0.0, 0.0) })
                    .collect();
                let r: Vec<Complex64> = x.iter().map(|v| v + complex_normal(&mut rng, tau2)).collect();
                let (out, _) = denoise_row(&r, &spec, tau2.sqrt());
                acc += out.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            }
            let empirical = acc / (trials * m) as f64;
            assert!((empirical / predicted - 1.0).abs() < 0.03, "{spec:?}: {empirical} vs {predicted}");
        }
    }
}
