//! Lower-tail models of channel gains and tail-driven rate selection.
//!
//! Two models of `P(X < x)` for small `x`:
//!
//! - power law `c·x^d`, fitted by least squares of `log F̂` on `log x` over
//!   the lowest `q` fraction of the samples;
//! - generalized Pareto on threshold deficits: below a threshold `u` holding
//!   a fraction `ζ` of the samples, `P(X < x) = ζ·(1 + ξ(u − x)/σ)^{−1/ξ}`.
//!
//! The GPD is fitted by maximum likelihood through the profile likelihood in
//! `θ = ξ/σ`: for fixed `θ` the optimal shape is `ξ(θ) = mean(ln(1 + θ y))`,
//! leaving a one-dimensional search.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(
        "only {got} samples fall below the threshold, need {needed}; supply more samples or raise the threshold"
    )]
    TooFewExceedances { needed: usize, got: usize },
    #[error("degenerate samples: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Config(String),
    #[error("target outage {target} is not below the modelled tail fraction {tail}")]
    NotATailQuestion { target: f64, tail: f64 },
}

/// Minimum samples for a power-law fit.
pub const MIN_POWER_LAW_SAMPLES: usize = 1000;
/// Minimum threshold deficits for a GPD fit.
pub const MIN_EXCEEDANCES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailKind {
    PowerLaw { offset: f64, exponent: f64 },
    Gpd { threshold: f64, shape: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailModel {
    pub kind: TailKind,
    /// Probability mass the model describes: `q` or `ζ`.
    pub tail_fraction: f64,
    pub n_samples: usize,
    /// Samples inside the modelled tail.
    pub n_tail: usize,
    /// RMS log-residual for power laws, probability-plot correlation for GPD.
    pub goodness: f64,
}

impl TailModel {
    /// `P(X < x)` under the model, valid inside the tail.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.kind {
            TailKind::PowerLaw { offset, exponent } => offset * x.max(0.0).powf(exponent),
            TailKind::Gpd { threshold, shape, scale } => {
                self.tail_fraction * gpd_survival(threshold - x, shape, scale)
            }
        }
    }

    /// Gain `x_ε` with `P(X < x_ε) = ε`.
    pub fn quantile(&self, eps: f64) -> f64 {
        match self.kind {
            TailKind::PowerLaw { offset, exponent } => (eps / offset).powf(1.0 / exponent),
            TailKind::Gpd { threshold, shape, scale } => {
                let ratio = eps / self.tail_fraction;
                let deficit = if shape.abs() < 1e-12 {
                    -scale * ratio.ln()
                } else {
                    scale / shape * (ratio.powf(-shape) - 1.0)
                };
                threshold - deficit
            }
        }
    }
}

fn gpd_survival(y: f64, shape: f64, scale: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    if shape.abs() < 1e-12 {
        (-y / scale).exp()
    } else {
        let base = 1.0 + shape * y / scale;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(-1.0 / shape)
        }
    }
}

/// GPD quantile of the excess distribution.
fn gpd_excess_quantile(p: f64, shape: f64, scale: f64) -> f64 {
    if shape.abs() < 1e-12 {
        -scale * (-p).ln_1p()
    } else {
        scale / shape * ((1.0 - p).powf(-shape) - 1.0)
    }
}

fn sorted_lowest(samples: &[f64], k: usize) -> Vec<f64> {
    let mut v = samples.to_vec();
    if k < v.len() {
        v.select_nth_unstable_by(k, f64::total_cmp);
        v.truncate(k);
    }
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn check_finite(samples: &[f64]) -> Result<(), TailError> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(TailError::Degenerate("non-finite sample".into()));
    }
    Ok(())
}

/// Least-squares power law through the empirical CDF below the `q`-quantile.
pub fn fit_power_law_tail(samples: &[f64], q: f64) -> Result<TailModel, TailError> {
    let n = samples.len();
    if n < MIN_POWER_LAW_SAMPLES {
        return Err(TailError::TooFewSamples {
            needed: MIN_POWER_LAW_SAMPLES,
            got: n,
        });
    }
    if !(q > 0.0 && q <= 0.2) {
        return Err(TailError::Config(format!("tail fraction must lie in (0, 0.2], got {q}")));
    }
    check_finite(samples)?;
    if samples.iter().any(|&v| v < 0.0) {
        return Err(TailError::Config("samples must be nonnegative".into()));
    }
    let k = ((q * n as f64).ceil() as usize).clamp(2, n);
    let low = sorted_lowest(samples, k);
    // Points (log x_(i), log(i/n)), skipping zeros.
    let pts: Vec<(f64, f64)> = low
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, &x)| (x.ln(), ((i + 1) as f64 / n as f64).ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || !(sxx > 0.0) {
        return Err(TailError::Degenerate("lower tail has no spread".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    if !(exponent > 0.0) {
        return Err(TailError::Degenerate(format!("fitted exponent {exponent} is not positive")));
    }
    let rms = (pts
        .iter()
        .map(|p| (p.1 - intercept - exponent * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(TailModel {
        kind: TailKind::PowerLaw {
            offset: intercept.exp(),
            exponent,
        },
        tail_fraction: k as f64 / n as f64,
        n_samples: n,
        n_tail: k,
        goodness: rms,
    })
}

/// GPD log-likelihood of excesses `y ≥ 0`.
pub fn gpd_log_likelihood(excesses: &[f64], shape: f64, scale: f64) -> f64 {
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if shape.abs() < 1e-12 {
        return -n * scale.ln() - excesses.iter().sum::<f64>() / scale;
    }
    let mut acc = 0.0;
    for &y in excesses {
        let base = 1.0 + shape * y / scale;
        if base <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += base.ln();
    }
    -n * scale.ln() - (1.0 + 1.0 / shape) * acc
}

/// `(ξ, σ)` from `θ = ξ/σ`.
fn profile_point(excesses: &[f64], theta: f64) -> (f64, f64) {
    if theta.abs() < 1e-14 {
        let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
        return (0.0, mean);
    }
    let shape = excesses.iter().map(|&y| (theta * y).ln_1p()).sum::<f64>() / excesses.len() as f64;
    (shape, shape / theta)
}

fn profile_value(excesses: &[f64], theta: f64) -> f64 {
    let (shape, scale) = profile_point(excesses, theta);
    // Shapes below -1 make the likelihood unbounded at the support edge.
    if shape < -1.0 || !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    gpd_log_likelihood(excesses, shape, scale)
}

/// Maximum-likelihood `(ξ, σ)` of GPD excesses.
pub fn fit_gpd_excesses(excesses: &[f64]) -> Result<(f64, f64), TailError> {
    if excesses.len() < MIN_EXCEEDANCES {
        return Err(TailError::TooFewExceedances {
            needed: MIN_EXCEEDANCES,
            got: excesses.len(),
        });
    }
    check_finite(excesses)?;
    if excesses.iter().any(|&y| y < 0.0) {
        return Err(TailError::Config("excesses must be nonnegative".into()));
    }
    let max = excesses.iter().cloned().fold(0.0, f64::max);
    let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
    if !(max > 0.0) {
        return Err(TailError::Degenerate("all excesses are zero".into()));
    }
    // Grid in θ·mean: the negative side stops just short of −mean/max,
    // the positive side is log-spaced.
    let lower = -1.0 / max;
    let mut grid: Vec<f64> = (1..200).map(|i| lower * (1.0 - i as f64 / 200.0)).collect();
    grid.push(0.0);
    grid.extend((0..=240).map(|i| 10f64.powf(-4.0 + i as f64 * 0.025) / mean));
    grid.sort_unstable_by(f64::total_cmp);
    let values: Vec<f64> = grid.iter().map(|&t| profile_value(excesses, t)).collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .filter(|&i| values[i].is_finite())
        .ok_or_else(|| TailError::Degenerate("likelihood is not finite anywhere".into()))?;
    let mut lo = if best == 0 { lower * 0.999_999 } else { grid[best - 1] };
    let mut hi = if best + 1 == grid.len() { grid[best] * 2.0 } else { grid[best + 1] };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| profile_value(excesses, t);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let theta = 0.5 * (lo + hi);
    let refined = if f(theta) >= values[best] { theta } else { grid[best] };
    Ok(profile_point(excesses, refined))
}

/// Correlation between sorted excesses and fitted quantiles at `(i − 0.5)/n`.
pub fn probability_plot_correlation(excesses: &[f64], shape: f64, scale: f64) -> f64 {
    let mut y = excesses.to_vec();
    y.sort_unstable_by(f64::total_cmp);
    let n = y.len() as f64;
    let q: Vec<f64> = (0..y.len())
        .map(|i| gpd_excess_quantile((i as f64 + 0.5) / n, shape, scale))
        .collect();
    let my = y.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let cov: f64 = y.iter().zip(&q).map(|(a, b)| (a - my) * (b - mq)).sum();
    let vy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let vq: f64 = q.iter().map(|b| (b - mq).powi(2)).sum();
    cov / (vy * vq).sqrt()
}

/// GPD fit of the deficits `u − x` of the samples below `threshold`.
pub fn fit_gpd_tail(samples: &[f64], threshold: f64) -> Result<TailModel, TailError> {
    check_finite(samples)?;
    let deficits: Vec<f64> = samples.iter().filter(|&&x| x < threshold).map(|&x| threshold - x).collect();
    let (shape, scale) = fit_gpd_excesses(&deficits)?;
    Ok(TailModel {
        kind: TailKind::Gpd { threshold, shape, scale },
        tail_fraction: deficits.len() as f64 / samples.len() as f64,
        n_samples: samples.len(),
        n_tail: deficits.len(),
        goodness: probability_plot_correlation(&deficits, shape, scale),
    })
}

/// Fit diagnostics of GPD tails at thresholds placed at several tail fractions.
pub fn gpd_threshold_sweep(samples: &[f64], fractions: &[f64]) -> Vec<(f64, Result<TailModel, TailError>)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    fractions
        .iter()
        .map(|&q| {
            let idx = ((q * sorted.len() as f64) as usize).min(sorted.len().saturating_sub(1));
            let u = sorted.get(idx).copied().unwrap_or(0.0);
            (q, fit_gpd_tail(samples, u))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSelection {
    /// `log2(1 + SNR·x_ε)`.
    pub rate: f64,
    pub quantile: f64,
    /// `ε` is below `1/n`, so no sample resolves it.
    pub extrapolated: bool,
}

/// Largest rate whose outage under the tail model is `target`.
pub fn select_rate(model: &TailModel, target: f64, snr_db: f64) -> Result<RateSelection, TailError> {
    if !(target > 0.0) {
        return Err(TailError::Config(format!("target outage must be positive, got {target}")));
    }
    if target >= model.tail_fraction {
        return Err(TailError::NotATailQuestion {
            target,
            tail: model.tail_fraction,
        });
    }
    let quantile = model.quantile(target).max(0.0);
    let snr = 10f64.powf(snr_db / 10.0);
    Ok(RateSelection {
        rate: (1.0 + snr * quantile).log2(),
        quantile,
        extrapolated: target < 1.0 / model.n_samples as f64,
    })
}
