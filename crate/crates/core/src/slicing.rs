//! Coexistence of broadband, critical and massive traffic on shared spectrum.
//!
//! Channel gains are unit-mean exponential (Rayleigh fading) and SNRs are
//! average received SNRs at unit transmit power. Decoding at rate `r`
//! succeeds iff `log2(1 + SINR) ≥ r`; successful decodes are cancelled exactly.
//!
//! Broadband traffic uses truncated channel inversion on each of `F`
//! channels: power `c/g` when the gain `g ≥ θ`, silence otherwise. The long-term
//! budget `E[c/g; g ≥ θ] = c·E1(θ)` ties `c` and `θ` together, and every
//! non-outage transmission arrives with SNR `ρ_B·c`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::hash::mix64;
use crate::model::rng;

#[derive(Debug, Error, PartialEq)]
pub enum SlicingError {
    #[error("invalid scenario: {0}")]
    Config(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SlicingError> {
    Err(SlicingError::Config(msg.into()))
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral `E1(x) = ∫_x^∞ e^{-t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x <= 1.0 {
        // -γ - ln x + Σ_{k≥1} (-1)^{k+1} x^k / (k·k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        // Continued fraction, modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 10.0)
}

/// Truncated channel-inversion operating point on one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedInversion {
    /// Gain threshold `θ` below which the transmitter stays silent.
    pub threshold: f64,
    /// Inversion level `c`: power `c/g` above the threshold.
    pub level: f64,
    /// Rate while transmitting, bits per channel use.
    pub rate: f64,
    /// `P(g < θ) = 1 − e^{−θ}`.
    pub outage: f64,
    pub snr: f64,
}

impl TruncatedInversion {
    fn from_threshold(threshold: f64, level: f64, snr: f64) -> Self {
        Self {
            threshold,
            level,
            rate: (1.0 + snr * level).log2(),
            outage: -(-threshold).exp_m1(),
            snr,
        }
    }

    pub fn power(&self, gain: f64) -> f64 {
        if gain >= self.threshold {
            self.level / gain
        } else {
            0.0
        }
    }
}

fn check_budget(power_budget: f64) -> Result<(), SlicingError> {
    if !(power_budget > 0.0 && power_budget.is_finite()) {
        return config_err(format!("power budget must be positive, got {power_budget}"));
    }
    Ok(())
}

/// Threshold meeting the power budget for rate `rate` at average SNR `snr_db`.
pub fn truncated_inversion_policy(power_budget: f64, snr_db: f64, rate: f64) -> Result<TruncatedInversion, SlicingError> {
    check_budget(power_budget)?;
    if !(rate > 0.0 && rate.is_finite()) || !snr_db.is_finite() {
        return config_err("rate must be positive and SNR finite");
    }
    let snr = db(snr_db);
    let level = (2f64.powf(rate) - 1.0) / snr;
    // c·E1(θ) = P is decreasing in θ; bisect on ln θ.
    let target = power_budget / level;
    let f = |ln_t: f64| exp_integral_e1(ln_t.exp()) - target;
    let (mut lo, mut hi) = (-690.0f64, 7.0f64);
    if f(lo) < 0.0 {
        // Budget exceeds what inversion can spend even at θ ≈ 0.
        return Ok(TruncatedInversion::from_threshold(0.0, level, snr));
    }
    if f(hi) > 0.0 {
        hi = 700f64.ln();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TruncatedInversion::from_threshold((0.5 * (lo + hi)).exp(), level, snr))
}

/// Largest-rate inversion whose outage equals `outage`.
pub fn truncated_inversion_for_outage(power_budget: f64, snr_db: f64, outage: f64) -> Result<TruncatedInversion, SlicingError> {
    check_budget(power_budget)?;
    if !(outage > 0.0 && outage < 1.0) {
        return config_err(format!("outage target must lie in (0, 1), got {outage}"));
    }
    let threshold = -(-outage).ln_1p();
    let level = power_budget / exp_integral_e1(threshold);
    Ok(TruncatedInversion::from_threshold(threshold, level, db(snr_db)))
}

/// Monte Carlo outage frequency and mean transmit power of a policy.
pub fn simulate_truncated_inversion(policy: &TruncatedInversion, trials: u64, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut off = 0u64;
    let mut power = 0.0;
    for _ in 0..trials {
        let g: f64 = Exp1.sample(&mut r);
        if g < policy.threshold {
            off += 1;
        } else {
            power += policy.level / g;
        }
    }
    (off as f64 / trials as f64, power / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharingMode {
    Homa,
    Hnoma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicingScenario {
    /// Frequency channels `F`.
    pub channels: usize,
    pub snr_broadband_db: f64,
    pub snr_critical_db: f64,
    pub snr_massive_db: f64,
    /// Long-term broadband power budget per channel.
    pub power_budget: f64,
    pub broadband_outage_target: f64,
    /// Critical payload in bits per channel use, spread over the `F` channels.
    pub critical_rate: f64,
    /// Mean number of massive users per slot.
    pub massive_load: f64,
    pub massive_rate: f64,
    /// Broadband rates swept by [`mmtc_embb_sic`].
    pub broadband_rates: Vec<f64>,
    /// Resource fraction given to massive users under H-OMA.
    pub massive_share: f64,
    pub mode: SharingMode,
    /// Points of the share / power sweeps.
    pub grid: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SlicingScenario {
    fn default() -> Self {
        Self {
            channels: 8,
            snr_broadband_db: 10.0,
            snr_critical_db: 20.0,
            snr_massive_db: 10.0,
            power_budget: 1.0,
            broadband_outage_target: 0.1,
            critical_rate: 0.2,
            massive_load: 3.0,
            massive_rate: 0.5,
            broadband_rates: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            massive_share: 0.5,
            mode: SharingMode::Homa,
            grid: 100,
            trials: 100_000,
            seed: 0,
        }
    }
}

impl SlicingScenario {
    pub fn validate(&self) -> Result<(), SlicingError> {
        if self.channels == 0 || self.grid == 0 || self.trials == 0 {
            return config_err("channels, grid and trials must be positive");
        }
        for (name, v) in [
            ("snr_broadband_db", self.snr_broadband_db),
            ("snr_critical_db", self.snr_critical_db),
            ("snr_massive_db", self.snr_massive_db),
        ] {
            if !v.is_finite() {
                return config_err(format!("{name} must be finite"));
            }
        }
        if !(self.critical_rate > 0.0 && self.massive_rate > 0.0) {
            return config_err("rates must be positive");
        }
        if self.broadband_rates.iter().any(|&r| !(r > 0.0)) {
            return config_err("broadband rates must be positive");
        }
        if self.broadband_rates.windows(2).any(|w| w[1] <= w[0]) {
            return config_err("broadband rates must be strictly increasing");
        }
        if !(self.massive_load >= 0.0) {
            return config_err("massive load must be nonnegative");
        }
        if !(self.massive_share > 0.0 && self.massive_share < 1.0) {
            return config_err("massive share must lie in (0, 1)");
        }
        check_budget(self.power_budget)?;
        if !(self.broadband_outage_target > 0.0 && self.broadband_outage_target < 1.0) {
            return config_err("broadband outage target must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn broadband_policy(&self) -> Result<TruncatedInversion, SlicingError> {
        truncated_inversion_for_outage(self.power_budget, self.snr_broadband_db, self.broadband_outage_target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffRow {
    pub param: f64,
    /// Broadband rate per channel while not in outage.
    pub broadband_rate: f64,
    /// Fraction of channel uses in which broadband traffic is lost.
    pub broadband_outage: f64,
    /// Critical outage probability, or the mean number of decoded massive users.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub param_name: &'static str,
    pub metric_name: &'static str,
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffCurve {
    /// Best broadband rate among rows whose critical outage is at most `target`.
    pub fn rate_at_reliability(&self, target: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric <= target)
            .map(|r| r.broadband_rate)
            .max_by(f64::total_cmp)
    }
}

/// Per-trial channel draws: broadband gains and critical gains, `F` each.
fn draw_channels(s: &SlicingScenario) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..s.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng(mix64(s.seed, t as u64));
            let g: Vec<f64> = (0..s.channels).map(|_| Exp1.sample(&mut r)).collect();
            let h: Vec<f64> = (0..s.channels).map(|_| Exp1.sample(&mut r)).collect();
            (g, h)
        })
        .collect()
}

fn mean_capacity(snr: f64, gains: &[f64], interference: impl Fn(usize) -> f64) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(f, &x)| (1.0 + snr * x / (1.0 + interference(f))).log2())
        .sum::<f64>()
        / gains.len() as f64
}

/// H-OMA: critical traffic owns a fraction `α` of every channel's slot.
pub fn simulate_homa(s: &SlicingScenario) -> Result<TradeoffCurve, SlicingError> {
    s.validate()?;
    let policy = s.broadband_policy()?;
    let snr_u = db(s.snr_critical_db);
    let draws = draw_channels(s);
    let capacities: Vec<f64> = draws.iter().map(|(_, h)| mean_capacity(snr_u, h, |_| 0.0)).collect();
    let off = draws
        .iter()
        .map(|(g, _)| g.iter().filter(|&&x| x < policy.threshold).count())
        .sum::<usize>() as f64
        / (s.trials * s.channels) as f64;
    let rows = (0..=s.grid)
        .map(|i| {
            let alpha = i as f64 / s.grid as f64;
            let fails = capacities.iter().filter(|&&c| alpha * c < s.critical_rate).count();
            TradeoffRow {
                param: alpha,
                broadband_rate: (1.0 - alpha) * policy.rate,
                broadband_outage: if alpha < 1.0 { off } else { 1.0 },
                metric: fails as f64 / s.trials as f64,
            }
        })
        .collect();
    Ok(TradeoffCurve {
        param_name: "critical_share",
        metric_name: "critical_outage",
        rows,
    })
}

/// H-NOMA: both services share every channel; broadband power is scaled by `β`.
pub fn simulate_hnoma(s: &SlicingScenario) -> Result<TradeoffCurve, SlicingError> {
    s.validate()?;
    let policy = s.broadband_policy()?;
    let snr_u = db(s.snr_critical_db);
    let draws = draw_channels(s);
    let rows = (0..=s.grid)
        .into_par_iter()
        .map(|i| {
            let beta = i as f64 / s.grid as f64;
            let rx = policy.snr * policy.level * beta;
            let bb_rate = (1.0 + rx).log2();
            let mut crit_fail = 0usize;
            let mut bb_lost = 0usize;
            for (g, h) in &draws {
                let on = |f: usize| g[f] >= policy.threshold && beta > 0.0;
                let ok = mean_capacity(snr_u, h, |f| if on(f) { rx } else { 0.0 }) >= s.critical_rate;
                if !ok {
                    crit_fail += 1;
                }
                for f in 0..s.channels {
                    if !on(f) {
                        bb_lost += 1;
                    } else if !ok {
                        // Broadband decoded under critical interference.
                        let sinr = rx / (1.0 + snr_u * h[f]);
                        if (1.0 + sinr).log2() < bb_rate {
                            bb_lost += 1;
                        }
                    }
                }
            }
            TradeoffRow {
                param: beta,
                broadband_rate: bb_rate,
                broadband_outage: bb_lost as f64 / (s.trials * s.channels) as f64,
                metric: crit_fail as f64 / s.trials as f64,
            }
        })
        .collect();
    Ok(TradeoffCurve {
        param_name: "broadband_power",
        metric_name: "critical_outage",
        rows,
    })
}

/// Outcome of SIC on one shared channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicOutcome {
    /// Decoded massive users, in decoding order.
    pub massive: Vec<usize>,
    pub broadband: bool,
}

fn decodes(signal: f64, interference: f64, rate: f64) -> bool {
    (1.0 + signal / (1.0 + interference)).log2() >= rate
}

/// Decode the strongest massive user whose rate condition holds while
/// everything undecoded counts as noise; when stuck, try broadband, cancel it
/// on success and resume. `massive` and `broadband` are received SNRs.
pub fn sic_decode(massive: &[f64], massive_rate: f64, broadband: Option<(f64, f64)>) -> SicOutcome {
    let mut order: Vec<usize> = (0..massive.len()).collect();
    order.sort_by(|&a, &b| massive[b].total_cmp(&massive[a]).then(a.cmp(&b)));
    let mut bb_done = false;
    let mut next = 0;
    // Cancelled signals drop out of the sum entirely, so their residual is exactly zero.
    let undecoded = |next: usize| -> f64 { order[next..].iter().map(|&u| massive[u]).sum() };
    loop {
        let bb_left = match broadband {
            Some((p, _)) if !bb_done => p,
            _ => 0.0,
        };
        if next < order.len() {
            let u = order[next];
            if decodes(massive[u], undecoded(next + 1) + bb_left, massive_rate) {
                next += 1;
                continue;
            }
        }
        match broadband {
            Some((p, rate)) if !bb_done && decodes(p, undecoded(next), rate) => bb_done = true,
            _ => break,
        }
    }
    SicOutcome {
        massive: order[..next].to_vec(),
        broadband: bb_done,
    }
}

/// Broadband outage and decoded massive users on one channel, swept over the
/// broadband rate. Broadband transmits at fixed power with Rayleigh fading.
pub fn mmtc_embb_sic(s: &SlicingScenario) -> Result<TradeoffCurve, SlicingError> {
    s.validate()?;
    let snr_b = db(s.snr_broadband_db);
    let snr_m = db(s.snr_massive_db);
    let draws: Vec<(Vec<f64>, f64)> = (0..s.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng(mix64(s.seed, t as u64));
            let n = if s.massive_load > 0.0 {
                Poisson::new(s.massive_load).map(|p| p.sample(&mut r) as usize).unwrap_or(0)
            } else {
                0
            };
            let users: Vec<f64> = (0..n).map(|_| snr_m * r.sample::<f64, _>(Exp1)).collect();
            (users, snr_b * r.sample::<f64, _>(Exp1))
        })
        .collect();
    let phi = s.massive_share;
    let rows = s
        .broadband_rates
        .par_iter()
        .map(|&rate| {
            let mut lost = 0usize;
            let mut iot = 0usize;
            for (users, bb) in &draws {
                match s.mode {
                    SharingMode::Hnoma => {
                        let out = sic_decode(users, s.massive_rate, Some((*bb, rate)));
                        lost += usize::from(!out.broadband);
                        iot += out.massive.len();
                    }
                    SharingMode::Homa => {
                        // Each service gets its share of the slot without interference.
                        let out = sic_decode(users, s.massive_rate / phi, None);
                        iot += out.massive.len();
                        lost += usize::from((1.0 - phi) * (1.0 + bb).log2() < rate);
                    }
                }
            }
            TradeoffRow {
                param: rate,
                broadband_rate: rate,
                broadband_outage: lost as f64 / s.trials as f64,
                metric: iot as f64 / s.trials as f64,
            }
        })
        .collect();
    Ok(TradeoffCurve {
        param_name: "broadband_rate",
        metric_name: "decoded_massive_users",
        rows,
    })
}
