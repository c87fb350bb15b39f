//! Random-access protocols: slotted ALOHA, coded slotted ALOHA with SIC,
//! grant-based and grant-free pipelines, and age-of-information traces.
//!
//! Power and noise conventions shared by the pipelines: every transmitted
//! symbol has unit power at the reference gain and the receiver sees noise of
//! variance `σ² = 10^{-snr_db/10}` per symbol and antenna. Preamble books have
//! unit-norm columns, so the detector model sees noise variance `σ²/L`.
//! A data transmission at rate `r` bits/symbol succeeds iff
//! `log2(1 + SINR) ≥ r`.

use log::warn;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::amp::{run_amp, AmpOptions, DenoiserSpec, DEFAULT_SOFT_ALPHA};
use crate::covariance::{coordinate_descent, detect_support, CovOptions, SupportRule, SweepOrder};
use crate::downlink::{decode_schedule, encode_schedule, DownlinkError, DEFAULT_BUCKET_SIZE};
use crate::hash::mix64;
use crate::model::{
    generate_channel, generate_preambles, rng, sample_activity, synthesize_received, ActivityPattern, Activation,
    ChannelRealization, Complex64, ComplexMatrix, LargeScale, ModelError, PreambleBook, PreambleScheme, SystemConfig,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("delivery log is not sorted by event slot (entry {0})")]
    Unsorted(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Downlink(#[from] DownlinkError),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ProtocolError> {
    Err(ProtocolError::Config(msg.into()))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Delivered,
    Collided,
    Undetected,
    DecodeFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserOutcome {
    pub user: usize,
    pub outcome: Outcome,
    /// Slots from the start of the access attempt to delivery.
    pub latency: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub delivered: usize,
    pub collided: usize,
    pub undetected: usize,
    pub decode_failed: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.delivered + self.collided + self.undetected + self.decode_failed
    }
}

/// Per-user outcomes of one or more access rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolReport {
    pub offered_load: f64,
    pub outcomes: Vec<UserOutcome>,
    pub slots: u64,
    /// Transmitted slots weighted by transmit power.
    pub energy: f64,
}

impl ProtocolReport {
    pub fn counts(&self) -> OutcomeCounts {
        let mut c = OutcomeCounts::default();
        for o in &self.outcomes {
            match o.outcome {
                Outcome::Delivered => c.delivered += 1,
                Outcome::Collided => c.collided += 1,
                Outcome::Undetected => c.undetected += 1,
                Outcome::DecodeFailed => c.decode_failed += 1,
            }
        }
        c
    }

    pub fn delivered_fraction(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.counts().delivered as f64 / self.outcomes.len() as f64
    }

    pub fn mean_latency(&self) -> Option<f64> {
        let l: Vec<u32> = self.outcomes.iter().filter_map(|o| o.latency).collect();
        (!l.is_empty()).then(|| l.iter().map(|&v| v as f64).sum::<f64>() / l.len() as f64)
    }

    /// Concatenates outcomes and adds resources; the load is kept from `self`.
    pub fn merge(&mut self, other: ProtocolReport) {
        self.outcomes.extend(other.outcomes);
        self.slots += other.slots;
        self.energy += other.energy;
    }
}

// ---------------------------------------------------------------------------
// Slotted ALOHA

/// Delivered packets per slot with `Poisson(load)` arrivals in each slot.
pub fn simulate_slotted_aloha(load: f64, n_slots: u64, seed: u64) -> Result<f64, ProtocolError> {
    Ok(slotted_aloha_successes(load, n_slots, seed)?.len() as f64 / n_slots as f64)
}

/// Slots holding exactly one transmission; same draws as [`simulate_slotted_aloha`].
pub fn slotted_aloha_successes(load: f64, n_slots: u64, seed: u64) -> Result<Vec<u64>, ProtocolError> {
    if !(load >= 0.0 && load.is_finite()) {
        return config_err(format!("load must be finite and nonnegative, got {load}"));
    }
    if n_slots == 0 {
        return config_err("n_slots must be at least 1");
    }
    if load == 0.0 {
        return Ok(Vec::new());
    }
    let poisson = Poisson::new(load).map_err(|e| ProtocolError::Config(e.to_string()))?;
    let mut r = rng(seed);
    Ok((0..n_slots).filter(|_| poisson.sample(&mut r) == 1.0).collect())
}

// ---------------------------------------------------------------------------
// Coded slotted ALOHA

/// Probability of each replica count, `degree → weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    pub weights: Vec<(usize, f64)>,
}

impl DegreeDistribution {
    pub fn regular(degree: usize) -> Self {
        Self {
            weights: vec![(degree, 1.0)],
        }
    }

    pub fn validate(&self, n_slots: usize) -> Result<(), ProtocolError> {
        let total: f64 = self.weights.iter().map(|w| w.1).sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(w.1 >= 0.0)) {
            return config_err(format!("degree probabilities must be nonnegative and sum to 1, got {total}"));
        }
        if let Some(&(d, _)) = self.weights.iter().find(|w| w.0 == 0 || w.0 > n_slots) {
            return config_err(format!("degree {d} outside 1..={n_slots}"));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, r: &mut R) -> usize {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for &(d, w) in &self.weights {
            acc += w;
            if u < acc {
                return d;
            }
        }
        self.weights.last().map_or(1, |w| w.0)
    }

    /// A short tag such as `2` or `2:0.5,3:0.5`.
    pub fn tag(&self) -> String {
        if let [(d, _)] = self.weights.as_slice() {
            return d.to_string();
        }
        self.weights
            .iter()
            .map(|(d, w)| format!("{d}:{w}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Replica slots of every user in one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSchedule {
    pub n_slots: usize,
    /// Sorted, distinct slot indices per user.
    pub replicas: Vec<Vec<usize>>,
    pub degree_tag: String,
    pub seed: u64,
}

impl FrameSchedule {
    pub fn new(n_slots: usize, mut replicas: Vec<Vec<usize>>) -> Result<Self, ProtocolError> {
        for (u, r) in replicas.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            if r.is_empty() || r.last().is_some_and(|&s| s >= n_slots) {
                return config_err(format!("user {u} has an empty or out-of-range replica set"));
            }
        }
        Ok(Self {
            n_slots,
            replicas,
            degree_tag: "custom".into(),
            seed: 0,
        })
    }

    pub fn random(n_users: usize, n_slots: usize, degrees: &DegreeDistribution, seed: u64) -> Result<Self, ProtocolError> {
        if n_slots == 0 {
            return config_err("a frame needs at least one slot");
        }
        degrees.validate(n_slots)?;
        let mut r = rng(seed);
        let replicas = (0..n_users)
            .map(|_| {
                let d = degrees.sample(&mut r);
                let mut slots = index::sample(&mut r, n_slots, d).into_vec();
                slots.sort_unstable();
                slots
            })
            .collect();
        Ok(Self {
            n_slots,
            replicas,
            degree_tag: degrees.tag(),
            seed,
        })
    }
}

/// Peeling decoder on the collision channel. Returns the decoded users in
/// increasing order.
pub fn sic_peel(frame: &FrameSchedule, active: &[usize]) -> Vec<usize> {
    let mut occupants: Vec<Vec<usize>> = vec![Vec::new(); frame.n_slots];
    for &u in active {
        for &s in &frame.replicas[u] {
            occupants[s].push(u);
        }
    }
    let mut load: Vec<usize> = occupants.iter().map(Vec::len).collect();
    let mut decoded = vec![false; frame.replicas.len()];
    let mut queue: Vec<usize> = (0..frame.n_slots).filter(|&s| load[s] == 1).collect();
    while let Some(s) = queue.pop() {
        if load[s] != 1 {
            continue;
        }
        let Some(&u) = occupants[s].iter().find(|&&u| !decoded[u]) else {
            continue;
        };
        decoded[u] = true;
        for &t in &frame.replicas[u] {
            load[t] -= 1;
            if load[t] == 1 {
                queue.push(t);
            }
        }
    }
    let mut out: Vec<usize> = active.iter().copied().filter(|&u| decoded[u]).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One coded-slotted-ALOHA frame in which all `n_users` transmit.
pub fn coded_sa_trial(
    n_users: usize,
    n_slots: usize,
    degrees: &DegreeDistribution,
    seed: u64,
) -> Result<ProtocolReport, ProtocolError> {
    let frame = FrameSchedule::random(n_users, n_slots, degrees, seed)?;
    let all: Vec<usize> = (0..n_users).collect();
    let decoded = sic_peel(&frame, &all);
    let mut is_decoded = vec![false; n_users];
    decoded.iter().for_each(|&u| is_decoded[u] = true);
    let outcomes = (0..n_users)
        .map(|u| UserOutcome {
            user: u,
            outcome: if is_decoded[u] { Outcome::Delivered } else { Outcome::Collided },
            latency: is_decoded[u].then_some(n_slots as u32),
        })
        .collect();
    Ok(ProtocolReport {
        offered_load: n_users as f64 / n_slots as f64,
        outcomes,
        slots: n_slots as u64,
        energy: frame.replicas.iter().map(Vec::len).sum::<usize>() as f64,
    })
}

/// Independent frames, trial `t` seeded with `mix64(seed, t)`.
pub fn simulate_coded_sa(
    n_users: usize,
    n_slots: usize,
    degrees: &DegreeDistribution,
    trials: u64,
    seed: u64,
) -> Result<ProtocolReport, ProtocolError> {
    let mut report = ProtocolReport {
        offered_load: n_users as f64 / n_slots.max(1) as f64,
        ..ProtocolReport::default()
    };
    for t in 0..trials {
        report.merge(coded_sa_trial(n_users, n_slots, degrees, mix64(seed, t))?);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Access pipelines

/// Common physical-layer parameters of the access pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessConfig {
    pub n_users: usize,
    pub preamble_len: usize,
    pub n_antennas: usize,
    /// Active users per round.
    pub active: usize,
    /// Per-symbol SNR at unit gain.
    pub snr_db: f64,
    pub large_scale: LargeScale,
}

impl AccessConfig {
    pub fn symbol_noise(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// Detector-side model: unit-norm preambles, noise `σ²/L`.
    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            n_users: self.n_users,
            preamble_len: self.preamble_len,
            n_antennas: self.n_antennas,
            noise_var: self.symbol_noise() / self.preamble_len as f64,
            activation: Activation::Fixed(self.active),
            large_scale: self.large_scale.clone(),
            preamble_scheme: PreambleScheme::IidGaussian,
        }
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        if !self.snr_db.is_finite() {
            return config_err("snr_db must be finite");
        }
        self.system().validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    /// Unique preambles, AMP detection.
    Amp(DenoiserSpec),
    /// Unique preambles, covariance-based detection.
    Covariance(SupportRule),
    /// Each active user draws one of `pool` orthogonal preambles.
    OrthogonalPool { pool: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrantBasedConfig {
    pub access: AccessConfig,
    pub detector: Detector,
    /// Data rate in bits per symbol.
    pub rate: f64,
}

const STREAM_BOOK: u64 = 0x4742_424f_4f4b;
const STREAM_ACT: u64 = 0x4742_4143_54;
const STREAM_CHAN: u64 = 0x4742_4348_414e;
const STREAM_NOISE: u64 = 0x4742_4e4f_4953_45;
const STREAM_POOL: u64 = 0x4742_504f_4f4c;

/// Grant-based phases: preamble, grant, data.
pub const GRANT_BASED_LATENCY: u32 = 3;

fn data_succeeds(sinr: f64, rate: f64) -> bool {
    (1.0 + sinr).log2() >= rate
}

fn mrc_snr(chan: &ChannelRealization, user: usize, gain: f64, noise: f64) -> f64 {
    let energy: f64 = chan.matrix.row(user).iter().map(|v| v.norm_sqr()).sum();
    gain * energy / noise
}

/// Detected users from the received preamble signal; detector failures yield
/// an empty set.
fn detect_users(
    detector: &Detector,
    y: &ComplexMatrix,
    book: &PreambleBook,
    noise_var: f64,
    seed: u64,
) -> Vec<bool> {
    let n = book.matrix.ncols();
    match detector {
        Detector::Amp(spec) => match run_amp(y, &book.matrix, spec, &AmpOptions::default()) {
            Ok(r) => r.support,
            Err(e) => {
                warn!("AMP failed, treating all users as undetected: {e}");
                vec![false; n]
            }
        },
        Detector::Covariance(rule) => {
            let opts = CovOptions {
                order: SweepOrder::Random { seed },
                ..CovOptions::default()
            };
            match coordinate_descent(y, &book.matrix, noise_var, &opts) {
                Ok(run) => detect_support(&run.estimate.gamma, *rule).active,
                Err(e) => {
                    warn!("covariance detection failed, treating all users as undetected: {e}");
                    vec![false; n]
                }
            }
        }
        Detector::OrthogonalPool { .. } => unreachable!("pool mode has no joint detector"),
    }
}

/// One grant-based access round.
pub fn run_grant_based(config: &GrantBasedConfig, seed: u64) -> Result<ProtocolReport, ProtocolError> {
    let access = &config.access;
    access.validate()?;
    let system = access.system();
    let noise = access.symbol_noise();
    let activity = sample_activity(&system, mix64(seed, STREAM_ACT))?;
    let chan = generate_channel(&system, mix64(seed, STREAM_CHAN))?;
    let active: Vec<usize> = activity.support();
    let mut outcomes = Vec::with_capacity(active.len());
    let mut energy = active.len() as f64;

    let granted: Vec<usize> = match &config.detector {
        Detector::OrthogonalPool { pool } => {
            if *pool == 0 {
                return config_err("orthogonal pool must hold at least one preamble");
            }
            let mut r = rng(mix64(seed, STREAM_POOL));
            let picks: Vec<usize> = active.iter().map(|_| r.random_range(0..*pool)).collect();
            let mut granted = Vec::new();
            for (i, &u) in active.iter().enumerate() {
                if picks.iter().filter(|&&p| p == picks[i]).count() > 1 {
                    // Colliders share the grant and collide again in the data slot.
                    energy += 1.0;
                    outcomes.push(UserOutcome {
                        user: u,
                        outcome: Outcome::Collided,
                        latency: None,
                    });
                } else {
                    granted.push(u);
                }
            }
            granted
        }
        detector => {
            let book = generate_preambles(&system, mix64(seed, STREAM_BOOK))?;
            let rx = synthesize_received(&book, &activity, &chan, system.noise_var, mix64(seed, STREAM_NOISE))?;
            let detected = detect_users(detector, &rx.y, &book, system.noise_var, seed);
            let ids: Vec<u64> = (0..detected.len()).filter(|&n| detected[n]).map(|n| n as u64).collect();
            if !ids.is_empty() {
                let slots = u16::try_from(ids.len())
                    .map_err(|_| ProtocolError::Config("more than 65535 detected users".into()))?;
                let packet = encode_schedule(&ids, slots, DEFAULT_BUCKET_SIZE, seed as u32)?;
                let mut used = vec![false; ids.len()];
                for &id in &ids {
                    let s = decode_schedule(&packet, id)? as usize;
                    if used[s] {
                        return config_err("schedule produced a slot collision");
                    }
                    used[s] = true;
                }
            }
            for &u in &active {
                if !detected[u] {
                    outcomes.push(UserOutcome {
                        user: u,
                        outcome: Outcome::Undetected,
                        latency: None,
                    });
                }
            }
            active.iter().copied().filter(|&u| detected[u]).collect()
        }
    };
    for &u in &granted {
        energy += 1.0;
        let ok = data_succeeds(mrc_snr(&chan, u, activity.gains[u], noise), config.rate);
        outcomes.push(UserOutcome {
            user: u,
            outcome: if ok { Outcome::Delivered } else { Outcome::DecodeFailed },
            latency: ok.then_some(GRANT_BASED_LATENCY),
        });
    }
    outcomes.sort_by_key(|o| o.user);
    Ok(ProtocolReport {
        offered_load: active.len() as f64 / access.preamble_len as f64,
        outcomes,
        slots: GRANT_BASED_LATENCY as u64,
        energy,
    })
}

/// Non-collision probability `(1 − 1/P)^{K−1}` of one user in a pool of `P`.
pub fn pool_success_probability(pool: usize, active: usize) -> f64 {
    (1.0 - 1.0 / pool as f64).powi(active.saturating_sub(1) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrantFreeConfig {
    pub access: AccessConfig,
    /// Symbols per slot, preamble included.
    pub block_len: usize,
    pub payload_bits: f64,
    pub frame_slots: usize,
    /// Replicas per active user.
    pub repetitions: usize,
    /// Cancel decoded users across slots.
    pub sic: bool,
    /// Scale replica power by `1/repetitions` so per-user energy is constant.
    pub split_power: bool,
    pub denoiser: DenoiserSpec,
}

impl GrantFreeConfig {
    /// Single slot, one replica, soft-threshold AMP.
    pub fn new(access: AccessConfig, block_len: usize, payload_bits: f64) -> Self {
        let m = access.n_antennas;
        Self {
            access,
            block_len,
            payload_bits,
            frame_slots: 1,
            repetitions: 1,
            sic: true,
            split_power: true,
            denoiser: DenoiserSpec::soft_for_antennas(DEFAULT_SOFT_ALPHA, m),
        }
    }

    pub fn rate(&self) -> f64 {
        self.payload_bits / (self.block_len - self.access.preamble_len) as f64
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        self.access.validate()?;
        if self.block_len <= self.access.preamble_len {
            return config_err(format!(
                "block of {} symbols leaves no room for data after a {}-symbol preamble",
                self.block_len, self.access.preamble_len
            ));
        }
        if self.repetitions == 0 || self.repetitions > self.frame_slots {
            return config_err(format!(
                "repetitions must lie in 1..={}, got {}",
                self.frame_slots, self.repetitions
            ));
        }
        if !(self.payload_bits > 0.0) {
            return config_err("payload must be positive");
        }
        self.denoiser
            .validate()
            .map_err(|e| ProtocolError::Config(e.to_string()))
    }
}

struct SlotState {
    book: PreambleBook,
    chan: ChannelRealization,
    noise_seed: u64,
    users: Vec<usize>,
}

/// Ridge-regularised least-squares channel estimates for `detected`, rows of `X̂`.
fn ls_estimates(y: &ComplexMatrix, s: &ComplexMatrix, detected: &[usize], ridge: f64) -> ComplexMatrix {
    let sd = s.select_columns(detected);
    let gram = sd.adjoint() * &sd + ComplexMatrix::identity(detected.len(), detected.len()) * Complex64::new(ridge, 0.0);
    let rhs = sd.adjoint() * y;
    match gram.cholesky() {
        Some(c) => c.solve(&rhs),
        None => rhs,
    }
}

/// Frame-based grant-free access with optional repetitions and cross-slot SIC.
pub fn run_grant_free(config: &GrantFreeConfig, seed: u64) -> Result<ProtocolReport, ProtocolError> {
    config.validate()?;
    let access = &config.access;
    let system = access.system();
    let noise = access.symbol_noise();
    let rate = config.rate();
    let power = if config.split_power {
        1.0 / config.repetitions as f64
    } else {
        1.0
    };
    let activity = sample_activity(&system, mix64(seed, STREAM_ACT))?;
    let active = activity.support();
    let frame = {
        let mut r = rng(mix64(seed, STREAM_POOL));
        let mut replicas = vec![Vec::new(); access.n_users];
        for &u in &active {
            let mut s = index::sample(&mut r, config.frame_slots, config.repetitions).into_vec();
            s.sort_unstable();
            replicas[u] = s;
        }
        replicas
    };
    let slots: Vec<SlotState> = (0..config.frame_slots)
        .map(|s| {
            let tag = mix64(seed, s as u64);
            Ok(SlotState {
                book: generate_preambles(&system, mix64(tag, STREAM_BOOK))?,
                chan: generate_channel(&system, mix64(tag, STREAM_CHAN))?,
                noise_seed: mix64(tag, STREAM_NOISE),
                users: active.iter().copied().filter(|&u| frame[u].contains(&s)).collect(),
            })
        })
        .collect::<Result<_, ProtocolError>>()?;

    let n = access.n_users;
    let mut decoded_at: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut detected_ever = vec![false; n];
    let mut pass = 0;
    loop {
        let mut progress = false;
        for (s, slot) in slots.iter().enumerate() {
            let remaining: Vec<usize> = slot.users.iter().copied().filter(|&u| decoded_at[u].is_none()).collect();
            if remaining.is_empty() {
                continue;
            }
            let mut present = ActivityPattern {
                active: vec![false; n],
                gains: activity.gains.iter().map(|g| g * power).collect(),
            };
            remaining.iter().for_each(|&u| present.active[u] = true);
            let rx = synthesize_received(&slot.book, &present, &slot.chan, system.noise_var, slot.noise_seed)?;
            let support = detect_users(&Detector::Amp(config.denoiser.clone()), &rx.y, &slot.book, system.noise_var, 0);
            let detected: Vec<usize> = (0..n).filter(|&u| support[u]).collect();
            if detected.is_empty() {
                continue;
            }
            for &u in &detected {
                detected_ever[u] = true;
            }
            let est = ls_estimates(&rx.y, &slot.book.matrix, &detected, system.noise_var);
            // True effective channels of the users still transmitting in this slot.
            let eff = |u: usize| -> Vec<Complex64> {
                let a = (present.gains[u]).sqrt();
                slot.chan.matrix.row(u).iter().map(|v| v * a).collect()
            };
            let effs: Vec<(usize, Vec<Complex64>)> = remaining.iter().map(|&u| (u, eff(u))).collect();
            for (i, &u) in detected.iter().enumerate() {
                if !present.active[u] || decoded_at[u].is_some() {
                    continue;
                }
                let w: Vec<Complex64> = est.row(i).iter().copied().collect();
                let proj = |h: &[Complex64]| -> f64 { w.iter().zip(h).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr() };
                let mut signal = 0.0;
                let mut interference = 0.0;
                for (v, h) in &effs {
                    if *v == u {
                        signal = proj(h);
                    } else {
                        interference += proj(h);
                    }
                }
                let w_energy: f64 = w.iter().map(|v| v.norm_sqr()).sum();
                let sinr = signal / (interference + noise * w_energy).max(f64::MIN_POSITIVE);
                if data_succeeds(sinr, rate) {
                    decoded_at[u] = Some((s, pass));
                    progress = true;
                }
            }
        }
        pass += 1;
        if !progress || !config.sic {
            break;
        }
    }

    let outcomes = active
        .iter()
        .map(|&u| {
            let (outcome, latency) = match decoded_at[u] {
                Some((s, 0)) => (Outcome::Delivered, Some(s as u32 + 1)),
                Some(_) => (Outcome::Delivered, Some(config.frame_slots as u32)),
                None if detected_ever[u] => (Outcome::DecodeFailed, None),
                None => (Outcome::Undetected, None),
            };
            UserOutcome { user: u, outcome, latency }
        })
        .collect();
    Ok(ProtocolReport {
        offered_load: active.len() as f64 / config.frame_slots as f64,
        outcomes,
        slots: config.frame_slots as u64,
        energy: active.len() as f64 * config.repetitions as f64 * power,
    })
}

// ---------------------------------------------------------------------------
// Age of information / age of loop

/// Lifecycle of one status update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateRecord {
    pub generation: u64,
    pub uplink_delivery: u64,
    /// Slot at which the actuation driven by this update completed, if it did.
    pub actuation: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    /// Age of information at the receiver.
    Uplink,
    /// Age of loop at the actuator.
    UplinkDownlink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeEvent {
    pub generation: u64,
    pub delivery: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeTrace {
    /// Age at slots `0..horizon`.
    pub ages: Vec<u64>,
    /// Deliveries that reset the age; stale ones are dropped.
    pub events: Vec<AgeEvent>,
}

impl AgeTrace {
    pub fn mean(&self) -> f64 {
        if self.ages.is_empty() {
            return 0.0;
        }
        self.ages.iter().sum::<u64>() as f64 / self.ages.len() as f64
    }

    pub fn peak(&self) -> u64 {
        self.ages.iter().copied().max().unwrap_or(0)
    }
}

/// Sawtooth age trace over `horizon` slots starting from age `initial`.
///
/// Records must be sorted by the event slot of the chosen mode (uplink
/// delivery or actuation). A delivery whose generation is older than the
/// information already held does not reset the age.
pub fn age_metrics(records: &[UpdateRecord], mode: LoopMode, horizon: u64, initial: u64) -> Result<AgeTrace, ProtocolError> {
    let events: Vec<(u64, u64)> = records
        .iter()
        .filter_map(|r| match mode {
            LoopMode::Uplink => Some((r.generation, r.uplink_delivery)),
            LoopMode::UplinkDownlink => r.actuation.map(|a| (r.generation, a)),
        })
        .collect();
    for (i, w) in events.windows(2).enumerate() {
        if w[1].1 < w[0].1 {
            return Err(ProtocolError::Unsorted(i + 1));
        }
    }
    if let Some(i) = events.iter().position(|&(g, d)| g > d) {
        return Err(ProtocolError::Config(format!("entry {i} is delivered before it is generated")));
    }
    let mut ages = Vec::with_capacity(horizon as usize);
    let mut kept = Vec::new();
    let mut next = events.iter().peekable();
    // Generation slot of the freshest held information, offset by `initial`.
    let mut freshest: i128 = -(initial as i128);
    for t in 0..horizon {
        while let Some(&&(g, d)) = next.peek() {
            if d > t {
                break;
            }
            next.next();
            if (g as i128) > freshest {
                freshest = g as i128;
                kept.push(AgeEvent { generation: g, delivery: d });
            }
        }
        ages.push((t as i128 - freshest) as u64);
    }
    Ok(AgeTrace { ages, events: kept })
}
