//! Parameter schemas and per-subcommand runners.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use super::table::Value;
use super::HarnessError;
use crate::amp::{run_amp, AmpOptions, DenoiserSpec, MmsePrior};
use crate::covariance::{coordinate_descent, detect_support, CovOptions, SupportRule, SweepOrder};
use crate::downlink::{
    decode_ack_bitmap, decode_ack_enumerative, decode_feedback, decode_schedule, encode_ack_bitmap,
    encode_ack_enumerative, encode_ack_hashed, encode_feedback, encode_schedule, enumerative_reference_bits,
    hashed_reference_bits, query_ack_hashed, schedule_reference_bits, MetadataPacket,
};
use crate::hash::mix64;
use crate::model::{rng, write_matrix_dump, Activation, Instance, PreambleScheme, SystemConfig};
use crate::protocols::{
    age_metrics, coded_sa_trial, run_grant_based, run_grant_free, slotted_aloha_successes, AccessConfig,
    DegreeDistribution, Detector, GrantBasedConfig, GrantFreeConfig, LoopMode, Outcome, ProtocolReport, UpdateRecord,
    GRANT_BASED_LATENCY,
};
use crate::slicing::{mmtc_embb_sic, simulate_hnoma, simulate_homa, SharingMode, SlicingScenario};
use crate::tailstats::{fit_gpd_tail, fit_power_law_tail, select_rate, TailKind, TailModel};

pub struct ParamSpec {
    pub key: &'static str,
    /// Empty means unset.
    pub default: &'static str,
    pub help: &'static str,
}

const fn p(key: &'static str, default: &'static str, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, help }
}

const SYSTEM: [ParamSpec; 7] = [
    p("n", "200", "users N"),
    p("l", "40", "preamble length L"),
    p("m", "8", "antennas M"),
    p("k", "10", "active users K"),
    p("pa", "", "activity probability (overrides k)"),
    p("snr_db", "10", "SNR in dB; noise variance 10^(-snr/10)"),
    p("preambles", "iid", "iid | orthonormal"),
];

const AGE: [ParamSpec; 2] = [
    p("age", "false", "append age-of-information and age-of-loop columns"),
    p("downlink_delay", "1", "slots from uplink delivery to actuation"),
];

const ACCESS: [ParamSpec; 6] = [
    p("n", "200", "users N"),
    p("l", "40", "preamble length L"),
    p("m", "8", "antennas M"),
    p("k", "10", "active users per round"),
    p("snr_db", "10", "per-symbol SNR in dB"),
    p("alpha", "1", "soft-threshold AMP multiplier"),
];

fn schema(subcommand: &str) -> Option<Vec<&'static ParamSpec>> {
    static GEN: [ParamSpec; 1] = [p("dump", "", "write each trial's Y to <dump>-<trial>.bin")];
    static AMP: [ParamSpec; 4] = [
        p("denoiser", "mmse", "mmse | soft"),
        p("alpha", "1", "soft threshold multiplier"),
        p("max_iter", "50", "iteration cap"),
        p("timing", "false", "record wall-clock runtime_ms (otherwise 0)"),
    ];
    static COV: [ParamSpec; 5] = [
        p("rule", "absolute", "absolute | relative | topk"),
        p("threshold", "0.5", "threshold on gamma (absolute), on gamma/noise (relative)"),
        p("max_passes", "30", "coordinate sweeps"),
        p("tol", "1e-7", "relative likelihood gain stopping tolerance"),
        p("timing", "false", "record wall-clock runtime_ms (otherwise 0)"),
    ];
    static ALOHA: [ParamSpec; 2] = [p("load", "1", "offered load G"), p("slots", "10000", "slots per trial")];
    static CODEDSA: [ParamSpec; 3] = [
        p("users", "50", "users per frame"),
        p("slots", "100", "slots per frame"),
        p("degree", "2", "regular degree, or weights as d:w,d:w"),
    ];
    static GRANT_BASED: [ParamSpec; 4] = [
        p("detector", "cov", "cov | amp | pool"),
        p("pool", "54", "orthogonal preamble pool size"),
        p("rate", "1", "data rate in bits per symbol"),
        p("threshold", "0.5", "covariance support threshold"),
    ];
    static GRANT_FREE: [ParamSpec; 6] = [
        p("block_len", "100", "symbols per slot including the preamble"),
        p("payload_bits", "100", "payload bits"),
        p("frame_slots", "1", "slots per frame"),
        p("repetitions", "1", "replicas per user"),
        p("sic", "true", "cancel decoded users across slots"),
        p("split_power", "true", "divide replica power by the repetition count"),
    ];
    static ACK: [ParamSpec; 9] = [
        p("verb", "size", "encode | decode | size"),
        p("scheme", "hashed", "hashed | enum | bitmap"),
        p("universe", "10000", "identifier space N (accepts 2^x)"),
        p("k", "50", "acknowledged users"),
        p("epsilon", "1e-4", "false-positive budget (hashed)"),
        p("salt", "0", "initial hash salt"),
        p("ids", "", "explicit ids, comma separated (encode)"),
        p("packet", "", "packet hex (decode)"),
        p("query", "", "ids to test against a hashed packet (decode)"),
    ];
    static FEEDBACK: [ParamSpec; 10] = [
        p("verb", "size", "encode | decode | size"),
        p("universe", "10000", "identifier space N (accepts 2^x)"),
        p("k", "20", "recipients"),
        p("alphabet", "16", "message alphabet size"),
        p("epsilon", "0", "false-positive budget; 0 for an exact recipient set"),
        p("salt", "0", "initial hash salt"),
        p("packet", "", "packet hex (decode)"),
        p("id", "0", "own id (decode)"),
        p("transmitted", "true", "whether the decoding user transmitted"),
        p("messages", "", "explicit id:message pairs (encode)"),
    ];
    static SCHEDULE: [ParamSpec; 8] = [
        p("verb", "size", "encode | decode | size"),
        p("k", "16", "scheduled users"),
        p("slots", "0", "slots B (0 means B = K)"),
        p("bucket", "4", "keys per bucket"),
        p("salt", "0", "initial seed"),
        p("universe", "2^32", "identifier space for random ids"),
        p("packet", "", "packet hex (decode)"),
        p("id", "0", "own id (decode)"),
    ];
    static SLICE: [ParamSpec; 14] = [
        p("mode", "homa", "homa | hnoma | mmtc"),
        p("sharing", "homa", "sharing used by mode=mmtc"),
        p("channels", "8", "frequency channels F"),
        p("snr_broadband_db", "10", "broadband SNR"),
        p("snr_critical_db", "20", "critical-user SNR"),
        p("snr_massive_db", "10", "massive-user SNR"),
        p("power_budget", "1", "broadband long-term power budget"),
        p("broadband_outage", "0.1", "broadband outage target"),
        p("critical_rate", "0.2", "critical rate"),
        p("massive_load", "3", "mean massive users per slot"),
        p("massive_rate", "0.5", "massive rate"),
        p("broadband_rates", "0.5,1,2,3,4,5,6", "broadband rates for mode=mmtc"),
        p("massive_share", "0.5", "H-OMA resource share of massive users"),
        p("grid", "100", "points of the share / power sweep"),
    ];
    static TAIL: [ParamSpec; 11] = [
        p("verb", "fit", "fit | rate-select"),
        p("kind", "powerlaw", "powerlaw | gpd"),
        p("samples", "", "newline-delimited sample file"),
        p("synthetic", "rayleigh", "rayleigh | exponential, used without a sample file"),
        p("n_samples", "100000", "synthetic sample count"),
        p("q", "0.01", "power-law tail fraction"),
        p("threshold", "", "GPD threshold (default: threshold_fraction quantile)"),
        p("threshold_fraction", "0.05", "GPD threshold as a sample quantile"),
        p("target", "1e-4", "target outage (rate-select)"),
        p("snr_db", "10", "average SNR (rate-select)"),
        p("holdout", "0", "extra synthetic samples to measure outage (rate-select)"),
    ];
    let (base, own): (Vec<&'static ParamSpec>, &'static [ParamSpec]) = match subcommand {
        "gen" => (SYSTEM.iter().collect(), &GEN),
        "amp" => (SYSTEM.iter().collect(), &AMP),
        "cov" => (SYSTEM.iter().collect(), &COV),
        "aloha" => (AGE.iter().collect(), &ALOHA),
        "codedsa" => (AGE.iter().collect(), &CODEDSA),
        "grant-based" => (ACCESS.iter().chain(&AGE).collect(), &GRANT_BASED),
        "grant-free" => (ACCESS.iter().chain(&AGE).collect(), &GRANT_FREE),
        "ack" => (Vec::new(), &ACK),
        "feedback" => (Vec::new(), &FEEDBACK),
        "schedule" => (Vec::new(), &SCHEDULE),
        "slice" => (Vec::new(), &SLICE),
        "tail" => (Vec::new(), &TAIL),
        _ => return None,
    };
    Some(base.into_iter().chain(own).collect())
}

/// Documented parameters of a subcommand: `(key, default, help)`.
pub fn parameters(subcommand: &str) -> Option<Vec<(&'static str, &'static str, &'static str)>> {
    schema(subcommand).map(|s| s.into_iter().map(|p| (p.key, p.default, p.help)).collect())
}

pub const SUBCOMMANDS: [&str; 12] = [
    "gen",
    "amp",
    "cov",
    "aloha",
    "codedsa",
    "grant-based",
    "grant-free",
    "ack",
    "feedback",
    "schedule",
    "slice",
    "tail",
];

/// Parameters of one run, checked against the subcommand schema.
pub struct Params {
    values: BTreeMap<&'static str, String>,
}

impl Params {
    pub fn new(subcommand: &str, given: &BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let schema = schema(subcommand)
            .ok_or_else(|| HarnessError::config("subcommand", format!("unknown subcommand {subcommand:?}")))?;
        let mut values: BTreeMap<&'static str, String> =
            schema.iter().map(|p| (p.key, p.default.to_string())).collect();
        for (k, v) in given {
            let key = schema
                .iter()
                .find(|p| p.key == k)
                .ok_or_else(|| HarnessError::config(k, format!("not a parameter of {subcommand}")))?
                .key;
            values.insert(key, v.clone());
        }
        Ok(Self { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        let v = self.str(key);
        v.parse()
            .map_err(|_| HarnessError::config(key, format!("cannot parse {v:?} as {}", std::any::type_name::<T>())))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        if self.str(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, HarnessError> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(HarnessError::config(key, format!("expected true or false, got {other:?}"))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, HarnessError> {
        let v = self.str(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| HarnessError::config(key, format!("bad list entry {:?}", t.trim())))
            })
            .collect()
    }

    /// Integer that may be written `2^x`.
    pub fn universe(&self, key: &str) -> Result<u128, HarnessError> {
        let v = self.str(key).trim();
        let bad = || HarnessError::config(key, format!("expected an integer or 2^x, got {v:?}"));
        let n = match v.strip_prefix("2^") {
            Some(e) => {
                let e: u32 = e.parse().map_err(|_| bad())?;
                1u128.checked_shl(e).filter(|_| e < 128).ok_or_else(bad)?
            }
            None => v.parse().map_err(|_| bad())?,
        };
        if n == 0 || n > 1u128 << 64 {
            return Err(HarnessError::config(key, "identifier space must lie in [1, 2^64]"));
        }
        Ok(n)
    }

    fn choice<'a>(&self, key: &str, options: &[&'a str]) -> Result<&'a str, HarnessError> {
        let v = self.str(key);
        options
            .iter()
            .find(|o| **o == v)
            .copied()
            .ok_or_else(|| HarnessError::config(key, format!("expected one of {}, got {v:?}", options.join(" | "))))
    }
}

pub struct Body {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn body(columns: &[&str], rows: Vec<Vec<Value>>) -> Body {
    Body {
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows,
    }
}

/// Per-trial results in trial order; the lowest failing trial wins.
fn par_trials<T: Send, F>(trials: u64, seed: u64, f: F) -> Result<Vec<T>, HarnessError>
where
    F: Fn(u64, u64) -> Result<T, HarnessError> + Sync,
{
    let results: Vec<Result<T, HarnessError>> = (0..trials)
        .into_par_iter()
        .map(|t| f(t, super::trial_seed(seed, t)).map_err(|e| e.in_trial(t)))
        .collect();
    results.into_iter().collect()
}

pub fn run(subcommand: &str, params: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    match subcommand {
        "gen" => run_gen(params, seed, trials),
        "amp" => run_amp_trials(params, seed, trials),
        "cov" => run_cov_trials(params, seed, trials),
        "aloha" => run_aloha(params, seed, trials),
        "codedsa" => run_codedsa(params, seed, trials),
        "grant-based" => run_access(params, seed, trials, true),
        "grant-free" => run_access(params, seed, trials, false),
        "ack" => run_ack(params, seed, trials),
        "feedback" => run_feedback(params, seed, trials),
        "schedule" => run_schedule(params, seed, trials),
        "slice" => run_slice(params, seed, trials),
        "tail" => run_tail(params, seed, trials),
        other => Err(HarnessError::config("subcommand", format!("unknown subcommand {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Activity detection

fn noise_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn system_config(p: &Params) -> Result<SystemConfig, HarnessError> {
    let mut cfg = SystemConfig::new(
        p.get("n")?,
        p.get("l")?,
        p.get("m")?,
        p.get("k")?,
        noise_from_snr(p.get("snr_db")?),
    );
    if let Some(pa) = p.opt::<f64>("pa")? {
        cfg.activation = Activation::Probability(pa);
    }
    cfg.preamble_scheme = match p.choice("preambles", &["iid", "orthonormal"])? {
        "iid" => PreambleScheme::IidGaussian,
        _ => PreambleScheme::Orthonormal,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn support_errors(truth: &[bool], est: &[bool]) -> (usize, usize) {
    truth.iter().zip(est).fold((0, 0), |(md, fa), (&t, &e)| {
        (md + (t && !e) as usize, fa + (!t && e) as usize)
    })
}

fn elapsed_ms(start: Instant, timing: bool) -> f64 {
    if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn run_gen(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let cfg = system_config(p)?;
    let dump = p.str("dump").to_string();
    let rows = par_trials(trials, seed, |t, s| {
        let inst = Instance::generate(&cfg, s)?;
        if !dump.is_empty() {
            let path = format!("{dump}-{t}.bin");
            let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
            write_matrix_dump(std::io::BufWriter::new(file), &inst.received.y).map_err(|e| HarnessError::io(&path, e))?;
        }
        let energy: f64 = inst.received.y.iter().map(|v| v.norm_sqr()).sum();
        let m = cfg.n_antennas as f64;
        let signal: f64 = inst
            .activity
            .gamma()
            .iter()
            .enumerate()
            .map(|(k, g)| g * inst.book.matrix.column(k).norm_squared())
            .sum();
        let expected = m * signal + (cfg.preamble_len as f64) * m * cfg.noise_var;
        Ok(vec![
            t.into(),
            inst.activity.n_active().into(),
            energy.into(),
            expected.into(),
        ])
    })?;
    Ok(body(&["trial", "active", "received_energy", "expected_energy"], rows))
}

fn run_amp_trials(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let cfg = system_config(p)?;
    let spec = match p.choice("denoiser", &["mmse", "soft"])? {
        "mmse" => DenoiserSpec::Mmse(MmsePrior::from_config(&cfg)),
        _ => DenoiserSpec::soft_for_antennas(p.get("alpha")?, cfg.n_antennas),
    };
    spec.validate()?;
    let opts = AmpOptions {
        max_iter: p.get("max_iter")?,
        ..AmpOptions::default()
    };
    let timing = p.flag("timing")?;
    let rows = par_trials(trials, seed, |t, s| {
        let inst = Instance::generate(&cfg, s)?;
        let start = Instant::now();
        let r = run_amp(&inst.received.y, &inst.book.matrix, &spec, &opts)?;
        let ms = elapsed_ms(start, timing);
        let (md, fa) = support_errors(&inst.activity.active, &r.support);
        let x = inst.x_true();
        let mse = (&r.x_hat - &x).norm_squared() / (x.nrows() * x.ncols()) as f64;
        Ok(vec![t.into(), r.iterations.into(), md.into(), fa.into(), mse.into(), ms.into()])
    })?;
    Ok(body(
        &["trial", "iterations", "missed_detections", "false_alarms", "mse", "runtime_ms"],
        rows,
    ))
}

const STREAM_COV_ORDER: u64 = 0x434f_564f_5244;

fn run_cov_trials(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let cfg = system_config(p)?;
    let threshold: f64 = p.get("threshold")?;
    let rule = match p.choice("rule", &["absolute", "relative", "topk"])? {
        "absolute" => SupportRule::Absolute(threshold),
        "relative" => SupportRule::RelativeToNoise {
            rho: threshold,
            sigma2: cfg.noise_var,
        },
        _ => match cfg.activation {
            Activation::Fixed(k) => SupportRule::TopK(k),
            Activation::Probability(_) => {
                return Err(HarnessError::config("rule", "topk needs a fixed k, not pa"));
            }
        },
    };
    let (max_passes, tol, timing) = (p.get("max_passes")?, p.get("tol")?, p.flag("timing")?);
    let rows = par_trials(trials, seed, |t, s| {
        let inst = Instance::generate(&cfg, s)?;
        let opts = CovOptions {
            max_passes,
            tol,
            order: SweepOrder::Random {
                seed: mix64(s, STREAM_COV_ORDER),
            },
            ..CovOptions::default()
        };
        let start = Instant::now();
        let run = coordinate_descent(&inst.received.y, &inst.book.matrix, cfg.noise_var, &opts)?;
        let ms = elapsed_ms(start, timing);
        let est = detect_support(&run.estimate.gamma, rule);
        let (md, fa) = support_errors(&inst.activity.active, &est.active);
        Ok(vec![
            t.into(),
            run.estimate.passes.into(),
            run.estimate.loglik.into(),
            md.into(),
            fa.into(),
            ms.into(),
        ])
    })?;
    Ok(body(
        &["trial", "passes", "loglik", "missed_detections", "false_alarms", "runtime_ms"],
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Random access

const AGE_COLUMNS: [&str; 4] = ["mean_aoi", "peak_aoi", "mean_aol", "peak_aol"];

fn with_age_columns(mut columns: Vec<&'static str>, age: bool) -> Vec<&'static str> {
    if age {
        columns.extend(AGE_COLUMNS);
    }
    columns
}

/// Mean and peak of the AoI and AoL traces over `horizon` slots.
fn age_summary(records: &[UpdateRecord], horizon: u64) -> Result<[Value; 4], HarnessError> {
    let aoi = age_metrics(records, LoopMode::Uplink, horizon, 0)?;
    let aol = age_metrics(records, LoopMode::UplinkDownlink, horizon, 0)?;
    Ok([aoi.mean().into(), aoi.peak().into(), aol.mean().into(), aol.peak().into()])
}

/// Running age summaries over consecutive rounds of `round_len` slots. Round
/// `t` generates one update at its start; it reaches the receiver at the
/// earliest delivery of the round, if any.
fn round_ages(first_delivery: &[Option<u32>], round_len: u64, delay: u64) -> Result<Vec<[Value; 4]>, HarnessError> {
    let mut records: Vec<UpdateRecord> = first_delivery
        .iter()
        .enumerate()
        .filter_map(|(t, d)| {
            d.map(|lat| {
                let generation = t as u64 * round_len;
                let delivery = generation + lat as u64;
                UpdateRecord {
                    generation,
                    uplink_delivery: delivery,
                    actuation: Some(delivery + delay),
                }
            })
        })
        .collect();
    records.sort_by_key(|r| r.uplink_delivery);
    let horizon = first_delivery.len() as u64 * round_len;
    let aoi = age_metrics(&records, LoopMode::Uplink, horizon, 0)?;
    let aol = age_metrics(&records, LoopMode::UplinkDownlink, horizon, 0)?;
    let running = |ages: &[u64]| -> Vec<(f64, u64)> {
        let (mut sum, mut peak) = (0u64, 0u64);
        ages.chunks(round_len as usize)
            .map(|c| {
                sum += c.iter().sum::<u64>();
                peak = peak.max(c.iter().copied().max().unwrap_or(0));
                (sum, peak)
            })
            .enumerate()
            .map(|(i, (s, pk))| (s as f64 / ((i as u64 + 1) * round_len) as f64, pk))
            .collect()
    };
    Ok(running(&aoi.ages)
        .into_iter()
        .zip(running(&aol.ages))
        .map(|((ma, pa), (ml, pl))| [ma.into(), pa.into(), ml.into(), pl.into()])
        .collect())
}

fn run_aloha(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let load: f64 = p.get("load")?;
    let slots: u64 = p.get("slots")?;
    let (age, delay): (bool, u64) = (p.flag("age")?, p.get("downlink_delay")?);
    let rows = par_trials(trials, seed, |t, s| {
        let hits = slotted_aloha_successes(load, slots, s)?;
        let mut row = vec![t.into(), load.into(), (hits.len() as f64 / slots as f64).into()];
        if age {
            let records: Vec<UpdateRecord> = hits
                .iter()
                .map(|&h| UpdateRecord {
                    generation: h,
                    uplink_delivery: h + 1,
                    actuation: Some(h + 1 + delay),
                })
                .collect();
            row.extend(age_summary(&records, slots)?);
        }
        Ok(row)
    })?;
    Ok(body(&with_age_columns(vec!["trial", "load", "throughput"], age), rows))
}

fn parse_degrees(spec: &str) -> Result<DegreeDistribution, HarnessError> {
    let bad = || HarnessError::config("degree", format!("expected d or d:w,d:w, got {spec:?}"));
    if let Ok(d) = spec.trim().parse::<usize>() {
        return Ok(DegreeDistribution::regular(d));
    }
    let weights = spec
        .split(',')
        .map(|pair| {
            let (d, w) = pair.split_once(':').ok_or_else(bad)?;
            Ok((d.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
        })
        .collect::<Result<Vec<(usize, f64)>, HarnessError>>()?;
    Ok(DegreeDistribution { weights })
}

fn first_delivery(report: &ProtocolReport) -> Option<u32> {
    report
        .outcomes
        .iter()
        .filter(|o| o.outcome == Outcome::Delivered)
        .filter_map(|o| o.latency)
        .min()
}

fn run_codedsa(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let users: usize = p.get("users")?;
    let slots: usize = p.get("slots")?;
    let degrees = parse_degrees(p.str("degree"))?;
    degrees.validate(slots)?;
    let (age, delay): (bool, u64) = (p.flag("age")?, p.get("downlink_delay")?);
    let reports = par_trials(trials, seed, |_, s| Ok(coded_sa_trial(users, slots, &degrees, s)?))?;
    let ages = if age {
        let first: Vec<Option<u32>> = reports.iter().map(first_delivery).collect();
        round_ages(&first, slots as u64, delay)?
    } else {
        Vec::new()
    };
    let rows = reports
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let decoded = r.counts().delivered;
            let mut row: Vec<Value> = vec![
                t.into(),
                r.offered_load.into(),
                decoded.into(),
                (decoded as f64 / slots as f64).into(),
                (1.0 - r.delivered_fraction()).into(),
            ];
            if let Some(a) = ages.get(t) {
                row.extend(a.iter().cloned());
            }
            row
        })
        .collect();
    Ok(body(
        &with_age_columns(vec!["trial", "load", "decoded", "throughput", "packet_loss"], age),
        rows,
    ))
}

fn access_config(p: &Params) -> Result<AccessConfig, HarnessError> {
    Ok(AccessConfig {
        n_users: p.get("n")?,
        preamble_len: p.get("l")?,
        n_antennas: p.get("m")?,
        active: p.get("k")?,
        snr_db: p.get("snr_db")?,
        large_scale: crate::model::LargeScale::Unit,
    })
}

fn run_access(p: &Params, seed: u64, trials: u64, grant_based: bool) -> Result<Body, HarnessError> {
    let access = access_config(p)?;
    let alpha: f64 = p.get("alpha")?;
    let (age, delay): (bool, u64) = (p.flag("age")?, p.get("downlink_delay")?);
    let m = access.n_antennas;
    let (reports, round_len) = if grant_based {
        let detector = match p.choice("detector", &["cov", "amp", "pool"])? {
            "cov" => Detector::Covariance(SupportRule::Absolute(p.get("threshold")?)),
            "amp" => Detector::Amp(DenoiserSpec::soft_for_antennas(alpha, m)),
            _ => Detector::OrthogonalPool { pool: p.get("pool")? },
        };
        let cfg = GrantBasedConfig {
            access,
            detector,
            rate: p.get("rate")?,
        };
        let reports = par_trials(trials, seed, |_, s| Ok(run_grant_based(&cfg, s)?))?;
        (reports, GRANT_BASED_LATENCY as u64)
    } else {
        let mut cfg = GrantFreeConfig::new(access, p.get("block_len")?, p.get("payload_bits")?);
        cfg.frame_slots = p.get("frame_slots")?;
        cfg.repetitions = p.get("repetitions")?;
        cfg.sic = p.flag("sic")?;
        cfg.split_power = p.flag("split_power")?;
        cfg.denoiser = DenoiserSpec::soft_for_antennas(alpha, m);
        let slots = cfg.frame_slots.max(1) as u64;
        let reports = par_trials(trials, seed, |_, s| Ok(run_grant_free(&cfg, s)?))?;
        (reports, slots)
    };
    let ages = if age {
        let first: Vec<Option<u32>> = reports.iter().map(first_delivery).collect();
        round_ages(&first, round_len, delay)?
    } else {
        Vec::new()
    };
    let rows = reports
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let c = r.counts();
            let mut row: Vec<Value> = vec![
                t.into(),
                c.total().into(),
                c.delivered.into(),
                c.collided.into(),
                c.undetected.into(),
                c.decode_failed.into(),
                r.mean_latency().into(),
                r.energy.into(),
            ];
            if let Some(a) = ages.get(t) {
                row.extend(a.iter().cloned());
            }
            row
        })
        .collect();
    Ok(body(
        &with_age_columns(
            vec![
                "trial",
                "active",
                "delivered",
                "collided",
                "undetected",
                "decode_failed",
                "mean_latency",
                "energy",
            ],
            age,
        ),
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Downlink codecs

/// `k` distinct sorted ids below `universe`.
pub fn random_ids(universe: u128, k: usize, seed: u64) -> Result<Vec<u64>, HarnessError> {
    if k as u128 > universe {
        return Err(HarnessError::config("k", format!("cannot draw {k} ids from a space of {universe}")));
    }
    let mut r = rng(seed);
    let mut set = BTreeSet::new();
    while set.len() < k {
        let id = if universe == 1u128 << 64 {
            r.random::<u64>()
        } else {
            r.random_range(0..universe as u64)
        };
        set.insert(id);
    }
    Ok(set.into_iter().collect())
}

fn packet_param(p: &Params) -> Result<MetadataPacket, HarnessError> {
    let text = p.str("packet");
    if text.is_empty() {
        return Err(HarnessError::config("packet", "decode needs a packet"));
    }
    let bytes = hex::decode(text.trim()).map_err(|e| HarnessError::config("packet", e.to_string()))?;
    Ok(MetadataPacket::from_bytes(&bytes)?)
}

fn verb<'a>(p: &Params, options: &[&'a str]) -> Result<&'a str, HarnessError> {
    p.choice("verb", options)
}

fn run_ack(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let scheme = p.choice("scheme", &["hashed", "enum", "bitmap"])?;
    let universe = p.universe("universe")?;
    let eps: f64 = p.get("epsilon")?;
    let salt: u32 = p.get("salt")?;
    let encode = |ids: &[u64]| -> Result<MetadataPacket, HarnessError> {
        Ok(match scheme {
            "hashed" => encode_ack_hashed(ids, eps, salt)?,
            "enum" => encode_ack_enumerative(universe, ids)?,
            _ => {
                let n = u32::try_from(universe)
                    .map_err(|_| HarnessError::config("universe", "bitmap needs N < 2^32"))?;
                encode_ack_bitmap(n, ids)?
            }
        })
    };
    match verb(p, &["encode", "decode", "size"])? {
        "decode" => {
            let packet = packet_param(p)?;
            if scheme == "hashed" {
                let rows = p
                    .list::<u64>("query")?
                    .into_iter()
                    .map(|id| Ok(vec![id.into(), query_ack_hashed(&packet, id)?.into()]))
                    .collect::<Result<_, HarnessError>>()?;
                return Ok(body(&["id", "acknowledged"], rows));
            }
            let ids = if scheme == "enum" {
                decode_ack_enumerative(&packet, universe)?
            } else {
                decode_ack_bitmap(&packet)?
            };
            let rows = ids.into_iter().enumerate().map(|(i, id)| vec![i.into(), id.into()]).collect();
            Ok(body(&["index", "id"], rows))
        }
        v => {
            let k: usize = p.get("k")?;
            let explicit: Vec<u64> = p.list("ids")?;
            let size = v == "size";
            let rows = par_trials(trials, seed, |t, s| {
                let ids = if explicit.is_empty() {
                    random_ids(universe, k, s)?
                } else {
                    let mut v = explicit.clone();
                    v.sort_unstable();
                    v
                };
                let packet = encode(&ids)?;
                Ok(if size {
                    let reference = match scheme {
                        "hashed" => hashed_reference_bits(ids.len(), eps) as f64,
                        "enum" => enumerative_reference_bits(universe, ids.len() as u64),
                        _ => universe as f64,
                    };
                    vec![t.into(), ids.len().into(), reference.into(), packet.total_bits().into()]
                } else {
                    vec![
                        t.into(),
                        ids.len().into(),
                        (packet.header.len() * 8 + 8).into(),
                        packet.payload_bits.into(),
                        packet.total_bits().into(),
                        hex::encode(packet.to_bytes()).into(),
                    ]
                })
            })?;
            Ok(if size {
                body(&["trial", "k", "reference_bits", "actual_bits"], rows)
            } else {
                body(&["trial", "k", "header_bits", "payload_bits", "total_bits", "packet"], rows)
            })
        }
    }
}

fn run_feedback(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let universe = p.universe("universe")?;
    let eps: f64 = p.get("epsilon")?;
    let eps = (eps > 0.0).then_some(eps);
    let alphabet: u64 = p.get("alphabet")?;
    let salt: u32 = p.get("salt")?;
    match verb(p, &["encode", "decode", "size"])? {
        "decode" => {
            let packet = packet_param(p)?;
            let id: u64 = p.get("id")?;
            let msg = decode_feedback(&packet, universe, id, p.flag("transmitted")?)?;
            Ok(body(&["id", "message"], vec![vec![id.into(), msg.into()]]))
        }
        v => {
            let k: usize = p.get("k")?;
            let explicit: Vec<String> = p.list("messages")?;
            let mut explicit_msgs = explicit
                .iter()
                .map(|pair| {
                    let bad = || HarnessError::config("messages", format!("expected id:message, got {pair:?}"));
                    let (a, b) = pair.split_once(':').ok_or_else(bad)?;
                    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
                })
                .collect::<Result<Vec<(u64, u64)>, HarnessError>>()?;
            explicit_msgs.sort_unstable();
            let size = v == "size";
            let rows = par_trials(trials, seed, |t, s| {
                let messages = if explicit_msgs.is_empty() {
                    let ids = random_ids(universe, k, s)?;
                    let mut r = rng(mix64(s, 0x4d53_47));
                    ids.into_iter().map(|id| (id, r.random_range(0..alphabet.max(1)))).collect()
                } else {
                    explicit_msgs.clone()
                };
                let packet = encode_feedback(&messages, alphabet, universe, eps, salt)?;
                let kk = messages.len();
                Ok(if size {
                    let ids_ref = match eps {
                        Some(e) => hashed_reference_bits(kk, e) as f64,
                        None => enumerative_reference_bits(universe, kk as u64),
                    };
                    let reference = ids_ref + kk as f64 * (alphabet as f64).log2();
                    vec![t.into(), kk.into(), reference.into(), packet.total_bits().into()]
                } else {
                    vec![
                        t.into(),
                        kk.into(),
                        packet.total_bits().into(),
                        hex::encode(packet.to_bytes()).into(),
                    ]
                })
            })?;
            Ok(if size {
                body(&["trial", "k", "reference_bits", "actual_bits"], rows)
            } else {
                body(&["trial", "k", "total_bits", "packet"], rows)
            })
        }
    }
}

fn run_schedule(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let bucket: u8 = p.get("bucket")?;
    let salt: u32 = p.get("salt")?;
    match verb(p, &["encode", "decode", "size"])? {
        "decode" => {
            let packet = packet_param(p)?;
            let id: u64 = p.get("id")?;
            let slot = decode_schedule(&packet, id)?;
            Ok(body(&["id", "slot"], vec![vec![id.into(), (slot as u64).into()]]))
        }
        v => {
            let k: usize = p.get("k")?;
            let slots: u16 = match p.get::<u16>("slots")? {
                0 => u16::try_from(k).map_err(|_| HarnessError::config("k", "K must fit in 16 bits"))?,
                b => b,
            };
            let universe = p.universe("universe")?;
            let size = v == "size";
            let rows = par_trials(trials, seed, |t, s| {
                let ids = random_ids(universe, k, s)?;
                let packet = encode_schedule(&ids, slots, bucket, salt)?;
                Ok(if size {
                    vec![
                        t.into(),
                        k.into(),
                        schedule_reference_bits(k).into(),
                        packet.payload_bits.into(),
                        packet.total_bits().into(),
                    ]
                } else {
                    vec![
                        t.into(),
                        k.into(),
                        (slots as u64).into(),
                        packet.payload_bits.into(),
                        packet.total_bits().into(),
                        hex::encode(packet.to_bytes()).into(),
                    ]
                })
            })?;
            Ok(if size {
                body(&["trial", "k", "reference_bits", "payload_bits", "actual_bits"], rows)
            } else {
                body(&["trial", "k", "slots", "payload_bits", "total_bits", "packet"], rows)
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Slicing

fn sharing(p: &Params, key: &str) -> Result<SharingMode, HarnessError> {
    Ok(match p.choice(key, &["homa", "hnoma"])? {
        "homa" => SharingMode::Homa,
        _ => SharingMode::Hnoma,
    })
}

pub fn slicing_scenario(p: &Params, seed: u64, trials: u64) -> Result<SlicingScenario, HarnessError> {
    let s = SlicingScenario {
        channels: p.get("channels")?,
        snr_broadband_db: p.get("snr_broadband_db")?,
        snr_critical_db: p.get("snr_critical_db")?,
        snr_massive_db: p.get("snr_massive_db")?,
        power_budget: p.get("power_budget")?,
        broadband_outage_target: p.get("broadband_outage")?,
        critical_rate: p.get("critical_rate")?,
        massive_load: p.get("massive_load")?,
        massive_rate: p.get("massive_rate")?,
        broadband_rates: p.list("broadband_rates")?,
        massive_share: p.get("massive_share")?,
        mode: sharing(p, "sharing")?,
        grid: p.get("grid")?,
        trials: usize::try_from(trials).map_err(|_| HarnessError::config("trials", "too many trials"))?,
        seed,
    };
    s.validate()?;
    Ok(s)
}

fn run_slice(p: &Params, seed: u64, trials: u64) -> Result<Body, HarnessError> {
    let mode = p.choice("mode", &["homa", "hnoma", "mmtc"])?;
    if trials == 0 {
        let columns: &[&str] = match mode {
            "homa" => &["critical_share", "broadband_rate", "broadband_outage", "critical_outage"],
            "hnoma" => &["broadband_power", "broadband_rate", "broadband_outage", "critical_outage"],
            _ => &["broadband_rate", "broadband_outage", "decoded_massive_users"],
        };
        return Ok(body(columns, Vec::new()));
    }
    let s = slicing_scenario(p, seed, trials)?;
    let curve = match mode {
        "homa" => simulate_homa(&s)?,
        "hnoma" => simulate_hnoma(&s)?,
        _ => mmtc_embb_sic(&s)?,
    };
    // The mMTC sweep runs over the broadband rate itself.
    let with_param = curve.param_name != "broadband_rate";
    let rows = curve
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.broadband_rate.into(), r.broadband_outage.into(), r.metric.into()];
            if with_param {
                row.insert(0, r.param.into());
            }
            row
        })
        .collect();
    let mut columns = vec!["broadband_rate", "broadband_outage", curve.metric_name];
    if with_param {
        columns.insert(0, curve.param_name);
    }
    Ok(body(&columns, rows))
}

// ---------------------------------------------------------------------------
// Tail statistics

/// Newline-delimited decimal samples; blank lines and `#` comments are skipped.
pub fn read_samples(path: &str) -> Result<Vec<f64>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::config("samples", format!("line {}: not a number: {:?}", i + 1, l.trim())))
        })
        .collect()
}

const STREAM_HOLDOUT: u64 = 0x484f_4c44;

fn synthetic_gains(kind: &str, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    match kind {
        // |h|² of a unit-power Rayleigh channel.
        "rayleigh" | "exponential" => (0..n).map(|_| Exp1.sample(&mut r)).collect(),
        _ => unreachable!("checked by the caller"),
    }
}

fn fit_model(p: &Params, samples: &[f64]) -> Result<TailModel, HarnessError> {
    Ok(match p.choice("kind", &["powerlaw", "gpd"])? {
        "powerlaw" => fit_power_law_tail(samples, p.get("q")?)?,
        _ => {
            let u = match p.opt::<f64>("threshold")? {
                Some(u) => u,
                None => {
                    let frac: f64 = p.get("threshold_fraction")?;
                    if !(frac > 0.0 && frac < 1.0) {
                        return Err(HarnessError::config("threshold_fraction", "must lie in (0, 1)"));
                    }
                    let mut v = samples.to_vec();
                    let idx = ((frac * v.len() as f64) as usize).min(v.len().saturating_sub(1));
                    if v.is_empty() {
                        return Err(HarnessError::config("samples", "no samples"));
                    }
                    *v.select_nth_unstable_by(idx, f64::total_cmp).1
                }
            };
            fit_gpd_tail(samples, u)?
        }
    })
}

fn run_tail(p: &Params, seed: u64, _trials: u64) -> Result<Body, HarnessError> {
    let synthetic = p.choice("synthetic", &["rayleigh", "exponential"])?;
    let samples = match p.str("samples") {
        "" => synthetic_gains(synthetic, p.get("n_samples")?, seed),
        path => read_samples(path)?,
    };
    let model = fit_model(p, &samples)?;
    match verb(p, &["fit", "rate-select"])? {
        "fit" => {
            let (kind, offset, exponent, threshold, shape, scale) = match model.kind {
                TailKind::PowerLaw { offset, exponent } => ("powerlaw", Some(offset), Some(exponent), None, None, None),
                TailKind::Gpd { threshold, shape, scale } => ("gpd", None, None, Some(threshold), Some(shape), Some(scale)),
            };
            let row = vec![
                kind.into(),
                offset.into(),
                exponent.into(),
                threshold.into(),
                shape.into(),
                scale.into(),
                model.tail_fraction.into(),
                model.n_samples.into(),
                model.n_tail.into(),
                model.goodness.into(),
            ];
            Ok(body(
                &[
                    "kind",
                    "offset",
                    "exponent",
                    "threshold",
                    "shape",
                    "scale",
                    "tail_fraction",
                    "n_samples",
                    "n_tail",
                    "goodness",
                ],
                vec![row],
            ))
        }
        _ => {
            let target: f64 = p.get("target")?;
            let snr_db: f64 = p.get("snr_db")?;
            let sel = select_rate(&model, target, snr_db)?;
            let holdout: usize = p.get("holdout")?;
            let held_out_outage = (holdout > 0).then(|| {
                let fresh = synthetic_gains(synthetic, holdout, mix64(seed, STREAM_HOLDOUT));
                fresh.iter().filter(|&&x| x < sel.quantile).count() as f64 / holdout as f64
            });
            Ok(body(
                &["target", "snr_db", "quantile", "rate", "extrapolated", "holdout_outage"],
                vec![vec![
                    target.into(),
                    snr_db.into(),
                    sel.quantile.into(),
                    sel.rate.into(),
                    sel.extrapolated.into(),
                    held_out_outage.into(),
                ]],
            ))
        }
    }
}
