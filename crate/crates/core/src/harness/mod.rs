//! Seeded experiment runner behind the `mara` CLI.
//!
//! An [`ExperimentConfig`] names a subcommand, its parameters, a master seed
//! and a trial count. Trial `t` runs on its own RNG stream seeded with
//! `mix64(master, t)` (see [`crate::hash`] for the normative definition), and
//! rows are collected in trial order, so output depends only on the config,
//! never on the worker count. Sweep grid point `i` runs with master seed
//! `master ^ splitmix64(i) ^ splitmix64(0)`, which leaves point 0 on the
//! unmodified master seed.

pub mod config;
pub mod plot;
pub mod runners;
pub mod table;

use std::io;

use thiserror::Error;

pub use config::{ExperimentConfig, PartialConfig, SweepSpec};
pub use runners::{parameters, Params, SUBCOMMANDS};
pub use table::{read_provenance, Provenance, ResultTable, Value, VERSION};

use crate::amp::AmpError;
use crate::covariance::CovError;
use crate::downlink::DownlinkError;
use crate::hash::{mix64, splitmix64};
use crate::model::ModelError;
use crate::protocols::ProtocolError;
use crate::slicing::SlicingError;
use crate::tailstats::TailError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    pub fn config(key: &str, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &str, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn in_trial(self, trial: u64) -> Self {
        match self {
            e @ HarnessError::Trial { .. } => e,
            e => HarnessError::Trial {
                trial,
                source: Box::new(e),
            },
        }
    }

    /// 2 for configuration and input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::Parse { .. } | HarnessError::Io { .. } => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Trial { source, .. } => source.exit_code(),
        }
    }
}

fn params_error(msg: String) -> HarnessError {
    HarnessError::config("params", msg)
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        params_error(e.to_string())
    }
}

impl From<AmpError> for HarnessError {
    fn from(e: AmpError) -> Self {
        match e {
            AmpError::Config(_) | AmpError::Dimension(_) => params_error(e.to_string()),
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<CovError> for HarnessError {
    fn from(e: CovError) -> Self {
        match e {
            CovError::Config(_) | CovError::Dimension(_) => params_error(e.to_string()),
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<ProtocolError> for HarnessError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Downlink(d) => d.into(),
            e => params_error(e.to_string()),
        }
    }
}

impl From<DownlinkError> for HarnessError {
    fn from(e: DownlinkError) -> Self {
        match e {
            DownlinkError::SaltsExhausted(_) => HarnessError::Numerical(e.to_string()),
            e => params_error(e.to_string()),
        }
    }
}

impl From<SlicingError> for HarnessError {
    fn from(e: SlicingError) -> Self {
        params_error(e.to_string())
    }
}

impl From<TailError> for HarnessError {
    fn from(e: TailError) -> Self {
        match e {
            TailError::Degenerate(_) => HarnessError::Numerical(e.to_string()),
            e => params_error(e.to_string()),
        }
    }
}

pub fn trial_seed(master: u64, trial: u64) -> u64 {
    mix64(master, trial)
}

pub fn point_seed(master: u64, point: usize) -> u64 {
    master ^ splitmix64(point as u64) ^ splitmix64(0)
}

fn provenance(config: &ExperimentConfig) -> Provenance {
    Provenance {
        subcommand: config.subcommand.clone(),
        seed: config.seed,
        trials: config.trials,
        config_hash: config.hash(),
        canonical_config: config.canonical(),
        version: VERSION.to_string(),
    }
}

/// Runs the config's subcommand; a `[sweep]` section is ignored here.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let params = Params::new(&config.subcommand, &config.params)?;
    let mut body = runners::run(&config.subcommand, &params, config.seed, config.trials)?;
    if config.trials == 0 {
        body.rows.clear();
    }
    Ok(ResultTable {
        columns: body.columns,
        rows: body.rows,
        provenance: provenance(config),
    })
}

/// One row block per grid point, prefixed with a `sweep_<param>` column.
pub fn sweep(config: &ExperimentConfig, spec: &SweepSpec) -> Result<ResultTable, HarnessError> {
    spec.validate()?;
    let schema = parameters(&config.subcommand)
        .ok_or_else(|| HarnessError::config("subcommand", format!("unknown subcommand {:?}", config.subcommand)))?;
    if !schema.iter().any(|p| p.0 == spec.param) {
        return Err(HarnessError::config(
            "param",
            format!("{:?} is not a parameter of {}", spec.param, config.subcommand),
        ));
    }
    let mut columns = vec![format!("sweep_{}", spec.param)];
    let mut rows = Vec::new();
    for (i, &v) in spec.grid.iter().enumerate() {
        let mut point = config.clone();
        point.sweep = None;
        point.seed = point_seed(config.seed, i);
        point.params.insert(spec.param.clone(), v.to_string());
        let table = run_experiment(&point)?;
        if i == 0 {
            columns.extend(table.columns);
        }
        rows.extend(table.rows.into_iter().map(|r| {
            let mut row = vec![Value::Float(v)];
            row.extend(r);
            row
        }));
    }
    let mut full = config.clone();
    full.sweep = Some(spec.clone());
    Ok(ResultTable {
        columns,
        rows,
        provenance: provenance(&full),
    })
}

/// Runs the sweep if the config has one, else the plain experiment, on a
/// pool of `workers` threads (`None`: rayon's default).
pub fn execute(config: &ExperimentConfig, workers: Option<usize>) -> Result<ResultTable, HarnessError> {
    let go = || match &config.sweep {
        Some(spec) => sweep(config, spec),
        None => run_experiment(config),
    };
    match workers {
        None => go(),
        Some(0) => Err(HarnessError::config("workers", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Numerical(format!("cannot start worker pool: {e}")))?
            .install(go),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aloha(trials: u64) -> ExperimentConfig {
        ExperimentConfig::new("aloha", 11, trials)
            .with_param("load", 1.0)
            .with_param("slots", 2000)
    }

    #[test]
    fn zero_trials_gives_header_only() {
        let csv = run_experiment(&aloha(0)).unwrap().to_csv();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec!["trial,load,throughput"]);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let cfg = aloha(16).with_param("age", true);
        let a = execute(&cfg, Some(1)).unwrap().to_csv();
        let b = execute(&cfg, Some(8)).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_hash_survives_read_back() {
        let csv = run_experiment(&aloha(2)).unwrap().to_csv();
        let (prov, ok) = read_provenance(&csv).unwrap();
        assert!(ok);
        assert_eq!(prov.seed, 11);
        assert_eq!(ExperimentConfig::parse(&prov.canonical_config).unwrap(), aloha(2));
        let tampered = csv.replace("# | seed = 11", "# | seed = 12");
        assert!(!read_provenance(&tampered).unwrap().1);
    }

    #[test]
    fn unknown_parameter_is_named() {
        let err = run_experiment(&aloha(1).with_param("lod", 2)).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref key, .. } if key == "lod"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn single_point_sweep_matches_plain_run() {
        let cfg = aloha(3);
        let plain = run_experiment(&cfg).unwrap();
        let swept = sweep(&cfg, &SweepSpec { param: "load".into(), grid: vec![1.0] }).unwrap();
        assert_eq!(swept.columns[1..], plain.columns[..]);
        for (s, p) in swept.rows.iter().zip(&plain.rows) {
            assert_eq!(s[1..], p[..]);
        }
    }

    #[test]
    fn trial_errors_carry_the_index() {
        let e = HarnessError::Numerical("x".into()).in_trial(4);
        assert!(matches!(e, HarnessError::Trial { trial: 4, .. }));
        assert_eq!(e.exit_code(), 3);
    }
}
