//! Plain-text experiment configs.
//!
//! ```text
//! # comment
//! subcommand = aloha
//! seed = 42
//! trials = 20
//!
//! [params]
//! load = 1.0
//!
//! [sweep]
//! param = load
//! grid = 0.5, 1, 1.5
//! ```
//!
//! Top-level keys are `subcommand`, `seed` and `trials`; `[params]` holds the
//! subcommand parameters and `[sweep]` the optional sweep. Anything else is
//! rejected.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub grid: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.grid.is_empty() {
            return Err(HarnessError::config("grid", "sweep grid is empty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::config("grid", "sweep grid values must be finite"));
        }
        if let Some(i) = self.grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(HarnessError::config(
                "grid",
                format!("sweep grid must be strictly increasing (entry {} is not above entry {i})", i + 1),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub trials: u64,
    pub sweep: Option<SweepSpec>,
}

/// A config as read from text, before required keys are checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub subcommand: Option<String>,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub sweep_param: Option<String>,
    pub sweep_grid: Option<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Params,
    Sweep,
}

fn parse_u64(key: &str, v: &str) -> Result<u64, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::config(key, format!("expected an unsigned 64-bit integer, got {v:?}")))
}

pub fn parse_grid(v: &str) -> Result<Vec<f64>, HarnessError> {
    v.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| HarnessError::config("grid", format!("not a number: {t:?}")))
        })
        .collect()
}

impl PartialConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut out = PartialConfig::default();
        let mut section = Section::Top;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "params" => Section::Params,
                    "sweep" => Section::Sweep,
                    other => {
                        return Err(HarnessError::Parse {
                            line: line_no,
                            msg: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Parse {
                line: line_no,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(HarnessError::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            let dup = || HarnessError::config(key, format!("duplicate key on line {line_no}"));
            match (section, key) {
                (Section::Top, "subcommand") => {
                    if out.subcommand.replace(value.to_string()).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Top, "seed") => {
                    if out.seed.replace(parse_u64(key, value)?).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Top, "trials") => {
                    if out.trials.replace(parse_u64(key, value)?).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Top, _) => {
                    return Err(HarnessError::config(key, format!("unknown top-level key on line {line_no}")))
                }
                (Section::Params, _) => {
                    if out.params.insert(key.to_string(), value.to_string()).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Sweep, "param") => {
                    if out.sweep_param.replace(value.to_string()).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Sweep, "grid") => {
                    if out.sweep_grid.replace(parse_grid(value)?).is_some() {
                        return Err(dup());
                    }
                }
                (Section::Sweep, _) => {
                    return Err(HarnessError::config(key, format!("unknown sweep key on line {line_no}")))
                }
            }
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<ExperimentConfig, HarnessError> {
        let subcommand = self
            .subcommand
            .ok_or_else(|| HarnessError::config("subcommand", "missing"))?;
        let seed = self
            .seed
            .ok_or_else(|| HarnessError::config("seed", "every experiment must name a master seed"))?;
        let sweep = match (self.sweep_param, self.sweep_grid) {
            (None, None) => None,
            (Some(param), Some(grid)) => Some(SweepSpec { param, grid }),
            (None, Some(_)) => return Err(HarnessError::config("param", "sweep section needs a param")),
            (Some(_), None) => return Err(HarnessError::config("grid", "sweep section needs a grid")),
        };
        if let Some(s) = &sweep {
            s.validate()?;
        }
        Ok(ExperimentConfig {
            subcommand,
            params: self.params,
            seed,
            trials: self.trials.unwrap_or(1),
            sweep,
        })
    }
}

impl ExperimentConfig {
    pub fn new(subcommand: &str, seed: u64, trials: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            params: BTreeMap::new(),
            seed,
            trials,
            sweep: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        PartialConfig::parse(text)?.finish()
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// Canonical text: fixed key order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "subcommand = {}\nseed = {}\ntrials = {}\n",
            self.subcommand, self.seed, self.trials
        );
        if !self.params.is_empty() {
            s.push_str("[params]\n");
            for (k, v) in &self.params {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        if let Some(sw) = &self.sweep {
            let grid: Vec<String> = sw.grid.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("[sweep]\nparam = {}\ngrid = {}\n", sw.param, grid.join(", ")));
        }
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), lowercase hex.
    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }
}

pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
