//! Result tables and their CSV rendering.
//!
//! Every CSV starts with `#` provenance lines: code version, subcommand,
//! seed, trial count, the SHA-256 of the canonical config and the canonical
//! config itself (lines prefixed `# | `), so the hash can be recomputed from
//! the file alone.

use std::fmt::Write as _;

use super::config::config_hash;
use super::HarnessError;

pub const VERSION: &str = concat!("mara-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Empty, Into::into)
    }
}

/// Decimal rendering with 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn render_value(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format_sig9(*f),
        Value::Text(t) if t.contains([',', '"', '\n']) => format!("\"{}\"", t.replace('"', "\"\"")),
        Value::Text(t) => t.clone(),
        Value::Empty => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub subcommand: String,
    pub seed: u64,
    pub trials: u64,
    pub config_hash: String,
    pub canonical_config: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Provenance,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric cells of a column (`None` for text or empty cells).
    pub fn numeric_column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match r[i] {
                    Value::Int(v) => Some(v as f64),
                    Value::Float(v) => Some(v),
                    _ => None,
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let p = &self.provenance;
        let mut s = String::new();
        let _ = writeln!(s, "# {}", p.version);
        let _ = writeln!(s, "# subcommand={}", p.subcommand);
        let _ = writeln!(s, "# seed={}", p.seed);
        let _ = writeln!(s, "# trials={}", p.trials);
        let _ = writeln!(s, "# config_sha256={}", p.config_hash);
        for line in p.canonical_config.lines() {
            let _ = writeln!(s, "# | {line}");
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(render_value).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Provenance block of a rendered CSV, with the config hash recomputed from
/// the embedded canonical config.
pub fn read_provenance(csv: &str) -> Result<(Provenance, bool), HarnessError> {
    let mut version = None;
    let mut fields = std::collections::HashMap::new();
    let mut canonical = String::new();
    for line in csv.lines().take_while(|l| l.starts_with('#')) {
        let body = &line[1..];
        if let Some(cfg) = body.strip_prefix(" | ") {
            canonical.push_str(cfg);
            canonical.push('\n');
        } else if let Some((k, v)) = body.trim().split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        } else if version.is_none() {
            version = Some(body.trim().to_string());
        }
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| HarnessError::config(k, "missing from provenance block"))
    };
    let parse = |k: &str| -> Result<u64, HarnessError> {
        get(k)?
            .parse()
            .map_err(|_| HarnessError::config(k, "not an integer in provenance block"))
    };
    let prov = Provenance {
        subcommand: get("subcommand")?,
        seed: parse("seed")?,
        trials: parse("trials")?,
        config_hash: get("config_sha256")?,
        version: version.ok_or_else(|| HarnessError::config("version", "missing from provenance block"))?,
        canonical_config: canonical,
    };
    let ok = config_hash(&prov.canonical_config) == prov.config_hash;
    Ok((prov, ok))
}
