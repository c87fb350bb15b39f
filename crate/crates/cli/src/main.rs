//! `mara`: seeded, reproducible experiments from the command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mara_core::harness::{self, plot, ExperimentConfig, HarnessError, PartialConfig, ResultTable, Value};

#[derive(Parser)]
#[command(name = "mara", version, about = "Massive-access and mixed-criticality connectivity laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config file (key = value, [params], [sweep]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count; overrides the config.
    #[arg(long)]
    trials: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write a gnuplot data + script pair next to the output.
    #[arg(long)]
    plot: bool,
    /// Set a parameter, e.g. `--set load=1.5`. Repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// List the subcommand's parameters and defaults, then exit.
    #[arg(long)]
    list_params: bool,
    /// Log progress and warnings to stderr.
    #[arg(long, short = 'v')]
    verbose: bool,
}

#[derive(Args, Clone)]
struct WithAge {
    #[command(flatten)]
    common: Common,
    /// Append age-of-information and age-of-loop summary columns.
    #[arg(long)]
    age: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecVerb {
    Encode,
    Decode,
    Size,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailVerb {
    Fit,
    RateSelect,
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceMode {
    Homa,
    Hnoma,
    Mmtc,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailKind {
    Powerlaw,
    Gpd,
}

#[derive(Subcommand)]
enum Command {
    /// Draw model instances and check the received energy.
    Gen(Common),
    /// AMP activity detection trials.
    Amp(Common),
    /// Covariance-based activity detection trials.
    Cov(Common),
    /// Slotted ALOHA throughput.
    Aloha(WithAge),
    /// Coded slotted ALOHA frames with SIC peeling.
    Codedsa(WithAge),
    /// Grant-based access rounds.
    GrantBased(WithAge),
    /// Grant-free access rounds.
    GrantFree(WithAge),
    /// Acknowledgment packets.
    Ack {
        verb: CodecVerb,
        #[command(flatten)]
        common: Common,
    },
    /// Feedback packets (one message per recipient).
    Feedback {
        verb: CodecVerb,
        #[command(flatten)]
        common: Common,
    },
    /// Collision-free slot schedules.
    Schedule {
        verb: CodecVerb,
        #[command(flatten)]
        common: Common,
    },
    /// Slicing tradeoff curves.
    Slice {
        #[arg(long, value_enum)]
        mode: Option<SliceMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Lower-tail fitting and rate selection.
    Tail {
        verb: TailVerb,
        #[arg(long, value_enum)]
        kind: Option<TailKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the [sweep] section of a config.
    Sweep(Common),
}

struct Invocation {
    name: Option<&'static str>,
    common: Common,
    params: Vec<(&'static str, String)>,
}

fn invocation(cmd: Command) -> Invocation {
    let verb = |v: CodecVerb| match v {
        CodecVerb::Encode => "encode",
        CodecVerb::Decode => "decode",
        CodecVerb::Size => "size",
    };
    let aged = |name, w: WithAge| Invocation {
        name: Some(name),
        params: if w.age { vec![("age", "true".into())] } else { Vec::new() },
        common: w.common,
    };
    let plain = |name, common| Invocation {
        name: Some(name),
        common,
        params: Vec::new(),
    };
    match cmd {
        Command::Gen(c) => plain("gen", c),
        Command::Amp(c) => plain("amp", c),
        Command::Cov(c) => plain("cov", c),
        Command::Aloha(w) => aged("aloha", w),
        Command::Codedsa(w) => aged("codedsa", w),
        Command::GrantBased(w) => aged("grant-based", w),
        Command::GrantFree(w) => aged("grant-free", w),
        Command::Ack { verb: v, common } => Invocation {
            name: Some("ack"),
            common,
            params: vec![("verb", verb(v).into())],
        },
        Command::Feedback { verb: v, common } => Invocation {
            name: Some("feedback"),
            common,
            params: vec![("verb", verb(v).into())],
        },
        Command::Schedule { verb: v, common } => Invocation {
            name: Some("schedule"),
            common,
            params: vec![("verb", verb(v).into())],
        },
        Command::Slice { mode, common } => Invocation {
            name: Some("slice"),
            common,
            params: mode
                .map(|m| {
                    let m = match m {
                        SliceMode::Homa => "homa",
                        SliceMode::Hnoma => "hnoma",
                        SliceMode::Mmtc => "mmtc",
                    };
                    vec![("mode", m.to_string())]
                })
                .unwrap_or_default(),
        },
        Command::Tail { verb, kind, common } => {
            let mut params = vec![(
                "verb",
                match verb {
                    TailVerb::Fit => "fit",
                    TailVerb::RateSelect => "rate-select",
                }
                .to_string(),
            )];
            if let Some(k) = kind {
                let k = match k {
                    TailKind::Powerlaw => "powerlaw",
                    TailKind::Gpd => "gpd",
                };
                params.push(("kind", k.to_string()));
            }
            Invocation {
                name: Some("tail"),
                common,
                params,
            }
        }
        Command::Sweep(c) => Invocation {
            name: None,
            common: c,
            params: Vec::new(),
        },
    }
}

fn build_config(inv: &Invocation) -> Result<ExperimentConfig, HarnessError> {
    let c = &inv.common;
    let mut partial = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(&path.display().to_string(), e))?;
            PartialConfig::parse(&text)?
        }
        None => PartialConfig::default(),
    };
    match (inv.name, partial.subcommand.as_deref()) {
        (Some(name), Some(found)) if name != found => {
            return Err(HarnessError::config(
                "subcommand",
                format!("config is for {found:?}, not {name:?}"),
            ))
        }
        (Some(name), _) => partial.subcommand = Some(name.to_string()),
        (None, None) => return Err(HarnessError::config("subcommand", "sweep needs a config naming a subcommand")),
        (None, Some(_)) => {}
    }
    if c.seed.is_some() {
        partial.seed = c.seed;
    }
    if c.trials.is_some() {
        partial.trials = c.trials;
    }
    for (k, v) in &inv.params {
        partial.params.insert(k.to_string(), v.clone());
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::config("set", format!("expected KEY=VALUE, got {kv:?}")))?;
        partial.params.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = partial.finish()?;
    if inv.name.is_none() && config.sweep.is_none() {
        return Err(HarnessError::config("sweep", "config has no [sweep] section"));
    }
    Ok(config)
}

/// First column against every other numeric column.
fn emit_plot(table: &ResultTable, out: Option<&Path>, subcommand: &str) -> Result<(), HarnessError> {
    let Some(x) = table.columns.first() else { return Ok(()) };
    let numeric: Vec<&str> = table
        .columns
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(i, _)| {
            table
                .rows
                .iter()
                .all(|r| matches!(r[*i], Value::Int(_) | Value::Float(_) | Value::Empty))
        })
        .map(|(_, c)| c.as_str())
        .collect();
    let stem = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(subcommand));
    let (dat, gp) = plot::write_gnuplot(table, x, &numeric, &stem)
        .map_err(|e| HarnessError::io(&stem.display().to_string(), e))?;
    eprintln!("wrote {} and {}", dat.display(), gp.display());
    Ok(())
}

fn run(inv: Invocation) -> Result<(), HarnessError> {
    if inv.common.list_params {
        let name = inv.name.ok_or_else(|| HarnessError::config("subcommand", "sweep has no parameters"))?;
        for (key, default, help) in harness::parameters(name).unwrap_or_default() {
            println!("{key:<20} {:<16} {help}", if default.is_empty() { "-" } else { default });
        }
        return Ok(());
    }
    let config = build_config(&inv)?;
    log::info!("running {} with seed {} and {} trials", config.subcommand, config.seed, config.trials);
    let table = harness::execute(&config, inv.common.workers)?;
    let csv = table.to_csv();
    match &inv.common.out {
        Some(path) => fs::write(path, csv).map_err(|e| HarnessError::io(&path.display().to_string(), e))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .map_err(|e| HarnessError::io("stdout", e))?;
        }
    }
    if inv.common.plot {
        emit_plot(&table, inv.common.out.as_deref(), &config.subcommand)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let inv = invocation(cli.command);
    let level = if inv.common.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Error
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
