use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use factor_connect::ingest::{assemble_panel, read_long_csv, InputKind, VolatilityTransform};
use factor_connect_cli::{parse_document, run, validate_config, ConfigError, RunError};
use log::error;

/// Log level filter, e.g. `info` or `factor_connect=debug`.
const LOG_ENV: &str = "FACTOR_CONNECT_LOG";

#[derive(Parser)]
#[command(
    name = "factor-connect",
    version,
    about = "Rolling-window connectedness of a volatility panel"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Align a long-form input file and write it as a wide CSV panel.
    Assemble {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_kind, default_value = "ohlc")]
        kind: InputKind,
        #[arg(long, value_parser = parse_transform, default_value = "raw")]
        transform: VolatilityTransform,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration, or the manifest.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimate only the first n windows.
    #[arg(long, value_parser = WindowLimit::from_str, default_value = "all")]
    windows: WindowLimit,
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy)]
struct WindowLimit(Option<usize>);

impl FromStr for WindowLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(WindowLimit(None));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(WindowLimit(Some(n))),
            _ => Err(format!("expected a positive integer or 'all', got '{s}'")),
        }
    }
}

fn parse_kind(s: &str) -> Result<InputKind, String> {
    match s {
        "ohlc" => Ok(InputKind::Ohlc),
        "values" => Ok(InputKind::Values),
        _ => Err(format!("expected 'ohlc' or 'values', got '{s}'")),
    }
}

fn parse_transform(s: &str) -> Result<VolatilityTransform, String> {
    match s {
        "raw" => Ok(VolatilityTransform::Raw),
        "log" => Ok(VolatilityTransform::Log),
        _ => Err(format!("expected 'raw' or 'log', got '{s}'")),
    }
}

fn load_config(args: &RunArgs) -> Result<factor_connect_cli::RunConfig, ConfigError> {
    let mut doc = match &args.config {
        None => toml::Table::new(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            parse_document(&text, path.extension().is_some_and(|e| e == "json"))?
        }
    };
    if let Some(p) = &args.input {
        doc.insert("input".into(), toml::Value::String(p.display().to_string()));
    }
    if let Some(p) = &args.out {
        doc.insert(
            "output_dir".into(),
            toml::Value::String(p.display().to_string()),
        );
    }
    if let Some(seed) = args.seed {
        let seed = i64::try_from(seed).map_err(|_| ConfigError::Syntax {
            format: "seed",
            message: format!("{seed} exceeds {}", i64::MAX),
        })?;
        doc.insert("seed".into(), toml::Value::Integer(seed));
    }
    if args.no_bootstrap {
        let section = doc
            .entry("bootstrap")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = section {
            t.insert("enabled".into(), toml::Value::Boolean(false));
        }
    }
    validate_config(doc)
}

fn assemble(
    input: PathBuf,
    kind: InputKind,
    transform: VolatilityTransform,
    out: PathBuf,
) -> ExitCode {
    let result = File::open(&input)
        .map_err(factor_connect::Error::from)
        .and_then(|f| read_long_csv(std::io::BufReader::new(f), kind, transform))
        .and_then(|s| assemble_panel(&s))
        .and_then(|p| {
            let file = File::create(&out)?;
            p.write_wide_csv(BufWriter::new(file))
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    if let Some(Command::Assemble {
        input,
        kind,
        transform,
        out,
    }) = cli.command
    {
        return assemble(input, kind, transform, out);
    }
    let args = cli.run;
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            error!("cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg, args.windows.0) {
        Ok(summary) => {
            if summary.failed > 0 {
                log::warn!("{} of {} windows failed", summary.failed, summary.windows);
            }
            ExitCode::SUCCESS
        }
        Err(e @ RunError::AllFailed(_))
        | Err(e @ RunError::Estimation(_))
        | Err(e @ RunError::Input { .. }) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e @ RunError::Output { .. }) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
