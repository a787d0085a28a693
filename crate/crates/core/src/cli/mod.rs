//! Command line front end: config parsing, orchestration and output files.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

pub use config::{
    parse_config, parse_config_str, ConvergeConfig, CustomModel, ExperimentConfig, ExtendedModel, Format, Integrator,
    LimitConfig, ModelConfig, MomentPoint, MomentsConfig, OutputConfig, PureModel, RunConfig,
};
pub use output::{csv_text, fmt_f64, sha256_hex, svg_plot, FileEntry, Manifest, OutputWriter};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "HERDING_MARKET_OUT";

/// Config used by `converge` and `figure` when `--config` is absent.
pub const DEFAULT_PRESET: &str = include_str!("../../../../configs/converge.toml");

#[derive(Debug, Parser)]
#[command(name = "herding-market", version, about = "Herding market simulator and large-market limits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory; falls back to the config, then $HERDING_MARKET_OUT, then `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for ensembles; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Comma-separated list of csv, svg.
    #[arg(long, global = true, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Event-level trajectories of the finite market.
    Simulate,
    /// Large-market ODE or SDE paths.
    Limit,
    /// Closed-form stationary opinion law (pure model).
    Stationary,
    /// Finite-versus-limit sup distances and their rate.
    Converge,
    /// Data behind one of the reference figures (1 to 8).
    Figure { id: u32 },
    /// Coefficients against single-event Monte Carlo moments.
    Moments,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Limit => "limit",
            Command::Stationary => "stationary",
            Command::Converge => "converge",
            Command::Figure { .. } => "figure",
            Command::Moments => "moments",
        }
    }

    fn arguments(&self) -> Vec<String> {
        match self {
            Command::Figure { id } => vec!["figure".into(), id.to_string()],
            other => vec![other.name().into()],
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    match (&cli.config, &cli.command) {
        (Some(path), _) => parse_config(path),
        (None, Command::Converge | Command::Figure { .. }) => parse_config_str(DEFAULT_PRESET),
        (None, c) => Err(Error::Config(format!("`{}` needs --config <path>", c.name()))),
    }
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.outputs.directory.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs one command and returns its one-line summary.
pub fn run(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let formats = cli.format.clone().unwrap_or_else(|| config.outputs.formats.clone());
    let dir = output_dir(cli, &config);
    let work = || -> Result<String> {
        let mut w = OutputWriter::new(&dir)?;
        let ctx = commands::Context {
            config: &config,
            seed: cli.seed,
            formats: &formats,
        };
        let summary = match &cli.command {
            Command::Simulate => commands::simulate(&ctx, &mut w)?,
            Command::Limit => commands::limit(&ctx, &mut w)?,
            Command::Stationary => commands::stationary(&ctx, &mut w)?,
            Command::Converge => commands::converge(&ctx, &mut w)?,
            Command::Figure { id } => commands::figure(&ctx, *id, &mut w)?,
            Command::Moments => commands::moments(&ctx, &mut w)?,
        };
        let text = config.to_toml();
        w.finish(Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name().into(),
            arguments: cli.command.arguments(),
            seed: cli.seed,
            formats: formats
                .iter()
                .map(|f| match f {
                    Format::Csv => "csv".to_string(),
                    Format::Svg => "svg".to_string(),
                })
                .collect(),
            config_sha256: sha256_hex(text.as_bytes()),
            config: text,
            files: Vec::new(),
        })?;
        Ok(summary)
    };
    match cli.workers {
        Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {k} workers: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
