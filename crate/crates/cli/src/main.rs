//! `avalign` command-line entry point.
//!
//! Exit codes: 0 success, 2 when the pair of `align` ends in a workflow
//! error, 64 usage or configuration error, 66 unreadable or malformed
//! input, 70 anything else.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::FromArgMatches;

use crate::args::Cli;
use crate::commands::Outcome;

pub const EXIT_PAIR_ERROR: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_INPUT: u8 = 66;
pub const EXIT_INTERNAL: u8 = 70;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no pair `{0}` in the given inputs")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] avalign_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use avalign_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NotFound(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                E::Io { .. }
                | E::MissingAudioFile(_)
                | E::Parse { .. }
                | E::Wav(_)
                | E::Json(_)
                | E::DuplicatePairId(_)
                | E::EmptyAudio
                | E::TooShort { .. }
                | E::EmptyFeatures => EXIT_INPUT,
                E::Config(_) | E::ParamOutOfRange { .. } | E::InvalidValue(_) | E::InsufficientPairs { .. } => {
                    EXIT_USAGE
                }
                _ => EXIT_INTERNAL,
            },
        }
    }
}

fn init_logging(level: log::LevelFilter) {
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let matches = match args::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    init_logging(cli.log.map_or(log::LevelFilter::Info, |l| l.filter()));

    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::PairError) => ExitCode::from(EXIT_PAIR_ERROR),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = commands::resolve_config(cli)?;
    let effective = cfg.effective_toml()?;
    if cli.effective_config {
        print!("{effective}");
        return Ok(Outcome::Ok);
    }
    let Some(cmd) = &cli.command else {
        return Err(CliError::Usage("a subcommand is required; see `avalign --help`".into()));
    };
    log::info!("avalign {} started", env!("CARGO_PKG_VERSION"));
    log::info!("effective config:\n{}", effective.trim_end());
    commands::run(cmd, &cfg)
}
