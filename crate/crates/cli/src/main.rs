//! `breakaway`: optimal attack strategies, race simulations and crash
//! exposure checks from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 statistical-gate failure.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use commands::{Failure, Outcome, EXIT_USAGE};
use config::Config;
use table::Metadata;

#[derive(Parser, Debug)]
#[command(name = "breakaway", version, about = "Breakaway strategy analysis for road cycling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file of `[section]` headers and `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    trials: Option<u64>,
    /// Course elevation table (`x h` rows spanning 0..1), or demo, flat, grade:<slope>.
    #[arg(long, global = true, value_name = "PATH")]
    course: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Optimal constant-power attack on a flat course.
    Flat,
    /// Optimal attack with a fatiguing power profile.
    Fatigue,
    /// Breakaway simulation over a course profile.
    Terrain,
    /// Monte Carlo check of the analytic crash exposure.
    CrashMc,
    /// Velocity during the escape from the peloton: layer solution against the full equation.
    Microstructure,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Flat => "flat",
            Command::Fatigue => "fatigue",
            Command::Terrain => "terrain",
            Command::CrashMc => "crash-mc",
            Command::Microstructure => "microstructure",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Csv,
    JsonLike,
}

fn build_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.merge_text(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    for pair in &cli.overrides {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(trials) = cli.trials {
        cfg.set("run.trials", &trials.to_string())?;
    }
    if let Some(format) = cli.format {
        cfg.set("run.format", if matches!(format, Format::Csv) { "csv" } else { "json-like" })?;
    }
    if let Some(course) = &cli.course {
        cfg.set("terrain.course", course)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let cfg = build_config(cli)?;
    let Outcome { table, exit, notes } = match cli.command {
        Command::Flat => commands::flat(&cfg),
        Command::Fatigue => commands::fatigue(&cfg),
        Command::Terrain => commands::terrain(&cfg),
        Command::CrashMc => commands::crash_mc(&cfg),
        Command::Microstructure => commands::microstructure(&cfg),
    }?;
    let meta = Metadata { command: cli.command.name(), seed: cfg.int("run.seed"), config: cfg.echo() };
    let text = if cfg.str("run.format") == "csv" { table.to_csv(&meta) } else { table.to_json_like(&meta) };
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    for note in notes {
        eprintln!("warning: {note}");
    }
    Ok(exit)
}

fn main() -> ExitCode {
    let parsed = Cli::command()
        .after_long_help(config::key_help())
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
