//! Batch front end: one subcommand per post-processing stage, each writing
//! CSVs plus a replayable `manifest.json` into the output directory.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use manifest::{Manifest, Recorder};

/// Problems with the command line or configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser, Debug)]
#[command(
    name = "genfunc",
    version,
    about = "Generating-function experiments and moment post-processing"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with_all = ["preset", "manifest"])]
    config: Option<PathBuf>,
    /// Built-in configuration by name.
    #[arg(long, global = true, conflicts_with = "manifest")]
    preset: Option<String>,
    /// Replay the configuration and seed recorded in a previous manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "GENFUNC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generating function F(t) on a time grid.
    Gf,
    /// Hamiltonian moments by the exact, finite-difference or Fourier route.
    Moments,
    /// Imaginary-time energy curve from resummed moments.
    Texpand,
    /// Krylov eigenvalues and survival probabilities.
    Krylov,
    /// Noisy Hadamard tests with readout and reference mitigation.
    Noise,
    /// Print the names of the built-in presets.
    Presets,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gf => "gf",
            Command::Moments => "moments",
            Command::Texpand => "texpand",
            Command::Krylov => "krylov",
            Command::Noise => "noise",
            Command::Presets => "presets",
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            Command::Gf => "gf-pairing",
            Command::Moments => "moments-fourier",
            Command::Texpand => "texpand-g1",
            Command::Krylov => "krylov-g2",
            Command::Noise | Command::Presets => "noise",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let (text, recorded_seed) = if let Some(path) = &cli.manifest {
        let m = Manifest::load(path)?;
        if m.command != cli.command.name() {
            anyhow::bail!("manifest was written by `{}`, not `{}`", m.command, cli.command.name());
        }
        (m.config, Some(m.seed))
    } else if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        (text, None)
    } else {
        let name = cli.preset.as_deref().unwrap_or(cli.command.default_preset());
        (config::preset(name)?.to_string(), None)
    };
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed.or(recorded_seed) {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if cli.command == Command::Presets {
        for (name, _) in config::PRESETS {
            println!("{name}");
        }
        return Ok(());
    }
    let cfg = resolve(cli).map_err(|e| ConfigError(format!("{e:#}")))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    pool.build_global().context("starting thread pool")?;
    let threads = rayon::current_num_threads();
    let mut rec = Recorder::new(&cli.out_dir)?;
    match cli.command {
        Command::Gf => commands::gf(&cfg, &mut rec)?,
        Command::Moments => commands::moments(&cfg, &mut rec)?,
        Command::Texpand => commands::texpand(&cfg, &mut rec)?,
        Command::Krylov => commands::krylov(&cfg, &mut rec)?,
        Command::Noise => commands::noise(&cfg, &mut rec)?,
        Command::Presets => unreachable!(),
    }
    let m = rec.finish(cli.command.name(), cfg.to_toml()?, cfg.seed, threads)?;
    for name in m.outputs.keys() {
        println!("{}", cli.out_dir.join(name).display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<ConfigError>() {
        return 2;
    }
    match err.downcast_ref::<genfunc::Error>() {
        Some(genfunc::Error::NoAdmissiblePade(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
