use std::path::PathBuf;
use std::process::ExitCode;

use channeling::config::{parse_config, RunConfig};
use channeling::pipeline::{emit_plot_data, run_pipeline, Command, OutputBundle, PlotKind};
use channeling::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Monte Carlo proton channeling through thin crystals.
#[derive(Parser, Debug)]
#[command(name = "channeling", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration. Without one, a 2 MeV / 83 nm silicon run is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override ensemble.seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Override ensemble.n_particles.
    #[arg(long, global = true, value_name = "N")]
    particles: Option<u64>,
    /// Override output.dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; changes speed only, never results.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// One ensemble: exit and plane histograms.
    Run,
    /// On-axis yield against reduced thickness.
    ScanThickness,
    /// Exit maps for each configured tilt.
    TiltSweep,
    /// Continuum potential, gradient and electron density over the cell.
    PotentialMap,
    /// Laser-dressed impurity potential harmonics against radius.
    KhMap,
    /// String positions and cell polygon.
    GeometryDump,
    /// Plot-ready CSVs derived from earlier bundles.
    PlotData {
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PlotKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::minimal(2e6, 83.0, 10_000, 0),
    };
    if let Some(s) = g.seed {
        cfg.ensemble.seed = s;
    }
    if let Some(n) = g.particles {
        cfg.ensemble.n_particles = n;
    }
    if let Some(d) = &g.out {
        cfg.output.dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<OutputBundle> {
    let cfg = load(&cli.global)?;
    let threads = cli.global.threads;
    if threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let command = match &cli.command {
        Cmd::Run => Command::Run,
        Cmd::ScanThickness => Command::ScanThickness,
        Cmd::TiltSweep => Command::TiltSweep,
        Cmd::PotentialMap => Command::PotentialMap,
        Cmd::KhMap => Command::KhMap,
        Cmd::GeometryDump => Command::GeometryDump,
        Cmd::PlotData { kind } => return emit_plot_data(&cfg.output.dir, *kind, &cfg),
    };
    log::info!("{} -> {}", command.name(), cfg.output.dir.display());
    run_pipeline(&cfg, command, threads)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(bundle) => {
            println!("{}", bundle.dir.join(channeling::pipeline::MANIFEST).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
