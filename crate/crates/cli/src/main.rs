use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codesign_cli::config::{load_config, LoadedConfig, RunMode};
use codesign_cli::pipeline::{
    run_bode, run_design, run_sweep, PipelineOptions, Stage, StageError,
};

#[derive(Parser)]
#[command(
    name = "codesign",
    about = "Structure/control co-design for lightweight precision motion stages",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the proposed-mode pipeline and write all artifacts
    Design(RunArgs),
    /// Run the baseline-mode pipeline and write all artifacts
    Baseline(RunArgs),
    /// Re-run the proposed design across the configured upper window
    /// frequencies and write sweep.csv
    Sweep(RunArgs),
    /// Write frequency-response CSVs for the proposed design only
    Bode(RunArgs),
    /// Parse and validate a configuration file
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the mesh resolution from the config
    #[arg(long)]
    resolution: Option<usize>,
    /// Suppress progress output
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}

fn load(path: &PathBuf) -> Result<LoadedConfig, StageError> {
    load_config(path).map_err(|message| StageError {
        stage: Stage::Config,
        message,
    })
}

fn dispatch(cli: Cli) -> Result<ExitCode, StageError> {
    match cli.command {
        Command::Design(args) => run_mode(args, RunMode::Proposed),
        Command::Baseline(args) => run_mode(args, RunMode::Baseline),
        Command::Sweep(args) => {
            let loaded = load(&args.config)?;
            let opts = PipelineOptions {
                resolution: args.resolution,
                quiet: args.quiet,
            };
            let rows = run_sweep(&loaded, &args.out, &opts)?;
            if !args.quiet {
                println!(
                    "sweep: {} points written to {}",
                    rows.len(),
                    args.out.join("sweep.csv").display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bode(args) => {
            let loaded = load(&args.config)?;
            let opts = PipelineOptions {
                resolution: args.resolution,
                quiet: args.quiet,
            };
            run_bode(&loaded, &args.out, &opts)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { config } => {
            let loaded = load(&config)?;
            let cfg = &loaded.config;
            println!(
                "ok: {} mm stage at resolution {}, {} magnets, window [{}, {}] Hz \
                 ({} controlled of {} constrained modes), baseline floor {} Hz",
                cfg.stage.edge_mm,
                cfg.stage.resolution,
                cfg.magnets.len(),
                cfg.frequencies.omega_low_hz,
                cfg.frequencies.omega_high_hz,
                cfg.frequencies.n_controlled,
                cfg.frequencies.m_total,
                cfg.frequencies.baseline_floor_hz,
            );
            println!("sha256 {}", loaded.sha256);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_mode(args: RunArgs, mode: RunMode) -> Result<ExitCode, StageError> {
    let loaded = load(&args.config)?;
    let opts = PipelineOptions {
        resolution: args.resolution,
        quiet: args.quiet,
    };
    let report = run_design(&loaded, mode, &args.out, &opts)?;
    if !args.quiet {
        println!(
            "{}: mass {:.4} kg, z bandwidth {:.1} Hz, report at {}",
            mode.as_str(),
            report.geometry.mass_kg,
            report
                .channels
                .iter()
                .find(|c| c.label == "z")
                .map(|c| c.bandwidth_hz)
                .unwrap_or(f64::NAN),
            args.out.join("report.json").display()
        );
    }
    if !report.geometry.feasible {
        eprintln!(
            "geometry: returned design misses the frequency window \
             (max scaled violation {:.3e}); artifacts written",
            report.geometry.max_violation
        );
        return Ok(ExitCode::from(Stage::Geometry.exit_code() as u8));
    }
    Ok(ExitCode::SUCCESS)
}
