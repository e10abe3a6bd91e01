use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixfield_core::experiment::{preset, run_experiment, write_outputs, ExperimentConfig, ExperimentKind, SchemeEntry, PRESET_NAMES};
use mixfield_core::schemes::Scheme;
use mixfield_core::Result;

#[derive(Parser)]
#[command(name = "mixfield", version, about = "Antenna selection experiments for mixed near/far-field XL-array downlink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Replace the seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named preset.
    Preset {
        /// One of: fig2, fig3, fig4, fig6, fig7, fig8, fig9, fig10, rician.
        name: String,
        /// Print the preset's TOML config and exit.
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run only the exhaustive oracle on the scenarios of a config.
    Oracle {
        config: PathBuf,
        /// Largest array size the oracle accepts.
        #[arg(long, default_value_t = 12)]
        max_n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// List preset names.
    Presets,
}

fn execute(mut config: ExperimentConfig, common: &Common) -> Result<()> {
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    let output = run_experiment(&config, common.jobs)?;
    let manifest = write_outputs(&config, &output, &common.out)?;
    for (file, rows) in manifest.files.iter().zip(&manifest.rows) {
        println!("{} ({rows} rows)", common.out.join(file).display());
    }
    println!("config sha256 {}", manifest.config_sha256);
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, common } => execute(ExperimentConfig::load(&config)?, &common),
        Command::Preset { name, print_config, common } => {
            let config = preset(&name)?;
            if print_config {
                print!("{}", config.to_toml_string()?);
                return Ok(());
            }
            execute(config, &common)
        }
        Command::Oracle { config, max_n, common } => {
            let mut config = ExperimentConfig::load(&config)?;
            config.name = format!("{}_oracle", config.name);
            config.kind = ExperimentKind::Rates;
            config.schemes = vec![SchemeEntry::new(Scheme::Oracle { max_n })];
            execute(config, &common)
        }
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
