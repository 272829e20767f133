//! Command-line entry point: `mixworld run <config>`.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mixworld::config::{apply_overrides, RunConfig};
use mixworld::pipeline::execute;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mixworld", about = "Continual world-model experiments on pixel POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a JSON config file.
    Run {
        /// Path to the config JSON.
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory (default: ./runs/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Edit config fields by dotted path, e.g. control.alpha=0.5.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write per-figure CSVs (reward curves, value drift).
        #[arg(long)]
        emit_plots_data: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out, mut overrides, emit_plots_data } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            if let Some(s) = seed {
                overrides.push(format!("seed={}", s));
            }
            let final_text = apply_overrides(&text, &overrides)?;
            let cfg = RunConfig::from_json(&final_text)?;
            let out_dir = out.unwrap_or_else(|| {
                let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
                PathBuf::from("runs").join(stem)
            });
            execute(&cfg, &final_text, &out_dir, emit_plots_data)?;
            println!("artifacts written to {}", out_dir.display());
            Ok(())
        }
    }
}
