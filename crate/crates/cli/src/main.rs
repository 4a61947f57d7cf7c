//! `supportcal`: simulate, build and merge support maps, analyze residuals, and
//! run the uniform-vs-support-guided refinement comparison.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "supportcal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Base seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate reference-aligned frames: scene and correspondence CSVs plus the class table.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Accumulate correspondence files into a support map (`.smap` plus PNG export).
    BuildMap {
        #[command(flatten)]
        common: Common,
        /// Correspondence CSVs (`point_id,class_id,u,v,du,dv`).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Keep the accumulated map unnormalized so it can be merged later.
        #[arg(long)]
        no_normalize: bool,
        /// Base name of the output files.
        #[arg(long, default_value = "support_map")]
        name: String,
    },
    /// Sum unnormalized maps cell-wise and normalize the result.
    MergeMaps {
        #[command(flatten)]
        common: Common,
        /// Unnormalized `.smap` files with identical shape and parameters.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, default_value = "support_map")]
        name: String,
    },
    /// Class-wise median residual statistics.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Correspondence CSVs; rows from all files are pooled.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Paired uniform vs support-guided refinement over the configured runs.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Normalized support map; built from the configuration when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common } => commands::simulate(&common),
        Command::BuildMap {
            common,
            inputs,
            no_normalize,
            name,
        } => commands::build_map(&common, &inputs, !no_normalize, &name),
        Command::MergeMaps {
            common,
            inputs,
            no_normalize,
            name,
        } => commands::merge_maps(&common, &inputs, !no_normalize, &name),
        Command::Analyze { common, inputs } => commands::analyze(&common, &inputs),
        Command::Refine { common, map } => commands::refine(&common, map.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
