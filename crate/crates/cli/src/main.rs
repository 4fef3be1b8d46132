use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod run;

/// Landmark localization with learned anisotropic heatmap uncertainty.
#[derive(Debug, Parser)]
#[command(name = "hmuq", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long, env = "HMUQ_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Overrides the seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// No progress messages on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the heatmap predictor and target covariances.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// fixed_iso, learned_iso or learned_aniso.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Predict landmarks with fitted covariances.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model directory or checkpoint file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a Gaussian to heatmap images (PGM).
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        heatmaps: Vec<PathBuf>,
    },
    /// Monte-Carlo dropout baselines.
    Mcd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of dropout passes.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Metrics table (PE, SDR, covariance statistics) against annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// fit, mcd_max or mcd_heatmap_fit.
        #[arg(long, default_value = "fit")]
        method: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Inter-observer distribution statistics.
    Interobs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Monte-Carlo classification of clinical measurements.
    Clinical {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "synthetic")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        /// Measurement definition file (defaults to the shipped table).
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Run the synthetic angle experiment instead.
        #[arg(long, conflicts_with_all = ["model", "data", "measurements"])]
        synthetic: bool,
    },
    /// Render an SVG figure from CSV outputs.
    Plot {
        #[command(flatten)]
        common: Common,
        /// offset_scatter, ellipse_overlay, accuracy_curve or sigma_vs_error.
        #[arg(long)]
        kind: String,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Ellipse semi-axes in sigmas.
        #[arg(long, default_value_t = 3.0)]
        scale: f64,
        /// Image for ellipse_overlay (default: first in the input).
        #[arg(long)]
        image_id: Option<String>,
        /// Dataset to draw the ellipse_overlay image from.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
        /// Omit the timestamp comment.
        #[arg(long)]
        no_timestamp: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already embed their cause; skip repeats.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
