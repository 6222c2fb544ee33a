//! `wva`: command-line driver for the simulation and analysis toolkit.
//!
//! Exit status: 0 on success, 2 for configuration or input problems, 1 for
//! numerical failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "wva", version, about = "Weak-value amplification versus conventional measurement with noisy, saturating detectors")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "WVA_OUT_DIR", default_value = "wva-out")]
    #[serde(skip)]
    out: PathBuf,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    meter: MeterArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
struct DetectorArgs {
    /// Noise-free, non-saturating detector.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    ideal_detector: bool,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    mu_d: Option<f64>,
    #[arg(long, global = true)]
    sigma_d: Option<f64>,
    /// Saturation threshold (ADU).
    #[arg(long, global = true)]
    k_s: Option<u32>,
    #[arg(long, global = true)]
    gain: Option<f64>,
    /// Pixel pitch (mm).
    #[arg(long, global = true)]
    pixel_pitch: Option<f64>,
    #[arg(long, global = true)]
    n_pixels: Option<usize>,
    /// Disable the intensity-dependent classical noise.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    no_classical_noise: bool,
    #[arg(long, global = true)]
    noise_a: Option<f64>,
    #[arg(long, global = true)]
    noise_b: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
struct MeterArgs {
    /// Beam width σ (mm).
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Beam centre X₀ (mm).
    #[arg(long, global = true)]
    x0: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ideal-detector FI ratio against P_f, plus a per-pixel Fisher report.
    FisherScan(commands::FisherScanArgs),
    /// Synthesize a pool of detector frames.
    Simulate(commands::SimulateArgs),
    /// Bootstrap estimator precision on a frame container.
    Estimate(commands::EstimateArgs),
    /// Precision against input intensity for each scheme and estimator.
    Sweep(commands::SweepArgs),
    /// Best post-selection probability per intensity and the dynamic range.
    OptimizePf(commands::OptimizeArgs),
    /// Per-pixel Fisher information and Γ for CM and a WVA scheme.
    GammaMap(commands::GammaMapArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli.global, &cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
