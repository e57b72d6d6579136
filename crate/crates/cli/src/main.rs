use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod stages;

#[derive(Parser)]
#[command(name = "ccs", version, about = "Caustic-mask single-pixel imaging simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Number of masks per acquisition; overrides the config.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    /// Use a flat liquid surface (every mask uniform).
    #[arg(long, global = true)]
    pub debug_flat_surface: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the caustic mask stack.
    SimulateMasks,
    /// Simulate detector signals for the labelled dataset, or for one target.
    Acquire {
        /// F, H, I, O, T, `opaque` or `clear`; omit for the whole dataset.
        #[arg(long)]
        target: Option<String>,
        /// Detector noise sigma for a single target.
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
    },
    /// Recover a letter image from noiseless measurements.
    Reconstruct {
        #[arg(long, default_value = "I")]
        target: String,
    },
    /// Turn measurements into colorized scalogram images.
    Cwt,
    /// Train the classifier on the full dataset.
    Train,
    /// Run k-fold cross-validation.
    Evaluate,
    /// Render the confusion heatmap, metrics CSV and summary table.
    Report {
        /// Averaged confusion CSV to report on (default: the evaluate output).
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// simulate-masks, acquire, cwt, evaluate and report in sequence.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = stages::Context::new(&cli.common).and_then(|ctx| match cli.command {
        Command::SimulateMasks => ctx.simulate_masks(),
        Command::Acquire { target, noise_sigma } => match target {
            Some(t) => ctx.acquire_single(&t, noise_sigma),
            None => ctx.acquire_dataset(),
        },
        Command::Reconstruct { target } => ctx.reconstruct(&target),
        Command::Cwt => ctx.cwt(),
        Command::Train => ctx.train(),
        Command::Evaluate => ctx.evaluate(),
        Command::Report { confusion } => ctx.report(confusion.as_deref()),
        Command::Run => ctx.run_all(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
