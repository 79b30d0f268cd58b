use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcpbr::cli::{self, ExperimentConfig, ExperimentKind};
use dcpbr::{Error, Result};

#[derive(Parser)]
#[command(name = "lab", version, about = "PBR texture re-parameterization laboratory")]
struct Lab {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit parameterizations directly to a texture target
    Fit(RunArgs),
    /// Synthesize textures from rendered views under the noisy surrogate
    Synth(RunArgs),
    /// Measure spectral band energies of a texture set
    Freq(RunArgs),
    /// Measure gradient agreement across adjacent camera views
    Coherence(RunArgs),
    /// Render a turntable of a textured mesh
    Render(RunArgs),
    /// Render turntables under several environments
    Relight(RunArgs),
}

impl Command {
    fn parts(&self) -> (ExperimentKind, &RunArgs) {
        match self {
            Command::Fit(a) => (ExperimentKind::Fit, a),
            Command::Synth(a) => (ExperimentKind::Synth, a),
            Command::Freq(a) => (ExperimentKind::Freq, a),
            Command::Coherence(a) => (ExperimentKind::Coherence, a),
            Command::Render(a) => (ExperimentKind::Render, a),
            Command::Relight(a) => (ExperimentKind::Relight, a),
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment description, JSON
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this one seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run() -> Result<()> {
    let lab = Lab::parse();
    init_threads()?;
    let (expected, args) = lab.command.parts();
    if !args.config.is_file() {
        return Err(Error::MissingFile(args.config.clone()));
    }
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if config.experiment != expected {
        return Err(Error::Config(format!(
            "config describes a {} experiment but the command is {}",
            config.experiment.name(),
            expected.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    cli::run(&config)
}

/// `LAB_THREADS` caps the global rayon pool; unset leaves the default
/// (one worker per core).
fn init_threads() -> Result<()> {
    let Some(raw) = std::env::var_os("LAB_THREADS") else {
        return Ok(());
    };
    let threads: usize =
        raw.to_str().and_then(|s| s.parse().ok()).filter(|&n| n >= 1).ok_or_else(|| {
            Error::Config(format!("LAB_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
