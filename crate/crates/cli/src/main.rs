mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::CliError;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  command-line usage error
  3  configuration error (unreadable, unknown field, invalid value)
  4  missing or unreadable input file
  5  malformed file (bad magic, version, dtype, truncated payload, codec)
  6  model/data metadata mismatch
  7  numerical failure (non-finite loss, degenerate or non-bimodal histogram)
  8  invalid parameter or shape
  1  any other failure";

#[derive(Debug, Parser)]
#[command(name = "isorestore", version, about = "Isotropic restoration of anisotropic 3D microscopy volumes", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Native ISOV volumes.
    Isov,
    /// Uncompressed grayscale multi-page TIFF (one page per z plane).
    TiffImport,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON config for the subcommand; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and derives every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads. Values above 1 give up the bitwise reproducibility
    /// guarantee.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Format of volume inputs.
    #[arg(long, global = true, value_enum, default_value_t = InputFormat::Isov)]
    format: InputFormat,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom and its instance labels.
    Phantom,
    /// Build a PSF and its rotated, isotropic and split factors.
    Psf,
    /// Blur, subsample and add noise to a phantom.
    Acquire {
        #[arg(long)]
        input: PathBuf,
    },
    /// Draw self-supervised training pairs and write a preview.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        /// Number of pairs rendered to PNG.
        #[arg(long, default_value_t = 8)]
        preview: usize,
    },
    /// Train a restoration network on an acquired volume.
    Train {
        #[arg(long)]
        input: PathBuf,
    },
    /// Restore an acquired volume with a trained model.
    Restore {
        #[arg(long)]
        input: PathBuf,
        /// Model stem, as written by `train` (without extension).
        #[arg(long)]
        model: PathBuf,
        /// Axial subsampling factor of the input.
        #[arg(long)]
        subsample: u32,
    },
    /// Richardson-Lucy deconvolution on the upsampled grid.
    RlDeconv {
        #[arg(long)]
        input: PathBuf,
    },
    /// Threshold, fill holes and split objects with a distance watershed.
    Segment {
        #[arg(long)]
        input: PathBuf,
    },
    /// SEG score of a predicted labelling against ground-truth labels.
    Score {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// PSNR table of restored volumes against the references.
    Table {
        /// Repeated `name=path` entries.
        #[arg(long = "method", value_name = "NAME=PATH", required = true)]
        methods: Vec<String>,
        /// Isotropically blurred reference.
        #[arg(long)]
        iso: PathBuf,
        /// Unblurred ground truth.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Full experiment: phantom, acquisition, all methods, scoring.
    Pipeline {
        /// Bundled configuration used when --config is absent.
        #[arg(long, value_enum, default_value_t = Preset::DeskNuclei)]
        preset: Preset,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    DeskNuclei,
    DeskMembranes,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&g.out).map_err(|e| CliError::Io(g.out.clone(), e))?;
    match cli.command {
        Command::Phantom => commands::phantom(g),
        Command::Psf => commands::psf(g),
        Command::Acquire { input } => commands::acquire(g, &input),
        Command::Pairs { input, preview } => commands::pairs(g, &input, preview),
        Command::Train { input } => commands::train(g, &input),
        Command::Restore {
            input,
            model,
            subsample,
        } => commands::restore(g, &input, &model, subsample),
        Command::RlDeconv { input } => commands::rl_deconv(g, &input),
        Command::Segment { input } => commands::segment(g, &input),
        Command::Score { gt, pred } => commands::score(g, &gt, &pred),
        Command::Table { methods, iso, gt } => commands::table(g, &methods, &iso, &gt),
        Command::Pipeline { preset } => commands::pipeline(g, preset),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
