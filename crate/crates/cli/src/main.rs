//! `udc`: simulate and restore images captured through a display panel.
//!
//! Exit status: 0 on success, 2 for unparseable arguments or configuration
//! files, 3 for I/O failures (missing or unreadable files, unmatched pairs in
//! `eval`), 4 for invalid values and numerical failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use udc_core::ErrorFamily;

pub const EXIT_PARSE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DOMAIN: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "udc", version, about = "Under-display camera simulation and restoration")]
pub struct Cli {
    /// Random seed. Commands without randomness ignore it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Log one line per processed file.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the R, G, B point spread functions of a display pattern.
    Psf(PsfArgs),
    /// Degrade clean raw frames with a model.
    Synth(SynthArgs),
    /// Estimate intensity scale and noise parameters.
    Calibrate(CalibrateArgs),
    /// Measure the modulation transfer function of a model.
    Mtf(MtfArgs),
    /// Restore degraded raw frames to RGB.
    Restore(Box<RestoreArgs>),
    /// Compare predictions with ground truth (PSNR, SSIM).
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[group(id = "pattern_source", required = true, multiple = false)]
pub struct PatternSource {
    /// Display pattern image, or `builtin:toled` / `builtin:poled`.
    #[arg(long, value_name = "PATTERN")]
    pub pattern: Option<String>,

    /// Model file; its kernels are used.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PsfArgs {
    #[command(flatten)]
    pub source: PatternSource,

    /// Optics key-value file overlaid on the defaults.
    #[arg(long, value_name = "FILE", conflicts_with = "model")]
    pub optics: Option<PathBuf>,

    /// Replicate a pattern smaller than the aperture.
    #[arg(long, conflicts_with = "model")]
    pub periodic_tiling: bool,

    /// Kernel support: `full`, `energy:<fraction>` or an odd size.
    #[arg(long, value_name = "SUPPORT", conflicts_with = "model")]
    pub support: Option<String>,

    /// Output PSF set file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clean raw file or directory of raw files.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    /// Degradation model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Output file, or directory when the input is a directory.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Raw frames captured without the display (paired by name with `--with`).
    #[arg(long, value_name = "DIR", requires = "with", conflicts_with = "model")]
    pub without: Option<PathBuf>,

    /// Raw frames captured through the display.
    #[arg(long, value_name = "DIR", requires = "without")]
    pub with: Option<PathBuf>,

    /// Noise-free reference frames (paired by name with `--noisy`).
    #[arg(long, value_name = "DIR", requires = "noisy", conflicts_with = "model")]
    pub clean: Option<PathBuf>,

    /// Single noisy frames of the same scenes.
    #[arg(long, value_name = "DIR", requires = "clean")]
    pub noisy: Option<PathBuf>,

    /// Calibrate against frames synthesized from this model.
    #[arg(long, value_name = "FILE", required_unless_present_any = ["without", "clean"])]
    pub model: Option<PathBuf>,

    /// Independent synthetic batches with `--model`.
    #[arg(long, default_value_t = 20, value_name = "N")]
    pub repeats: usize,

    /// Side of the central window averaged for intensity pairs.
    #[arg(long, default_value_t = udc_core::calibrate::DEFAULT_ROI, value_name = "N")]
    pub roi: usize,

    /// Intensity bins for the noise fit.
    #[arg(long, default_value_t = udc_core::calibrate::DEFAULT_BINS, value_name = "N")]
    pub bins: usize,

    /// Output calibration report.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MtfArgs {
    /// Degradation model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Frequencies in cycles per pixel, comma-separated, in (0, 0.5].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub freqs: Option<Vec<f64>>,

    /// Channel plane to measure.
    #[arg(long, default_value = "G1", value_name = "CHANNEL")]
    pub channel: udc_core::Channel,

    /// Output file (default: standard output).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiseArg {
    /// Noise standard deviation of each plane at its mean level.
    Auto,
    Fixed([f64; 4]),
}

fn parse_per_channel(s: &str) -> Result<[f64; 4], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    match values.as_slice() {
        [v] => Ok([*v; 4]),
        [r, g, b] => Ok([*r, *g, *g, *b]),
        [r, g1, g2, b] => Ok([*r, *g1, *g2, *b]),
        _ => Err(format!("need 1, 3 or 4 values, found {}", values.len())),
    }
}

fn parse_denoise(s: &str) -> Result<DenoiseArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(DenoiseArg::Auto)
    } else {
        parse_per_channel(s).map(DenoiseArg::Fixed)
    }
}

#[derive(Debug, Args)]
#[group(id = "psf_source", required = true, multiple = false)]
pub struct PsfSource {
    /// PSF set file.
    #[arg(long, value_name = "FILE")]
    pub psf: Option<PathBuf>,

    /// Display pattern image, or `builtin:toled` / `builtin:poled`.
    #[arg(long, value_name = "PATTERN")]
    pub pattern: Option<String>,

    /// Model file; supplies kernels, and gamma and noise unless overridden.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Degraded raw file or directory of raw files.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    /// Output RGB file, or directory when the input is a directory.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    #[command(flatten)]
    pub psf: PsfSource,

    /// Optics key-value file used with `--pattern`.
    #[arg(long, value_name = "FILE", requires = "pattern")]
    pub optics: Option<PathBuf>,

    /// Replicate a pattern smaller than the aperture.
    #[arg(long, requires = "pattern")]
    pub periodic_tiling: bool,

    /// Intensity scale: 1, 3 (R,G,B) or 4 (R,G1,G2,B) values.
    #[arg(long, value_parser = parse_per_channel, value_name = "LIST")]
    pub gamma: Option<[f64; 4]>,

    /// Calibration report supplying gamma and noise.
    #[arg(long, value_name = "FILE")]
    pub calibration: Option<PathBuf>,

    /// Read-noise variance, 1, 3 or 4 values.
    #[arg(long, value_parser = parse_per_channel, value_name = "LIST")]
    pub noise_read: Option<[f64; 4]>,

    /// Shot-noise coefficient, 1, 3 or 4 values.
    #[arg(long, value_parser = parse_per_channel, value_name = "LIST")]
    pub noise_shot: Option<[f64; 4]>,

    /// Constant noise-to-signal ratio for deconvolution.
    #[arg(long, default_value_t = 1e-3, value_name = "X", conflicts_with = "auto_nsr")]
    pub nsr: f64,

    /// Derive the NSR of each plane from the noise model.
    #[arg(long)]
    pub auto_nsr: bool,

    /// Denoise strength: `auto` or 1, 3 or 4 standard deviations.
    #[arg(long, value_parser = parse_denoise, value_name = "auto|LIST")]
    pub denoise: Option<DenoiseArg>,

    /// External denoiser, run as `CMD [ARGS..] <input> <output> <strength>`.
    #[arg(long, value_name = "CMD")]
    pub denoiser_cmd: Option<PathBuf>,

    /// Extra argument for the external denoiser (repeatable).
    #[arg(long, value_name = "ARG", requires = "denoiser_cmd", allow_hyphen_values = true)]
    pub denoiser_arg: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predictions.
    pub pred: PathBuf,

    /// Directory of ground truth with the same file names.
    pub gt: PathBuf,

    /// Also write the aligned text report to this file.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,

    /// Write the CSV report to this file.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

fn exit_code(err: &udc_core::Error) -> u8 {
    match err.family() {
        ErrorFamily::Parse => EXIT_PARSE,
        ErrorFamily::Io => EXIT_IO,
        ErrorFamily::Domain => EXIT_DOMAIN,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_PARSE } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let seed = cli.seed;
    match commands::run(cli.command, seed) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("udc: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
