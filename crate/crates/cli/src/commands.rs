use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};
use udc_core::calibrate::{
    estimate_gamma, estimate_noise, measure_mtf_channel, repeat_noise_calibration, CalibrationReport,
    IntensityPairSeries, Orientation,
};
use udc_core::config::{self, DEFAULT_SEED};
use udc_core::degrade::{add_noise, forward_noiseless, synthesize, DegradationModel, IntensityScale, NoiseParams, NoiseSpread};
use udc_core::io;
use udc_core::keyvalue::KeyValues;
use udc_core::metrics::evaluate;
use udc_core::optics::psf_set;
use udc_core::raw::split_bayer;
use udc_core::restore::{noise_strength, restore, Denoiser, ExternalDenoiser, Nsr, RestoreParams, WaveletDenoiser};
use udc_core::{Channel, ChannelStack, Color, Error, KernelSupport, Plane, PsfSet, Result};

use crate::{CalibrateArgs, Command, DenoiseArg, EvalArgs, MtfArgs, PsfArgs, RestoreArgs, SynthArgs, EXIT_IO};

/// Default MTF frequencies: 0.02 to 0.5 cycles per pixel in steps of 0.02.
const MTF_FREQS: usize = 25;

/// Synthetic calibration frames are this many plane pixels on a side.
const CALIBRATION_SIDE: usize = 128;

fn not_found(path: &Path, what: &str) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(ErrorKind::NotFound, what.to_string()),
    }
}

fn require(path: &Path) -> Result<()> {
    fs::metadata(path).map(|_| ()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_dir(path: &Path) -> Result<()> {
    require(path)?;
    if path.is_dir() {
        Ok(())
    } else {
        Err(not_found(path, "not a directory"))
    }
}

fn is_builtin(pattern: &str) -> bool {
    pattern.starts_with("builtin:")
}

/// Digest of the arguments and the contents of every configuration file.
struct Provenance {
    hasher: Sha256,
}

impl Provenance {
    fn new(command: &str) -> Self {
        let mut hasher = Sha256::new();
        for arg in std::env::args_os().skip(1) {
            hasher.update(arg.as_encoded_bytes());
            hasher.update([0]);
        }
        hasher.update(command.as_bytes());
        Self { hasher }
    }

    fn file(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.hasher.update(path.as_os_str().as_encoded_bytes());
        self.hasher.update([0]);
        self.hasher.update(&bytes);
        Ok(())
    }

    fn emit(self, seed: u64) {
        let digest = self.hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        eprintln!("udc {} seed={seed} config=sha256:{hex}", env!("CARGO_PKG_VERSION"));
    }
}

/// Per-file seed from the run seed and the file name, independent of which
/// other files are present.
pub fn file_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// PNG files directly inside `dir`, sorted by name.
fn png_files(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `(name, input, output)` for a file or a directory of files.
fn batch(input: &Path, out: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if input.is_dir() {
        create_dir(out)?;
        return Ok(png_files(input)?
            .into_iter()
            .map(|name| (name.clone(), input.join(&name), out.join(&name)))
            .collect());
    }
    let name = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let target = if out.is_dir() { out.join(&name) } else { out.to_path_buf() };
    Ok(vec![(name, input.to_path_buf(), target)])
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

pub fn run(command: Command, seed: Option<u64>) -> Result<u8> {
    match command {
        Command::Psf(args) => psf(args, seed),
        Command::Synth(args) => synth(args, seed),
        Command::Calibrate(args) => calibrate(args, seed),
        Command::Mtf(args) => mtf(args, seed),
        Command::Restore(args) => restore_cmd(*args, seed),
        Command::Eval(args) => eval(args, seed),
    }
}

fn pattern_psfs(pattern: &str, optics: Option<&Path>, periodic: bool, support: Option<&str>) -> Result<PsfSet> {
    let (pattern, base) = config::resolve_pattern(pattern, Path::new(pattern))?;
    let mut optics = match optics {
        Some(p) => config::optics_from_keyvalues(&KeyValues::load(p)?, base)?,
        None => base,
    };
    optics.periodic_tiling |= periodic;
    if let Some(s) = support {
        optics.support = s.parse::<KernelSupport>()?;
    }
    psf_set(&pattern, &optics)
}

fn psf(args: PsfArgs, seed: Option<u64>) -> Result<u8> {
    let mut prov = Provenance::new("psf");
    if let Some(p) = &args.source.pattern {
        if !is_builtin(p) {
            require(Path::new(p))?;
            prov.file(&io::sidecar_path(Path::new(p))).ok();
        }
    }
    for p in args.optics.iter().chain(&args.source.model) {
        prov.file(p)?;
    }
    prov.emit(seed.unwrap_or(DEFAULT_SEED));
    let psfs = match (&args.source.pattern, &args.source.model) {
        (Some(p), _) => pattern_psfs(p, args.optics.as_deref(), args.periodic_tiling, args.support.as_deref())?,
        (None, Some(m)) => config::load_model(m)?.psfs,
        (None, None) => unreachable!("clap requires a pattern source"),
    };
    for color in Color::ALL {
        let psf = psfs.by_color(color);
        info!(
            "{}: {}x{} kernel, r = {:.4}",
            color.name(),
            psf.kernel().nrows(),
            psf.kernel().ncols(),
            psf.r()
        );
    }
    io::write_psf_set(&args.out, &psfs)?;
    Ok(0)
}

fn synth(args: SynthArgs, seed: Option<u64>) -> Result<u8> {
    require(&args.input)?;
    let mut prov = Provenance::new("synth");
    prov.file(&args.model)?;
    let model = config::load_model(&args.model)?;
    let seed = seed.unwrap_or(model.seed);
    prov.emit(seed);
    for (name, input, output) in batch(&args.input, &args.out)? {
        let raw = io::load_raw(&input)?;
        let file_model = model.clone().with_seed(file_seed(seed, &name));
        let degraded = synthesize(&raw, &file_model)?;
        io::save_raw(&output, &degraded)?;
        info!("{name}: {}x{} -> {}", raw.width(), raw.height(), output.display());
    }
    Ok(0)
}

fn paired_stacks(a_dir: &Path, b_dir: &Path) -> Result<Vec<(ChannelStack, ChannelStack)>> {
    let names = png_files(a_dir)?;
    if names.is_empty() {
        return Err(not_found(a_dir, "no PNG frames"));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in names {
        let other = b_dir.join(&name);
        if !other.is_file() {
            return Err(not_found(&other, "no matching frame"));
        }
        let a = split_bayer(&io::load_raw(&a_dir.join(&name))?);
        let b = split_bayer(&io::load_raw(&other)?);
        info!("{name}: paired");
        pairs.push((a, b));
    }
    Ok(pairs)
}

fn report_noise(fit: &udc_core::calibrate::NoiseFit, report: &mut CalibrationReport) {
    report.noise = fit.params;
    report.noise_spread = NoiseSpread {
        read: fit.params.lambda_read.map(|v| (v, 0.0)),
        shot: fit.params.lambda_shot.map(|v| (v, 0.0)),
    };
    report.noise_residual = fit.rms_residual;
    report.noise_clamped = fit.clamped;
}

fn warn_clamped(report: &CalibrationReport) {
    for ch in Channel::ALL {
        if report.noise_clamped[ch.index()] {
            warn!("channel {ch}: a fitted noise parameter was negative and clamped to 0");
        }
    }
}

fn ramp_stack(rows: usize, cols: usize) -> ChannelStack {
    let plane = Plane::from_shape_fn((rows, cols), |(_, c)| 0.02 + 0.96 * c as f64 / (cols - 1) as f64);
    ChannelStack::new([plane.clone(), plane.clone(), plane.clone(), plane]).expect("equal planes")
}

/// Monitor-sweep style intensity pairs and noisy ramps drawn from `model`.
fn self_calibrate(model: &DegradationModel, repeats: usize, roi: usize, bins: usize, seed: u64) -> Result<CalibrationReport> {
    let (kr, kc) = model.psfs.max_dim();
    let side = CALIBRATION_SIDE.max(kr).max(kc);
    let mut sweep = Vec::new();
    for (k, level) in (0..=255).step_by(10).enumerate() {
        let without = ChannelStack::constant(side, side, level as f64 / 255.0);
        let with = forward_noiseless(&without, model)?;
        let noise = model.clone().with_seed(file_seed(seed, &format!("sweep{k}"))).effective_noise();
        let with = add_noise(&with, &noise, file_seed(seed, &format!("sweep{k}")))?;
        sweep.push((without, with));
    }
    let gamma = estimate_gamma(&IntensityPairSeries::from_frames(&sweep, roi)?)?;
    let clean = forward_noiseless(&ramp_stack(side, 2 * side), model)?.map(|_, p| p.mapv(|v| v.clamp(0.0, 1.0)));
    let report = repeat_noise_calibration(
        |i| {
            let s = file_seed(seed, &format!("repeat{i}"));
            let noise = model.clone().with_seed(s).effective_noise();
            Ok(vec![(add_noise(&clean, &noise, s)?, clean.clone())])
        },
        repeats,
        bins,
    )?;
    Ok(report.with_gamma(&gamma))
}

fn calibrate(args: CalibrateArgs, seed: Option<u64>) -> Result<u8> {
    let mut prov = Provenance::new("calibrate");
    for dir in [&args.without, &args.with, &args.clean, &args.noisy].into_iter().flatten() {
        require_dir(dir)?;
    }
    if let Some(m) = &args.model {
        prov.file(m)?;
    }
    let report = if let Some(model_path) = &args.model {
        let model = config::load_model(model_path)?;
        let seed = seed.unwrap_or(model.seed);
        prov.emit(seed);
        self_calibrate(&model, args.repeats, args.roi, args.bins, seed)?
    } else {
        prov.emit(seed.unwrap_or(DEFAULT_SEED));
        let mut report = CalibrationReport::default();
        if let (Some(without), Some(with)) = (&args.without, &args.with) {
            let pairs = paired_stacks(without, with)?;
            report = report.with_gamma(&estimate_gamma(&IntensityPairSeries::from_frames(&pairs, args.roi)?)?);
        }
        if let (Some(clean), Some(noisy)) = (&args.clean, &args.noisy) {
            let pairs: Vec<_> = paired_stacks(clean, noisy)?.into_iter().map(|(c, n)| (n, c)).collect();
            report_noise(&estimate_noise(&pairs, args.bins)?, &mut report);
            report.repeats = 1;
        }
        report
    };
    warn_clamped(&report);
    write_text(&args.out, &report.to_keyvalues().to_text("calibration report"))?;
    Ok(0)
}

fn mtf(args: MtfArgs, seed: Option<u64>) -> Result<u8> {
    let mut prov = Provenance::new("mtf");
    prov.file(&args.model)?;
    prov.emit(seed.unwrap_or(DEFAULT_SEED));
    let model = config::load_model(&args.model)?;
    let freqs = args
        .freqs
        .unwrap_or_else(|| (1..=MTF_FREQS).map(|i| i as f64 * 0.5 / MTF_FREQS as f64).collect());
    let h = measure_mtf_channel(&model, &freqs, Orientation::Horizontal, args.channel)?;
    let v = measure_mtf_channel(&model, &freqs, Orientation::Vertical, args.channel)?;
    let mut text = String::from("frequency,horizontal,vertical\n");
    for ((f, ch), (_, cv)) in h.samples.iter().zip(&v.samples) {
        text.push_str(&format!("{f},{ch},{cv}\n"));
    }
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

struct RestoreSetup {
    psfs: PsfSet,
    scale: IntensityScale,
    noise: Option<NoiseParams>,
}

fn restore_setup(args: &RestoreArgs, prov: &mut Provenance) -> Result<RestoreSetup> {
    let model = match &args.psf.model {
        Some(m) => {
            prov.file(m)?;
            Some(config::load_model(m)?)
        }
        None => None,
    };
    let calibration = match &args.calibration {
        Some(c) => {
            prov.file(c)?;
            Some(CalibrationReport::from_keyvalues(&KeyValues::load(c)?)?)
        }
        None => None,
    };
    if let Some(p) = &args.psf.psf {
        prov.file(p)?;
    }
    if let Some(p) = &args.optics {
        prov.file(p)?;
    }
    if let Some(p) = args.psf.pattern.as_deref().filter(|p| !is_builtin(p)) {
        require(Path::new(p))?;
    }
    let psfs = match (&args.psf.psf, &args.psf.pattern, &model) {
        (Some(p), _, _) => io::read_psf_set(p)?,
        (_, Some(p), _) => pattern_psfs(p, args.optics.as_deref(), args.periodic_tiling, None)?,
        (_, _, Some(m)) => m.psfs.clone(),
        _ => unreachable!("clap requires a PSF source"),
    };
    let scale = match (args.gamma, &calibration, &model) {
        (Some(g), _, _) => IntensityScale::new(g)?,
        (None, Some(c), _) => c.scale,
        (None, None, Some(m)) => m.scale,
        _ => IntensityScale::unity(),
    };
    let noise = match (args.noise_read, args.noise_shot, &calibration, &model) {
        (None, None, Some(c), _) => Some(c.noise),
        (None, None, None, Some(m)) => Some(m.noise),
        (None, None, None, None) => None,
        (read, shot, _, _) => Some(NoiseParams::new(read.unwrap_or([0.0; 4]), shot.unwrap_or([0.0; 4]))?),
    };
    Ok(RestoreSetup { psfs, scale, noise })
}

fn restore_cmd(args: RestoreArgs, seed: Option<u64>) -> Result<u8> {
    require(&args.input)?;
    if let Some(cmd) = &args.denoiser_cmd {
        if cmd.components().count() > 1 {
            require(cmd)?;
        }
    }
    let mut prov = Provenance::new("restore");
    let setup = restore_setup(&args, &mut prov)?;
    prov.emit(seed.unwrap_or(DEFAULT_SEED));
    let needs_noise = args.auto_nsr || args.denoise == Some(DenoiseArg::Auto);
    let noise = match setup.noise {
        Some(n) => n,
        None if needs_noise => {
            return Err(Error::Domain(
                "--auto-nsr and --denoise auto need noise parameters (--noise-read/--noise-shot, --calibration or --model)".into(),
            ))
        }
        None => NoiseParams::zero(),
    };
    let denoiser: Box<dyn Denoiser> = match &args.denoiser_cmd {
        Some(cmd) => Box::new(ExternalDenoiser {
            program: cmd.clone(),
            args: args.denoiser_arg.clone(),
        }),
        None => Box::new(WaveletDenoiser::default()),
    };
    for (name, input, output) in batch(&args.input, &args.out)? {
        let raw = io::load_raw(&input)?;
        let denoise_strength = match &args.denoise {
            None => [0.0; 4],
            Some(DenoiseArg::Fixed(s)) => *s,
            Some(DenoiseArg::Auto) => noise_strength(&split_bayer(&raw), &noise),
        };
        let params = RestoreParams {
            denoise_strength,
            nsr: Nsr::Constant(args.nsr),
            auto_nsr: args.auto_nsr.then_some(noise),
        };
        let rgb = restore(&raw, &setup.psfs, &setup.scale, &params, denoiser.as_ref())?;
        io::save_rgb(&output, &rgb)?;
        info!("{name}: restored -> {}", output.display());
    }
    Ok(0)
}

fn eval(args: EvalArgs, seed: Option<u64>) -> Result<u8> {
    require_dir(&args.pred)?;
    require_dir(&args.gt)?;
    Provenance::new("eval").emit(seed.unwrap_or(DEFAULT_SEED));
    let report = evaluate(&args.pred, &args.gt)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &args.report {
        write_text(path, &text)?;
    }
    if let Some(path) = &args.csv {
        write_text(path, &report.to_csv())?;
    }
    if report.skipped.is_empty() {
        Ok(0)
    } else {
        for s in &report.skipped {
            eprintln!("udc: skipped {}: {}", s.name, s.reason);
        }
        Ok(EXIT_IO)
    }
}
