//! Parameter recovery from paired measurements: intensity scale, noise
//! model, MTF, and frame averaging.

use ndarray::s;

use crate::degrade::{IntensityScale, NoiseParams, NoiseSpread};
use crate::degrade::{convolve_plane, DegradationModel};
use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;
use crate::raw::{quantize, BayerRaw, Channel, ChannelStack, Plane};

/// Default side of the square region used for mean intensities.
pub const DEFAULT_ROI: usize = 256;
/// Default number of clean-intensity bins for noise regression.
pub const DEFAULT_BINS: usize = 16;

/// Paired `(without display, with display)` mean intensities per channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntensityPairSeries {
    pub points: [Vec<(f64, f64)>; 4],
}

impl IntensityPairSeries {
    pub fn push(&mut self, channel: Channel, without: f64, with: f64) {
        self.points[channel.index()].push((without, with));
    }

    /// One point per channel per frame pair, from the mean over the central
    /// `roi x roi` region (or the whole plane, if smaller).
    pub fn from_frames(pairs: &[(ChannelStack, ChannelStack)], roi: usize) -> Result<Self> {
        let mut series = Self::default();
        for (without, with) in pairs {
            if without.dim() != with.dim() {
                return Err(Error::dim("paired frames differ in size"));
            }
            for ch in Channel::ALL {
                series.push(
                    ch,
                    region_mean(without.plane(ch), roi),
                    region_mean(with.plane(ch), roi),
                );
            }
        }
        Ok(series)
    }
}

/// Mean over the centred `roi x roi` window.
pub fn region_mean(plane: &Plane, roi: usize) -> f64 {
    let (rows, cols) = plane.dim();
    let (h, w) = (roi.min(rows).max(1), roi.min(cols).max(1));
    let (r0, c0) = ((rows - h) / 2, (cols - w) / 2);
    plane
        .slice(s![r0..r0 + h, c0..c0 + w])
        .mean()
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub scale: IntensityScale,
    pub rms_residual: [f64; 4],
}

/// Least-squares slope through the origin per channel.
pub fn estimate_gamma(series: &IntensityPairSeries) -> Result<GammaFit> {
    let mut gamma = [0.0; 4];
    let mut rms = [0.0; 4];
    for ch in Channel::ALL {
        let pts = &series.points[ch.index()];
        let distinct = {
            let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs.len()
        };
        let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
        if distinct < 2 || sxx == 0.0 {
            return Err(Error::Rank(format!(
                "channel {ch}: need at least two distinct abscissae, found {distinct}"
            )));
        }
        let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
        let slope = sxy / sxx;
        let ss: f64 = pts.iter().map(|(x, y)| (y - slope * x).powi(2)).sum();
        gamma[ch.index()] = slope;
        rms[ch.index()] = (ss / pts.len() as f64).sqrt();
    }
    Ok(GammaFit {
        scale: IntensityScale::new(gamma)?,
        rms_residual: rms,
    })
}

/// Noise regression result for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelNoiseFit {
    pub read: f64,
    pub shot: f64,
    pub rms_residual: f64,
    /// A fitted value came out negative and was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFit {
    pub params: NoiseParams,
    pub rms_residual: [f64; 4],
    pub clamped: [bool; 4],
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Censor {
    None,
    Low,
    High,
}

#[derive(Default)]
struct Bin {
    // (difference, clean value, censoring)
    pixels: Vec<(f64, f64, Censor)>,
}

impl Bin {
    fn mean_w(&self) -> f64 {
        self.pixels.iter().map(|p| p.1).sum::<f64>() / self.pixels.len() as f64
    }

    fn uncensored(&self) -> usize {
        self.pixels.iter().filter(|p| p.2 == Censor::None).count()
    }
}

/// Natural log of the standard normal CDF.
fn ln_phi(x: f64) -> f64 {
    let p = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    if p > 0.0 {
        p.ln()
    } else {
        // Mills-ratio asymptote for the far lower tail.
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Variance of a bin by maximum likelihood, treating values clipped at 0 or
/// 1 as censored. `rho` gives each pixel's variance relative to the bin's.
fn bin_variance(bin: &Bin, rho: &dyn Fn(f64) -> f64) -> f64 {
    let mut n_u = 0.0;
    let mut s_u = 0.0;
    let mut log_rho_u = 0.0;
    let mut censored = Vec::new();
    for &(d, w, c) in &bin.pixels {
        let r = rho(w);
        match c {
            Censor::None => {
                n_u += 1.0;
                s_u += d * d / r;
                log_rho_u += r.ln();
            }
            Censor::Low => censored.push((-w, r)),
            Censor::High => censored.push((-(1.0 - w), r)),
        }
    }
    let plain = s_u / n_u;
    if censored.is_empty() || plain == 0.0 {
        return plain;
    }
    let loglik = |log_v: f64| {
        let v = log_v.exp();
        let mut l = -0.5 * (n_u * log_v + log_rho_u) - s_u / (2.0 * v);
        for &(bound, r) in &censored {
            l += ln_phi(bound / (v * r).sqrt());
        }
        l
    };
    // Golden-section search on log variance.
    let (mut a, mut b) = (plain.ln() - 1.0, plain.ln() + 4.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (loglik(c), loglik(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = loglik(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = loglik(d);
        }
    }
    ((a + b) / 2.0).exp()
}

/// Weighted least squares `v = a + b x`.
fn weighted_line(xs: &[f64], vs: &[f64], ws: &[f64]) -> (f64, f64) {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = vs.iter().zip(ws).map(|(v, w)| v * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(vs)
        .zip(ws)
        .map(|((x, v), w)| w * (x - mx) * (v - my))
        .sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Fits `var(noisy - clean) = read + shot * clean` for one channel from
/// paired planes, binning pixels by clean intensity.
pub fn estimate_noise_plane(pairs: &[(&Plane, &Plane)], bins: usize) -> Result<ChannelNoiseFit> {
    if bins < 2 {
        return Err(Error::domain("noise regression needs at least two bins"));
    }
    let mut grid: Vec<Bin> = (0..bins).map(|_| Bin::default()).collect();
    for (noisy, clean) in pairs {
        if noisy.dim() != clean.dim() {
            return Err(Error::dim(format!(
                "noisy {:?} and clean {:?} planes differ",
                noisy.dim(),
                clean.dim()
            )));
        }
        for (&y, &x) in noisy.iter().zip(clean.iter()) {
            let x = x.clamp(0.0, 1.0);
            let idx = ((x * bins as f64) as usize).min(bins - 1);
            let censor = if y <= 0.0 && x > 0.0 {
                Censor::Low
            } else if y >= 1.0 && x < 1.0 {
                Censor::High
            } else {
                Censor::None
            };
            grid[idx].pixels.push((y - x, x, censor));
        }
    }
    let used: Vec<&Bin> = grid.iter().filter(|b| b.uncensored() >= 2).collect();
    let xs: Vec<f64> = used.iter().map(|b| b.mean_w()).collect();
    let distinct = {
        let mut v = xs.clone();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        v.len()
    };
    if distinct < 2 {
        return Err(Error::Rank(format!(
            "noise regression needs at least two distinct intensity levels, found {distinct}"
        )));
    }
    let counts: Vec<f64> = used.iter().map(|b| b.pixels.len() as f64).collect();

    let mut line: Option<(f64, f64)> = None;
    let mut vs = Vec::new();
    for _ in 0..3 {
        vs = used
            .iter()
            .zip(&xs)
            .map(|(bin, &wbar)| {
                let rho = |w: f64| match line {
                    Some((a, b)) => {
                        let centre = a + b * wbar;
                        let here = a + b * w;
                        if centre > 0.0 && here > 0.0 {
                            here / centre
                        } else {
                            1.0
                        }
                    }
                    None => 1.0,
                };
                bin_variance(bin, &rho)
            })
            .collect();
        if vs.iter().all(|&v| v == 0.0) {
            line = Some((0.0, 0.0));
            break;
        }
        let floor = vs.iter().cloned().fold(0.0, f64::max) * 1e-6;
        let weights: Vec<f64> = xs
            .iter()
            .zip(&vs)
            .zip(&counts)
            .map(|((&x, &v), &n)| {
                let model = match line {
                    Some((a, b)) => a + b * x,
                    None => v,
                };
                n / (2.0 * model.max(floor).powi(2))
            })
            .collect();
        line = Some(weighted_line(&xs, &vs, &weights));
    }
    let (read, shot) = line.expect("at least one iteration");
    let rms = (xs
        .iter()
        .zip(&vs)
        .map(|(x, v)| (v - read - shot * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    let clamped = read < 0.0 || shot < 0.0;
    if clamped {
        log::warn!("negative noise fit (read {read:e}, shot {shot:e}) clamped to zero");
    }
    Ok(ChannelNoiseFit {
        read: read.max(0.0),
        shot: shot.max(0.0),
        rms_residual: rms,
        clamped,
    })
}

/// Per-channel noise fit from `(noisy, clean)` stacks.
pub fn estimate_noise(pairs: &[(ChannelStack, ChannelStack)], bins: usize) -> Result<NoiseFit> {
    let mut read = [0.0; 4];
    let mut shot = [0.0; 4];
    let mut rms = [0.0; 4];
    let mut clamped = [false; 4];
    for ch in Channel::ALL {
        let planes: Vec<(&Plane, &Plane)> = pairs
            .iter()
            .map(|(noisy, clean)| (noisy.plane(ch), clean.plane(ch)))
            .collect();
        let fit = estimate_noise_plane(&planes, bins)?;
        let i = ch.index();
        read[i] = fit.read;
        shot[i] = fit.shot;
        rms[i] = fit.rms_residual;
        clamped[i] = fit.clamped;
    }
    Ok(NoiseFit {
        params: NoiseParams::new(read, shot)?,
        rms_residual: rms,
        clamped,
    })
}

/// Everything recovered by calibration, plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub scale: IntensityScale,
    pub noise: NoiseParams,
    pub noise_spread: NoiseSpread,
    pub gamma_residual: [f64; 4],
    pub noise_residual: [f64; 4],
    pub noise_clamped: [bool; 4],
    pub repeats: usize,
}

impl Default for CalibrationReport {
    fn default() -> Self {
        Self {
            scale: IntensityScale::unity(),
            noise: NoiseParams::zero(),
            noise_spread: NoiseSpread::default(),
            gamma_residual: [0.0; 4],
            noise_residual: [0.0; 4],
            noise_clamped: [false; 4],
            repeats: 0,
        }
    }
}

impl CalibrationReport {
    pub fn with_gamma(mut self, fit: &GammaFit) -> Self {
        self.scale = fit.scale;
        self.gamma_residual = fit.rms_residual;
        self
    }

    pub fn to_keyvalues(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert_list("gamma", &self.scale.gamma);
        kv.insert_list("gamma_rms_residual", &self.gamma_residual);
        kv.insert_list("noise_read", &self.noise.lambda_read);
        kv.insert_list("noise_shot", &self.noise.lambda_shot);
        kv.insert_list("noise_read_std", &self.noise_spread.read.map(|p| p.1));
        kv.insert_list("noise_shot_std", &self.noise_spread.shot.map(|p| p.1));
        kv.insert_list("noise_rms_residual", &self.noise_residual);
        kv.insert_list("noise_clamped", &self.noise_clamped);
        kv.insert("repeats", self.repeats);
        kv
    }

    pub fn from_keyvalues(kv: &KeyValues) -> Result<Self> {
        let four = |key: &str, default: [f64; 4]| -> Result<[f64; 4]> {
            Ok(kv.get_per_channel(key)?.unwrap_or(default))
        };
        let scale = IntensityScale::new(four("gamma", [1.0; 4])?)?;
        let noise = NoiseParams::new(four("noise_read", [0.0; 4])?, four("noise_shot", [0.0; 4])?)?;
        let read_std = four("noise_read_std", [0.0; 4])?;
        let shot_std = four("noise_shot_std", [0.0; 4])?;
        let clamped = kv
            .get_list::<bool>("noise_clamped")?
            .and_then(|v| <[bool; 4]>::try_from(v).ok())
            .unwrap_or([false; 4]);
        Ok(Self {
            scale,
            noise,
            noise_spread: NoiseSpread {
                read: std::array::from_fn(|i| (noise.lambda_read[i], read_std[i])),
                shot: std::array::from_fn(|i| (noise.lambda_shot[i], shot_std[i])),
            },
            gamma_residual: four("gamma_rms_residual", [0.0; 4])?,
            noise_residual: four("noise_rms_residual", [0.0; 4])?,
            noise_clamped: clamped,
            repeats: kv.get("repeats")?.unwrap_or(0),
        })
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Runs [`estimate_noise`] on `repeats` independently generated batches and
/// summarizes each parameter by its mean and standard deviation.
///
/// `generator(i)` returns the `(noisy, clean)` pairs of batch `i`.
pub fn repeat_noise_calibration<G>(mut generator: G, repeats: usize, bins: usize) -> Result<CalibrationReport>
where
    G: FnMut(usize) -> Result<Vec<(ChannelStack, ChannelStack)>>,
{
    if repeats < 2 {
        return Err(Error::domain(format!("need at least 2 repeats, got {repeats}")));
    }
    let mut fits = Vec::with_capacity(repeats);
    for i in 0..repeats {
        fits.push(estimate_noise(&generator(i)?, bins)?);
    }
    let mut report = CalibrationReport {
        repeats,
        ..CalibrationReport::default()
    };
    for ch in Channel::ALL {
        let i = ch.index();
        let reads: Vec<f64> = fits.iter().map(|f| f.params.lambda_read[i]).collect();
        let shots: Vec<f64> = fits.iter().map(|f| f.params.lambda_shot[i]).collect();
        let resid: Vec<f64> = fits.iter().map(|f| f.rms_residual[i]).collect();
        report.noise_spread.read[i] = mean_std(&reads);
        report.noise_spread.shot[i] = mean_std(&shots);
        report.noise.lambda_read[i] = report.noise_spread.read[i].0;
        report.noise.lambda_shot[i] = report.noise_spread.shot[i].0;
        report.noise_residual[i] = mean_std(&resid).0;
        report.noise_clamped[i] = fits.iter().any(|f| f.clamped[i]);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Intensity varies along x; measures horizontal contrast.
    Horizontal,
    /// Intensity varies along y.
    Vertical,
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Orientation::Horizontal => "horizontal",
            Orientation::Vertical => "vertical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtfCurve {
    pub orientation: Orientation,
    pub channel: Channel,
    /// `(cycles per pixel, normalized contrast)`, frequencies increasing.
    pub samples: Vec<(f64, f64)>,
}

/// Michelson contrast `(max - min) / (max + min)` of the sinusoid of
/// frequency `freq` fitted to `profile` by least squares.
fn sinusoid_contrast(profile: &[f64], start: usize, freq: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * freq;
    let basis = |x: f64| [1.0, (omega * x).cos(), (omega * x).sin()];
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (k, &y) in profile.iter().enumerate() {
        let b = basis((start + k) as f64);
        for i in 0..3 {
            aty[i] += b[i] * y;
            for j in 0..3 {
                ata[i][j] += b[i] * b[j];
            }
        }
    }
    // The sine column vanishes at Nyquist; fit mean and cosine only.
    let dim = if ata[2][2] < 1e-9 * ata[0][0] { 2 } else { 3 };
    let coef = solve(&ata, &aty, dim);
    let amplitude = (coef[1].powi(2) + coef[2].powi(2)).sqrt();
    if coef[0] <= 0.0 {
        0.0
    } else {
        amplitude / coef[0]
    }
}

fn solve(a: &[[f64; 3]; 3], b: &[f64; 3], dim: usize) -> [f64; 3] {
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..dim {
        m[i][..dim].copy_from_slice(&a[i][..dim]);
        m[i][3] = b[i];
    }
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let pivot_row = m[col];
        for (row, r) in m.iter_mut().enumerate().take(dim) {
            if row != col {
                let f = r[col] / pivot_row[col];
                for (v, p) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                    *v -= f * p;
                }
            }
        }
    }
    let mut x = [0.0; 3];
    for i in 0..dim {
        x[i] = m[i][3] / m[i][i];
    }
    x
}

/// MTF of the green channel.
pub fn measure_mtf(model: &DegradationModel, frequencies: &[f64], orientation: Orientation) -> Result<MtfCurve> {
    measure_mtf_channel(model, frequencies, orientation, Channel::G1)
}

/// Renders sinusoidal charts, passes them through scaling and blur (no
/// noise) and reports output contrast over input contrast. Kernels have
/// unit sum, so this is the response normalized to zero frequency.
pub fn measure_mtf_channel(
    model: &DegradationModel,
    frequencies: &[f64],
    orientation: Orientation,
    channel: Channel,
) -> Result<MtfCurve> {
    if frequencies.is_empty() {
        return Err(Error::domain("no frequencies given"));
    }
    if let Some(f) = frequencies.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
        return Err(Error::domain(format!(
            "frequency {f} outside (0, 0.5] cycles/pixel"
        )));
    }
    if frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("frequencies must be strictly increasing"));
    }
    let kernel = model.psfs.get(channel).kernel();
    let (kr, kc) = kernel.dim();
    let size = (4 * kr.max(kc)).max(256);
    let size = size + size % 2;
    let (lo, hi) = (size / 4, 3 * size / 4);
    let centre = (size / 2) as f64;

    let mut raw = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let omega = 2.0 * std::f64::consts::PI * f;
        let chart = Plane::from_shape_fn((size, size), |(r, c)| {
            let x = match orientation {
                Orientation::Horizontal => c as f64,
                Orientation::Vertical => r as f64,
            };
            0.5 + 0.5 * (omega * (x - centre)).cos()
        });
        let scaled = &chart * model.scale.get(channel);
        let blurred = convolve_plane(&scaled, kernel)?;
        let profile = |p: &Plane| -> Vec<f64> {
            let region = p.slice(s![lo..hi, lo..hi]);
            match orientation {
                Orientation::Horizontal => region.columns().into_iter().map(|c| c.mean().unwrap()).collect(),
                Orientation::Vertical => region.rows().into_iter().map(|r| r.mean().unwrap()).collect(),
            }
        };
        let input = sinusoid_contrast(&profile(&scaled), lo, f);
        let output = sinusoid_contrast(&profile(&blurred), lo, f);
        raw.push(if input > 0.0 { output / input } else { 0.0 });
    }
    let samples = frequencies
        .iter()
        .zip(&raw)
        .map(|(&f, &c)| (f, c.clamp(0.0, 1.0)))
        .collect();
    Ok(MtfCurve {
        orientation,
        channel,
        samples,
    })
}

/// Per-sample mean of repeated frames, rounded half up.
pub fn average_frames(frames: &[BayerRaw]) -> Result<BayerRaw> {
    let first = frames
        .first()
        .ok_or_else(|| Error::domain("no frames to average"))?;
    for f in frames {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(Error::dim(format!(
                "frame {}x{} differs from {}x{}",
                f.width(),
                f.height(),
                first.width(),
                first.height()
            )));
        }
        if f.white_level() != first.white_level() {
            return Err(Error::domain("frames have different white levels"));
        }
    }
    let n = frames.len() as f64;
    let mut sums = vec![0u64; first.samples().len()];
    for f in frames {
        for (s, &v) in sums.iter_mut().zip(f.samples()) {
            *s += v as u64;
        }
    }
    let samples = sums
        .into_iter()
        .map(|s| quantize(s as f64 / n, first.white_level()))
        .collect();
    BayerRaw::with_levels(
        first.width(),
        first.height(),
        samples,
        first.black_level(),
        first.white_level(),
    )
}
