//! Diffraction point-spread functions of a display-covered camera.
//!
//! The display transmittance inside the lens aperture is Fourier
//! transformed; the squared magnitude is the focal-plane intensity. One DFT
//! bin corresponds to `lambda * f / (N * pitch)` at the sensor, so the
//! spectrum is resampled by `r = N * pitch * rho / (lambda * f)` bins per
//! sensor pixel and normalized to unit sum.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::fft::{fftshift, Fft2};
use crate::raw::{Channel, Color};

/// Sampled display transmittance, `N x N` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplayPattern {
    transmittance: Array2<f64>,
    pitch_um: f64,
}

impl DisplayPattern {
    pub fn new(transmittance: Array2<f64>, pitch_um: f64) -> Result<Self> {
        let (rows, cols) = transmittance.dim();
        if rows != cols || rows < 2 {
            return Err(Error::dim(format!(
                "display pattern must be square with N >= 2, got {rows}x{cols}"
            )));
        }
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(Error::domain(format!("pattern pitch must be positive, got {pitch_um}")));
        }
        if transmittance.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("transmittance values must lie in [0, 1]"));
        }
        Ok(Self {
            transmittance,
            pitch_um,
        })
    }

    pub fn transmittance(&self) -> &Array2<f64> {
        &self.transmittance
    }

    pub fn pitch_um(&self) -> f64 {
        self.pitch_um
    }

    pub fn size(&self) -> usize {
        self.transmittance.nrows()
    }

    /// Physical side length `N * pitch`.
    pub fn extent_um(&self) -> f64 {
        self.size() as f64 * self.pitch_um
    }

    /// Vertical stripes: each period of `period` samples has `open` fully
    /// transmissive columns followed by opaque ones.
    pub fn stripes(n: usize, pitch_um: f64, period: usize, open: usize) -> Result<Self> {
        if period == 0 || open > period {
            return Err(Error::domain("stripe period must be positive and >= open width"));
        }
        let t = Array2::from_shape_fn((n, n), |(_, c)| if c % period < open { 1.0 } else { 0.0 });
        Self::new(t, pitch_um)
    }

    /// Periodic replication of this pattern (treated as a unit cell) onto an
    /// `n x n` grid.
    pub fn tiled(&self, n: usize) -> Result<Self> {
        let m = self.size();
        let t = Array2::from_shape_fn((n, n), |(r, c)| self.transmittance[[r % m, c % m]]);
        Self::new(t, self.pitch_um)
    }
}

/// How far a PSF extends after resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSupport {
    /// Smallest centred odd square holding at least this fraction of the
    /// energy.
    EnergyFraction(f64),
    /// Centred odd square of exactly this side.
    Fixed(usize),
    /// Keep the whole resampled grid.
    Full,
}

impl Default for KernelSupport {
    fn default() -> Self {
        KernelSupport::EnergyFraction(0.9999)
    }
}

impl std::str::FromStr for KernelSupport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(KernelSupport::Full);
        }
        if let Some(frac) = s.strip_prefix("energy:") {
            let f: f64 = frac
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad energy fraction `{frac}`")))?;
            return Ok(KernelSupport::EnergyFraction(f));
        }
        s.parse::<usize>()
            .map(KernelSupport::Fixed)
            .map_err(|_| Error::domain(format!("bad kernel support `{s}` (full | energy:<f> | <odd size>)")))
    }
}

impl std::fmt::Display for KernelSupport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSupport::EnergyFraction(q) => write!(f, "energy:{q}"),
            KernelSupport::Fixed(n) => write!(f, "{n}"),
            KernelSupport::Full => f.write_str("full"),
        }
    }
}

/// Camera optics. All lengths in micrometres, wavelengths in nanometres.
/// Per-colour arrays are ordered R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    pub aperture_diameter_um: f64,
    pub focal_length_um: f64,
    /// Pixel pitch of one reassembled Bayer channel (twice the photosite
    /// pitch).
    pub sensor_pitch_um: f64,
    pub wavelengths_nm: [f64; 3],
    pub r_override: Option<[f64; 3]>,
    /// Optional `(wavelength_nm, weight)` lists replacing the single
    /// centre wavelength of a colour.
    pub spectra: [Option<Vec<(f64, f64)>>; 3],
    pub support: KernelSupport,
    /// Replicate a pattern smaller than the aperture instead of failing.
    pub periodic_tiling: bool,
}

impl Default for OpticalConfig {
    /// The measured sensor/lens geometry: 3333 um aperture, f = 6000 um,
    /// 3.1 um channel pitch, 640/520/450 nm.
    fn default() -> Self {
        Self {
            aperture_diameter_um: 3333.0,
            focal_length_um: 6000.0,
            sensor_pitch_um: 3.1,
            wavelengths_nm: [640.0, 520.0, 450.0],
            r_override: None,
            spectra: [None, None, None],
            support: KernelSupport::default(),
            periodic_tiling: false,
        }
    }
}

/// Resampling factors reported alongside the measured geometry.
pub const MEASURED_R: [f64; 3] = [2.41, 2.98, 3.44];

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive, got {v}")))
            }
        };
        positive("aperture_diameter_um", self.aperture_diameter_um)?;
        positive("focal_length_um", self.focal_length_um)?;
        positive("sensor_pitch_um", self.sensor_pitch_um)?;
        for &w in &self.wavelengths_nm {
            positive("wavelength_nm", w)?;
        }
        if let Some(r) = &self.r_override {
            for &v in r {
                positive("r_override", v)?;
            }
        }
        for spectrum in self.spectra.iter().flatten() {
            if spectrum.is_empty() {
                return Err(Error::domain("spectrum list must not be empty"));
            }
            for &(l, w) in spectrum {
                positive("spectrum wavelength", l)?;
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::domain(format!("spectrum weight must be >= 0, got {w}")));
                }
            }
            if spectrum.iter().all(|&(_, w)| w == 0.0) {
                return Err(Error::domain("spectrum weights sum to zero"));
            }
        }
        match self.support {
            KernelSupport::EnergyFraction(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::domain(format!("energy fraction must lie in (0, 1], got {q}")))
            }
            KernelSupport::Fixed(n) if n % 2 == 0 => {
                Err(Error::domain(format!("fixed kernel support must be odd, got {n}")))
            }
            _ => Ok(()),
        }
    }

    pub fn wavelength_nm(&self, color: Color) -> f64 {
        self.wavelengths_nm[color.index()]
    }

    /// Resampling factor at an arbitrary wavelength, taking the aperture
    /// diameter as the extent of the transformed grid. With an override for
    /// `color`, the override is scaled by `lambda_c / wavelength`.
    pub fn factor_at(&self, color: Color, wavelength_nm: f64) -> f64 {
        match &self.r_override {
            Some(r) => r[color.index()] * self.wavelength_nm(color) / wavelength_nm,
            None => sampling_ratio(
                self.aperture_diameter_um,
                self.sensor_pitch_um,
                wavelength_nm,
                self.focal_length_um,
            ),
        }
    }
}

/// `r = extent * rho / (lambda * f)`, with `lambda` converted from nm to um.
pub fn sampling_ratio(extent_um: f64, sensor_pitch_um: f64, wavelength_nm: f64, focal_length_um: f64) -> f64 {
    extent_um * sensor_pitch_um / (wavelength_nm * 1e-3 * focal_length_um)
}

/// Spatial down-sampling factor for a colour's centre wavelength.
pub fn downsample_factor(config: &OpticalConfig, color: Color) -> f64 {
    config.factor_at(color, config.wavelength_nm(color))
}

/// Normalized blur kernel; origin at the centre pixel `(rows/2, cols/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    kernel: Array2<f64>,
    color: Color,
    r: f64,
    wavelength_nm: f64,
}

impl Psf {
    /// Validates a kernel that is already normalized.
    pub fn new(kernel: Array2<f64>, color: Color, r: f64, wavelength_nm: f64) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::DegenerateKernel("empty kernel".into()));
        }
        if kernel.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("kernel entries must be finite and non-negative"));
        }
        let sum: f64 = kernel.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("kernel sums to {sum}, expected 1")));
        }
        Ok(Self {
            kernel,
            color,
            r,
            wavelength_nm,
        })
    }

    /// Scales non-negative weights to unit sum.
    pub fn normalized(weights: Array2<f64>, color: Color, r: f64, wavelength_nm: f64) -> Result<Self> {
        let kernel = normalize(weights)?;
        Self::new(kernel, color, r, wavelength_nm)
    }

    pub fn delta(color: Color) -> Self {
        Self {
            kernel: Array2::ones((1, 1)),
            color,
            r: 1.0,
            wavelength_nm: 0.0,
        }
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn color(&self) -> Color {
        self.color
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    pub fn with_color(mut self, color: Color) -> Self {
        self.color = color;
        self
    }
}

/// One kernel per Bayer channel; G1 and G2 share the green kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfSet {
    psfs: [Psf; 4],
}

impl PsfSet {
    pub fn new(red: Psf, green: Psf, blue: Psf) -> Self {
        Self {
            psfs: [red, green.clone(), green, blue],
        }
    }

    pub fn from_channels(psfs: [Psf; 4]) -> Result<Self> {
        if psfs[Channel::G1.index()].kernel != psfs[Channel::G2.index()].kernel {
            return Err(Error::domain("G1 and G2 kernels must be identical"));
        }
        Ok(Self { psfs })
    }

    pub fn delta() -> Self {
        Self::new(
            Psf::delta(Color::Red),
            Psf::delta(Color::Green),
            Psf::delta(Color::Blue),
        )
    }

    /// The same kernel for every channel.
    pub fn uniform(kernel: Array2<f64>) -> Result<Self> {
        let psf = Psf::normalized(kernel, Color::Green, 1.0, 0.0)?;
        Ok(Self::new(
            psf.clone().with_color(Color::Red),
            psf.clone(),
            psf.with_color(Color::Blue),
        ))
    }

    pub fn get(&self, channel: Channel) -> &Psf {
        &self.psfs[channel.index()]
    }

    pub fn by_color(&self, color: Color) -> &Psf {
        match color {
            Color::Red => &self.psfs[0],
            Color::Green => &self.psfs[1],
            Color::Blue => &self.psfs[3],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &Psf)> {
        Channel::ALL.into_iter().zip(self.psfs.iter())
    }

    /// Largest kernel extent `(rows, cols)` over all channels.
    pub fn max_dim(&self) -> (usize, usize) {
        self.psfs.iter().fold((0, 0), |(r, c), p| {
            let (kr, kc) = p.kernel.dim();
            (r.max(kr), c.max(kc))
        })
    }
}

fn normalize(weights: Array2<f64>) -> Result<Array2<f64>> {
    let sum: f64 = weights.sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::DegenerateKernel(format!(
            "kernel weights sum to {sum}; cannot normalize"
        )));
    }
    Ok(weights.mapv(|v| v / sum))
}

/// Multiplies the pattern by the centred circular pupil and trims the grid
/// to the aperture's bounding square.
pub fn crop_aperture(pattern: &DisplayPattern, config: &OpticalConfig) -> Result<DisplayPattern> {
    config.validate()?;
    let pitch = pattern.pitch_um;
    let diameter = config.aperture_diameter_um;
    let needed = ((diameter / pitch) - 1e-9).ceil().max(1.0) as usize;

    let source = if pattern.size() < needed {
        if !config.periodic_tiling {
            return Err(Error::Coverage {
                extent_um: pattern.extent_um(),
                aperture_um: diameter,
            });
        }
        pattern.tiled(needed)?
    } else {
        pattern.clone()
    };

    let n = source.size();
    let mut k = needed.min(n);
    if (n - k) % 2 == 1 {
        k += 1;
    }
    let offset = (n - k) / 2;
    let centre = (k as f64 - 1.0) / 2.0;
    let radius_sq = (diameter / 2.0).powi(2);
    let window = source.transmittance.slice(s![offset..offset + k, offset..offset + k]);
    let cropped = Array2::from_shape_fn((k, k), |(r, c)| {
        let dy = (r as f64 - centre) * pitch;
        let dx = (c as f64 - centre) * pitch;
        if dx * dx + dy * dy <= radius_sq {
            window[[r, c]]
        } else {
            0.0
        }
    });
    DisplayPattern::new(cropped, pitch)
}

/// Centred squared DFT magnitude `|F(g)|^2` of a (cropped) pattern, zero
/// frequency at `(N/2, N/2)`. Not normalized.
pub fn intensity_spectrum(pattern: &DisplayPattern) -> Array2<f64> {
    let n = pattern.size();
    let fft = Fft2::new(n, n);
    let spectrum = fft.forward_real(&pattern.transmittance);
    fftshift(&spectrum.mapv(|z| z.norm_sqr()))
}

/// Samples a centred grid every `r` bins along each axis by linear
/// interpolation. The output is odd-sized with the zero frequency in the
/// middle; positions that fall outside the source grid read as zero.
pub fn resample_centered(grid: &Array2<f64>, r: f64) -> Array2<f64> {
    let (rows, cols) = grid.dim();
    let row_taps = sample_positions(rows, r);
    let col_taps = sample_positions(cols, r);

    let mut partial = Array2::zeros((row_taps.len(), cols));
    for (i, taps) in row_taps.iter().enumerate() {
        for &(src, w) in taps {
            let mut dst = partial.row_mut(i);
            dst.scaled_add(w, &grid.row(src));
        }
    }
    let mut out = Array2::zeros((row_taps.len(), col_taps.len()));
    for (j, taps) in col_taps.iter().enumerate() {
        for &(src, w) in taps {
            let mut dst = out.column_mut(j);
            dst.scaled_add(w, &partial.column(src));
        }
    }
    out
}

fn sample_positions(len: usize, r: f64) -> Vec<Vec<(usize, f64)>> {
    let centre = len / 2;
    let half = (centre as f64 / r + 1e-9).floor() as i64;
    (-half..=half)
        .map(|k| {
            let p = centre as f64 + k as f64 * r;
            let mut taps = Vec::with_capacity(2);
            if p < -1e-9 || p > (len - 1) as f64 + 1e-9 {
                return taps;
            }
            let p = p.clamp(0.0, (len - 1) as f64);
            let i0 = p.floor() as usize;
            let t = p - i0 as f64;
            if t == 0.0 || i0 + 1 >= len {
                taps.push((i0, 1.0));
            } else {
                taps.push((i0, 1.0 - t));
                taps.push((i0 + 1, t));
            }
            taps
        })
        .collect()
}

/// Crops (or zero-pads) a centred odd kernel according to `support`.
pub fn truncate_support(kernel: &Array2<f64>, support: KernelSupport) -> Array2<f64> {
    let (rows, cols) = kernel.dim();
    let (cr, cc) = (rows / 2, cols / 2);
    let max_half = cr.min(cc).min((rows - 1 - cr).min(cols - 1 - cc));
    match support {
        KernelSupport::Full => kernel.clone(),
        KernelSupport::Fixed(n) => {
            let half = n / 2;
            Array2::from_shape_fn((n, n), |(i, j)| {
                let r = cr as i64 + i as i64 - half as i64;
                let c = cc as i64 + j as i64 - half as i64;
                if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                    kernel[[r as usize, c as usize]]
                } else {
                    0.0
                }
            })
        }
        KernelSupport::EnergyFraction(q) => {
            let total: f64 = kernel.sum();
            let target = q * total;
            let mut inside = kernel[[cr, cc]];
            let mut half = 0;
            while half < max_half && inside < target * (1.0 - 1e-12) {
                half += 1;
                inside = kernel
                    .slice(s![cr - half..=cr + half, cc - half..=cc + half])
                    .sum();
            }
            if inside < target * (1.0 - 1e-12) {
                // The square window is exhausted; keep everything.
                return kernel.clone();
            }
            kernel
                .slice(s![cr - half..=cr + half, cc - half..=cc + half])
                .to_owned()
        }
    }
}

fn monochromatic_kernel(spectrum: &Array2<f64>, r: f64) -> Result<Array2<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("resampling factor must be positive, got {r}")));
    }
    normalize(resample_centered(spectrum, r))
}

/// PSF of an aperture-cropped pattern for one colour band.
pub fn simulate_psf(cropped: &DisplayPattern, config: &OpticalConfig, color: Color) -> Result<Psf> {
    config.validate()?;
    if cropped.transmittance.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateKernel("display pattern is opaque everywhere".into()));
    }
    let spectrum = intensity_spectrum(cropped);
    let centre_nm = config.wavelength_nm(color);
    let r = downsample_factor(config, color);

    let combined = match &config.spectra[color.index()] {
        None => monochromatic_kernel(&spectrum, r)?,
        Some(lines) => {
            let parts = lines
                .iter()
                .filter(|&&(_, w)| w > 0.0)
                .map(|&(l, w)| Ok((monochromatic_kernel(&spectrum, config.factor_at(color, l))?, w)))
                .collect::<Result<Vec<_>>>()?;
            let rows = parts.iter().map(|(k, _)| k.nrows()).max().unwrap_or(1);
            let cols = parts.iter().map(|(k, _)| k.ncols()).max().unwrap_or(1);
            let mut acc = Array2::zeros((rows, cols));
            for (k, w) in &parts {
                let (kr, kc) = k.dim();
                let (or, oc) = ((rows - kr) / 2, (cols - kc) / 2);
                let mut dst = acc.slice_mut(s![or..or + kr, oc..oc + kc]);
                dst.scaled_add(*w, k);
            }
            acc
        }
    };
    let kernel = truncate_support(&combined, config.support);
    Psf::normalized(kernel, color, r, centre_nm)
}

/// Crops the pattern once and simulates one PSF per colour band.
pub fn psf_set(pattern: &DisplayPattern, config: &OpticalConfig) -> Result<PsfSet> {
    let cropped = crop_aperture(pattern, config)?;
    let red = simulate_psf(&cropped, config, Color::Red)?;
    let green = simulate_psf(&cropped, config, Color::Green)?;
    let blue = simulate_psf(&cropped, config, Color::Blue)?;
    Ok(PsfSet::new(red, green, blue))
}

/// Centred second moments `(horizontal, vertical)` of a kernel, in pixels^2.
pub fn second_moments(kernel: &Array2<f64>) -> (f64, f64) {
    let total: f64 = kernel.sum();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let (mut mr, mut mc) = (0.0, 0.0);
    for ((r, c), &v) in kernel.indexed_iter() {
        mr += v * r as f64;
        mc += v * c as f64;
    }
    mr /= total;
    mc /= total;
    let (mut vr, mut vc) = (0.0, 0.0);
    for ((r, c), &v) in kernel.indexed_iter() {
        vr += v * (r as f64 - mr).powi(2);
        vc += v * (c as f64 - mc).powi(2);
    }
    (vc / total, vr / total)
}

/// Horizontal over vertical second moment. A kernel with no vertical
/// spread returns `f64::INFINITY`; a single point returns 1.
pub fn psf_anisotropy(psf: &Psf) -> f64 {
    let (h, v) = second_moments(&psf.kernel);
    if v == 0.0 {
        if h == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        h / v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn brute_force_spectrum(g: &Array2<f64>) -> Array2<f64> {
        let n = g.nrows();
        let mut m = Array2::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let phase = -2.0 * PI * ((a * i + b * j) as f64) / n as f64;
                        re += g[[i, j]] * phase.cos();
                        im += g[[i, j]] * phase.sin();
                    }
                }
                m[[a, b]] = re * re + im * im;
            }
        }
        m
    }

    fn unit_config() -> OpticalConfig {
        OpticalConfig {
            r_override: Some([1.0; 3]),
            support: KernelSupport::Full,
            ..OpticalConfig::default()
        }
    }

    #[test]
    fn brute_force_4x4() {
        let g = Array2::from_shape_vec(
            (4, 4),
            vec![
                0.1, 0.9, 0.0, 0.3, 1.0, 0.5, 0.2, 0.0, 0.7, 0.7, 0.4, 0.8, 0.0, 0.6, 1.0, 0.25,
            ],
        )
        .unwrap();
        let pattern = DisplayPattern::new(g.clone(), 1.0).unwrap();
        let psf = simulate_psf(&pattern, &unit_config(), Color::Red).unwrap();
        let m = brute_force_spectrum(&g);
        let total: f64 = m.sum();
        assert_eq!(psf.kernel().dim(), (5, 5));
        for r in 0..5 {
            for c in 0..5 {
                let want = if r < 4 && c < 4 {
                    m[[(r + 2) % 4, (c + 2) % 4]] / total
                } else {
                    0.0
                };
                assert!((psf.kernel()[[r, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factor_matches_direct_evaluation() {
        let cfg = OpticalConfig::default();
        let r = downsample_factor(&cfg, Color::Red);
        assert!((r - 3333.0 * 3.1 / (0.640 * 6000.0)).abs() < 1e-12);
        assert!((r - 2.690).abs() < 1e-3);
        let doubled = sampling_ratio(3333.0, 3.1, 1280.0, 6000.0);
        assert!((doubled - r / 2.0).abs() < 1e-12);
    }

    #[test]
    fn override_wins() {
        let cfg = OpticalConfig {
            r_override: Some(MEASURED_R),
            ..OpticalConfig::default()
        };
        assert_eq!(downsample_factor(&cfg, Color::Green), 2.98);
        assert!((cfg.factor_at(Color::Green, 260.0) - 5.96).abs() < 1e-12);
    }

    #[test]
    fn measured_factors_keep_r_lambda_constant() {
        let products: Vec<f64> = (0..3)
            .map(|i| MEASURED_R[i] * OpticalConfig::default().wavelengths_nm[i])
            .collect();
        assert!((products[0] - 1542.4).abs() < 1e-9);
        assert!((products[1] - 1549.6).abs() < 1e-9);
        assert!((products[2] - 1548.0).abs() < 1e-9);
        let mean = products.iter().sum::<f64>() / 3.0;
        assert!(products.iter().all(|p| (p / mean - 1.0).abs() < 0.005));
    }

    #[test]
    fn crop_open_pattern_is_disk() {
        let pattern = DisplayPattern::new(Array2::ones((40, 40)), 1.0).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 20.0,
            ..OpticalConfig::default()
        };
        let cropped = crop_aperture(&pattern, &cfg).unwrap();
        assert_eq!(cropped.size(), 20);
        let c = 9.5;
        for ((r, col), &v) in cropped.transmittance().indexed_iter() {
            let inside = (r as f64 - c).powi(2) + (col as f64 - c).powi(2) <= 100.0;
            assert_eq!(v, if inside { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn crop_opaque_stays_opaque() {
        let pattern = DisplayPattern::new(Array2::zeros((16, 16)), 2.0).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 20.0,
            ..OpticalConfig::default()
        };
        let cropped = crop_aperture(&pattern, &cfg).unwrap();
        assert!(cropped.transmittance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crop_stripes_against_mask() {
        let n = 32;
        let pattern = DisplayPattern::stripes(n, 1.5, 4, 1).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: n as f64 * 1.5 / 2.0,
            ..OpticalConfig::default()
        };
        let cropped = crop_aperture(&pattern, &cfg).unwrap();
        let k = cropped.size();
        assert_eq!(k, 16);
        let off = (n - k) / 2;
        let c = (k as f64 - 1.0) / 2.0;
        for r in 0..k {
            for col in 0..k {
                let d2 = ((r as f64 - c) * 1.5).powi(2) + ((col as f64 - c) * 1.5).powi(2);
                let mask = if d2 <= (cfg.aperture_diameter_um / 2.0).powi(2) { 1.0 } else { 0.0 };
                let want = pattern.transmittance()[[r + off, col + off]] * mask;
                assert_eq!(cropped.transmittance()[[r, col]], want);
            }
        }
    }

    #[test]
    fn crop_coverage_error_and_tiling() {
        let cell = DisplayPattern::stripes(4, 10.0, 4, 2).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 100.0,
            ..OpticalConfig::default()
        };
        assert!(matches!(crop_aperture(&cell, &cfg), Err(Error::Coverage { .. })));
        let tiled_cfg = OpticalConfig {
            periodic_tiling: true,
            ..cfg
        };
        let cropped = crop_aperture(&cell, &tiled_cfg).unwrap();
        assert_eq!(cropped.size(), 10);
    }

    #[test]
    fn crop_is_idempotent() {
        let pattern = DisplayPattern::stripes(51, 1.0, 5, 2).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 30.5,
            ..OpticalConfig::default()
        };
        let once = crop_aperture(&pattern, &cfg).unwrap();
        let twice = crop_aperture(&once, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn opaque_pattern_is_degenerate() {
        let pattern = DisplayPattern::new(Array2::zeros((8, 8)), 1.0).unwrap();
        assert!(matches!(
            simulate_psf(&pattern, &unit_config(), Color::Red),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn open_aperture_is_isotropic() {
        let pattern = DisplayPattern::new(Array2::ones((64, 64)), 1.0).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 64.0,
            r_override: Some([2.0; 3]),
            support: KernelSupport::EnergyFraction(0.999),
            ..OpticalConfig::default()
        };
        let set = psf_set(&pattern, &cfg).unwrap();
        let psf = set.get(Channel::R);
        assert!((psf.kernel().sum() - 1.0).abs() < 1e-9);
        assert!((psf_anisotropy(psf) - 1.0).abs() < 0.01);
    }

    #[test]
    fn stripes_spread_horizontally() {
        let pattern = DisplayPattern::stripes(128, 1.0, 8, 2).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 128.0,
            r_override: Some([1.5; 3]),
            ..OpticalConfig::default()
        };
        let set = psf_set(&pattern, &cfg).unwrap();
        let psf = set.get(Channel::G1);
        let (h, v) = second_moments(psf.kernel());
        assert!(h > v, "h {h} v {v}");
        assert!(psf_anisotropy(psf) > 1.0);
    }

    #[test]
    fn shift_invariance() {
        let g = Array2::from_shape_fn((8, 8), |(r, c)| ((r * 3 + c * 5) % 7) as f64 / 7.0);
        let shifted = Array2::from_shape_fn((8, 8), |(r, c)| g[[(r + 3) % 8, (c + 5) % 8]]);
        let cfg = unit_config();
        let a = simulate_psf(&DisplayPattern::new(g, 1.0).unwrap(), &cfg, Color::Green).unwrap();
        let b = simulate_psf(&DisplayPattern::new(shifted, 1.0).unwrap(), &cfg, Color::Green).unwrap();
        for (x, y) in a.kernel().iter().zip(b.kernel().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_energy() {
        let g = Array2::from_shape_fn((12, 12), |(r, c)| ((r * r + 3 * c) % 5) as f64 / 4.0);
        let energy: f64 = g.iter().map(|v| v * v).sum();
        let pattern = DisplayPattern::new(g, 1.0).unwrap();
        let m = intensity_spectrum(&pattern);
        assert!((m.sum() / (144.0 * energy) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn anisotropy_of_line_and_point() {
        let line = Psf::normalized(Array2::ones((1, 5)), Color::Red, 1.0, 640.0).unwrap();
        assert_eq!(psf_anisotropy(&line), f64::INFINITY);
        assert_eq!(psf_anisotropy(&Psf::delta(Color::Red)), 1.0);
        let gauss = Array2::from_shape_fn((15, 15), |(r, c)| {
            let (dy, dx) = (r as f64 - 7.0, c as f64 - 7.0);
            (-(dx * dx + dy * dy) / 8.0).exp()
        });
        let g = Psf::normalized(gauss, Color::Red, 1.0, 640.0).unwrap();
        assert!((psf_anisotropy(&g) - 1.0).abs() < 0.01);
    }

    #[test]
    fn energy_truncation_keeps_fraction() {
        let k = Array2::from_shape_fn((21, 21), |(r, c)| {
            let (dy, dx) = (r as f64 - 10.0, c as f64 - 10.0);
            (-(dx * dx + dy * dy) / 4.0).exp()
        });
        let t = truncate_support(&k, KernelSupport::EnergyFraction(0.99));
        assert_eq!(t.nrows() % 2, 1);
        assert!(t.sum() >= 0.99 * k.sum());
        let smaller = t.nrows() - 2;
        let inner = truncate_support(&k, KernelSupport::Fixed(smaller));
        assert!(inner.sum() < 0.99 * k.sum());
        let padded = truncate_support(&k, KernelSupport::Fixed(25));
        assert_eq!(padded.dim(), (25, 25));
        assert!((padded.sum() - k.sum()).abs() < 1e-12);
    }

    #[test]
    fn shared_wavelength_gives_identical_kernels() {
        let pattern = DisplayPattern::stripes(48, 1.0, 6, 2).unwrap();
        let cfg = OpticalConfig {
            aperture_diameter_um: 48.0,
            wavelengths_nm: [550.0; 3],
            ..OpticalConfig::default()
        };
        let set = psf_set(&pattern, &cfg).unwrap();
        let k = set.get(Channel::R).kernel();
        for ch in Channel::ALL {
            assert_eq!(set.get(ch).kernel(), k);
        }
    }

    #[test]
    fn spectrum_weighting_blends_kernels() {
        let pattern = DisplayPattern::stripes(64, 1.0, 8, 3).unwrap();
        let mut cfg = OpticalConfig {
            aperture_diameter_um: 64.0,
            r_override: Some([2.0; 3]),
            support: KernelSupport::Full,
            ..OpticalConfig::default()
        };
        let mono = psf_set(&pattern, &cfg).unwrap();
        cfg.spectra[0] = Some(vec![(640.0, 1.0)]);
        let same = psf_set(&pattern, &cfg).unwrap();
        assert_eq!(mono.get(Channel::R).kernel(), same.get(Channel::R).kernel());
        cfg.spectra[0] = Some(vec![(600.0, 1.0), (640.0, 2.0), (680.0, 1.0)]);
        let blended = psf_set(&pattern, &cfg).unwrap();
        let k = blended.get(Channel::R).kernel();
        assert!((k.sum() - 1.0).abs() < 1e-9);
        assert_ne!(k, mono.get(Channel::R).kernel());
    }
}
