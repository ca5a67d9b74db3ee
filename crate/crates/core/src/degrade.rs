//! Forward degradation model `y = (gamma * x) (*) k + n`.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::optics::PsfSet;
use crate::raw::{merge_bayer, split_bayer, BayerRaw, Channel, ChannelStack, Plane};

/// Per-channel intensity scaling factor, ordered R, G1, G2, B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityScale {
    pub gamma: [f64; 4],
}

impl IntensityScale {
    pub fn new(gamma: [f64; 4]) -> Result<Self> {
        if let Some(g) = gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::domain(format!("gamma must be positive, got {g}")));
        }
        Ok(Self { gamma })
    }

    /// Green is shared by G1 and G2.
    pub fn from_rgb(r: f64, g: f64, b: f64) -> Result<Self> {
        Self::new([r, g, g, b])
    }

    pub fn unity() -> Self {
        Self { gamma: [1.0; 4] }
    }

    /// Measured values behind a transparent OLED panel.
    pub fn toled() -> Self {
        Self { gamma: [0.97; 4] }
    }

    /// Measured values behind a pentile OLED panel.
    pub fn poled() -> Self {
        Self {
            gamma: [0.34, 0.34, 0.34, 0.20],
        }
    }

    pub fn get(&self, channel: Channel) -> f64 {
        self.gamma[channel.index()]
    }

    pub fn inverse(&self) -> Self {
        Self {
            gamma: self.gamma.map(|g| 1.0 / g),
        }
    }
}

/// Heteroscedastic Gaussian noise: variance `read + shot * w` on
/// normalized intensities `w`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseParams {
    pub lambda_read: [f64; 4],
    pub lambda_shot: [f64; 4],
}

impl NoiseParams {
    pub fn new(lambda_read: [f64; 4], lambda_shot: [f64; 4]) -> Result<Self> {
        for v in lambda_read.iter().chain(lambda_shot.iter()) {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("noise parameters must be >= 0, got {v}")));
            }
        }
        Ok(Self {
            lambda_read,
            lambda_shot,
        })
    }

    pub fn uniform(read: f64, shot: f64) -> Result<Self> {
        Self::new([read; 4], [shot; 4])
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_read.iter().chain(self.lambda_shot.iter()).all(|&v| v == 0.0)
    }

    pub fn variance(&self, channel: Channel, w: f64) -> f64 {
        let i = channel.index();
        self.lambda_read[i] + self.lambda_shot[i] * w
    }
}

/// Mean and standard deviation of each noise parameter, for drawing a fresh
/// parameter set per synthesized image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpread {
    pub read: [(f64, f64); 4],
    pub shot: [(f64, f64); 4],
}

impl NoiseSpread {
    pub fn sample(&self, seed: u64) -> NoiseParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5eed);
        let mut draw = |(mean, std): (f64, f64)| {
            let z: f64 = rng.sample(StandardNormal);
            (mean + std * z).max(0.0)
        };
        let lambda_read = self.read.map(&mut draw);
        let lambda_shot = self.shot.map(&mut draw);
        NoiseParams {
            lambda_read,
            lambda_shot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationModel {
    pub scale: IntensityScale,
    pub psfs: PsfSet,
    pub noise: NoiseParams,
    /// When set, [`synthesize`] draws its noise parameters from this
    /// distribution instead of using `noise`.
    pub noise_spread: Option<NoiseSpread>,
    pub seed: u64,
}

impl DegradationModel {
    pub fn identity() -> Self {
        Self {
            scale: IntensityScale::unity(),
            psfs: PsfSet::delta(),
            noise: NoiseParams::zero(),
            noise_spread: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Noise parameters used for a synthesis run with this model's seed.
    pub fn effective_noise(&self) -> NoiseParams {
        match &self.noise_spread {
            Some(spread) => spread.sample(self.seed),
            None => self.noise,
        }
    }
}

/// Multiplies each plane by its channel's gamma. No clipping.
pub fn apply_gamma(stack: &ChannelStack, scale: &IntensityScale) -> ChannelStack {
    stack.map(|ch, p| p * scale.get(ch))
}

/// Circular convolution of one plane with a centred kernel.
pub fn convolve_plane(plane: &Plane, kernel: &Array2<f64>) -> Result<Plane> {
    let (rows, cols) = plane.dim();
    let fft = Fft2::new(rows, cols);
    convolve_with(&fft, plane, kernel)
}

fn convolve_with(fft: &Fft2, plane: &Plane, kernel: &Array2<f64>) -> Result<Plane> {
    let transfer = fft.kernel_transfer(kernel)?;
    let mut data = fft.forward_real(plane);
    Zip::from(&mut data).and(&transfer).for_each(|y, &h| *y *= h);
    fft.inverse(&mut data);
    Ok(data.mapv(|z: Complex64| z.re))
}

/// Convolves every plane with its channel kernel (circular boundary, output
/// size unchanged).
pub fn convolve_psf(stack: &ChannelStack, psfs: &PsfSet) -> Result<ChannelStack> {
    let (rows, cols) = stack.dim();
    let fft = Fft2::new(rows, cols);
    stack.try_map(|ch, p| convolve_with(&fft, p, psfs.get(ch).kernel()))
}

/// Generator for one plane's noise stream, derived from `(seed, channel)`.
pub fn channel_rng(seed: u64, channel: Channel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel.index() as u64 + 1);
    rng
}

/// Zero-mean Gaussian samples with per-pixel variance
/// `read + shot * plane[i]`, before any clipping.
pub fn sample_noise(plane: &Plane, noise: &NoiseParams, channel: Channel, seed: u64) -> Result<Plane> {
    if plane.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::domain(format!(
            "noise needs non-negative intensities (channel {channel})"
        )));
    }
    let mut rng = channel_rng(seed, channel);
    Ok(plane.mapv(|w| {
        let z: f64 = rng.sample(StandardNormal);
        z * noise.variance(channel, w).sqrt()
    }))
}

/// Adds signal-dependent noise and clips to `[0, 1]`. Deterministic for a
/// given seed.
pub fn add_noise(stack: &ChannelStack, noise: &NoiseParams, seed: u64) -> Result<ChannelStack> {
    stack.try_map(|ch, p| {
        let n = sample_noise(p, noise, ch, seed)?;
        Ok(Zip::from(p).and(&n).map_collect(|&w, &e| (w + e).clamp(0.0, 1.0)))
    })
}

/// Scaling and blur without noise.
pub fn forward_noiseless(stack: &ChannelStack, model: &DegradationModel) -> Result<ChannelStack> {
    convolve_psf(&apply_gamma(stack, &model.scale), &model.psfs)
}

/// Full synthesis: split, scale, blur, add noise, re-mosaic.
pub fn synthesize(raw_gt: &BayerRaw, model: &DegradationModel) -> Result<BayerRaw> {
    let stack = split_bayer(raw_gt);
    let blurred = forward_noiseless(&stack, model)?;
    // Kernels and inputs are non-negative; remove FFT round-off below zero.
    let blurred = blurred.map(|_, p| p.mapv(|v| v.max(0.0)));
    let noisy = add_noise(&blurred, &model.effective_noise(), model.seed)?;
    merge_bayer(&noisy, raw_gt.white_level())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::max_abs_diff;

    fn fixture(rows: usize, cols: usize, salt: usize) -> Plane {
        Plane::from_shape_fn((rows, cols), |(r, c)| {
            ((r * 31 + c * 17 + salt * 7) % 23) as f64 / 22.0
        })
    }

    fn direct_circular(x: &Plane, k: &Array2<f64>) -> Plane {
        let (rows, cols) = x.dim();
        let (cr, cc) = (k.nrows() / 2, k.ncols() / 2);
        Plane::from_shape_fn((rows, cols), |(i, j)| {
            let mut acc = 0.0;
            for ((a, b), &w) in k.indexed_iter() {
                let r = (i as i64 - (a as i64 - cr as i64)).rem_euclid(rows as i64) as usize;
                let c = (j as i64 - (b as i64 - cc as i64)).rem_euclid(cols as i64) as usize;
                acc += w * x[[r, c]];
            }
            acc
        })
    }

    #[test]
    fn unit_gamma_is_identity() {
        let stack = ChannelStack::constant(3, 4, 0.6);
        assert_eq!(apply_gamma(&stack, &IntensityScale::unity()), stack);
    }

    #[test]
    fn poled_gamma_suppresses_blue() {
        let out = apply_gamma(&ChannelStack::constant(2, 2, 1.0), &IntensityScale::poled());
        let means: Vec<f64> = Channel::ALL.iter().map(|&c| out.mean(c)).collect();
        assert_eq!(means, vec![0.34, 0.34, 0.34, 0.20]);
    }

    #[test]
    fn gamma_then_inverse_gamma() {
        let stack = ChannelStack::new(std::array::from_fn(|i| fixture(5, 6, i))).unwrap();
        let scale = IntensityScale::poled();
        let back = apply_gamma(&apply_gamma(&stack, &scale), &scale.inverse());
        for ch in Channel::ALL {
            assert!(max_abs_diff(back.plane(ch), stack.plane(ch)) < 1e-12);
        }
    }

    #[test]
    fn gamma_must_be_positive() {
        assert!(IntensityScale::new([1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(IntensityScale::from_rgb(0.5, 0.5, -0.1).is_err());
    }

    #[test]
    fn delta_convolution_is_identity() {
        let x = fixture(8, 8, 0);
        let y = convolve_plane(&x, &Array2::ones((1, 1))).unwrap();
        assert!(max_abs_diff(&x, &y) < 1e-12);
    }

    #[test]
    fn matches_direct_circular_convolution() {
        let x = fixture(8, 8, 3);
        let k = Array2::from_shape_vec((3, 3), vec![0.0, 0.1, 0.05, 0.2, 0.3, 0.1, 0.05, 0.15, 0.05]).unwrap();
        let fast = convolve_plane(&x, &k).unwrap();
        let slow = direct_circular(&x, &k);
        assert!(max_abs_diff(&fast, &slow) < 1e-12);
        let k2 = Array2::from_shape_fn((4, 5), |(r, c)| (r + 2 * c) as f64);
        let x2 = fixture(7, 9, 1);
        assert!(max_abs_diff(&convolve_plane(&x2, &k2).unwrap(), &direct_circular(&x2, &k2)) < 1e-10);
    }

    #[test]
    fn constant_plane_survives_normalized_kernel() {
        let psfs = PsfSet::uniform(Array2::from_shape_fn((5, 5), |(r, c)| (1 + r * c) as f64)).unwrap();
        let out = convolve_psf(&ChannelStack::constant(8, 8, 0.37), &psfs).unwrap();
        for p in out.planes() {
            assert!(p.iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let psfs = PsfSet::uniform(Array2::ones((9, 9))).unwrap();
        assert!(matches!(
            convolve_psf(&ChannelStack::constant(8, 8, 0.5), &psfs),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn convolution_is_linear_and_mean_preserving() {
        let k = Array2::from_shape_fn((5, 3), |(r, c)| ((r + c) % 3 + 1) as f64);
        let psfs = PsfSet::uniform(k).unwrap();
        let k = psfs.get(Channel::R).kernel().clone();
        let (x, z) = (fixture(16, 12, 1), fixture(16, 12, 2));
        let (a, b) = (1.7, -0.4);
        let lhs = convolve_plane(&(&x * a + &z * b), &k).unwrap();
        let rhs = convolve_plane(&x, &k).unwrap() * a + convolve_plane(&z, &k).unwrap() * b;
        assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
        let y = convolve_plane(&x, &k).unwrap();
        assert!((y.mean().unwrap() - x.mean().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn zero_noise_is_identity() {
        let stack = ChannelStack::new(std::array::from_fn(|i| fixture(6, 6, i))).unwrap();
        assert_eq!(add_noise(&stack, &NoiseParams::zero(), 9).unwrap(), stack);
    }

    #[test]
    fn noise_variance_matches_model() {
        let plane = Plane::from_elem((1000, 1000), 0.25);
        let noise = NoiseParams::uniform(1e-4, 1e-2).unwrap();
        let n = sample_noise(&plane, &noise, Channel::G1, 11).unwrap();
        let mean = n.mean().unwrap();
        let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
        assert!((var / 2.6e-3 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn noise_is_seeded() {
        let stack = ChannelStack::constant(16, 16, 0.5);
        let noise = NoiseParams::uniform(1e-3, 1e-3).unwrap();
        let a = add_noise(&stack, &noise, 1).unwrap();
        let b = add_noise(&stack, &noise, 1).unwrap();
        let c = add_noise(&stack, &noise, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.plane(Channel::R), a.plane(Channel::G1));
    }

    #[test]
    fn negative_input_is_domain_error() {
        let mut stack = ChannelStack::constant(2, 2, 0.5);
        stack.plane_mut(Channel::B)[[0, 0]] = -0.1;
        assert!(matches!(
            add_noise(&stack, &NoiseParams::zero(), 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn identity_model_is_bit_exact() {
        let samples: Vec<u16> = (0..64 * 48).map(|i| ((i * 7919) % 65536) as u16).collect();
        let raw = BayerRaw::new(64, 48, samples).unwrap();
        assert_eq!(synthesize(&raw, &DegradationModel::identity()).unwrap(), raw);
    }

    #[test]
    fn sampled_noise_is_deterministic_and_non_negative() {
        let spread = NoiseSpread {
            read: [(1e-4, 5e-5); 4],
            shot: [(1e-2, 1e-2); 4],
        };
        assert_eq!(spread.sample(3), spread.sample(3));
        assert_ne!(spread.sample(3), spread.sample(4));
        for s in 0..50 {
            let p = spread.sample(s);
            assert!(p.lambda_read.iter().chain(p.lambda_shot.iter()).all(|&v| v >= 0.0));
        }
    }
}
