//! Inversion of the degradation model: denoise, undo the intensity scale,
//! deconvolve, demosaic.

mod demosaic;
mod denoise;

pub use demosaic::{demosaic_bilinear, demosaic_stack};
pub use denoise::{denoise_channel, estimate_sigma, Denoiser, ExternalDenoiser, WaveletDenoiser};

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::degrade::{IntensityScale, NoiseParams};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::optics::{Psf, PsfSet};
use crate::raw::{merge_bayer, split_bayer, BayerRaw, Channel, ChannelStack, Plane, RgbImage};

/// Transfer magnitudes below this count as spectral nulls.
pub const NULL_THRESHOLD: f64 = 1e-12;

/// Divides each plane by its channel scale and clips to `[0, 1]`.
pub fn inverse_gamma(stack: &ChannelStack, scale: &IntensityScale) -> Result<ChannelStack> {
    stack.try_map(|ch, p| inverse_gamma_plane(p, scale.get(ch)))
}

fn inverse_gamma_plane(plane: &Plane, gamma: f64) -> Result<Plane> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::domain(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(plane.mapv(|v| (v / gamma).clamp(0.0, 1.0)))
}

/// Noise-to-signal regularization for [`wiener_deconvolve`].
#[derive(Debug, Clone, PartialEq)]
pub enum Nsr {
    Constant(f64),
    /// One value per DFT bin, in unshifted order (zero frequency at `[0, 0]`).
    PerFrequency(Array2<f64>),
}

/// Noise variance over the empirical power `mean(Y^2)` of the observed plane.
pub fn auto_nsr(plane: &Plane, noise_variance: f64) -> f64 {
    let power = plane.iter().map(|v| v * v).sum::<f64>() / plane.len() as f64;
    if noise_variance <= 0.0 {
        0.0
    } else {
        noise_variance / power.max(f64::MIN_POSITIVE)
    }
}

/// Frequency-domain Wiener filter `conj(H) Y / (|H|^2 + NSR)`, circular
/// boundary, output clipped to `[0, 1]`.
///
/// Fails with [`Error::IllConditioned`] when the regularization is zero at a
/// bin where the transfer function vanishes.
pub fn wiener_deconvolve(plane: &Plane, psf: &Psf, nsr: &Nsr) -> Result<Plane> {
    let (rows, cols) = plane.dim();
    wiener_with(&Fft2::new(rows, cols), plane, psf, nsr)
}

fn wiener_with(fft: &Fft2, plane: &Plane, psf: &Psf, nsr: &Nsr) -> Result<Plane> {
    let dim = plane.dim();
    let transfer = fft.kernel_transfer(psf.kernel())?;
    let nsr_map = match nsr {
        Nsr::Constant(v) => {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::domain(format!("NSR must be >= 0, got {v}")));
            }
            Array2::from_elem(dim, *v)
        }
        Nsr::PerFrequency(map) => {
            if map.dim() != dim {
                return Err(Error::dim(format!(
                    "NSR map {:?} does not match plane {:?}",
                    map.dim(),
                    dim
                )));
            }
            if map.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::domain("NSR map values must be finite and >= 0"));
            }
            map.clone()
        }
    };
    let nulls = Zip::from(&transfer)
        .and(&nsr_map)
        .fold(0usize, |n, h, &q| n + usize::from(q == 0.0 && h.norm() < NULL_THRESHOLD));
    if nulls > 0 {
        return Err(Error::IllConditioned { count: nulls });
    }
    let mut data = fft.forward_real(plane);
    Zip::from(&mut data)
        .and(&transfer)
        .and(&nsr_map)
        .for_each(|y, h, &q| *y = h.conj() * *y / (h.norm_sqr() + q));
    fft.inverse(&mut data);
    Ok(data.mapv(|z: Complex64| z.re.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreParams {
    /// Per channel, R G1 G2 B. Zero skips denoising.
    pub denoise_strength: [f64; 4],
    pub nsr: Nsr,
    /// When set, replaces `nsr` per plane with [`auto_nsr`] using this noise
    /// model.
    pub auto_nsr: Option<NoiseParams>,
}

impl Default for RestoreParams {
    fn default() -> Self {
        Self {
            denoise_strength: [0.0; 4],
            nsr: Nsr::Constant(1e-3),
            auto_nsr: None,
        }
    }
}

impl RestoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.denoise_strength.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain("denoise strength must be finite and >= 0"));
        }
        if let Nsr::Constant(v) = self.nsr {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("NSR must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn plane_mean(p: &Plane) -> f64 {
    p.sum() / p.len() as f64
}

/// Noise standard deviation of each plane at its mean level, a natural
/// denoise strength.
pub fn noise_strength(stack: &ChannelStack, noise: &NoiseParams) -> [f64; 4] {
    Channel::ALL.map(|ch| noise.variance(ch, plane_mean(stack.plane(ch)).max(0.0)).sqrt())
}

/// Denoise, inverse scale and deconvolve all four planes.
pub fn restore_stack(
    stack: &ChannelStack,
    psfs: &PsfSet,
    scale: &IntensityScale,
    params: &RestoreParams,
    denoiser: &dyn Denoiser,
) -> Result<ChannelStack> {
    params.validate()?;
    let (rows, cols) = stack.dim();
    let fft = Fft2::new(rows, cols);
    let denoised = stack.try_map(|ch, p| denoiser.denoise(p, params.denoise_strength[ch.index()]))?;
    let unscaled = inverse_gamma(&denoised, scale)?;
    unscaled.try_map(|ch, p| {
        let nsr = match &params.auto_nsr {
            Some(noise) => {
                // Noise is added before scaling, so refer it through 1/gamma.
                let gamma = scale.get(ch);
                let variance = noise.variance(ch, gamma * plane_mean(p)) / (gamma * gamma);
                Nsr::Constant(auto_nsr(p, variance))
            }
            None => params.nsr.clone(),
        };
        wiener_with(&fft, p, psfs.get(ch), &nsr)
    })
}

/// Full pipeline from a degraded mosaic to an RGB image in `[0, 1]`.
pub fn restore(
    raw: &BayerRaw,
    psfs: &PsfSet,
    scale: &IntensityScale,
    params: &RestoreParams,
    denoiser: &dyn Denoiser,
) -> Result<RgbImage> {
    let stack = restore_stack(&split_bayer(raw), psfs, scale, params, denoiser)?;
    let merged = merge_bayer(&stack, raw.white_level())?;
    Ok(demosaic_bilinear(&merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{apply_gamma, channel_rng, convolve_plane};
    use crate::raw::{max_abs_diff, Color};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn null_free_kernel() -> Array2<f64> {
        let v = [0.05, 0.2, 0.5, 0.2, 0.05];
        Array2::from_shape_fn((5, 5), |(i, j)| v[i] * v[j])
    }

    fn psf(kernel: Array2<f64>) -> Psf {
        Psf::new(kernel, Color::Green, 1.0, 520.0).unwrap()
    }

    fn scene(rows: usize, cols: usize) -> Plane {
        Plane::from_shape_fn((rows, cols), |(r, c)| {
            0.5 + 0.3 * ((r as f64) * 0.37).sin() * ((c as f64) * 0.21).cos()
        })
    }

    fn psnr(a: &Plane, b: &Plane) -> f64 {
        -10.0 * denoise::mse(a, b).log10()
    }

    #[test]
    fn inverse_gamma_divides_and_clips() {
        let p = Plane::from_shape_vec((1, 3), vec![0.1, 0.2, -0.1]).unwrap();
        let out = inverse_gamma_plane(&p, 0.2).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[0.5, 1.0, 0.0]);
        assert!(inverse_gamma_plane(&p, 0.0).is_err());
        assert!(inverse_gamma_plane(&p, f64::NAN).is_err());
    }

    #[test]
    fn inverse_gamma_undoes_apply_gamma() {
        let scale = IntensityScale::poled();
        let planes = Channel::ALL.map(|ch| scene(6, 6).mapv(|v| v * scale.get(ch)));
        let stack = ChannelStack::new(planes).unwrap();
        let back = inverse_gamma(&apply_gamma(&stack, &scale), &scale).unwrap();
        for ch in Channel::ALL {
            assert!(max_abs_diff(back.plane(ch), stack.plane(ch)) < 1e-12);
        }
        assert_eq!(inverse_gamma(&stack, &IntensityScale::unity()).unwrap(), stack);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = scene(12, 10);
        let out = wiener_deconvolve(&x, &Psf::delta(Color::Red), &Nsr::Constant(0.0)).unwrap();
        assert!(max_abs_diff(&out, &x) < 1e-10);
    }

    #[test]
    fn exact_inverse_of_null_free_blur() {
        let x = scene(32, 40);
        let y = convolve_plane(&x, &null_free_kernel()).unwrap();
        let out = wiener_deconvolve(&y, &psf(null_free_kernel()), &Nsr::Constant(0.0)).unwrap();
        assert!(psnr(&out, &x) >= 50.0);
        assert!(max_abs_diff(&out, &x) < 1e-10);
    }

    #[test]
    fn regularization_helps_under_noise() {
        let x = scene(64, 64);
        let k = null_free_kernel();
        let mut rng = channel_rng(3, Channel::G1);
        let y = convolve_plane(&x, &k).unwrap().mapv(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + 0.01 * z
        });
        let p = psf(k);
        let at = |q: f64| psnr(&wiener_deconvolve(&y, &p, &Nsr::Constant(q)).unwrap(), &x);
        let unregularized = at(0.0);
        let best = [1e-4, 1e-3, 1e-2, 3e-2, 1e-1]
            .into_iter()
            .map(at)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best > unregularized, "best {best} vs {unregularized}");
    }

    #[test]
    fn filter_gain_is_bounded() {
        let mut k = Array2::zeros((3, 3));
        k[[1, 0]] = 0.5;
        k[[1, 2]] = 0.5;
        let q = 0.01;
        let h = Fft2::new(16, 16).kernel_transfer(&k).unwrap();
        let bound = 1.0 / (2.0 * f64::sqrt(q));
        for z in h.iter() {
            assert!((z.conj() / (z.norm_sqr() + q)).norm() <= bound + 1e-12);
        }
        let mut y = Plane::zeros((16, 16));
        y[[8, 8]] = 1.0;
        let out = wiener_deconvolve(&y, &psf(k), &Nsr::Constant(q)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_nsr_with_nulls_is_rejected() {
        let mut k = Array2::zeros((1, 3));
        k[[0, 0]] = 0.5;
        k[[0, 2]] = 0.5;
        let y = scene(8, 8);
        match wiener_deconvolve(&y, &psf(k.clone()), &Nsr::Constant(0.0)) {
            Err(Error::IllConditioned { count }) => assert!(count > 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(wiener_deconvolve(&y, &psf(k), &Nsr::Constant(1e-3)).is_ok());
    }

    #[test]
    fn per_frequency_map_must_match() {
        let y = scene(8, 8);
        let p = psf(null_free_kernel());
        let bad = Nsr::PerFrequency(Array2::zeros((4, 4)));
        assert!(matches!(wiener_deconvolve(&y, &p, &bad), Err(Error::Dimension(_))));
        let zeros = Nsr::PerFrequency(Array2::zeros((8, 8)));
        let a = wiener_deconvolve(&y, &p, &zeros).unwrap();
        let b = wiener_deconvolve(&y, &p, &Nsr::Constant(0.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auto_nsr_ratio() {
        let p = Plane::from_elem((4, 4), 0.5);
        assert_eq!(auto_nsr(&p, 0.0), 0.0);
        assert!((auto_nsr(&p, 0.01) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn identity_restore_matches_demosaic() {
        let samples: Vec<u16> = (0..8 * 6).map(|i| ((i * 977) % 60000) as u16).collect();
        let raw = BayerRaw::new(8, 6, samples).unwrap();
        let params = RestoreParams {
            denoise_strength: [0.0; 4],
            nsr: Nsr::Constant(0.0),
            auto_nsr: None,
        };
        let out = restore(
            &raw,
            &PsfSet::delta(),
            &IntensityScale::unity(),
            &params,
            &WaveletDenoiser::default(),
        )
        .unwrap();
        let want = demosaic_bilinear(&raw);
        for c in Color::ALL {
            assert!(max_abs_diff(out.channel(c), want.channel(c)) < 1e-10);
        }
    }

    #[test]
    fn rejects_negative_parameters() {
        let stack = ChannelStack::constant(4, 4, 0.5);
        let mut params = RestoreParams::default();
        params.denoise_strength[2] = -0.1;
        let err = restore_stack(
            &stack,
            &PsfSet::delta(),
            &IntensityScale::unity(),
            &params,
            &WaveletDenoiser::default(),
        );
        assert!(err.is_err());
    }
}
