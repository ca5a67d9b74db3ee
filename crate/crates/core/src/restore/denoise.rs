//! Per-plane denoisers.
//!
//! The built-in denoiser soft-thresholds the detail bands of an undecimated
//! (stationary) Haar transform with circular boundaries, so the result does
//! not depend on where the dyadic grid falls.

use std::path::PathBuf;
use std::process::Command;

use crate::error::{Error, Result};
use crate::io;
use crate::raw::Plane;

pub trait Denoiser: Send + Sync {
    /// `strength` is the standard deviation of the noise to suppress, in
    /// normalized intensity units. Zero must return the input unchanged.
    fn denoise(&self, plane: &Plane, strength: f64) -> Result<Plane>;
}

/// Translation-invariant Haar wavelet soft thresholding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletDenoiser {
    pub levels: usize,
    /// Threshold in units of the per-band noise standard deviation.
    pub threshold_scale: f64,
}

impl Default for WaveletDenoiser {
    fn default() -> Self {
        Self {
            levels: 4,
            threshold_scale: 1.5,
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One undecimated Haar analysis step at shift `step` along rows or columns.
/// Returns `(low, high)` with `low = (x + x') / 2`, `high = (x - x') / 2`.
fn analyze(x: &Plane, step: usize, along_cols: bool) -> (Plane, Plane) {
    let (rows, cols) = x.dim();
    let mut lo = Plane::zeros((rows, cols));
    let mut hi = Plane::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let v = x[[r, c]];
            let w = if along_cols {
                x[[r, (c + step) % cols]]
            } else {
                x[[(r + step) % rows, c]]
            };
            lo[[r, c]] = 0.5 * (v + w);
            hi[[r, c]] = 0.5 * (v - w);
        }
    }
    (lo, hi)
}

/// Inverse of [`analyze`]: averages the two reconstructions available from
/// the redundant representation.
fn synthesize(lo: &Plane, hi: &Plane, step: usize, along_cols: bool) -> Plane {
    let (rows, cols) = lo.dim();
    Plane::from_shape_fn((rows, cols), |(r, c)| {
        let (pr, pc) = if along_cols {
            (r, (c + cols - step % cols) % cols)
        } else {
            ((r + rows - step % rows) % rows, c)
        };
        0.5 * ((lo[[r, c]] + hi[[r, c]]) + (lo[[pr, pc]] - hi[[pr, pc]]))
    })
}

impl WaveletDenoiser {
    fn usable_levels(&self, plane: &Plane) -> usize {
        let min_side = plane.nrows().min(plane.ncols());
        let mut levels = 0;
        while levels < self.levels && (1usize << levels) < min_side {
            levels += 1;
        }
        levels
    }
}

impl Denoiser for WaveletDenoiser {
    fn denoise(&self, plane: &Plane, strength: f64) -> Result<Plane> {
        if strength < 0.0 || !strength.is_finite() {
            return Err(Error::domain(format!("denoise strength must be >= 0, got {strength}")));
        }
        if strength == 0.0 {
            return Ok(plane.clone());
        }
        let levels = self.usable_levels(plane);
        let mut approx = plane.clone();
        let mut details = Vec::with_capacity(levels);
        for level in 0..levels {
            let step = 1 << level;
            // Detail bands of this averaging Haar have noise std sigma / 2^(level+1).
            let t = self.threshold_scale * strength / (2u32 << level) as f64;
            let (lo, hi) = analyze(&approx, step, true);
            let (ll, mut lh) = analyze(&lo, step, false);
            let (mut hl, mut hh) = analyze(&hi, step, false);
            for band in [&mut lh, &mut hl, &mut hh] {
                band.mapv_inplace(|v| soft(v, t));
            }
            details.push((step, lh, hl, hh));
            approx = ll;
        }
        for (step, lh, hl, hh) in details.into_iter().rev() {
            let lo = synthesize(&approx, &lh, step, false);
            let hi = synthesize(&hl, &hh, step, false);
            approx = synthesize(&lo, &hi, step, true);
        }
        Ok(approx)
    }
}

/// Wavelet denoising with the default settings.
pub fn denoise_channel(plane: &Plane, strength: f64) -> Result<Plane> {
    WaveletDenoiser::default().denoise(plane, strength)
}

/// Robust noise standard deviation from the finest diagonal band
/// (median absolute deviation).
pub fn estimate_sigma(plane: &Plane) -> f64 {
    let (_, hi) = analyze(plane, 1, true);
    let (_, hh) = analyze(&hi, 1, false);
    let mut mags: Vec<f64> = hh.iter().map(|v| v.abs()).collect();
    if mags.is_empty() {
        return 0.0;
    }
    let mid = mags.len() / 2;
    let (_, median, _) = mags.select_nth_unstable_by(mid, f64::total_cmp);
    // HH noise std is sigma / 2.
    2.0 * *median / 0.6745
}

/// Runs an external program on each plane.
///
/// The program is invoked as `program [args..] <input> <output> <strength>`
/// where `<input>` is a plane file written by [`io::write_plane`] and the
/// program must write its result to `<output>` in the same format with the
/// same dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalDenoiser {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Denoiser for ExternalDenoiser {
    fn denoise(&self, plane: &Plane, strength: f64) -> Result<Plane> {
        if strength == 0.0 {
            return Ok(plane.clone());
        }
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("input.plane");
        let output = dir.path().join("output.plane");
        io::write_plane(&input, plane)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .arg(strength.to_string())
            .status()
            .map_err(|e| Error::External(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::External(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let result = io::read_plane(&output)?;
        if result.dim() != plane.dim() {
            return Err(Error::External(format!(
                "denoiser returned {:?}, expected {:?}",
                result.dim(),
                plane.dim()
            )));
        }
        Ok(result)
    }
}

#[cfg(test)]
pub(crate) fn mse(a: &Plane, b: &Plane) -> f64 {
    let mut acc = 0.0;
    ndarray::Zip::from(a).and(b).for_each(|x, y| acc += (x - y).powi(2));
    acc / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::channel_rng;
    use crate::raw::Channel;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scene(rows: usize, cols: usize) -> Plane {
        Plane::from_shape_fn((rows, cols), |(r, c)| {
            let (y, x) = (r as f64 / rows as f64, c as f64 / cols as f64);
            let disk = if (x - 0.4).powi(2) + (y - 0.5).powi(2) < 0.06 { 0.3 } else { 0.0 };
            let bar = if (0.7..0.8).contains(&x) { 0.25 } else { 0.0 };
            0.2 + 0.3 * x + disk + bar + 0.05 * (12.0 * y).sin()
        })
    }

    #[test]
    fn zero_strength_is_identity() {
        let p = scene(16, 24);
        assert_eq!(denoise_channel(&p, 0.0).unwrap(), p);
    }

    #[test]
    fn perfect_reconstruction_without_threshold() {
        let p = scene(20, 12);
        let d = WaveletDenoiser {
            levels: 3,
            threshold_scale: 0.0,
        };
        let out = d.denoise(&p, 1.0).unwrap();
        assert!(crate::raw::max_abs_diff(&out, &p) < 1e-13);
    }

    #[test]
    fn constant_plane_unchanged() {
        let p = Plane::from_elem((32, 32), 0.42);
        let out = denoise_channel(&p, 0.3).unwrap();
        assert!(out.iter().all(|v| (v - 0.42).abs() < 1e-10));
    }

    #[test]
    fn reduces_gaussian_noise() {
        let clean = scene(128, 128);
        let mut rng = channel_rng(21, Channel::R);
        let noisy = clean.mapv(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + 0.02 * z
        });
        let out = denoise_channel(&noisy, 0.02).unwrap();
        let before = mse(&noisy, &clean);
        let after = mse(&out, &clean);
        assert!(after < 0.5 * before, "before {before:e} after {after:e}");
        let sigma = estimate_sigma(&noisy);
        assert!((sigma / 0.02 - 1.0).abs() < 0.15, "sigma {sigma}");
    }

    #[test]
    fn shift_equivariant() {
        let p = scene(32, 32);
        let shifted = Plane::from_shape_fn((32, 32), |(r, c)| p[[(r + 3) % 32, (c + 5) % 32]]);
        let a = denoise_channel(&p, 0.05).unwrap();
        let b = denoise_channel(&shifted, 0.05).unwrap();
        let a_shifted = Plane::from_shape_fn((32, 32), |(r, c)| a[[(r + 3) % 32, (c + 5) % 32]]);
        assert!(crate::raw::max_abs_diff(&a_shifted, &b) < 1e-12);
    }

    #[test]
    fn rejects_negative_strength() {
        assert!(denoise_channel(&scene(8, 8), -1.0).is_err());
    }
}
