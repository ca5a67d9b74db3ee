//! Built-in display models.
//!
//! The layouts are synthetic stand-ins for the two panel types, not traced
//! micrographs: a transparent OLED with a grating of tall slits (about 22%
//! open) and a pentile OLED with a finer diagonal lattice of small openings
//! (about 22% open). The intensity scales and resampling factors are the
//! measured values for each panel.

use ndarray::Array2;

use crate::degrade::{DegradationModel, IntensityScale, NoiseParams};
use crate::error::{Error, Result};
use crate::optics::{psf_set, DisplayPattern, OpticalConfig, PsfSet, MEASURED_R};

/// Samples across the aperture for the built-in patterns.
pub const PATTERN_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Toled,
    Poled,
}

impl std::str::FromStr for Panel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "toled" => Ok(Panel::Toled),
            "poled" => Ok(Panel::Poled),
            _ => Err(Error::domain(format!("unknown panel `{s}` (toled | poled)"))),
        }
    }
}

impl std::fmt::Display for Panel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Panel::Toled => "toled",
            Panel::Poled => "poled",
        })
    }
}

impl Panel {
    pub fn pattern(self) -> DisplayPattern {
        let n = PATTERN_SAMPLES;
        let pitch = OpticalConfig::default().aperture_diameter_um / n as f64;
        let t = match self {
            // 8x8 cell: a 2-wide, 7-tall slit.
            Panel::Toled => Array2::from_shape_fn((n, n), |(r, c)| {
                if c % 8 < 2 && r % 8 < 7 {
                    1.0
                } else {
                    0.0
                }
            }),
            // 6x6 cell: two 2x2 openings on the diagonal.
            Panel::Poled => Array2::from_shape_fn((n, n), |(r, c)| {
                let (y, x) = (r % 6, c % 6);
                let hole = |y0: usize, x0: usize| (y0..y0 + 2).contains(&y) && (x0..x0 + 2).contains(&x);
                if hole(0, 0) || hole(3, 3) {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        DisplayPattern::new(t, pitch).expect("built-in pattern is valid")
    }

    pub fn scale(self) -> IntensityScale {
        match self {
            Panel::Toled => IntensityScale::toled(),
            Panel::Poled => IntensityScale::poled(),
        }
    }

    /// Default optics with the measured per-channel resampling factors.
    pub fn optics(self) -> OpticalConfig {
        OpticalConfig {
            r_override: Some(MEASURED_R),
            ..OpticalConfig::default()
        }
    }

    pub fn psfs(self) -> Result<PsfSet> {
        psf_set(&self.pattern(), &self.optics())
    }

    pub fn model(self, noise: NoiseParams, seed: u64) -> Result<DegradationModel> {
        Ok(DegradationModel {
            scale: self.scale(),
            psfs: self.psfs()?,
            noise,
            noise_spread: None,
            seed,
        })
    }
}
