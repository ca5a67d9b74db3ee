//! Simulation and restoration of images captured through a display panel.
//!
//! The forward model is `y = (gamma * x) (*) k + n`: a per-channel intensity
//! scale, a diffraction blur computed from the display's pixel layout, and
//! heteroscedastic Gaussian noise. The restoration pipeline inverts it with
//! denoising, inverse scaling, Wiener deconvolution and bilinear demosaicing.

pub mod calibrate;
pub mod config;
pub mod degrade;
pub mod error;
pub mod fft;
pub mod io;
pub mod keyvalue;
pub mod metrics;
pub mod optics;
pub mod presets;
pub mod raw;
pub mod restore;

pub use error::{Error, ErrorFamily, Result};
pub use optics::{DisplayPattern, KernelSupport, OpticalConfig, Psf, PsfSet};
pub use raw::{BayerRaw, Channel, ChannelStack, Color, Plane, RgbImage};
