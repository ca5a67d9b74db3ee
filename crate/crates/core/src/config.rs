//! Key-value schemas for optics and degradation models.
//!
//! Optics keys (all optional, defaults from [`OpticalConfig::default`]):
//!
//! | key | value |
//! |-----|-------|
//! | `aperture_diameter_um` | lens aperture diameter |
//! | `focal_length_um` | focal length |
//! | `sensor_pitch_um` | pitch of one Bayer channel plane |
//! | `wavelength_nm` | three values, R G B |
//! | `r_override` | three resampling factors, R G B |
//! | `spectrum_r`, `spectrum_g`, `spectrum_b` | `nm:weight` list |
//! | `psf_support` | `full`, `energy:<fraction>` or an odd size |
//! | `periodic_tiling` | boolean |
//!
//! Model keys:
//!
//! | key | value |
//! |-----|-------|
//! | `gamma` | 1, 3 or 4 values (default 1) |
//! | `psf_file` | PSF set file; or |
//! | `pattern` | pattern image, or `builtin:toled` / `builtin:poled`, simulated with the optics keys (also read from `optics_file` if given) |
//! | `noise_read`, `noise_shot` | 1, 3 or 4 values (default 0) |
//! | `noise_read_std`, `noise_shot_std` | spread per image; enables sampling |
//! | `seed` | unsigned integer |
//!
//! With neither `psf_file` nor `pattern` the kernels are deltas. Relative
//! paths resolve against the file's directory.

use std::path::Path;

use crate::degrade::{DegradationModel, IntensityScale, NoiseParams, NoiseSpread};
use crate::error::{Error, Result};
use crate::io;
use crate::keyvalue::KeyValues;
use crate::optics::{psf_set, DisplayPattern, KernelSupport, OpticalConfig, PsfSet};
use crate::presets::Panel;

pub const DEFAULT_SEED: u64 = 2020;

fn three(kv: &KeyValues, key: &str) -> Result<Option<[f64; 3]>> {
    let Some(values) = kv.get_list::<f64>(key)? else {
        return Ok(None);
    };
    <[f64; 3]>::try_from(values.as_slice())
        .map(Some)
        .map_err(|_| Error::Parse {
            path: kv.source().to_path_buf(),
            line: 0,
            message: format!("`{key}` needs three values (R, G, B)"),
        })
}

fn spectrum(kv: &KeyValues, key: &str) -> Result<Option<Vec<(f64, f64)>>> {
    let Some(items) = kv.get_list::<String>(key)? else {
        return Ok(None);
    };
    items
        .iter()
        .map(|item| {
            let parsed = item
                .split_once(':')
                .and_then(|(l, w)| Some((l.trim().parse().ok()?, w.trim().parse().ok()?)));
            parsed.ok_or_else(|| Error::Parse {
                path: kv.source().to_path_buf(),
                line: 0,
                message: format!("`{key}` entries must look like nm:weight, found `{item}`"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Overlays optics keys found in `kv` on `base`.
pub fn optics_from_keyvalues(kv: &KeyValues, base: OpticalConfig) -> Result<OpticalConfig> {
    let mut cfg = base;
    if let Some(v) = kv.get("aperture_diameter_um")? {
        cfg.aperture_diameter_um = v;
    }
    if let Some(v) = kv.get("focal_length_um")? {
        cfg.focal_length_um = v;
    }
    if let Some(v) = kv.get("sensor_pitch_um")? {
        cfg.sensor_pitch_um = v;
    }
    if let Some(v) = three(kv, "wavelength_nm")? {
        cfg.wavelengths_nm = v;
    }
    if let Some(v) = three(kv, "r_override")? {
        cfg.r_override = Some(v);
    }
    for (i, key) in ["spectrum_r", "spectrum_g", "spectrum_b"].into_iter().enumerate() {
        if let Some(s) = spectrum(kv, key)? {
            cfg.spectra[i] = Some(s);
        }
    }
    if let Some(s) = kv.get_str("psf_support") {
        cfg.support = s.parse::<KernelSupport>()?;
    }
    if let Some(b) = kv.get_bool("periodic_tiling")? {
        cfg.periodic_tiling = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_optics(path: &Path) -> Result<OpticalConfig> {
    optics_from_keyvalues(&KeyValues::load(path)?, OpticalConfig::default())
}

/// Resolves a pattern reference: `builtin:<panel>` or an image path. Returns
/// the pattern and the optics to start from (the panel's for built-ins).
pub fn resolve_pattern(reference: &str, path: &Path) -> Result<(DisplayPattern, OpticalConfig)> {
    match reference.strip_prefix("builtin:") {
        Some(name) => {
            let panel: Panel = name.parse()?;
            Ok((panel.pattern(), panel.optics()))
        }
        None => Ok((io::load_pattern(path)?, OpticalConfig::default())),
    }
}

fn model_psfs(kv: &KeyValues) -> Result<PsfSet> {
    if let Some(path) = kv.get_path("psf_file") {
        return io::read_psf_set(&path);
    }
    let Some(pattern_ref) = kv.get_str("pattern") else {
        return Ok(PsfSet::delta());
    };
    let (pattern, base) = resolve_pattern(pattern_ref, &kv.get_path("pattern").expect("key present"))?;
    let base = match kv.get_path("optics_file") {
        Some(p) => optics_from_keyvalues(&KeyValues::load(&p)?, base)?,
        None => base,
    };
    psf_set(&pattern, &optics_from_keyvalues(kv, base)?)
}

pub fn model_from_keyvalues(kv: &KeyValues) -> Result<DegradationModel> {
    let scale = match kv.get_per_channel("gamma")? {
        Some(g) => IntensityScale::new(g)?,
        None => IntensityScale::unity(),
    };
    let read = kv.get_per_channel("noise_read")?.unwrap_or([0.0; 4]);
    let shot = kv.get_per_channel("noise_shot")?.unwrap_or([0.0; 4]);
    let noise = NoiseParams::new(read, shot)?;
    let read_std = kv.get_per_channel("noise_read_std")?;
    let shot_std = kv.get_per_channel("noise_shot_std")?;
    let noise_spread = if read_std.is_some() || shot_std.is_some() {
        let pair = |m: [f64; 4], s: Option<[f64; 4]>| -> Result<[(f64, f64); 4]> {
            let s = s.unwrap_or([0.0; 4]);
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::domain("noise spread must be >= 0"));
            }
            Ok([0, 1, 2, 3].map(|i| (m[i], s[i])))
        };
        Some(NoiseSpread {
            read: pair(read, read_std)?,
            shot: pair(shot, shot_std)?,
        })
    } else {
        None
    };
    Ok(DegradationModel {
        scale,
        psfs: model_psfs(kv)?,
        noise,
        noise_spread,
        seed: kv.get("seed")?.unwrap_or(DEFAULT_SEED),
    })
}

pub fn load_model(path: &Path) -> Result<DegradationModel> {
    model_from_keyvalues(&KeyValues::load(path)?)
}
