//! PSNR, SSIM and batch evaluation. Dynamic range is 1.0 throughout.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::io::{self, Image};
use crate::raw::{same_dims, split_bayer, Plane, RgbImage};

/// Returned by the PSNR functions for identical inputs.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn check_dims(a: &Plane, b: &Plane) -> Result<()> {
    same_dims(a, b, "image sizes differ")
}

fn psnr_from_sse(sse: f64, count: usize) -> f64 {
    if sse == 0.0 {
        return PSNR_IDENTICAL;
    }
    10.0 * (count as f64 / sse).log10()
}

fn sse(a: &Plane, b: &Plane) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|x, y| acc += (x - y) * (x - y));
    acc
}

pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    check_dims(a, b)?;
    Ok(psnr_from_sse(sse(a, b), a.len()))
}

/// PSNR with the MSE taken over all three channels.
pub fn psnr_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for (x, y) in a.channels().iter().zip(b.channels()) {
        check_dims(x, y)?;
        total += sse(x, y);
        count += x.len();
    }
    Ok(psnr_from_sse(total, count))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable filtering over fully covered windows only.
fn filter_valid(x: &Plane, taps: &[f64]) -> Plane {
    let w = taps.len();
    let (rows, cols) = x.dim();
    let (or, oc) = (rows + 1 - w, cols + 1 - w);
    let horizontal = Array2::from_shape_fn((rows, oc), |(r, c)| {
        taps.iter().enumerate().map(|(k, t)| t * x[[r, c + k]]).sum::<f64>()
    });
    Array2::from_shape_fn((or, oc), |(r, c)| {
        taps.iter().enumerate().map(|(k, t)| t * horizontal[[r + k, c]]).sum::<f64>()
    })
}

/// Mean local SSIM with a Gaussian window.
pub fn ssim_with(a: &Plane, b: &Plane, params: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    let (rows, cols) = a.dim();
    if rows < params.window || cols < params.window {
        return Err(Error::dim(format!(
            "image {rows}x{cols} is smaller than the {w}x{w} SSIM window",
            w = params.window
        )));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let aa = filter_valid(&(a * a), &taps);
    let bb = filter_valid(&(b * b), &taps);
    let ab = filter_valid(&(a * b), &taps);
    let mut total = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    Ok(total / mu_a.len() as f64)
}

pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean of the per-channel SSIM values.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in a.channels().iter().zip(b.channels()) {
        total += ssim(x, y)?;
    }
    Ok(total / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub skipped: Vec<Skipped>,
}

impl EvalReport {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.entries.iter().map(|e| e.ssim))
    }

    pub fn to_text(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .chain(self.skipped.iter().map(|s| s.name.len()))
            .chain(["mean".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "name", "psnr_db", "ssim");
        for e in &self.entries {
            let _ = writeln!(out, "{:<width$}  {:>9.3}  {:>7.4}", e.name, e.psnr, e.ssim);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>7.4}  ({} pairs)",
            "mean",
            self.mean_psnr(),
            self.mean_ssim(),
            self.count()
        );
        for s in &self.skipped {
            let _ = writeln!(out, "{:<width$}  skipped: {}", s.name, s.reason);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim,status\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},ok", e.name, e.psnr, e.ssim);
        }
        let _ = writeln!(out, "mean,{},{},{}", self.mean_psnr(), self.mean_ssim(), self.count());
        for s in &self.skipped {
            let _ = writeln!(out, "{},,,skipped: {}", s.name, s.reason.replace(',', ";"));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.insert(name);
        }
    }
    Ok(names)
}

fn compare(pred: &Image, gt: &Image) -> Result<(f64, f64)> {
    match (pred, gt) {
        (Image::Rgb(a), Image::Rgb(b)) => Ok((psnr_rgb(a, b)?, ssim_rgb(a, b)?)),
        (Image::Raw(a), Image::Raw(b)) => {
            let (sa, sb) = (split_bayer(a), split_bayer(b));
            let mut total = 0.0;
            let mut count = 0;
            let mut s = 0.0;
            for (x, y) in sa.planes().iter().zip(sb.planes()) {
                check_dims(x, y)?;
                total += sse(x, y);
                count += x.len();
                s += ssim(x, y)?;
            }
            Ok((psnr_from_sse(total, count), s / 4.0))
        }
        _ => Err(Error::domain("one file is raw and the other RGB")),
    }
}

/// Compares same-named PNG files in two directories, in filename order.
/// Files present on one side only, or that cannot be compared, are listed
/// as skipped.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let pred = png_names(pred_dir)?;
    let gt = png_names(gt_dir)?;
    let mut report = EvalReport::default();
    for name in pred.union(&gt) {
        if !gt.contains(name) {
            report.skipped.push(Skipped {
                name: name.clone(),
                reason: "no ground truth".into(),
            });
            continue;
        }
        if !pred.contains(name) {
            report.skipped.push(Skipped {
                name: name.clone(),
                reason: "no prediction".into(),
            });
            continue;
        }
        let result = io::load_image(&pred_dir.join(name))
            .and_then(|p| Ok((p, io::load_image(&gt_dir.join(name))?)))
            .and_then(|(p, g)| compare(&p, &g));
        match result {
            Ok((psnr, ssim)) => report.entries.push(EvalEntry {
                name: name.clone(),
                psnr,
                ssim,
            }),
            Err(e) => report.skipped.push(Skipped {
                name: name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::channel_rng;
    use crate::raw::Channel;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn fixture(rows: usize, cols: usize) -> Plane {
        Plane::from_shape_fn((rows, cols), |(r, c)| {
            0.5 + 0.25 * ((r as f64) * 0.3).sin() + 0.2 * ((c as f64) * 0.17).cos()
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Plane::from_elem((8, 8), 0.5);
        let b = a.mapv(|v| v + 1.0 / 255.0);
        let want = 20.0 * 255f64.log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-6);
        assert!((want - 48.1308).abs() < 1e-4);
        let c = a.mapv(|v| v + 0.1);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        assert!(psnr(&a, &Plane::zeros((8, 7))).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_monotone() {
        let x = fixture(32, 32);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.04] {
            let mut rng = channel_rng(5, Channel::R);
            let y = x.mapv(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + sigma * z
            });
            let p = psnr(&x, &y).unwrap();
            assert_eq!(p, psnr(&y, &x).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let x = fixture(24, 30);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y = x.mapv(|v| v * 0.8 + 0.05);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_of_inverted_image_is_low() {
        let x = fixture(32, 32);
        let inv = x.mapv(|v| 1.0 - v);
        assert!(ssim(&x, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ssim_constant_shift_is_luminance_term() {
        let (m1, m2) = (0.2, 0.7);
        let a = Plane::from_elem((16, 16), m1);
        let b = Plane::from_elem((16, 16), m2);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_needs_window_sized_input() {
        let a = Plane::zeros((10, 20));
        assert!(matches!(ssim(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn rgb_metrics_pool_channels() {
        let x = fixture(16, 16);
        let a = RgbImage::new([x.clone(), x.clone(), x.clone()]).unwrap();
        let b = RgbImage::new([x.mapv(|v| v + 0.1), x.clone(), x.clone()]).unwrap();
        // MSE over all channels is 0.01 / 3.
        let want = 10.0 * (3.0f64 / 0.01).log10();
        assert!((psnr_rgb(&a, &b).unwrap() - want).abs() < 1e-9);
        assert!((ssim_rgb(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_aggregates() {
        let report = EvalReport {
            entries: vec![
                EvalEntry { name: "a".into(), psnr: 30.0, ssim: 0.9 },
                EvalEntry { name: "b".into(), psnr: 20.0, ssim: 0.7 },
                EvalEntry { name: "c".into(), psnr: 25.0, ssim: 0.8 },
            ],
            skipped: vec![],
        };
        assert_eq!(report.count(), 3);
        assert!((report.mean_psnr() - 25.0).abs() < 1e-12);
        assert!((report.mean_ssim() - 0.8).abs() < 1e-12);
        assert!(report.to_csv().starts_with("name,psnr_db,ssim,status\na,30,0.9,ok\n"));
        assert!(report.to_text().contains("(3 pairs)"));
    }
}
