//! File formats.
//!
//! * Raw frames: 16-bit grayscale PNG plus a sidecar `<file>.meta` key-value
//!   file with `cfa`, `white_level` and `black_level`. A missing sidecar
//!   means RGGB, white level 65535, black level 0.
//! * RGB images: 8-bit three-channel PNG.
//! * Display patterns: 8- or 16-bit grayscale PNG scaled to `[0, 1]`, with a
//!   sidecar carrying `pitch_um`.
//! * PSF sets: plain text, one `[R]`, `[G]`, `[B]` section each holding
//!   `wavelength_nm`, `r`, `size = rows cols` and then the kernel rows.
//! * Planes (external denoiser exchange): the line `PLANE1`, the line
//!   `<rows> <cols>`, then `rows * cols` little-endian `f64` values in row
//!   order.
//!
//! Every writer goes through a temporary file in the target directory and a
//! rename, so readers never observe partial output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageError, ImageFormat, Luma, Rgb};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;
use crate::optics::{DisplayPattern, Psf, PsfSet};
use crate::raw::{quantize, BayerRaw, Cfa, Color, Plane, RgbImage};

pub enum Image {
    Raw(BayerRaw),
    Rgb(RgbImage),
}

/// Writes `bytes` to `path` via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| match e {
        ImageError::Unsupported(u) => Error::Unsupported {
            path: path.to_path_buf(),
            message: u.to_string(),
        },
        other => Error::Corrupt {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

fn encode(path: &Path, img: DynamicImage) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, buf.get_ref())
}

fn unsupported(path: &Path, want: &str, got: &DynamicImage) -> Error {
    Error::Unsupported {
        path: path.to_path_buf(),
        message: format!("expected {want}, found {:?}", got.color()),
    }
}

fn load_sidecar(path: &Path) -> Result<Option<KeyValues>> {
    let meta = sidecar_path(path);
    if meta.exists() {
        KeyValues::load(&meta).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads a 16-bit grayscale raw frame and its sidecar metadata.
pub fn load_raw(path: &Path) -> Result<BayerRaw> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(unsupported(path, "16-bit grayscale", &img));
    };
    let (width, height) = (buf.width() as usize, buf.height() as usize);
    let samples = buf.into_raw();
    let (mut black, mut white) = (0u16, u16::MAX);
    if let Some(kv) = load_sidecar(path)? {
        if let Some(cfa) = kv.get::<String>("cfa")? {
            cfa.parse::<Cfa>()?;
        }
        black = kv.get("black_level")?.unwrap_or(black);
        white = kv.get("white_level")?.unwrap_or(white);
    }
    BayerRaw::with_levels(width, height, samples, black, white)
}

/// Saves a raw frame as 16-bit grayscale plus its sidecar.
pub fn save_raw(path: &Path, raw: &BayerRaw) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(
        raw.width() as u32,
        raw.height() as u32,
        raw.samples().to_vec(),
    )
    .expect("sample count matches dimensions");
    encode(path, DynamicImage::ImageLuma16(buf))?;
    let mut kv = KeyValues::new();
    kv.insert("cfa", raw.cfa());
    kv.insert("white_level", raw.white_level());
    kv.insert("black_level", raw.black_level());
    write_atomic(&sidecar_path(path), kv.to_text("raw frame metadata").as_bytes())
}

/// Loads an 8-bit RGB image normalized to `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = decode(path)?;
    let DynamicImage::ImageRgb8(buf) = img else {
        return Err(unsupported(path, "8-bit RGB", &img));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let planes = [0, 1, 2].map(|k| {
        Plane::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32).0[k] as f64 / 255.0)
    });
    RgbImage::new(planes)
}

/// Saves an RGB image as 8 bits per channel (round half up, clamped).
pub fn save_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    let (w, h) = (rgb.width(), rgb.height());
    let [r, g, b] = rgb.channels();
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |p: &Plane| quantize(p[[y as usize, x as usize]] * 255.0, 255) as u8;
        Rgb([at(r), at(g), at(b)])
    });
    encode(path, DynamicImage::ImageRgb8(buf))
}

/// Loads either kind of image, dispatching on the stored pixel format.
pub fn load_image(path: &Path) -> Result<Image> {
    match decode(path)? {
        DynamicImage::ImageLuma16(_) => load_raw(path).map(Image::Raw),
        DynamicImage::ImageRgb8(_) => load_rgb(path).map(Image::Rgb),
        other => Err(unsupported(path, "16-bit grayscale or 8-bit RGB", &other)),
    }
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    match image {
        Image::Raw(raw) => save_raw(path, raw),
        Image::Rgb(rgb) => save_rgb(path, rgb),
    }
}

/// Loads a display transmittance image; the sidecar must give `pitch_um`.
pub fn load_pattern(path: &Path) -> Result<DisplayPattern> {
    let img = decode(path)?;
    let t = match &img {
        DynamicImage::ImageLuma16(buf) => Array2::from_shape_fn(
            (buf.height() as usize, buf.width() as usize),
            |(r, c)| buf.get_pixel(c as u32, r as u32).0[0] as f64 / 65535.0,
        ),
        DynamicImage::ImageLuma8(buf) => Array2::from_shape_fn(
            (buf.height() as usize, buf.width() as usize),
            |(r, c)| buf.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0,
        ),
        other => return Err(unsupported(path, "grayscale", other)),
    };
    let meta = sidecar_path(path);
    let kv = KeyValues::load(&meta)?;
    DisplayPattern::new(t, kv.require("pitch_um")?)
}

/// Saves a pattern as 16-bit grayscale plus a `pitch_um` sidecar.
pub fn save_pattern(path: &Path, pattern: &DisplayPattern) -> Result<()> {
    let n = pattern.size() as u32;
    let t = pattern.transmittance();
    let buf = ImageBuffer::from_fn(n, n, |x, y| Luma([quantize(t[[y as usize, x as usize]] * 65535.0, u16::MAX)]));
    encode(path, DynamicImage::ImageLuma16(buf))?;
    let mut kv = KeyValues::new();
    kv.insert("pitch_um", pattern.pitch_um());
    write_atomic(&sidecar_path(path), kv.to_text("display pattern metadata").as_bytes())
}

pub fn psf_set_to_text(psfs: &PsfSet) -> String {
    let mut out = String::from("# point-spread functions, kernel origin at the centre pixel\n");
    for color in Color::ALL {
        let psf = psfs.by_color(color);
        let k = psf.kernel();
        let _ = writeln!(out, "[{}]", color.name());
        let _ = writeln!(out, "wavelength_nm = {}", psf.wavelength_nm());
        let _ = writeln!(out, "r = {}", psf.r());
        let _ = writeln!(out, "size = {} {}", k.nrows(), k.ncols());
        for row in k.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

pub fn write_psf_set(path: &Path, psfs: &PsfSet) -> Result<()> {
    write_atomic(path, psf_set_to_text(psfs).as_bytes())
}

pub fn parse_psf_set(text: &str, source: &Path) -> Result<PsfSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut found: [Option<Psf>; 3] = [None, None, None];
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    while let Some((no, line)) = lines.next() {
        let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) else {
            return Err(err(no, format!("expected a section header, found `{line}`")));
        };
        let color: Color = name.parse().map_err(|_| err(no, format!("unknown colour `{name}`")))?;
        let (mut wavelength, mut r, mut size) = (None, None, None);
        while size.is_none() {
            let Some((no, line)) = lines.next() else {
                return Err(err(no, format!("section [{name}] ends before `size`")));
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(no, format!("expected `key = value`, found `{line}`")));
            };
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| err(no, format!("bad number `{v}`")));
            match key.trim() {
                "wavelength_nm" => wavelength = Some(num(value)?),
                "r" => r = Some(num(value)?),
                "size" => {
                    let dims: Vec<usize> = value
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| err(no, format!("bad size `{value}`"))))
                        .collect::<Result<_>>()?;
                    let [rows, cols] = dims[..] else {
                        return Err(err(no, "size needs `rows cols`".into()));
                    };
                    size = Some((rows, cols));
                }
                other => return Err(err(no, format!("unknown key `{other}`"))),
            }
        }
        let (rows, cols) = size.expect("loop exits with size");
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let Some((no, line)) = lines.next() else {
                return Err(err(0, format!("section [{name}] has fewer than {rows} rows")));
            };
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| err(no, format!("bad number `{v}`"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(err(no, format!("expected {cols} values, found {}", row.len())));
            }
            values.extend(row);
        }
        let kernel = Array2::from_shape_vec((rows, cols), values).expect("row count checked");
        let psf = Psf::new(
            kernel,
            color,
            r.unwrap_or(1.0),
            wavelength.unwrap_or(0.0),
        )
        .map_err(|e| err(no, e.to_string()))?;
        found[color.index()] = Some(psf);
    }
    match found {
        [Some(r), Some(g), Some(b)] => Ok(PsfSet::new(r, g, b)),
        _ => Err(err(0, "PSF file needs [R], [G] and [B] sections".into())),
    }
}

pub fn read_psf_set(path: &Path) -> Result<PsfSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_psf_set(&text, path)
}

const PLANE_MAGIC: &str = "PLANE1";

pub fn write_plane(path: &Path, plane: &Plane) -> Result<()> {
    let (rows, cols) = plane.dim();
    let mut bytes = format!("{PLANE_MAGIC}\n{rows} {cols}\n").into_bytes();
    bytes.reserve(rows * cols * 8);
    for v in plane.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_plane(path: &Path) -> Result<Plane> {
    let bytes = read_bytes(path)?;
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut header = bytes.splitn(3, |&b| b == b'\n');
    let magic = header.next().unwrap_or_default();
    if magic != PLANE_MAGIC.as_bytes() {
        return Err(corrupt("missing PLANE1 header"));
    }
    let dims = std::str::from_utf8(header.next().unwrap_or_default()).map_err(|_| corrupt("bad size line"))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| corrupt("bad size line")))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(corrupt("size line needs `rows cols`"));
    };
    let data = header.next().unwrap_or_default();
    if data.len() != rows * cols * 8 {
        return Err(corrupt(&format!(
            "expected {} data bytes, found {}",
            rows * cols * 8,
            data.len()
        )));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}
