//! Bayer raw frames, their four half-resolution channel planes, and RGB
//! images.

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A real-valued image plane, indexed `[row, col]`.
pub type Plane = Array2<f64>;

/// Colour-filter-array layout. Only RGGB is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cfa {
    #[default]
    Rggb,
}

impl fmt::Display for Cfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RGGB")
    }
}

impl std::str::FromStr for Cfa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("rggb") {
            Ok(Cfa::Rggb)
        } else {
            Err(Error::domain(format!("unsupported CFA layout `{s}` (only RGGB)")))
        }
    }
}

/// The four sites of an RGGB tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    R,
    G1,
    G2,
    B,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::R, Channel::G1, Channel::G2, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(row, col)` offset of this site inside the 2x2 tile.
    pub fn offset(self) -> (usize, usize) {
        match self {
            Channel::R => (0, 0),
            Channel::G1 => (0, 1),
            Channel::G2 => (1, 0),
            Channel::B => (1, 1),
        }
    }

    pub fn color(self) -> Color {
        match self {
            Channel::R => Color::Red,
            Channel::G1 | Channel::G2 => Color::Green,
            Channel::B => Color::Blue,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::R => "R",
            Channel::G1 => "G1",
            Channel::G2 => "G2",
            Channel::B => "B",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(Channel::R),
            "G" | "G1" => Ok(Channel::G1),
            "G2" => Ok(Channel::G2),
            "B" => Ok(Channel::B),
            _ => Err(Error::domain(format!("unknown channel `{s}`"))),
        }
    }
}

/// Spectral band of a filter site. G1 and G2 share the green band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "R",
            Color::Green => "G",
            Color::Blue => "B",
        }
    }
}

impl std::str::FromStr for Color {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(Color::Red),
            "G" => Ok(Color::Green),
            "B" => Ok(Color::Blue),
            _ => Err(Error::domain(format!("unknown colour `{s}`"))),
        }
    }
}

/// A 16-bit RGGB sensor frame, samples stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BayerRaw {
    width: usize,
    height: usize,
    samples: Vec<u16>,
    black_level: u16,
    white_level: u16,
}

impl BayerRaw {
    pub fn new(width: usize, height: usize, samples: Vec<u16>) -> Result<Self> {
        Self::with_levels(width, height, samples, 0, u16::MAX)
    }

    pub fn with_levels(
        width: usize,
        height: usize,
        samples: Vec<u16>,
        black_level: u16,
        white_level: u16,
    ) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "raw frame must have even, non-zero dimensions, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::dim(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            )));
        }
        if white_level == 0 || black_level >= white_level {
            return Err(Error::domain(format!(
                "invalid levels: black {black_level}, white {white_level}"
            )));
        }
        if let Some(v) = samples.iter().find(|&&v| v > white_level) {
            return Err(Error::domain(format!(
                "sample {v} exceeds white level {white_level}"
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
            black_level,
            white_level,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }

    pub fn cfa(&self) -> Cfa {
        Cfa::Rggb
    }

    pub fn black_level(&self) -> u16 {
        self.black_level
    }

    pub fn white_level(&self) -> u16 {
        self.white_level
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.samples[row * self.width + col]
    }

    /// Which filter site covers `(row, col)`.
    pub fn channel_at(row: usize, col: usize) -> Channel {
        match (row % 2, col % 2) {
            (0, 0) => Channel::R,
            (0, 1) => Channel::G1,
            (1, 0) => Channel::G2,
            _ => Channel::B,
        }
    }
}

/// Four half-resolution planes (R, G1, G2, B) normalized to the white level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    planes: [Plane; 4],
}

impl ChannelStack {
    pub fn new(planes: [Plane; 4]) -> Result<Self> {
        let dim = planes[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::dim("channel planes must be non-empty"));
        }
        if planes.iter().any(|p| p.dim() != dim) {
            return Err(Error::dim(format!(
                "channel planes differ in size: {:?}",
                planes.iter().map(|p| p.dim()).collect::<Vec<_>>()
            )));
        }
        Ok(Self { planes })
    }

    /// Same constant value in every plane.
    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            planes: std::array::from_fn(|_| Plane::from_elem((rows, cols), value)),
        }
    }

    /// `(rows, cols)` of each plane.
    pub fn dim(&self) -> (usize, usize) {
        self.planes[0].dim()
    }

    pub fn plane(&self, channel: Channel) -> &Plane {
        &self.planes[channel.index()]
    }

    pub fn plane_mut(&mut self, channel: Channel) -> &mut Plane {
        &mut self.planes[channel.index()]
    }

    pub fn planes(&self) -> &[Plane; 4] {
        &self.planes
    }

    pub fn into_planes(self) -> [Plane; 4] {
        self.planes
    }

    /// Applies `f` to every plane, keeping channel order. `f` must preserve
    /// plane dimensions.
    pub fn try_map<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(Channel, &Plane) -> Result<Plane>,
    {
        let mut out = Vec::with_capacity(4);
        for ch in Channel::ALL {
            out.push(f(ch, self.plane(ch))?);
        }
        let planes: [Plane; 4] = out.try_into().expect("four planes");
        Self::new(planes)
    }

    pub fn map<F>(&self, mut f: F) -> Self
    where
        F: FnMut(Channel, &Plane) -> Plane,
    {
        self.try_map(|c, p| Ok(f(c, p)))
            .expect("map must preserve plane dimensions")
    }

    pub fn mean(&self, channel: Channel) -> f64 {
        self.plane(channel).mean().unwrap_or(0.0)
    }
}

/// Full-resolution linear RGB, each channel in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    channels: [Plane; 3],
}

impl RgbImage {
    pub fn new(channels: [Plane; 3]) -> Result<Self> {
        let dim = channels[0].dim();
        if channels.iter().any(|c| c.dim() != dim) {
            return Err(Error::dim("RGB channels differ in size"));
        }
        Ok(Self { channels })
    }

    pub fn width(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn height(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn channel(&self, color: Color) -> &Plane {
        &self.channels[color.index()]
    }

    pub fn channels(&self) -> &[Plane; 3] {
        &self.channels
    }

    pub fn into_channels(self) -> [Plane; 3] {
        self.channels
    }

    pub fn mean(&self, color: Color) -> f64 {
        self.channel(color).mean().unwrap_or(0.0)
    }
}

/// Round half up, then clamp to `[0, max]`.
pub fn quantize(value: f64, max: u16) -> u16 {
    let v = (value + 0.5).floor();
    if v.is_nan() || v <= 0.0 {
        0
    } else if v >= max as f64 {
        max
    } else {
        v as u16
    }
}

/// Splits an RGGB mosaic into its four channel planes, dividing by the white
/// level.
pub fn split_bayer(raw: &BayerRaw) -> ChannelStack {
    let rows = raw.height / 2;
    let cols = raw.width / 2;
    let scale = 1.0 / raw.white_level as f64;
    let planes = Channel::ALL.map(|ch| {
        let (dr, dc) = ch.offset();
        Plane::from_shape_fn((rows, cols), |(r, c)| {
            raw.get(2 * r + dr, 2 * c + dc) as f64 * scale
        })
    });
    ChannelStack { planes }
}

/// Interleaves four planes back into an RGGB mosaic, scaling by
/// `white_level` and quantizing with [`quantize`].
pub fn merge_bayer(stack: &ChannelStack, white_level: u16) -> Result<BayerRaw> {
    let (rows, cols) = stack.dim();
    if stack.planes.iter().any(|p| p.dim() != (rows, cols)) {
        return Err(Error::dim("channel planes differ in size"));
    }
    let width = cols * 2;
    let height = rows * 2;
    let mut samples = vec![0u16; width * height];
    let wl = white_level as f64;
    for ch in Channel::ALL {
        let (dr, dc) = ch.offset();
        for ((r, c), &v) in stack.plane(ch).indexed_iter() {
            samples[(2 * r + dr) * width + 2 * c + dc] = quantize(v * wl, white_level);
        }
    }
    BayerRaw::with_levels(width, height, samples, 0, white_level)
}

/// Clamps every value into `[0, 1]`.
pub fn clip_unit(plane: &Plane) -> Plane {
    plane.mapv(|v| v.clamp(0.0, 1.0))
}

pub(crate) fn same_dims(a: &Plane, b: &Plane, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn max_abs_diff(a: &Plane, b: &Plane) -> f64 {
    let mut m = 0.0f64;
    ndarray::Zip::from(a).and(b).for_each(|&x, &y| m = m.max((x - y).abs()));
    m
}
