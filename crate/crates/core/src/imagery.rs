//! Grayscale frames, PGM/PNG I/O, contrast stretching and the synthetic
//! SEM-frame generator used as ground truth throughout the pipeline.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::BitGrid;
use crate::grid::{GridSpec, Point};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("unsupported bit depth {0} (expected 8 or 16)")]
    UnsupportedDepth(u32),
    #[error("pixel buffer holds {actual} samples, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("sample {value} exceeds the {depth}-bit range")]
    SampleOutOfRange { value: u32, depth: u32 },
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("png error: {0}")]
    Png(String),
}

/// Bits per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Depth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl Depth {
    pub fn from_bits(bits: u32) -> Result<Self, ImageError> {
        match bits {
            8 => Ok(Depth::Eight),
            16 => Ok(Depth::Sixteen),
            other => Err(ImageError::UnsupportedDepth(other)),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Depth::Eight => 8,
            Depth::Sixteen => 16,
        }
    }

    /// Full-scale intensity, `2^bits - 1`.
    pub fn max_value(self) -> u16 {
        match self {
            Depth::Eight => u8::MAX as u16,
            Depth::Sixteen => u16::MAX,
        }
    }
}

/// Immutable row-major grayscale raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    depth: Depth,
    pixels: Vec<u16>,
    pitch_hint: Option<f64>,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        depth: Depth,
        pixels: Vec<u16>,
    ) -> Result<Self, ImageError> {
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImageError::SizeMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        let max = depth.max_value();
        if let Some(&value) = pixels.iter().find(|&&p| p > max) {
            return Err(ImageError::SampleOutOfRange {
                value: value as u32,
                depth: depth.bits(),
            });
        }
        Ok(Frame {
            width,
            height,
            depth,
            pixels,
            pitch_hint: None,
        })
    }

    pub fn filled(width: usize, height: usize, depth: Depth, value: u16) -> Self {
        Frame {
            width,
            height,
            depth,
            pixels: vec![value.min(depth.max_value()); width * height],
            pitch_hint: None,
        }
    }

    pub fn with_pitch_hint(mut self, pitch: Option<f64>) -> Self {
        self.pitch_hint = pitch;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn pitch_hint(&self) -> Option<f64> {
        self.pitch_hint
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u16] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Copies the `width`×`height` window whose top-left pixel is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Option<Frame> {
        if x + width > self.width || y + height > self.height {
            return None;
        }
        let mut pixels = Vec::with_capacity(width * height);
        for row in y..y + height {
            pixels.extend_from_slice(&self.row(row)[x..x + width]);
        }
        Some(Frame {
            width,
            height,
            depth: self.depth,
            pixels,
            pitch_hint: self.pitch_hint,
        })
    }

    /// True when every pixel carries the same intensity.
    pub fn is_flat(&self) -> bool {
        match self.pixels.first() {
            Some(&first) => self.pixels.iter().all(|&p| p == first),
            None => true,
        }
    }
}

#[inline]
pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

// ---------------------------------------------------------------------------
// I/O

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Reads a binary PGM (P5) or grayscale PNG, keeping sample values as stored.
pub fn load_image(path: impl AsRef<Path>) -> Result<Frame, ImageError> {
    let data = fs::read(path.as_ref())?;
    decode_image(&data)
}

pub fn decode_image(data: &[u8]) -> Result<Frame, ImageError> {
    if data.starts_with(b"P5") {
        decode_pgm(data)
    } else if data.starts_with(&PNG_SIGNATURE) {
        decode_png(data)
    } else {
        let magic: String = data
            .iter()
            .take(2)
            .map(|&b| if b.is_ascii_graphic() { b as char } else { '?' })
            .collect();
        Err(ImageError::UnsupportedFormat(format!(
            "unrecognised magic {magic:?}; expected binary PGM (P5) or PNG"
        )))
    }
}

pub fn decode_pgm(data: &[u8]) -> Result<Frame, ImageError> {
    if !data.starts_with(b"P5") {
        return Err(ImageError::UnsupportedFormat(
            "not a binary PGM (P5) file".into(),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = next_header_number(data, &mut pos)?;
    }
    // exactly one whitespace byte separates the header from the raster
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Malformed("missing raster separator".into())),
    }
    let [width, height, maxval] = fields;
    let depth = match maxval {
        1..=255 => Depth::Eight,
        256..=65535 => Depth::Sixteen,
        _ => return Err(ImageError::Malformed(format!("bad maxval {maxval}"))),
    };
    let (width, height) = (width as usize, height as usize);
    let count = width * height;
    let bytes_per = if depth == Depth::Eight { 1 } else { 2 };
    let raster = &data[pos..];
    if raster.len() < count * bytes_per {
        return Err(ImageError::Malformed(format!(
            "raster truncated: {} bytes, expected {}",
            raster.len(),
            count * bytes_per
        )));
    }
    let pixels: Vec<u16> = match depth {
        Depth::Eight => raster[..count].iter().map(|&b| b as u16).collect(),
        Depth::Sixteen => raster[..count * 2]
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
            .collect(),
    };
    if let Some(&value) = pixels.iter().find(|&&p| p as u32 > maxval) {
        return Err(ImageError::SampleOutOfRange {
            value: value as u32,
            depth: depth.bits(),
        });
    }
    Frame::new(width, height, depth, pixels)
}

fn next_header_number(data: &[u8], pos: &mut usize) -> Result<u32, ImageError> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = data.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(ImageError::Malformed("truncated PGM header".into())),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::Malformed("bad number in PGM header".into()))
}

pub fn decode_png(data: &[u8]) -> Result<Frame, ImageError> {
    let mut decoder = png::Decoder::new(io::Cursor::new(data));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(ImageError::UnsupportedFormat(format!(
            "PNG color type {:?}; only grayscale is supported",
            info.color_type
        )));
    }
    let depth = Depth::from_bits(info.bit_depth as u32)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let bytes = &buf[..out.buffer_size()];
    let pixels = match depth {
        Depth::Eight => bytes.iter().map(|&b| b as u16).collect(),
        Depth::Sixteen => bytes
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
            .collect(),
    };
    Frame::new(width, height, depth, pixels)
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let header = format!(
        "P5\n{} {}\n{}\n",
        frame.width,
        frame.height,
        frame.depth.max_value()
    );
    let bytes_per = if frame.depth == Depth::Eight { 1 } else { 2 };
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len() * bytes_per);
    out.extend_from_slice(header.as_bytes());
    match frame.depth {
        Depth::Eight => out.extend(frame.pixels.iter().map(|&p| p as u8)),
        Depth::Sixteen => {
            for &p in &frame.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
    }
    out
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, ImageError> {
    let bit_depth = match frame.depth {
        Depth::Eight => png::BitDepth::Eight,
        Depth::Sixteen => png::BitDepth::Sixteen,
    };
    let data: Vec<u8> = match frame.depth {
        Depth::Eight => frame.pixels.iter().map(|&p| p as u8).collect(),
        Depth::Sixteen => frame.pixels.iter().flat_map(|p| p.to_be_bytes()).collect(),
    };
    encode_png_raw(
        frame.width as u32,
        frame.height as u32,
        png::ColorType::Grayscale,
        bit_depth,
        &data,
    )
}

/// Encodes an 8-bit RGB buffer; used for colored previews.
pub fn encode_rgb_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>, ImageError> {
    if rgb.len() != width * height * 3 {
        return Err(ImageError::SizeMismatch {
            expected: width * height * 3,
            actual: rgb.len(),
        });
    }
    encode_png_raw(
        width as u32,
        height as u32,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        rgb,
    )
}

fn encode_png_raw(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder
            .write_header()
            .map_err(|e| ImageError::Png(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| ImageError::Png(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Writes PNG for a `.png` extension and binary PGM otherwise.
pub fn save_image(frame: &Frame, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(frame)?
    } else {
        encode_pgm(frame)
    };
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Contrast

pub const DEFAULT_LOW_PCT: f64 = 1.0;
pub const DEFAULT_HIGH_PCT: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub frame: Frame,
    /// Set when the percentile window collapsed and the input was returned as is.
    pub degenerate: bool,
}

/// Nearest-rank percentile over the intensity histogram.
fn percentile(counts: &[u64], total: u64, pct: f64) -> u16 {
    let rank = round_half_up(pct / 100.0 * (total - 1) as f64) as u64;
    let mut seen = 0u64;
    for (value, &count) in counts.iter().enumerate() {
        seen += count;
        if seen > rank {
            return value as u16;
        }
    }
    (counts.len() - 1) as u16
}

/// Linear stretch sending the `low_pct` percentile to 0 and `high_pct` to full
/// scale, clamped and rounded half-up.
pub fn normalize(frame: &Frame, low_pct: f64, high_pct: f64) -> Result<Normalized, ImageError> {
    if !(0.0..=100.0).contains(&low_pct) || !(0.0..=100.0).contains(&high_pct) || low_pct >= high_pct
    {
        return Err(ImageError::InvalidParams(format!(
            "percentiles must satisfy 0 <= low < high <= 100 (got {low_pct}, {high_pct})"
        )));
    }
    let max = frame.depth.max_value() as u64;
    if frame.pixels.is_empty() {
        return Ok(Normalized {
            frame: frame.clone(),
            degenerate: true,
        });
    }
    let mut counts = vec![0u64; max as usize + 1];
    for &p in &frame.pixels {
        counts[p as usize] += 1;
    }
    let total = frame.pixels.len() as u64;
    let lo = percentile(&counts, total, low_pct) as u64;
    let hi = percentile(&counts, total, high_pct) as u64;
    if hi <= lo {
        log::warn!("normalize: degenerate percentile window [{lo}, {hi}]; frame left unchanged");
        return Ok(Normalized {
            frame: frame.clone(),
            degenerate: true,
        });
    }
    let span = hi - lo;
    // lookup table over every representable intensity
    let lut: Vec<u16> = (0..=max)
        .map(|v| {
            if v <= lo {
                0
            } else if v >= hi {
                max as u16
            } else {
                ((2 * (v - lo) * max + span) / (2 * span)) as u16
            }
        })
        .collect();
    let pixels = frame.pixels.iter().map(|&p| lut[p as usize]).collect();
    Ok(Normalized {
        frame: Frame {
            pixels,
            ..frame.clone()
        },
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Synthetic frames

/// Appearance model for rendered memory cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Mean intensity of charged (bit 0) cells.
    pub mu_bright: f64,
    /// Mean intensity of uncharged (bit 1) cells.
    pub mu_dark: f64,
    pub sigma: f64,
    /// Pixels per cell along both axes.
    pub cell_pitch: u32,
    pub spot_radius: f64,
    pub background: f64,
    #[serde(default = "default_depth")]
    pub depth: Depth,
}

fn default_depth() -> Depth {
    Depth::Eight
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            mu_bright: 200.0,
            mu_dark: 90.0,
            sigma: 0.0,
            cell_pitch: 6,
            spot_radius: 2.0,
            background: 30.0,
            depth: Depth::Eight,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), ImageError> {
        let bad = |msg: String| Err(ImageError::InvalidParams(msg));
        let max = self.depth.max_value() as f64;
        if !(self.mu_bright > self.mu_dark && self.mu_dark >= self.background && self.background >= 0.0)
        {
            return bad(format!(
                "need mu_bright > mu_dark >= background >= 0 (got {}, {}, {})",
                self.mu_bright, self.mu_dark, self.background
            ));
        }
        if self.mu_bright > max {
            return bad(format!("mu_bright {} exceeds full scale {max}", self.mu_bright));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return bad(format!("sigma must be finite and >= 0 (got {})", self.sigma));
        }
        if self.cell_pitch < 2 {
            return bad(format!("cell_pitch must be >= 2 (got {})", self.cell_pitch));
        }
        if !(self.spot_radius > 0.0 && self.spot_radius < self.cell_pitch as f64 / 2.0) {
            return bad(format!(
                "spot_radius must lie in (0, cell_pitch/2) (got {} for pitch {})",
                self.spot_radius, self.cell_pitch
            ));
        }
        Ok(())
    }

    /// Pixel position of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (usize, usize) {
        let p = self.cell_pitch as usize;
        (col * p + p / 2, row * p + p / 2)
    }

    /// Integer offsets of the pixels making up one rendered spot.
    pub fn spot_offsets(&self) -> Vec<(i64, i64)> {
        disk_offsets(self.spot_radius)
    }

    /// The grid whose centers coincide with the rendered spots.
    pub fn oracle_grid(&self, rows: usize, cols: usize, window_radius: f64) -> GridSpec {
        let corner = |r: usize, c: usize| {
            let (x, y) = self.cell_center(r, c);
            Point::new(x as f64, y as f64)
        };
        GridSpec {
            corners: [
                corner(0, 0),
                corner(0, cols - 1),
                corner(rows - 1, 0),
                corner(rows - 1, cols - 1),
            ],
            rows,
            cols,
            window_radius,
        }
    }

    /// Sampling radius that stays inside a spot even under 1 px of misplacement.
    pub fn default_window_radius(&self) -> f64 {
        (self.spot_radius - 1.0).max(0.0)
    }
}

pub(crate) fn disk_offsets(radius: f64) -> Vec<(i64, i64)> {
    let reach = radius.floor() as i64;
    let r2 = radius * radius + 1e-9;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Renders `bits` as bright (bit 0) and dark (bit 1) disks on a uniform
/// background, then adds seeded Gaussian noise.
pub fn synth_frame(bits: &BitGrid, params: &SynthParams, seed: u64) -> Result<Frame, ImageError> {
    params.validate()?;
    if bits.rows() == 0 || bits.cols() == 0 {
        return Err(ImageError::InvalidParams("bit grid is empty".into()));
    }
    let pitch = params.cell_pitch as usize;
    let (width, height) = (bits.cols() * pitch, bits.rows() * pitch);
    let mut canvas = vec![params.background; width * height];
    let spot = params.spot_offsets();
    for r in 0..bits.rows() {
        for c in 0..bits.cols() {
            let level = if bits.get(r, c) == 0 {
                params.mu_bright
            } else {
                params.mu_dark
            };
            let (cx, cy) = params.cell_center(r, c);
            for &(dx, dy) in &spot {
                let x = (cx as i64 + dx) as usize;
                let y = (cy as i64 + dy) as usize;
                canvas[y * width + x] = level;
            }
        }
    }
    let max = params.depth.max_value() as f64;
    let quantize = |v: f64| round_half_up(v).clamp(0.0, max) as u16;
    let pixels: Vec<u16> = if params.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, params.sigma)
            .map_err(|e| ImageError::InvalidParams(e.to_string()))?;
        canvas
            .into_iter()
            .map(|v| quantize(v + noise.sample(&mut rng)))
            .collect()
    } else {
        canvas.into_iter().map(quantize).collect()
    };
    Ok(Frame::new(width, height, params.depth, pixels)?.with_pitch_hint(Some(pitch as f64)))
}
