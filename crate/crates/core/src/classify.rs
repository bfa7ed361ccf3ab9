//! Per-cell sampling, the intensity histogram, Otsu threshold selection,
//! bit assignment and majority voting across independent decodes.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::{BufRead, Read};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, Point};
use crate::imagery::{disk_offsets, round_half_up, Frame};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("sampling window of cell ({row}, {col}) leaves the frame")]
    WindowOutOfBounds { row: usize, col: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("histogram needs at least 2 bins (got {0})")]
    TooFewBins(usize),
    #[error("no samples to bin")]
    NoSamples,
    #[error("cannot separate classes: histogram has {0} non-empty bin(s)")]
    CannotSeparate(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vote needs an odd, non-zero number of bit grids (got {0})")]
    EvenVote(usize),
    #[error("malformed bit raster: {0}")]
    Malformed(String),
}

/// Which class of cells decodes to logical 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Charged cells image bright and store 0.
    #[default]
    BrightIsZero,
    BrightIsOne,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::BrightIsZero => Polarity::BrightIsOne,
            Polarity::BrightIsOne => Polarity::BrightIsZero,
        }
    }
}

// ---------------------------------------------------------------------------
// Bit grids

#[derive(Debug, Clone, PartialEq)]
pub struct BitGrid {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    margins: Vec<f64>,
}

impl BitGrid {
    /// Builds a grid with zero margins. Any non-zero input counts as 1.
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self, ClassifyError> {
        let margins = vec![0.0; bits.len()];
        Self::with_margins(rows, cols, bits, margins)
    }

    pub fn with_margins(
        rows: usize,
        cols: usize,
        bits: Vec<u8>,
        margins: Vec<f64>,
    ) -> Result<Self, ClassifyError> {
        if bits.len() != rows * cols || margins.len() != rows * cols {
            return Err(ClassifyError::ShapeMismatch(format!(
                "{rows}x{cols} grid with {} bits and {} margins",
                bits.len(),
                margins.len()
            )));
        }
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Ok(BitGrid {
            rows,
            cols,
            bits,
            margins,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.cols + col]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    /// Number of cells whose bit differs from `other`.
    pub fn hamming(&self, other: &BitGrid) -> Option<usize> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        Some(
            self.bits
                .iter()
                .zip(&other.bits)
                .filter(|(a, b)| a != b)
                .count(),
        )
    }

    /// Binary PBM (P4); a set bit is written as 1 (black).
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.cols, self.rows).into_bytes();
        let stride = self.cols.div_ceil(8);
        for r in 0..self.rows {
            let mut row = vec![0u8; stride];
            for c in 0..self.cols {
                if self.get(r, c) == 1 {
                    row[c / 8] |= 0x80 >> (c % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_pbm(data: &[u8]) -> Result<Self, ClassifyError> {
        let bad = |m: &str| ClassifyError::Malformed(m.to_string());
        let mut reader = std::io::Cursor::new(data);
        let mut magic = String::new();
        reader.read_line(&mut magic).map_err(|_| bad("unreadable header"))?;
        if magic.trim() != "P4" {
            return Err(bad("expected binary PBM (P4)"));
        }
        let mut dims = String::new();
        loop {
            dims.clear();
            reader.read_line(&mut dims).map_err(|_| bad("unreadable header"))?;
            if !dims.starts_with('#') {
                break;
            }
        }
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (cols, rows) = match (it.next(), it.next()) {
            (Some(Ok(c)), Some(Ok(r))) => (c, r),
            _ => return Err(bad("bad dimensions")),
        };
        let stride = cols.div_ceil(8);
        let mut raster = Vec::new();
        reader.read_to_end(&mut raster).map_err(|_| bad("unreadable raster"))?;
        if raster.len() < stride * rows {
            return Err(bad("raster truncated"));
        }
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push((raster[r * stride + c / 8] >> (7 - c % 8)) & 1);
            }
        }
        BitGrid::new(rows, cols, bits)
    }
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSamples {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CellSamples {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ClassifyError> {
        if values.len() != rows * cols {
            return Err(ClassifyError::ShapeMismatch(format!(
                "{rows}x{cols} samples with {} values",
                values.len()
            )));
        }
        Ok(CellSamples { rows, cols, values })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i / self.cols, i % self.cols, v);
        }
        out
    }
}

/// Pixel footprint of a sampling window around `center`: every pixel whose
/// center lies within `radius` of it, or the nearest pixel when `radius` is 0.
pub fn window_pixels(center: Point, radius: f64) -> Vec<(i64, i64)> {
    if radius <= 0.0 {
        return vec![(
            round_half_up(center.x) as i64,
            round_half_up(center.y) as i64,
        )];
    }
    let r2 = radius * radius + 1e-9;
    let (x0, x1) = ((center.x - radius).ceil() as i64, (center.x + radius).floor() as i64);
    let (y0, y1) = ((center.y - radius).ceil() as i64, (center.y + radius).floor() as i64);
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
            if dx * dx + dy * dy <= r2 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Mean intensity within the window, or `None` if any of it falls off the frame.
pub fn sample_point(frame: &Frame, center: Point, radius: f64) -> Option<f64> {
    if !center.x.is_finite() || !center.y.is_finite() {
        return None;
    }
    // fast path for integer-aligned centers
    let (rx, ry) = (center.x.round(), center.y.round());
    if radius > 0.0 && (center.x - rx).abs() < 1e-9 && (center.y - ry).abs() < 1e-9 {
        let (cx, cy) = (rx as i64, ry as i64);
        let reach = radius.floor() as i64;
        if cx - reach < 0
            || cy - reach < 0
            || cx + reach >= frame.width() as i64
            || cy + reach >= frame.height() as i64
        {
            return None;
        }
        let offsets = disk_offsets(radius);
        let sum: u64 = offsets
            .iter()
            .map(|&(dx, dy)| frame.get((cx + dx) as usize, (cy + dy) as usize) as u64)
            .sum();
        return Some(sum as f64 / offsets.len() as f64);
    }
    let pixels = window_pixels(center, radius);
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let mut sum = 0u64;
    for &(x, y) in &pixels {
        if x < 0 || y < 0 || x >= w || y >= h {
            return None;
        }
        sum += frame.get(x as usize, y as usize) as u64;
    }
    Some(sum as f64 / pixels.len() as f64)
}

/// Mean of each cell's window at the grid's centers.
pub fn sample_cells(frame: &Frame, grid: &GridSpec) -> Result<CellSamples, ClassifyError> {
    grid.validate()?;
    let centers = grid.cell_centers();
    let radius = grid.window_radius;
    let sample_row = |r: usize| -> Result<Vec<f64>, ClassifyError> {
        (0..grid.cols)
            .map(|c| {
                sample_point(frame, centers[r * grid.cols + c], radius)
                    .ok_or(ClassifyError::WindowOutOfBounds { row: r, col: c })
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Result<Vec<Vec<f64>>, _> = {
        use rayon::prelude::*;
        (0..grid.rows).into_par_iter().map(sample_row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<Vec<f64>>, _> = (0..grid.rows).map(sample_row).collect();
    let values = rows?.concat();
    CellSamples::new(grid.rows, grid.cols, values)
}

// ---------------------------------------------------------------------------
// Histogram

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_count: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub const DEFAULT_BINS: usize = 256;

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count as f64
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.bin_width()
    }

    /// Intensity of the lower edge of `bin` (or `hi` for `bin == bin_count`).
    pub fn boundary_value(&self, boundary: usize) -> f64 {
        if boundary >= self.bin_count {
            self.hi
        } else {
            self.lo + boundary as f64 * self.bin_width()
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                i,
                self.boundary_value(i),
                self.boundary_value(i + 1),
                c
            );
        }
        out
    }
}

/// Equal-width bins over `[min, max]` of the samples; the maximum falls in
/// the last bin. Identical samples widen the range by 0.5 each side.
pub fn build_histogram(samples: &[f64], bin_count: usize) -> Result<Histogram, ClassifyError> {
    if bin_count < 2 {
        return Err(ClassifyError::TooFewBins(bin_count));
    }
    if samples.is_empty() {
        return Err(ClassifyError::NoSamples);
    }
    let (mut lo, mut hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let scale = bin_count as f64 / (hi - lo);
    let mut counts = vec![0u64; bin_count];
    for &v in samples {
        let bin = (((v - lo) * scale).floor() as usize).min(bin_count - 1);
        counts[bin] += 1;
    }
    Ok(Histogram {
        bin_count,
        lo,
        hi,
        counts,
    })
}

// ---------------------------------------------------------------------------
// Threshold

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Intensity at the chosen bin boundary.
    pub threshold: f64,
    /// Index of the first bin of the bright class.
    pub boundary: usize,
    pub inter_class_variance: f64,
    /// Between-class over total variance, in `[0, 1]`.
    pub separability: f64,
    /// `(dark_mean, bright_mean)` from bin centers.
    pub class_means: (f64, f64),
    /// Distance in bins between the modes of the two classes.
    pub gap: usize,
}

/// Between-class variance at one boundary, up to the constant factor `1/N²`:
/// `(n1·s0 − n0·s1)² / (n0·n1)` with bin indices as values. Kept as exact
/// integers so that plateaus compare equal.
#[derive(Debug, Clone, Copy)]
struct Separation {
    diff: u128,
    weight: u128,
}

impl Separation {
    fn at(n0: u64, s0: u128, n1: u64, s1: u128) -> Self {
        if n0 == 0 || n1 == 0 {
            return Separation { diff: 0, weight: 1 };
        }
        let a = n1 as u128 * s0;
        let b = n0 as u128 * s1;
        Separation {
            diff: a.abs_diff(b),
            weight: n0 as u128 * n1 as u128,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self
            .diff
            .checked_mul(self.diff)
            .and_then(|sq| sq.checked_mul(other.weight));
        let rhs = other
            .diff
            .checked_mul(other.diff)
            .and_then(|sq| sq.checked_mul(self.weight));
        match (lhs, rhs) {
            (Some(l), Some(r)) => l.cmp(&r),
            _ => {
                let big = |v: u128| BigUint::from(v);
                let l = big(self.diff) * big(self.diff) * big(other.weight);
                let r = big(other.diff) * big(other.diff) * big(self.weight);
                l.cmp(&r)
            }
        }
    }
}

/// Otsu's criterion over bin boundaries `1..bin_count`. When several
/// consecutive boundaries share the maximum, the floor-midpoint of the first
/// such run is returned.
pub fn select_threshold(hist: &Histogram) -> Result<ThresholdResult, ClassifyError> {
    let non_empty = hist.counts.iter().filter(|&&c| c > 0).count();
    if non_empty < 2 {
        return Err(ClassifyError::CannotSeparate(non_empty));
    }
    let bins = hist.bin_count;
    let n_total: u64 = hist.counts.iter().sum();
    let s_total: u128 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();

    let mut scores = Vec::with_capacity(bins - 1);
    let (mut n0, mut s0) = (0u64, 0u128);
    for t in 1..bins {
        n0 += hist.counts[t - 1];
        s0 += (t as u128 - 1) * hist.counts[t - 1] as u128;
        scores.push(Separation::at(n0, s0, n_total - n0, s_total - s0));
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i].cmp(&scores[best]) == Ordering::Greater {
            best = i;
        }
    }
    let mut end = best;
    while end + 1 < scores.len() && scores[end + 1].cmp(&scores[best]) == Ordering::Equal {
        end += 1;
    }
    // scores[i] belongs to boundary i + 1
    let boundary = (best + 1 + end).div_ceil(2);
    Ok(describe_split(hist, boundary))
}

fn describe_split(hist: &Histogram, boundary: usize) -> ThresholdResult {
    let stats = |range: std::ops::Range<usize>| {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut mode = range.start;
        for i in range {
            let c = hist.counts[i];
            n += c;
            sum += c as f64 * hist.bin_center(i);
            if c > hist.counts[mode] {
                mode = i;
            }
        }
        (n, if n > 0 { sum / n as f64 } else { f64::NAN }, mode)
    };
    let (n0, m0, mode0) = stats(0..boundary);
    let (n1, m1, mode1) = stats(boundary..hist.bin_count);
    let total = (n0 + n1) as f64;
    let (w0, w1) = (n0 as f64 / total, n1 as f64 / total);
    let inter_class_variance = if n0 > 0 && n1 > 0 {
        w0 * w1 * (m1 - m0) * (m1 - m0)
    } else {
        0.0
    };
    let mean = w0 * if n0 > 0 { m0 } else { 0.0 } + w1 * if n1 > 0 { m1 } else { 0.0 };
    let total_variance = hist
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (hist.bin_center(i) - mean).powi(2))
        .sum::<f64>()
        / total;
    let separability = if total_variance > 0.0 {
        (inter_class_variance / total_variance).min(1.0)
    } else {
        0.0
    };
    ThresholdResult {
        threshold: hist.boundary_value(boundary),
        boundary,
        inter_class_variance,
        separability,
        class_means: (m0, m1),
        gap: mode1 - mode0,
    }
}

// ---------------------------------------------------------------------------
// Classification

/// Assigns bits: under `BrightIsZero` a value above the threshold is 0 and
/// anything at or below it is 1. Margins are `|value − threshold|`.
pub fn classify_cells(samples: &CellSamples, threshold: f64, polarity: Polarity) -> BitGrid {
    if let (Some(lo), Some(hi)) = (
        samples.values.iter().copied().reduce(f64::min),
        samples.values.iter().copied().reduce(f64::max),
    ) {
        if threshold < lo || threshold > hi {
            log::warn!("threshold {threshold} lies outside the sample range [{lo}, {hi}]");
        }
    }
    let mut bits = Vec::with_capacity(samples.values.len());
    let mut margins = Vec::with_capacity(samples.values.len());
    for &v in &samples.values {
        let bright = v > threshold;
        let bit = match polarity {
            Polarity::BrightIsZero => !bright,
            Polarity::BrightIsOne => bright,
        };
        bits.push(bit as u8);
        margins.push((v - threshold).abs());
    }
    BitGrid {
        rows: samples.rows,
        cols: samples.cols,
        bits,
        margins,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voted {
    /// Majority bits; margins hold `count(majority) − count(minority)`.
    pub bits: BitGrid,
    /// Cells where at least one input disagreed with the majority.
    pub disagreement: Vec<bool>,
}

impl Voted {
    pub fn disagreement_count(&self) -> usize {
        self.disagreement.iter().filter(|&&d| d).count()
    }
}

/// Per-cell strict majority over an odd number of equally shaped grids.
pub fn vote(grids: &[BitGrid]) -> Result<Voted, ClassifyError> {
    if grids.is_empty() || grids.len().is_multiple_of(2) {
        return Err(ClassifyError::EvenVote(grids.len()));
    }
    let (rows, cols) = (grids[0].rows, grids[0].cols);
    if let Some(g) = grids.iter().find(|g| g.rows != rows || g.cols != cols) {
        return Err(ClassifyError::ShapeMismatch(format!(
            "{}x{} grid voted against {rows}x{cols}",
            g.rows, g.cols
        )));
    }
    let n = grids.len();
    let mut bits = Vec::with_capacity(rows * cols);
    let mut margins = Vec::with_capacity(rows * cols);
    let mut disagreement = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let ones = grids.iter().filter(|g| g.bits[i] == 1).count();
        let zeros = n - ones;
        bits.push((ones > zeros) as u8);
        margins.push(ones.abs_diff(zeros) as f64);
        disagreement.push(ones != 0 && zeros != 0);
    }
    Ok(Voted {
        bits: BitGrid {
            rows,
            cols,
            bits,
            margins,
        },
        disagreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Depth;

    fn hist_from(counts: Vec<u64>) -> Histogram {
        Histogram {
            bin_count: counts.len(),
            lo: 0.0,
            hi: counts.len() as f64,
            counts,
        }
    }

    #[test]
    fn constant_frame_samples_are_constant() {
        let frame = Frame::filled(40, 40, Depth::Eight, 77);
        let grid = GridSpec {
            corners: [
                Point::new(5.0, 5.0),
                Point::new(35.0, 5.0),
                Point::new(5.0, 35.0),
                Point::new(35.0, 35.0),
            ],
            rows: 4,
            cols: 4,
            window_radius: 2.0,
        };
        let s = sample_cells(&frame, &grid).unwrap();
        assert!(s.values.iter().all(|&v| v == 77.0));
    }

    #[test]
    fn radius_zero_uses_nearest_pixel_half_up() {
        let px: Vec<u16> = (0..25).collect();
        let frame = Frame::new(5, 5, Depth::Eight, px).unwrap();
        // (1.5, 2.5) rounds half-up to pixel (2, 3)
        assert_eq!(sample_point(&frame, Point::new(1.5, 2.5), 0.0), Some(17.0));
        assert_eq!(sample_point(&frame, Point::new(1.49, 2.2), 0.0), Some(11.0));
    }

    #[test]
    fn radius_one_is_plus_shaped() {
        #[rustfmt::skip]
        let px = vec![
            0,  0,  0,  0, 0,
            0, 90, 10, 90, 0,
            0, 20, 30, 40, 0,
            0, 90, 50, 90, 0,
            0,  0,  0,  0, 0,
        ];
        let frame = Frame::new(5, 5, Depth::Eight, px).unwrap();
        // footprint: center 30 plus 10, 20, 40, 50
        assert_eq!(sample_point(&frame, Point::new(2.0, 2.0), 1.0), Some(30.0));
        // same footprint through the general (non-aligned) path
        let p = window_pixels(Point::new(2.0, 2.0), 1.0);
        assert_eq!(p, vec![(2, 1), (1, 2), (2, 2), (3, 2), (2, 3)]);
    }

    #[test]
    fn out_of_bounds_window_names_cell() {
        let frame = Frame::filled(20, 20, Depth::Eight, 1);
        let grid = GridSpec {
            corners: [
                Point::new(1.0, 1.0),
                Point::new(18.0, 1.0),
                Point::new(1.0, 18.0),
                Point::new(18.0, 18.0),
            ],
            rows: 3,
            cols: 3,
            window_radius: 2.0,
        };
        match sample_cells(&frame, &grid) {
            Err(ClassifyError::WindowOutOfBounds { row: 0, col: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn histogram_two_point_split() {
        let h = build_histogram(&[0.0, 0.0, 255.0, 255.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
    }

    #[test]
    fn histogram_conserves_counts() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 37) % 251) as f64 * 0.7).collect();
        let h = build_histogram(&values, 256).unwrap();
        assert_eq!(h.total(), 1000);
    }

    #[test]
    fn histogram_widens_identical_values() {
        let h = build_histogram(&[5.0; 10], 4).unwrap();
        assert_eq!((h.lo, h.hi), (4.5, 5.5));
        assert_eq!(h.total(), 10);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(
            build_histogram(&[1.0], 1),
            Err(ClassifyError::TooFewBins(1))
        ));
        assert!(matches!(build_histogram(&[], 4), Err(ClassifyError::NoSamples)));
    }

    #[test]
    fn delta_pair_plateau_floor_midpoint() {
        let mut counts = vec![0u64; 256];
        counts[10] = 500;
        counts[200] = 500;
        let h = Histogram {
            bin_count: 256,
            lo: 0.0,
            hi: 256.0,
            counts,
        };
        let t = select_threshold(&h).unwrap();
        assert_eq!(t.boundary, 105);
        assert_eq!(t.threshold, 105.0);
        assert_eq!(t.gap, 190);
        assert!(t.class_means.0 <= t.threshold && t.threshold <= t.class_means.1);
    }

    #[test]
    fn single_bin_cannot_separate() {
        let mut counts = vec![0; 8];
        counts[3] = 9;
        assert!(matches!(
            select_threshold(&hist_from(counts)),
            Err(ClassifyError::CannotSeparate(1))
        ));
    }

    #[test]
    fn classify_bright_is_zero() {
        let s = CellSamples::new(1, 3, vec![200.0, 128.0, 20.0]).unwrap();
        let g = classify_cells(&s, 128.0, Polarity::BrightIsZero);
        assert_eq!(g.bits(), &[0, 1, 1]);
        assert_eq!(g.margins(), &[72.0, 0.0, 108.0]);
        let g = classify_cells(&s, 128.0, Polarity::BrightIsOne);
        assert_eq!(g.bits(), &[1, 0, 0]);
    }

    #[test]
    fn vote_majority_and_flags() {
        let a = BitGrid::new(1, 2, vec![0, 1]).unwrap();
        let b = BitGrid::new(1, 2, vec![0, 1]).unwrap();
        let c = BitGrid::new(1, 2, vec![1, 1]).unwrap();
        let v = vote(&[a.clone(), b, c]).unwrap();
        assert_eq!(v.bits.bits(), &[0, 1]);
        assert_eq!(v.disagreement, vec![true, false]);
        assert_eq!(v.bits.margins(), &[1.0, 3.0]);

        let same = vote(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.bits.bits(), a.bits());
        assert_eq!(same.disagreement_count(), 0);
    }

    #[test]
    fn vote_rejects_even_and_mismatched() {
        let a = BitGrid::new(1, 2, vec![0, 1]).unwrap();
        let b = BitGrid::new(2, 1, vec![0, 1]).unwrap();
        assert!(matches!(vote(&[]), Err(ClassifyError::EvenVote(0))));
        assert!(matches!(
            vote(&[a.clone(), a.clone()]),
            Err(ClassifyError::EvenVote(2))
        ));
        assert!(matches!(
            vote(&[a.clone(), a, b]),
            Err(ClassifyError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pbm_round_trip() {
        let bits: Vec<u8> = (0..33).map(|i| (i % 3 == 0) as u8).collect();
        let g = BitGrid::new(3, 11, bits).unwrap();
        let back = BitGrid::from_pbm(&g.to_pbm()).unwrap();
        assert_eq!(back.bits(), g.bits());
        assert_eq!((back.rows(), back.cols()), (3, 11));
    }

    #[test]
    fn separation_compare_falls_back_to_bignum() {
        let huge = Separation {
            diff: u128::MAX / 4,
            weight: 3,
        };
        let small = Separation { diff: 1, weight: 1 };
        assert_eq!(huge.cmp(&small), Ordering::Greater);
        assert_eq!(small.cmp(&huge), Ordering::Less);
        assert_eq!(huge.cmp(&huge), Ordering::Equal);
    }
}
