//! Translation-only registration of overlapping frames and their merge into
//! a single array-wide mosaic.
//!
//! An [`Offset`] `(dx, dy)` is the position of the moving frame's origin in
//! the reference frame's coordinates: `moving(x, y)` images the same spot as
//! `reference(x + dx, y + dy)`. Global tile positions are prefix sums of
//! these pairwise offsets, so a mosaic is simply every frame pasted at its
//! offset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagery::Frame;

/// Smallest overlap (per axis) over which a correlation score is trusted.
pub const MIN_OVERLAP: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MosaicError {
    #[error("frames differ in bit depth")]
    DepthMismatch,
    #[error("search radius {radius} leaves less than {MIN_OVERLAP}x{MIN_OVERLAP} px of overlap")]
    OverlapExhausted { radius: u32 },
    #[error("no signal: overlap has zero variance at every candidate offset")]
    NoSignal,
    #[error("tile {index} is flat (zero variance)")]
    FlatTile { index: usize },
    #[error("registering tile {moving} against tile {reference}: {source}")]
    Pair {
        reference: usize,
        moving: usize,
        source: Box<MosaicError>,
    },
    #[error("invalid tile layout: {0}")]
    InvalidLayout(String),
    #[error("inconsistent placements: {0}")]
    InconsistentPlacement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrder {
    #[default]
    RowMajor,
    /// Odd tile rows are acquired right to left.
    Serpentine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub nominal_overlap: usize,
    #[serde(default)]
    pub order: ScanOrder,
}

impl TileLayout {
    pub fn new(grid_rows: usize, grid_cols: usize, nominal_overlap: usize) -> Self {
        TileLayout {
            grid_rows,
            grid_cols,
            nominal_overlap,
            order: ScanOrder::RowMajor,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self, frames: usize) -> Result<(), MosaicError> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(MosaicError::InvalidLayout(format!(
                "{}x{} tile grid is empty",
                self.grid_rows, self.grid_cols
            )));
        }
        if self.frame_count() != frames {
            return Err(MosaicError::InvalidLayout(format!(
                "{}x{} tiles declared but {frames} frames given",
                self.grid_rows, self.grid_cols
            )));
        }
        Ok(())
    }

    /// Tile-grid `(row, col)` of the `index`-th acquired frame.
    pub fn position_of(&self, index: usize) -> (usize, usize) {
        let row = index / self.grid_cols;
        let mut col = index % self.grid_cols;
        if self.order == ScanOrder::Serpentine && row % 2 == 1 {
            col = self.grid_cols - 1 - col;
        }
        (row, col)
    }

    /// Acquisition index of the tile at `(row, col)`.
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        let col = if self.order == ScanOrder::Serpentine && row % 2 == 1 {
            self.grid_cols - 1 - col
        } else {
            col
        };
        row * self.grid_cols + col
    }

    /// Tile size needed to cover a `width`×`height` image with this layout
    /// while overlapping neighbours by at least `nominal_overlap`.
    pub fn tile_size(&self, width: usize, height: usize) -> (usize, usize) {
        let span = |extent: usize, n: usize| (extent + (n - 1) * self.nominal_overlap).div_ceil(n);
        (
            span(width, self.grid_cols).min(width),
            span(height, self.grid_rows).min(height),
        )
    }

    /// Evenly spread tile origins (indexed by acquisition order) covering the
    /// image edge to edge.
    pub fn tile_origins(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let (tw, th) = self.tile_size(width, height);
        let spread = |i: usize, n: usize, free: usize| {
            if n == 1 {
                0
            } else {
                (i * free + (n - 1) / 2) / (n - 1)
            }
        };
        (0..self.frame_count())
            .map(|k| {
                let (r, c) = self.position_of(k);
                (
                    spread(c, self.grid_cols, width - tw),
                    spread(r, self.grid_rows, height - th),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i64,
    pub dy: i64,
    /// Normalized cross-correlation at the chosen offset.
    pub score: f64,
}

impl Offset {
    pub const ANCHOR: Offset = Offset {
        dx: 0,
        dy: 0,
        score: 1.0,
    };
}

/// Overlap rectangle in reference coordinates for a moving frame at `(ox, oy)`.
fn overlap(reference: &Frame, moving: &Frame, ox: i64, oy: i64) -> Option<(i64, i64, i64, i64)> {
    let x0 = ox.max(0);
    let y0 = oy.max(0);
    let x1 = (ox + moving.width() as i64).min(reference.width() as i64);
    let y1 = (oy + moving.height() as i64).min(reference.height() as i64);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// NCC over the overlap using exact integer moments; `None` when either
/// side has zero variance.
fn ncc(reference: &Frame, moving: &Frame, ox: i64, oy: i64, rect: (i64, i64, i64, i64)) -> Option<f64> {
    let (x0, y0, x1, y1) = rect;
    let n = ((x1 - x0) * (y1 - y0)) as u128;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0u64, 0u64, 0u128, 0u128, 0u128);
    for y in y0..y1 {
        let ra = &reference.row(y as usize)[x0 as usize..x1 as usize];
        let rb_start = (x0 - ox) as usize;
        let rb = &moving.row((y - oy) as usize)[rb_start..rb_start + ra.len()];
        let (mut la, mut lb, mut laa, mut lbb, mut lab) = (0u64, 0u64, 0u64, 0u64, 0u64);
        for (&a, &b) in ra.iter().zip(rb) {
            let (a, b) = (a as u64, b as u64);
            la += a;
            lb += b;
            laa += a * a;
            lbb += b * b;
            lab += a * b;
        }
        sa += la;
        sb += lb;
        saa += laa as u128;
        sbb += lbb as u128;
        sab += lab as u128;
    }
    let (sa, sb) = (sa as u128, sb as u128);
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va == 0 || vb == 0 {
        return None;
    }
    let cov = (n * sab) as i128 - (sa * sb) as i128;
    if cov >= 0 && cov as u128 == va && va == vb {
        return Some(1.0);
    }
    let score = cov as f64 / ((va as f64).sqrt() * (vb as f64).sqrt());
    Some(score.clamp(-1.0, 1.0))
}

/// Finds the offset within `±search_radius` of `nominal` maximizing NCC.
/// Ties go to the smallest `|dx|+|dy|` deviation, then smallest dy, then dx.
pub fn register_pair_near(
    reference: &Frame,
    moving: &Frame,
    nominal: (i64, i64),
    search_radius: u32,
) -> Result<Offset, MosaicError> {
    if reference.depth() != moving.depth() {
        return Err(MosaicError::DepthMismatch);
    }
    let r = search_radius as i64;
    let mut candidates = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (ox, oy) = (nominal.0 + dx, nominal.1 + dy);
            let rect = overlap(reference, moving, ox, oy)
                .filter(|&(x0, y0, x1, y1)| {
                    (x1 - x0) as usize >= MIN_OVERLAP && (y1 - y0) as usize >= MIN_OVERLAP
                })
                .ok_or(MosaicError::OverlapExhausted {
                    radius: search_radius,
                })?;
            candidates.push((dx, dy, rect));
        }
    }
    let score_of = |&(dx, dy, rect): &(i64, i64, (i64, i64, i64, i64))| {
        ncc(reference, moving, nominal.0 + dx, nominal.1 + dy, rect).map(|s| (dx, dy, s))
    };
    #[cfg(feature = "parallel")]
    let scored: Vec<(i64, i64, f64)> = {
        use rayon::prelude::*;
        candidates.par_iter().filter_map(score_of).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Vec<(i64, i64, f64)> = candidates.iter().filter_map(score_of).collect();

    let key = |&(dx, dy, _): &(i64, i64, f64)| (dx.abs() + dy.abs(), dy, dx);
    let best = scored
        .into_iter()
        .reduce(|best, cand| {
            if cand.2 > best.2 || (cand.2 == best.2 && key(&cand) < key(&best)) {
                cand
            } else {
                best
            }
        })
        .ok_or(MosaicError::NoSignal)?;
    Ok(Offset {
        dx: nominal.0 + best.0,
        dy: nominal.1 + best.1,
        score: best.2,
    })
}

/// Registers `moving` against `reference` around zero displacement.
pub fn register_pair(reference: &Frame, moving: &Frame, search_radius: u32) -> Result<Offset, MosaicError> {
    register_pair_near(reference, moving, (0, 0), search_radius)
}

/// Registers every tile against its left neighbour (or the tile above for
/// the first column) and chains the pairwise offsets into global positions
/// anchored at frame 0. Results are indexed by acquisition order.
pub fn plan_registration(
    frames: &[Frame],
    layout: &TileLayout,
    search_radius: u32,
) -> Result<Vec<Offset>, MosaicError> {
    layout.validate(frames.len())?;
    if let Some(index) = frames.iter().position(Frame::is_flat) {
        return Err(MosaicError::FlatTile { index });
    }
    let ov = layout.nominal_overlap as i64;
    // (moving, reference, nominal offset) for every tile but the anchor
    let pairs: Vec<(usize, usize, (i64, i64))> = (0..frames.len())
        .filter_map(|k| {
            let (r, c) = layout.position_of(k);
            if c > 0 {
                let j = layout.index_of(r, c - 1);
                Some((k, j, (frames[j].width() as i64 - ov, 0)))
            } else if r > 0 {
                let j = layout.index_of(r - 1, c);
                Some((k, j, (0, frames[j].height() as i64 - ov)))
            } else {
                None
            }
        })
        .collect();

    let register = |&(k, j, nominal): &(usize, usize, (i64, i64))| {
        register_pair_near(&frames[j], &frames[k], nominal, search_radius)
            .map(|o| (k, j, o))
            .map_err(|e| MosaicError::Pair {
                reference: j,
                moving: k,
                source: Box::new(e),
            })
    };
    #[cfg(feature = "parallel")]
    let relative: Vec<(usize, usize, Offset)> = {
        use rayon::prelude::*;
        pairs.par_iter().map(register).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let relative: Vec<(usize, usize, Offset)> = pairs.iter().map(register).collect::<Result<_, _>>()?;

    let mut parent = vec![None; frames.len()];
    for (k, j, o) in relative {
        parent[k] = Some((j, o));
    }
    let mut global: Vec<Option<Offset>> = vec![None; frames.len()];
    global[layout.index_of(0, 0)] = Some(Offset::ANCHOR);
    // resolve in tile-grid order so every parent is placed before its child
    for r in 0..layout.grid_rows {
        for c in 0..layout.grid_cols {
            let k = layout.index_of(r, c);
            if let Some((j, rel)) = parent[k] {
                let base = global[j].expect("parent placed first");
                global[k] = Some(Offset {
                    dx: base.dx + rel.dx,
                    dy: base.dy + rel.dy,
                    score: rel.score,
                });
            }
        }
    }
    let mut out: Vec<Offset> = global.into_iter().map(|o| o.expect("all tiles placed")).collect();
    // positions are relative to acquisition frame 0
    let anchor = out[0];
    for o in &mut out {
        o.dx -= anchor.dx;
        o.dy -= anchor.dy;
    }
    out[0].score = 1.0;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub frame: Frame,
    /// Row-major; `false` where no tile contributed.
    pub coverage: Vec<bool>,
    /// Global coordinates of the canvas's top-left pixel.
    pub origin: (i64, i64),
}

impl Mosaic {
    pub fn covered_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

fn rects_touch(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

/// Pastes every frame at its global offset onto the union bounding box,
/// averaging overlaps with round-half-up.
pub fn merge_frames(frames: &[Frame], layout: &TileLayout, offsets: &[Offset]) -> Result<Mosaic, MosaicError> {
    layout.validate(frames.len())?;
    if offsets.len() != frames.len() {
        return Err(MosaicError::InconsistentPlacement(format!(
            "{} offsets for {} frames",
            offsets.len(),
            frames.len()
        )));
    }
    let depth = frames[0].depth();
    if frames.iter().any(|f| f.depth() != depth) {
        return Err(MosaicError::DepthMismatch);
    }
    let rects: Vec<(i64, i64, i64, i64)> = frames
        .iter()
        .zip(offsets)
        .map(|(f, o)| (o.dx, o.dy, o.dx + f.width() as i64, o.dy + f.height() as i64))
        .collect();
    if let Some(i) = rects.iter().position(|r| r.2 <= r.0 || r.3 <= r.1) {
        return Err(MosaicError::InconsistentPlacement(format!("frame {i} is empty")));
    }
    // placements must form one connected region
    let mut reached = vec![false; rects.len()];
    let mut stack = vec![0];
    reached[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..rects.len() {
            if !reached[j] && rects_touch(rects[i], rects[j]) {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(j) = reached.iter().position(|&r| !r) {
        return Err(MosaicError::InconsistentPlacement(format!(
            "frame {j} is disconnected from the rest of the mosaic"
        )));
    }

    let x0 = rects.iter().map(|r| r.0).min().unwrap();
    let y0 = rects.iter().map(|r| r.1).min().unwrap();
    let x1 = rects.iter().map(|r| r.2).max().unwrap();
    let y1 = rects.iter().map(|r| r.3).max().unwrap();
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut sum = vec![0u32; w * h];
    let mut count = vec![0u16; w * h];
    for (f, o) in frames.iter().zip(offsets) {
        let (bx, by) = ((o.dx - x0) as usize, (o.dy - y0) as usize);
        for y in 0..f.height() {
            let dst = (by + y) * w + bx;
            for (x, &p) in f.row(y).iter().enumerate() {
                sum[dst + x] += p as u32;
                count[dst + x] += 1;
            }
        }
    }
    let pixels = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| {
            if n == 0 {
                0
            } else {
                let (s, n) = (s as u64, n as u64);
                ((2 * s + n) / (2 * n)) as u16
            }
        })
        .collect();
    let coverage = count.iter().map(|&n| n > 0).collect();
    let frame = Frame::new(w, h, depth, pixels)
        .expect("averages stay within depth range")
        .with_pitch_hint(frames[0].pitch_hint());
    Ok(Mosaic {
        frame,
        coverage,
        origin: (x0, y0),
    })
}

/// Cuts `source` into tiles at the given top-left positions.
pub fn cut_tiles(
    source: &Frame,
    origins: &[(usize, usize)],
    tile: (usize, usize),
) -> Result<Vec<Frame>, MosaicError> {
    origins
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            source.crop(x, y, tile.0, tile.1).ok_or_else(|| {
                MosaicError::InconsistentPlacement(format!(
                    "tile {i} at ({x}, {y}) exceeds the {}x{} source",
                    source.width(),
                    source.height()
                ))
            })
        })
        .collect()
}
