//! Cell lattice fitted to four corner points, overlay rendering and local
//! corner refinement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{build_histogram, sample_cells, select_threshold, DEFAULT_BINS};
use crate::imagery::{round_half_up, Frame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("rows and cols must both be >= 2 (got {rows}x{cols})")]
    TooFewCells { rows: usize, cols: usize },
    #[error("corner coordinates must be finite")]
    NonFinite,
    #[error("corners TL, TR, BR, BL must form a positively oriented quadrilateral")]
    BadOrientation,
    #[error("corner quadrilateral is self-intersecting")]
    SelfIntersecting,
    #[error(
        "window_radius {radius} must be >= 0 and below half the minimum center spacing ({limit})"
    )]
    BadWindow { radius: f64, limit: f64 },
    #[error("cell centers outside the frame: {}", format_cells(.0))]
    OutOfBounds(Vec<(usize, usize)>),
    #[error("no signal: frame has zero variance")]
    NoSignal,
    #[error("initial grid cannot be evaluated: {0}")]
    Unscorable(String),
}

fn format_cells(cells: &[(usize, usize)]) -> String {
    const SHOWN: usize = 8;
    let mut s: Vec<String> = cells
        .iter()
        .take(SHOWN)
        .map(|(r, c)| format!("({r}, {c})"))
        .collect();
    if cells.len() > SHOWN {
        s.push(format!("... {} more", cells.len() - SHOWN));
    }
    s.join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

pub const TL: usize = 0;
pub const TR: usize = 1;
pub const BL: usize = 2;
pub const BR: usize = 3;

/// A `rows`×`cols` lattice spanned bilinearly by corners ordered TL, TR, BL,
/// BR (image y grows downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub corners: [Point; 4],
    pub rows: usize,
    pub cols: usize,
    pub window_radius: f64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

impl GridSpec {
    /// Corners in polygon order TL, TR, BR, BL.
    fn ring(&self) -> [Point; 4] {
        let c = &self.corners;
        [c[TL], c[TR], c[BR], c[BL]]
    }

    /// Twice the signed area of the corner polygon (positive when valid).
    pub fn signed_area2(&self) -> f64 {
        let ring = self.ring();
        (0..4)
            .map(|i| {
                let (a, b) = (ring[i], ring[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows < 2 || self.cols < 2 {
            return Err(GridError::TooFewCells {
                rows: self.rows,
                cols: self.cols,
            });
        }
        if self
            .corners
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
            || !self.window_radius.is_finite()
        {
            return Err(GridError::NonFinite);
        }
        let ring = self.ring();
        if segments_intersect(ring[0], ring[1], ring[2], ring[3])
            || segments_intersect(ring[1], ring[2], ring[3], ring[0])
        {
            return Err(GridError::SelfIntersecting);
        }
        if self.signed_area2() <= 0.0 {
            return Err(GridError::BadOrientation);
        }
        let limit = self.min_spacing() / 2.0;
        if self.window_radius < 0.0 || self.window_radius >= limit {
            return Err(GridError::BadWindow {
                radius: self.window_radius,
                limit,
            });
        }
        Ok(())
    }

    /// Smallest distance between horizontally or vertically adjacent centers.
    pub fn min_spacing(&self) -> f64 {
        let centers = self.cell_centers();
        let dist = |a: Point, b: Point| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        let mut best = f64::INFINITY;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let here = centers[r * self.cols + c];
                if c + 1 < self.cols {
                    best = best.min(dist(here, centers[r * self.cols + c + 1]));
                }
                if r + 1 < self.rows {
                    best = best.min(dist(here, centers[(r + 1) * self.cols + c]));
                }
            }
        }
        best
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        let u = col as f64 / (self.cols - 1) as f64;
        let v = row as f64 / (self.rows - 1) as f64;
        let [tl, tr, bl, br] = self.corners;
        let (a, b, c, d) = ((1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v);
        Point {
            x: a * tl.x + b * tr.x + c * bl.x + d * br.x,
            y: a * tl.y + b * tr.y + c * bl.y + d * br.y,
        }
    }

    /// Row-major `rows × cols` centers; the four extreme cells reproduce the
    /// corners exactly.
    pub fn cell_centers(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.cell_center(r, c));
            }
        }
        out
    }

    pub fn translated(&self, dx: f64, dy: f64) -> GridSpec {
        let mut g = self.clone();
        for p in &mut g.corners {
            p.x += dx;
            p.y += dy;
        }
        g
    }
}

/// Pixels of the cross marker drawn for one center.
pub fn marker_pixels(center: Point, radius: f64, width: usize, height: usize) -> Vec<(usize, usize)> {
    let arm = (round_half_up(radius) as i64).max(1);
    let (cx, cy) = (round_half_up(center.x) as i64, round_half_up(center.y) as i64);
    let mut out = Vec::with_capacity(4 * arm as usize + 1);
    let mut push = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            out.push((x as usize, y as usize));
        }
    };
    for k in -arm..=arm {
        push(cx + k, cy);
        if k != 0 {
            push(cx, cy + k);
        }
    }
    out
}

/// Cells whose center lies outside `[0, w-1] × [0, h-1]`.
pub fn cells_out_of_bounds(grid: &GridSpec, width: usize, height: usize) -> Vec<(usize, usize)> {
    let (maxx, maxy) = (width as f64 - 1.0, height as f64 - 1.0);
    let mut bad = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let p = grid.cell_center(r, c);
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= maxx && p.y <= maxy) {
                bad.push((r, c));
            }
        }
    }
    bad
}

/// Copy of `frame` with a full-scale cross at every cell center.
pub fn render_overlay(frame: &Frame, grid: &GridSpec) -> Result<Frame, GridError> {
    grid.validate()?;
    let bad = cells_out_of_bounds(grid, frame.width(), frame.height());
    if !bad.is_empty() {
        return Err(GridError::OutOfBounds(bad));
    }
    let (w, h) = (frame.width(), frame.height());
    let full = frame.depth().max_value();
    let mut pixels = frame.pixels().to_vec();
    for center in grid.cell_centers() {
        for (x, y) in marker_pixels(center, grid.window_radius, w, h) {
            pixels[y * w + x] = full;
        }
    }
    Ok(Frame::new(w, h, frame.depth(), pixels)
        .expect("same shape and depth as source")
        .with_pitch_hint(frame.pitch_hint()))
}

/// Otsu separability (between-class over total variance) of the sampled cell
/// intensities, or `None` when the grid cannot be sampled or separated.
/// Windows that straddle a spot edge pull in background and drag it below 1.
pub fn alignment_score(frame: &Frame, grid: &GridSpec) -> Option<f64> {
    let samples = sample_cells(frame, grid).ok()?;
    let hist = build_histogram(&samples.values, DEFAULT_BINS).ok()?;
    select_threshold(&hist).ok().map(|t| t.separability)
}

/// Coordinate descent over integer moves within `±radius` (the whole grid,
/// then each corner alone) until no move strictly improves
/// [`alignment_score`].
pub fn refine_grid(frame: &Frame, grid: &GridSpec, radius: u32) -> Result<GridSpec, GridError> {
    grid.validate()?;
    if frame.is_flat() {
        return Err(GridError::NoSignal);
    }
    let radius = radius.max(1) as i64;
    let mut best = grid.clone();
    let mut best_score = alignment_score(frame, &best).ok_or_else(|| {
        GridError::Unscorable("windows leave the frame or cells cannot be separated".into())
    })?;
    loop {
        let mut improved = false;
        // 0..4 moves one corner, 4 translates all of them
        for group in [4, 0, 1, 2, 3] {
            let origin = best.clone();
            let mut round_best: Option<(GridSpec, f64)> = None;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let candidate = if group == 4 {
                        origin.translated(dx as f64, dy as f64)
                    } else {
                        let mut g = origin.clone();
                        let p = g.corners[group];
                        g.corners[group] = Point::new(p.x + dx as f64, p.y + dy as f64);
                        g
                    };
                    if candidate.validate().is_err() {
                        continue;
                    }
                    let Some(score) = alignment_score(frame, &candidate) else {
                        continue;
                    };
                    let current = round_best.as_ref().map_or(best_score, |(_, s)| *s);
                    if score > current {
                        round_best = Some((candidate, score));
                    }
                }
            }
            if let Some((g, s)) = round_best {
                best = g;
                best_score = s;
                improved = true;
            }
        }
        if !improved {
            return Ok(best);
        }
    }
}
