//! Browser demo: render a synthetic memory array, drag the grid corners and
//! watch the histogram separation, bit error rate and overlay respond.
//!
//! [`Scene`] holds the plain-Rust logic; the `wasm_bindgen` wrappers only
//! convert errors to JavaScript exceptions.

use wasm_bindgen::prelude::*;

use semflash_core::classify::{
    build_histogram, classify_cells, sample_cells, select_threshold, BitGrid, Polarity, ThresholdResult,
};
use semflash_core::grid::{marker_pixels, refine_grid, GridSpec, Point};
use semflash_core::imagery::{synth_frame, Frame, SynthParams};

/// Largest array the demo accepts per axis.
pub const MAX_CELLS: usize = 256;

const BIT0_RGBA: [u8; 4] = [0, 230, 0, 255];
const BIT1_RGBA: [u8; 4] = [255, 0, 200, 255];

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub histogram: Vec<u32>,
    pub threshold: ThresholdResult,
    pub ber: f64,
    /// Image with per-cell markers coloured by decoded bit.
    pub overlay_rgba: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    frame: Frame,
    truth: BitGrid,
    params: SynthParams,
}

fn xorshift_bits(rows: usize, cols: usize, seed: u64) -> BitGrid {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let bits = (0..rows * cols)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 33) as u8 & 1
        })
        .collect();
    BitGrid::new(rows, cols, bits).expect("sized to the grid")
}

impl Scene {
    pub fn new(rows: usize, cols: usize, sigma: f64, seed: u64) -> Result<Self, String> {
        if !(2..=MAX_CELLS).contains(&rows) || !(2..=MAX_CELLS).contains(&cols) {
            return Err(format!("rows and cols must lie in 2..={MAX_CELLS}"));
        }
        let params = SynthParams {
            sigma,
            ..SynthParams::default()
        };
        let truth = xorshift_bits(rows, cols, seed);
        let frame = synth_frame(&truth, &params, seed).map_err(|e| e.to_string())?;
        Ok(Scene { frame, truth, params })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn oracle_grid(&self) -> GridSpec {
        self.params.oracle_grid(
            self.truth.rows(),
            self.truth.cols(),
            self.params.default_window_radius(),
        )
    }

    /// Corners as `[x, y]` pairs in TL, TR, BL, BR order.
    pub fn grid(&self, corners: &[f64], window_radius: f64) -> Result<GridSpec, String> {
        if corners.len() != 8 {
            return Err(format!("expected 8 corner coordinates, got {}", corners.len()));
        }
        let p = |i: usize| Point::new(corners[2 * i], corners[2 * i + 1]);
        let grid = GridSpec {
            corners: [p(0), p(1), p(2), p(3)],
            rows: self.truth.rows(),
            cols: self.truth.cols(),
            window_radius,
        };
        grid.validate().map_err(|e| e.to_string())?;
        Ok(grid)
    }

    pub fn grayscale_rgba(&self) -> Vec<u8> {
        let max = self.frame.depth().max_value() as u32;
        self.frame
            .pixels()
            .iter()
            .flat_map(|&v| {
                let g = ((v as u32 * 255 + max / 2) / max) as u8;
                [g, g, g, 255]
            })
            .collect()
    }

    pub fn analyze(&self, grid: &GridSpec, bins: usize) -> Result<Analysis, String> {
        let samples = sample_cells(&self.frame, grid).map_err(|e| e.to_string())?;
        let hist = build_histogram(&samples.values, bins).map_err(|e| e.to_string())?;
        let threshold = select_threshold(&hist).map_err(|e| e.to_string())?;
        let bits = classify_cells(&samples, threshold.threshold, Polarity::BrightIsZero);
        let errors = bits.hamming(&self.truth).expect("same shape");
        let (w, h) = (self.frame.width(), self.frame.height());
        let mut overlay = self.grayscale_rgba();
        for (i, center) in grid.cell_centers().into_iter().enumerate() {
            let color = if bits.bits()[i] == 0 { BIT0_RGBA } else { BIT1_RGBA };
            for (x, y) in marker_pixels(center, grid.window_radius, w, h) {
                overlay[(y * w + x) * 4..][..4].copy_from_slice(&color);
            }
        }
        Ok(Analysis {
            histogram: hist.counts.iter().map(|&c| c.min(u32::MAX as u64) as u32).collect(),
            threshold,
            ber: errors as f64 / bits.len() as f64,
            overlay_rgba: overlay,
        })
    }

    pub fn refine(&self, grid: &GridSpec, radius: u32) -> Result<GridSpec, String> {
        refine_grid(&self.frame, grid, radius).map_err(|e| e.to_string())
    }
}

fn flatten(grid: &GridSpec) -> Vec<f64> {
    grid.corners.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Synthetic scene exported to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, sigma: f64, seed: u32) -> Result<Demo, JsError> {
        Scene::new(rows, cols, sigma, seed as u64)
            .map(|scene| Demo { scene })
            .map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> usize {
        self.scene.frame().width()
    }

    pub fn height(&self) -> usize {
        self.scene.frame().height()
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        self.scene.grayscale_rgba()
    }

    pub fn oracle_corners(&self) -> Vec<f64> {
        flatten(&self.scene.oracle_grid())
    }

    pub fn default_window_radius(&self) -> f64 {
        self.scene.params.default_window_radius()
    }

    /// Validation message for a draft grid, or `undefined` when valid.
    pub fn check(&self, corners: &[f64], window_radius: f64) -> Option<String> {
        self.scene.grid(corners, window_radius).err()
    }

    pub fn analyze(&self, corners: &[f64], window_radius: f64, bins: usize) -> Result<AnalysisView, JsError> {
        let grid = self.scene.grid(corners, window_radius).map_err(|e| JsError::new(&e))?;
        self.scene
            .analyze(&grid, bins)
            .map(|inner| AnalysisView { inner })
            .map_err(|e| JsError::new(&e))
    }

    pub fn refine(&self, corners: &[f64], window_radius: f64, radius: u32) -> Result<Vec<f64>, JsError> {
        let grid = self.scene.grid(corners, window_radius).map_err(|e| JsError::new(&e))?;
        self.scene
            .refine(&grid, radius)
            .map(|g| flatten(&g))
            .map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen]
pub struct AnalysisView {
    inner: Analysis,
}

#[wasm_bindgen]
impl AnalysisView {
    pub fn histogram(&self) -> Vec<u32> {
        self.inner.histogram.clone()
    }

    pub fn threshold(&self) -> f64 {
        self.inner.threshold.threshold
    }

    pub fn boundary(&self) -> usize {
        self.inner.threshold.boundary
    }

    pub fn gap(&self) -> usize {
        self.inner.threshold.gap
    }

    pub fn separability(&self) -> f64 {
        self.inner.threshold.separability
    }

    pub fn ber(&self) -> f64 {
        self.inner.ber
    }

    pub fn overlay_rgba(&self) -> Vec<u8> {
        self.inner.overlay_rgba.clone()
    }
}
