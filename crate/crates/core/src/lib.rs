//! Recovering memory contents from electron-microscope images of a
//! floating-gate (Flash) cell array.
//!
//! The pipeline runs frame registration and merging ([`mosaic`]), lattice
//! fitting from four corners ([`grid`]), per-cell sampling, histogramming,
//! Otsu thresholding and voting ([`classify`]), physical-to-logical
//! descrambling ([`layout`]) and Intel HEX output with ground-truth
//! comparison ([`hexio`]). [`imagery`] provides frame I/O and a synthetic
//! frame generator whose known bits act as the oracle for every stage.

pub mod classify;
pub mod doc;
pub mod grid;
pub mod hexio;
pub mod imagery;
pub mod layout;
pub mod mosaic;

pub use classify::{BitGrid, CellSamples, Histogram, Polarity, ThresholdResult};
pub use grid::{GridSpec, Point};
pub use hexio::ErrorReport;
pub use imagery::{Depth, Frame, SynthParams};
pub use layout::{LayoutConfig, MemoryImage};
pub use mosaic::{Offset, TileLayout};
