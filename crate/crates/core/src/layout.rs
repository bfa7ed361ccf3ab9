//! Physical bit grid to logical byte image (and back), plus the known test
//! patterns used to calibrate the mapping.
//!
//! The mapping is built in two steps. First the physical columns are
//! permuted by the column interleave: with factor `k`, logical column `j`
//! reads physical column `(j mod k)·(cols/k) + j div k`, so consecutive
//! logical bits walk round-robin through `k` contiguous column groups. The
//! resulting logical lattice is then scanned row- or column-major (optionally
//! reversing every other line) and cut into 8-bit words.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::BitGrid;

pub const WORD_BITS: usize = 8;

/// 768 × 512 cells: the default 48 kB array.
pub const FLAGSHIP_ROWS: usize = 768;
pub const FLAGSHIP_COLS: usize = 512;
pub const FLAGSHIP_BYTES: usize = 49_152;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("memory image must not be empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scan {
    #[default]
    RowMajor,
    ColumnMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitOrder {
    #[default]
    MsbFirst,
    LsbFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    #[serde(default)]
    pub scan: Scan,
    /// Reverse every other scan line (rows for row-major, columns for
    /// column-major).
    #[serde(default)]
    pub row_serpentine: bool,
    #[serde(default = "one")]
    pub col_interleave: usize,
    #[serde(default)]
    pub bit_order: BitOrder,
    #[serde(default = "word_bits")]
    pub word_bits: usize,
    #[serde(default)]
    pub base_address: u32,
    #[serde(default)]
    pub invert_data: bool,
}

fn one() -> usize {
    1
}

fn word_bits() -> usize {
    WORD_BITS
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            scan: Scan::RowMajor,
            row_serpentine: false,
            col_interleave: 1,
            bit_order: BitOrder::MsbFirst,
            word_bits: WORD_BITS,
            base_address: 0,
            invert_data: false,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), LayoutError> {
        if self.word_bits != WORD_BITS {
            return Err(LayoutError::InvalidConfig(format!(
                "word_bits must be {WORD_BITS} (got {})",
                self.word_bits
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(LayoutError::ShapeMismatch(format!("{rows}x{cols} grid is empty")));
        }
        if !(rows * cols).is_multiple_of(WORD_BITS) {
            return Err(LayoutError::ShapeMismatch(format!(
                "{rows}x{cols} = {} cells is not a whole number of bytes",
                rows * cols
            )));
        }
        if self.col_interleave == 0 || !cols.is_multiple_of(self.col_interleave) {
            return Err(LayoutError::InvalidConfig(format!(
                "col_interleave {} must divide cols {cols}",
                self.col_interleave
            )));
        }
        Ok(())
    }

    /// Physical row-major cell index for every logical bit position.
    pub fn permutation(&self, rows: usize, cols: usize) -> Result<Vec<usize>, LayoutError> {
        self.validate(rows, cols)?;
        let k = self.col_interleave;
        let group = cols / k;
        let phys_col = |j: usize| (j % k) * group + j / k;
        let mut out = Vec::with_capacity(rows * cols);
        match self.scan {
            Scan::RowMajor => {
                for r in 0..rows {
                    let reverse = self.row_serpentine && r % 2 == 1;
                    for i in 0..cols {
                        let j = if reverse { cols - 1 - i } else { i };
                        out.push(r * cols + phys_col(j));
                    }
                }
            }
            Scan::ColumnMajor => {
                for j in 0..cols {
                    let reverse = self.row_serpentine && j % 2 == 1;
                    for i in 0..rows {
                        let r = if reverse { rows - 1 - i } else { i };
                        out.push(r * cols + phys_col(j));
                    }
                }
            }
        }
        Ok(out)
    }

    fn bit_shift(&self, i: usize) -> usize {
        match self.bit_order {
            BitOrder::MsbFirst => WORD_BITS - 1 - i,
            BitOrder::LsbFirst => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    pub base_address: u32,
    pub bytes: Vec<u8>,
}

impl MemoryImage {
    pub fn new(base_address: u32, bytes: Vec<u8>) -> Result<Self, LayoutError> {
        if bytes.is_empty() {
            return Err(LayoutError::Empty);
        }
        Ok(MemoryImage {
            base_address,
            bytes,
        })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn end_address(&self) -> u64 {
        self.base_address as u64 + self.bytes.len() as u64
    }
}

/// Assembles logical bytes from the physical grid.
pub fn bits_to_bytes(bits: &BitGrid, cfg: &LayoutConfig) -> Result<MemoryImage, LayoutError> {
    let perm = cfg.permutation(bits.rows(), bits.cols())?;
    let cells = bits.bits();
    let flip = if cfg.invert_data { 0xFF } else { 0x00 };
    let bytes = perm
        .chunks_exact(WORD_BITS)
        .map(|word| {
            word.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &cell)| acc | (cells[cell] << cfg.bit_shift(i)))
                ^ flip
        })
        .collect();
    MemoryImage::new(cfg.base_address, bytes)
}

/// Exact inverse of [`bits_to_bytes`] for a `rows`×`cols` array.
pub fn bytes_to_bits(
    mem: &MemoryImage,
    cfg: &LayoutConfig,
    rows: usize,
    cols: usize,
) -> Result<BitGrid, LayoutError> {
    if rows * cols != WORD_BITS * mem.bytes.len() {
        return Err(LayoutError::ShapeMismatch(format!(
            "{rows}x{cols} cells cannot hold {} bytes",
            mem.bytes.len()
        )));
    }
    let perm = cfg.permutation(rows, cols)?;
    let flip = if cfg.invert_data { 0xFF } else { 0x00 };
    let mut cells = vec![0u8; rows * cols];
    for (word, &byte) in perm.chunks_exact(WORD_BITS).zip(&mem.bytes) {
        let byte = byte ^ flip;
        for (i, &cell) in word.iter().enumerate() {
            cells[cell] = (byte >> cfg.bit_shift(i)) & 1;
        }
    }
    BitGrid::new(rows, cols, cells).map_err(|e| LayoutError::ShapeMismatch(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// Each byte holds the low 8 bits of its own address.
    AddressInData,
    /// Alternating 0xAA / 0x55.
    Checkerboard,
    /// 0xFF everywhere, as left by a chip erase.
    AllErased,
}

pub fn test_pattern(kind: PatternKind, length: usize, base: u32) -> Result<MemoryImage, LayoutError> {
    let bytes = (0..length)
        .map(|i| match kind {
            PatternKind::AddressInData => (base as usize).wrapping_add(i) as u8,
            PatternKind::Checkerboard => {
                if i % 2 == 0 {
                    0xAA
                } else {
                    0x55
                }
            }
            PatternKind::AllErased => 0xFF,
        })
        .collect();
    MemoryImage::new(base, bytes)
}
