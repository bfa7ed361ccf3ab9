//! Synthetic datasets with known ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use semflash_core::doc;
use semflash_core::hexio::emit_ihex;
use semflash_core::imagery::{encode_pgm, synth_frame, ImageError, SynthParams};
use semflash_core::layout::{bytes_to_bits, LayoutConfig, LayoutError, MemoryImage};
use semflash_core::mosaic::{cut_tiles, MosaicError, TileLayout, MIN_OVERLAP};

use crate::config::{
    Acquisition, ClassifyOptions, DecodeMode, GridSource, LayoutSource, Normalization, OutputPaths,
    PipelineConfig,
};

pub const CONFIG_FILE: &str = "pipeline.json";
pub const TRUTH_FILE: &str = "truth.hex";
pub const GRID_FILE: &str = "grid.json";
pub const LAYOUT_FILE: &str = "layout.json";
pub const PARAMS_FILE: &str = "synth.json";

// Keeps the jitter stream independent of the noise stream for the same seed.
const JITTER_STREAM: u64 = 0x6A09_E667_F3BC_C909;
const TRUTH_STREAM: u64 = 0xBB67_AE85_84CA_A73B;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Mosaic(#[from] MosaicError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub rows: usize,
    pub cols: usize,
    pub tiles: TileLayout,
    /// Frame count the caller expects; must match the tile layout if given.
    pub declared_frames: Option<usize>,
    pub params: SynthParams,
    pub seed: u64,
    /// Maximum displacement (px) of interior tiles from their even spacing.
    pub jitter: u32,
    pub search_radius: u32,
    /// Independent noisy reads of the same array.
    pub acquisitions: usize,
    pub layout: LayoutConfig,
    pub mode: DecodeMode,
}

impl DatasetSpec {
    /// 12×8 tiles with 32 px overlap over the given array.
    pub fn new(rows: usize, cols: usize, params: SynthParams, seed: u64) -> Self {
        DatasetSpec {
            rows,
            cols,
            tiles: TileLayout::new(12, 8, 32),
            declared_frames: None,
            params,
            seed,
            jitter: 3,
            search_radius: 8,
            acquisitions: 1,
            layout: LayoutConfig::default(),
            mode: DecodeMode::Merged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub frames: Vec<Vec<PathBuf>>,
    pub truth: PathBuf,
    pub grid: PathBuf,
}

pub fn random_truth(length: usize, base: u32, seed: u64) -> MemoryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRUTH_STREAM);
    let mut bytes = vec![0u8; length];
    rng.fill_bytes(&mut bytes);
    MemoryImage::new(base, bytes).expect("length checked by caller")
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), SynthError> {
    fs::write(path, data).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Top-left tile positions: evenly spread, interior tiles displaced by up to
/// `jitter` px. Border tiles stay flush with the image edges so the mosaic
/// covers the whole array.
fn jittered_origins(spec: &DatasetSpec, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let t = &spec.tiles;
    let (tw, th) = t.tile_size(width, height);
    let j = spec.jitter as i64;
    t.tile_origins(width, height)
        .into_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let (r, c) = t.position_of(k);
            let mut shift = |interior: bool, v: usize, limit: usize| {
                if interior && j > 0 {
                    (v as i64 + rng.random_range(-j..=j)).clamp(0, limit as i64) as usize
                } else {
                    v
                }
            };
            let x = shift(c > 0 && c + 1 < t.grid_cols, x, width - tw);
            let y = shift(r > 0 && r + 1 < t.grid_rows, y, height - th);
            (x, y)
        })
        .collect()
}

/// Rejects tile placements that registration could not recover.
fn check_reachable(spec: &DatasetSpec, origins: &[(usize, usize)], tile: (usize, usize)) -> Result<(), SynthError> {
    let t = &spec.tiles;
    let ov = t.nominal_overlap as i64;
    let rad = spec.search_radius as i64;
    for k in 0..origins.len() {
        let (r, c) = t.position_of(k);
        let (j, nominal) = if c > 0 {
            (t.index_of(r, c - 1), (tile.0 as i64 - ov, 0))
        } else if r > 0 {
            (t.index_of(r - 1, c), (0, tile.1 as i64 - ov))
        } else {
            continue;
        };
        let dx = origins[k].0 as i64 - origins[j].0 as i64;
        let dy = origins[k].1 as i64 - origins[j].1 as i64;
        if (dx - nominal.0).abs() > rad || (dy - nominal.1).abs() > rad {
            return Err(SynthError::Geometry(format!(
                "tile {k} sits ({}, {}) px from its nominal placement, beyond search radius {rad}",
                dx - nominal.0,
                dy - nominal.1
            )));
        }
        let (ox, oy) = (tile.0 as i64 - dx.abs(), tile.1 as i64 - dy.abs());
        if ox - rad < MIN_OVERLAP as i64 || oy - rad < MIN_OVERLAP as i64 {
            return Err(SynthError::Geometry(format!(
                "tile {k} overlaps its neighbour by {ox}x{oy} px, too little for search radius {rad}"
            )));
        }
    }
    Ok(())
}

/// Renders the array once per acquisition, cuts it into overlapping tiles
/// and writes frames, truth HEX, oracle grid, layout and a ready-to-run
/// pipeline config into `out`. Same inputs, same bytes.
pub fn synth_dataset(truth: &MemoryImage, spec: &DatasetSpec, out: &Path) -> Result<Dataset, SynthError> {
    let t = &spec.tiles;
    if let Some(n) = spec.declared_frames {
        if n != t.frame_count() {
            return Err(SynthError::Geometry(format!(
                "{}x{} tiles give {} frames, {n} declared",
                t.grid_rows,
                t.grid_cols,
                t.frame_count()
            )));
        }
    }
    if spec.acquisitions == 0 || spec.acquisitions.is_multiple_of(2) {
        return Err(SynthError::Geometry(format!(
            "acquisition count must be odd, got {}",
            spec.acquisitions
        )));
    }
    spec.params.validate()?;
    let expected = spec.rows * spec.cols / spec.layout.word_bits.max(1);
    if !(spec.rows * spec.cols).is_multiple_of(spec.layout.word_bits.max(1)) || truth.len() != expected {
        return Err(SynthError::Geometry(format!(
            "{} truth bytes do not fill a {}x{} array ({expected} bytes)",
            truth.len(),
            spec.rows,
            spec.cols
        )));
    }
    let layout = LayoutConfig {
        base_address: truth.base_address,
        ..spec.layout.clone()
    };
    let bits = bytes_to_bits(truth, &layout, spec.rows, spec.cols)?;
    let pitch = spec.params.cell_pitch as usize;
    let (width, height) = (spec.cols * pitch, spec.rows * pitch);
    t.validate(t.frame_count())?;
    let tile = t.tile_size(width, height);

    fs::create_dir_all(out).map_err(|source| SynthError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut frames = Vec::with_capacity(spec.acquisitions);
    let mut acquisitions = Vec::with_capacity(spec.acquisitions);
    for a in 0..spec.acquisitions {
        let stream = spec.seed.wrapping_add(a as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream ^ JITTER_STREAM);
        let origins = jittered_origins(spec, width, height, &mut rng);
        check_reachable(spec, &origins, tile)?;
        let image = synth_frame(&bits, &spec.params, stream)?;
        let tiles = cut_tiles(&image, &origins, tile)?;

        let rel_dir = if spec.acquisitions == 1 {
            PathBuf::from("frames")
        } else {
            PathBuf::from("frames").join(format!("acq{a}"))
        };
        let dir = out.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut rel = Vec::with_capacity(tiles.len());
        let mut abs = Vec::with_capacity(tiles.len());
        for (k, f) in tiles.iter().enumerate() {
            let name = rel_dir.join(format!("tile_{k:03}.pgm"));
            write(&out.join(&name), encode_pgm(f))?;
            abs.push(out.join(&name));
            rel.push(name);
        }
        frames.push(abs);
        acquisitions.push(Acquisition {
            frames: rel,
            tiles: t.clone(),
            search_radius: spec.search_radius,
        });
    }

    let grid = spec
        .params
        .oracle_grid(spec.rows, spec.cols, spec.params.default_window_radius());
    write(&out.join(TRUTH_FILE), emit_ihex(truth).expect("non-empty truth fits in 32 bits"))?;
    write(&out.join(GRID_FILE), doc::to_string(&grid))?;
    write(&out.join(LAYOUT_FILE), doc::to_string(&layout))?;
    write(&out.join(PARAMS_FILE), doc::to_string(&spec.params))?;

    let config = PipelineConfig {
        acquisitions,
        grid: GridSource::Path(GRID_FILE.into()),
        normalize: Normalization::default(),
        classify: ClassifyOptions {
            mode: spec.mode,
            ..ClassifyOptions::default()
        },
        layout: LayoutSource::Path(LAYOUT_FILE.into()),
        output: OutputPaths {
            hex: PathBuf::from("out").join("firmware.hex"),
            report: PathBuf::from("out").join("report.json"),
        },
        truth: Some(TRUTH_FILE.into()),
        ber_threshold: None,
        base_dir: out.to_path_buf(),
    };
    write(&out.join(CONFIG_FILE), doc::to_string(&config))?;

    Ok(Dataset {
        dir: out.to_path_buf(),
        config: out.join(CONFIG_FILE),
        frames,
        truth: out.join(TRUTH_FILE),
        grid: out.join(GRID_FILE),
    })
}
