//! The `pipeline.v1` document that drives a run.
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a dataset directory can be moved as a whole.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semflash_core::classify::{Polarity, DEFAULT_BINS};
use semflash_core::doc::{self, Schema};
use semflash_core::grid::GridSpec;
use semflash_core::imagery::{DEFAULT_HIGH_PCT, DEFAULT_LOW_PCT};
use semflash_core::layout::LayoutConfig;
use semflash_core::mosaic::TileLayout;

use crate::error::PipelineError;

/// Grid file used when the grid is authored through the alignment API.
pub const INTERACTIVE_GRID_FILE: &str = "grid.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// One entry per independent read of the array; more than one requires
    /// an odd count and enables voting.
    pub acquisitions: Vec<Acquisition>,
    pub grid: GridSource,
    #[serde(default)]
    pub normalize: Normalization,
    #[serde(default)]
    pub classify: ClassifyOptions,
    pub layout: LayoutSource,
    pub output: OutputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_threshold: Option<f64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Schema for PipelineConfig {
    const SCHEMA: &'static str = "pipeline.v1";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub frames: Vec<PathBuf>,
    pub tiles: TileLayout,
    #[serde(default = "default_search_radius")]
    pub search_radius: u32,
}

fn default_search_radius() -> u32 {
    8
}

/// `"interactive"`, a path to a `grid.v1` file, or an inline grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSource {
    Path(PathBuf),
    Inline(GridSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutSource {
    Path(PathBuf),
    Inline(LayoutConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "low_pct")]
    pub low_pct: f64,
    #[serde(default = "high_pct")]
    pub high_pct: f64,
}

fn yes() -> bool {
    true
}

fn low_pct() -> f64 {
    DEFAULT_LOW_PCT
}

fn high_pct() -> f64 {
    DEFAULT_HIGH_PCT
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            enabled: true,
            low_pct: DEFAULT_LOW_PCT,
            high_pct: DEFAULT_HIGH_PCT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Sample the stitched mosaic.
    #[default]
    Merged,
    /// Sample each cell from the single tile where it sits farthest from
    /// the tile border, then vote across acquisitions.
    PerFrameVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub polarity: Polarity,
    #[serde(default)]
    pub mode: DecodeMode,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            bins: DEFAULT_BINS,
            polarity: Polarity::default(),
            mode: DecodeMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub hex: PathBuf,
    pub report: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = doc::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, doc::to_string(self))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Directory receiving every artifact of a run.
    pub fn artifact_dir(&self) -> PathBuf {
        let hex = self.resolve(&self.output.hex);
        hex.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Where the grid lives on disk, if it is file-backed.
    pub fn grid_path(&self) -> Option<PathBuf> {
        match &self.grid {
            GridSource::Path(p) if p.as_os_str() == "interactive" => {
                Some(self.base_dir.join(INTERACTIVE_GRID_FILE))
            }
            GridSource::Path(p) => Some(self.resolve(p)),
            GridSource::Inline(_) => None,
        }
    }

    pub fn load_grid(&self) -> Result<GridSpec, PipelineError> {
        let grid = match (&self.grid, self.grid_path()) {
            (GridSource::Inline(g), _) => g.clone(),
            (_, Some(path)) => {
                let text = fs::read_to_string(&path).map_err(|e| {
                    PipelineError::Config(format!("grid file {}: {e}", path.display()))
                })?;
                doc::from_str(&text)
                    .map_err(|e| PipelineError::Config(format!("grid file {}: {e}", path.display())))?
            }
            (GridSource::Path(_), None) => unreachable!("path sources always resolve"),
        };
        grid.validate()
            .map_err(|e| PipelineError::Config(format!("grid: {e}")))?;
        Ok(grid)
    }

    pub fn load_layout(&self) -> Result<LayoutConfig, PipelineError> {
        match &self.layout {
            LayoutSource::Inline(l) => Ok(l.clone()),
            LayoutSource::Path(p) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| {
                    PipelineError::Config(format!("layout file {}: {e}", path.display()))
                })?;
                doc::from_str(&text)
                    .map_err(|e| PipelineError::Config(format!("layout file {}: {e}", path.display())))
            }
        }
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.acquisitions.is_empty() {
            return bad("no acquisitions configured".into());
        }
        if self.acquisitions.len() > 1 && self.acquisitions.len().is_multiple_of(2) {
            return bad(format!(
                "voting needs an odd number of acquisitions, got {}",
                self.acquisitions.len()
            ));
        }
        if self.classify.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.classify.bins));
        }
        let n = &self.normalize;
        if n.enabled && !(0.0 <= n.low_pct && n.low_pct < n.high_pct && n.high_pct <= 100.0) {
            return bad(format!("invalid normalization percentiles {}..{}", n.low_pct, n.high_pct));
        }
        if let Some(t) = self.ber_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("ber_threshold {t} outside [0, 1]"));
            }
        }
        for (a, acq) in self.acquisitions.iter().enumerate() {
            acq.tiles
                .validate(acq.frames.len())
                .map_err(|e| PipelineError::Config(format!("acquisition {a}: {e}")))?;
            for f in &acq.frames {
                let p = self.resolve(f);
                if !p.is_file() {
                    return bad(format!("frame file missing: {}", p.display()));
                }
            }
        }
        if let Some(t) = &self.truth {
            let p = self.resolve(t);
            if !p.is_file() {
                return bad(format!("truth file missing: {}", p.display()));
            }
        }
        self.load_layout()?;
        Ok(())
    }
}
