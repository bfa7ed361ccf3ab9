//! Stage functions and the runners that chain them.
//!
//! Every runner writes its artifacts beside the HEX output: per-acquisition
//! intermediates under `acqN/`, final products at the top level, and a
//! `run.json` manifest that stays `incomplete` until the run finishes.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use semflash_core::classify::{
    build_histogram, classify_cells, sample_cells, sample_point, select_threshold, vote, BitGrid,
    CellSamples, ClassifyError, Histogram, ThresholdResult,
};
use semflash_core::doc::{self, Placements, Schema};
use semflash_core::grid::{GridSpec, Point};
use semflash_core::hexio::{compare_with_threshold, emit_ihex, parse_ihex, ErrorReport, DEFAULT_BER_THRESHOLD};
use semflash_core::imagery::{load_image, normalize, Frame};
use semflash_core::layout::{bits_to_bytes, LayoutConfig};
use semflash_core::mosaic::{merge_frames, plan_registration, Mosaic, TileLayout};

use crate::config::{Acquisition, ClassifyOptions, DecodeMode, Normalization, PipelineConfig};
use crate::error::{PipelineError, StageExt};

pub const MOSAIC_FILE: &str = "mosaic.pgm";
pub const COVERAGE_FILE: &str = "coverage.pbm";
pub const OFFSETS_FILE: &str = "offsets.json";
pub const CELLS_FILE: &str = "cells.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const BITS_FILE: &str = "bits.pbm";
pub const DISAGREEMENT_FILE: &str = "disagreement.pbm";
pub const MANIFEST_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".semflash.lock";

pub fn acquisition_dir(artifacts: &Path, index: usize) -> PathBuf {
    artifacts.join(format!("acq{index}"))
}

// ---------------------------------------------------------------------------
// Stages

pub fn load_frames(cfg: &PipelineConfig, acq: &Acquisition) -> Result<Vec<Frame>, PipelineError> {
    acq.frames
        .iter()
        .map(|f| {
            let path = cfg.resolve(f);
            load_image(&path).map_err(|e| PipelineError::Stage {
                stage: "load",
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stitched {
    /// Merged and, if configured, contrast-normalized.
    pub mosaic: Mosaic,
    pub placements: Placements,
}

/// Registers and merges one acquisition, then normalizes the mosaic.
pub fn stitch(
    frames: &[Frame],
    tiles: &TileLayout,
    search_radius: u32,
    norm: &Normalization,
) -> Result<Stitched, PipelineError> {
    let offsets = plan_registration(frames, tiles, search_radius).stage("register")?;
    let mut mosaic = merge_frames(frames, tiles, &offsets).stage("merge")?;
    if norm.enabled {
        let n = normalize(&mosaic.frame, norm.low_pct, norm.high_pct).stage("normalize")?;
        if n.degenerate {
            warn!("mosaic has no contrast between the normalization percentiles");
        }
        mosaic.frame = n.frame;
    }
    let placements = Placements {
        offsets,
        origin: mosaic.origin,
    };
    Ok(Stitched { mosaic, placements })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub samples: CellSamples,
    pub histogram: Histogram,
    pub threshold: ThresholdResult,
    pub bits: BitGrid,
}

/// Histogram, threshold and classification of already-sampled cells.
pub fn decode_samples(samples: CellSamples, opts: &ClassifyOptions) -> Result<Decoded, PipelineError> {
    let histogram = build_histogram(&samples.values, opts.bins).stage("histogram")?;
    let threshold = select_threshold(&histogram).stage("threshold")?;
    let bits = classify_cells(&samples, threshold.threshold, opts.polarity);
    Ok(Decoded {
        samples,
        histogram,
        threshold,
        bits,
    })
}

pub fn decode_merged(image: &Frame, grid: &GridSpec, opts: &ClassifyOptions) -> Result<Decoded, PipelineError> {
    decode_samples(sample_cells(image, grid).stage("sample")?, opts)
}

/// Samples every cell from the one tile in which its window sits farthest
/// from the tile border (lowest index on ties). `grid` is in mosaic
/// coordinates.
pub fn sample_per_frame(
    frames: &[Frame],
    placements: &Placements,
    grid: &GridSpec,
) -> Result<CellSamples, ClassifyError> {
    grid.validate()?;
    if placements.offsets.len() != frames.len() {
        return Err(ClassifyError::ShapeMismatch(format!(
            "{} placements for {} frames",
            placements.offsets.len(),
            frames.len()
        )));
    }
    let r = grid.window_radius;
    let (ox, oy) = placements.origin;
    let mut values = Vec::with_capacity(grid.rows * grid.cols);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let p = grid.cell_center(row, col);
            let mut best: Option<(f64, usize, Point)> = None;
            for (k, (f, o)) in frames.iter().zip(&placements.offsets).enumerate() {
                let q = Point::new(p.x + (ox - o.dx) as f64, p.y + (oy - o.dy) as f64);
                let margin = (q.x - r)
                    .min(q.y - r)
                    .min(f.width() as f64 - 1.0 - q.x - r)
                    .min(f.height() as f64 - 1.0 - q.y - r);
                if margin >= 0.0 && best.is_none_or(|b| margin > b.0) {
                    best = Some((margin, k, q));
                }
            }
            let v = best
                .and_then(|(_, k, q)| sample_point(&frames[k], q, r))
                .ok_or(ClassifyError::WindowOutOfBounds { row, col })?;
            values.push(v);
        }
    }
    CellSamples::new(grid.rows, grid.cols, values)
}

pub fn decode_per_frame(
    frames: &[Frame],
    placements: &Placements,
    grid: &GridSpec,
    opts: &ClassifyOptions,
    norm: &Normalization,
) -> Result<Decoded, PipelineError> {
    let normalized;
    let frames = if norm.enabled {
        normalized = frames
            .iter()
            .map(|f| normalize(f, norm.low_pct, norm.high_pct).map(|n| n.frame))
            .collect::<Result<Vec<_>, _>>()
            .stage("normalize")?;
        &normalized[..]
    } else {
        frames
    };
    decode_samples(sample_per_frame(frames, placements, grid).stage("sample")?, opts)
}

pub fn coverage_raster(mosaic: &Mosaic) -> BitGrid {
    let bits = mosaic.coverage.iter().map(|&c| c as u8).collect();
    BitGrid::new(mosaic.frame.height(), mosaic.frame.width(), bits).expect("coverage matches the canvas")
}

pub fn mask_raster(rows: usize, cols: usize, mask: &[bool]) -> BitGrid {
    BitGrid::new(rows, cols, mask.iter().map(|&m| m as u8).collect()).expect("mask matches the grid")
}

// ---------------------------------------------------------------------------
// Artifact writers shared by the runners and the single-stage subcommands

/// Collects written paths for the manifest.
#[derive(Debug, Default)]
pub struct ArtifactLog {
    pub written: Vec<PathBuf>,
}

impl ArtifactLog {
    pub fn write(&mut self, path: &Path, data: impl AsRef<[u8]>, stage: &'static str) -> Result<(), PipelineError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_stage(stage, parent, e))?;
        }
        fs::write(path, data).map_err(|e| io_stage(stage, path, e))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }
}

fn io_stage(stage: &'static str, path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    }
}

pub fn write_stitched(log: &mut ArtifactLog, dir: &Path, st: &Stitched) -> Result<(), PipelineError> {
    log.write(&dir.join(MOSAIC_FILE), semflash_core::imagery::encode_pgm(&st.mosaic.frame), "merge")?;
    log.write(&dir.join(COVERAGE_FILE), coverage_raster(&st.mosaic).to_pbm(), "merge")?;
    log.write(&dir.join(OFFSETS_FILE), doc::to_string(&st.placements), "register")
}

pub fn write_decoded(log: &mut ArtifactLog, dir: &Path, d: &Decoded) -> Result<(), PipelineError> {
    log.write(&dir.join(CELLS_FILE), d.samples.to_csv(), "sample")?;
    log.write(&dir.join(HISTOGRAM_FILE), d.histogram.to_csv(), "histogram")?;
    log.write(&dir.join(THRESHOLD_FILE), doc::to_string(&d.threshold), "threshold")?;
    log.write(&dir.join(BITS_FILE), d.bits.to_pbm(), "classify")
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the artifact directory.
    pub artifacts: Vec<String>,
}

impl Schema for RunManifest {
    const SCHEMA: &'static str = "run.v1";
}

/// Exclusive claim on an artifact directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| io_stage("lock", dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(PipelineError::Busy(path)),
            Err(e) => Err(io_stage("lock", &path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub base_address: u32,
    pub bytes: usize,
    /// Present when a truth image was configured.
    pub report: Option<ErrorReport>,
    /// Cells where the acquisitions disagreed, when voting.
    pub disagreements: Option<usize>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match &self.report {
            Some(r) if !r.pass => crate::error::EXIT_ACCEPTANCE,
            _ => crate::error::EXIT_OK,
        }
    }
}

fn write_manifest(dir: &Path, log: &ArtifactLog, status: RunStatus, err: Option<&PipelineError>) {
    let manifest = RunManifest {
        status,
        failed_stage: err.and_then(|e| e.stage_name()).map(str::to_string),
        error: err.map(|e| e.to_string()),
        artifacts: log
            .written
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            .collect(),
    };
    if let Err(e) = fs::write(dir.join(MANIFEST_FILE), doc::to_string(&manifest)) {
        warn!("cannot write run manifest: {e}");
    }
}

/// Validates, locks the artifact directory and keeps the manifest current
/// around `body`.
fn with_run<T>(
    cfg: &PipelineConfig,
    body: impl FnOnce(&Path, &mut ArtifactLog) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    cfg.validate()?;
    let dir = cfg.artifact_dir();
    let _lock = RunLock::acquire(&dir)?;
    let mut log = ArtifactLog::default();
    write_manifest(&dir, &log, RunStatus::Incomplete, None);
    let result = body(&dir, &mut log);
    match &result {
        Ok(_) => write_manifest(&dir, &log, RunStatus::Complete, None),
        Err(e) => write_manifest(&dir, &log, RunStatus::Failed, Some(e)),
    }
    result
}

/// Loads, registers, merges and normalizes every acquisition, writing the
/// stitch artifacts.
pub fn run_stitch(cfg: &PipelineConfig) -> Result<Vec<Stitched>, PipelineError> {
    with_run(cfg, |dir, log| {
        cfg.acquisitions
            .iter()
            .enumerate()
            .map(|(a, acq)| {
                let frames = load_frames(cfg, acq)?;
                let st = stitch(&frames, &acq.tiles, acq.search_radius, &cfg.normalize)?;
                write_stitched(log, &acquisition_dir(dir, a), &st)?;
                Ok(st)
            })
            .collect()
    })
}

/// The whole pipeline in one go.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    with_run(cfg, |dir, log| {
        let layout = cfg.load_layout()?;
        let grid = cfg.load_grid()?;
        let mut bits = Vec::with_capacity(cfg.acquisitions.len());
        for (a, acq) in cfg.acquisitions.iter().enumerate() {
            info!("acquisition {a}: {} frames", acq.frames.len());
            let frames = load_frames(cfg, acq)?;
            let st = stitch(&frames, &acq.tiles, acq.search_radius, &cfg.normalize)?;
            let acq_dir = acquisition_dir(dir, a);
            write_stitched(log, &acq_dir, &st)?;
            let d = match cfg.classify.mode {
                DecodeMode::Merged => decode_merged(&st.mosaic.frame, &grid, &cfg.classify)?,
                DecodeMode::PerFrameVote => {
                    decode_per_frame(&frames, &st.placements, &grid, &cfg.classify, &cfg.normalize)?
                }
            };
            report_threshold(a, &d);
            write_decoded(log, &acq_dir, &d)?;
            bits.push(d.bits);
        }
        finish(cfg, dir, log, bits, &layout)
    })
}

/// Everything after stitching, reading the stitch artifacts of a previous
/// `run_stitch` (or `run_pipeline`) and the current grid.
pub fn run_decode(cfg: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    with_run(cfg, |dir, log| {
        let layout = cfg.load_layout()?;
        let grid = cfg.load_grid()?;
        let mut bits = Vec::with_capacity(cfg.acquisitions.len());
        for (a, acq) in cfg.acquisitions.iter().enumerate() {
            let acq_dir = acquisition_dir(dir, a);
            let d = match cfg.classify.mode {
                DecodeMode::Merged => {
                    let path = acq_dir.join(MOSAIC_FILE);
                    let image = load_image(&path).map_err(|e| PipelineError::Stage {
                        stage: "load",
                        message: format!("{}: {e}", path.display()),
                    })?;
                    decode_merged(&image, &grid, &cfg.classify)?
                }
                DecodeMode::PerFrameVote => {
                    let path = acq_dir.join(OFFSETS_FILE);
                    let placements: Placements = fs::read_to_string(&path)
                        .map_err(|e| io_stage("load", &path, e))
                        .and_then(|t| doc::from_str(&t).stage("load"))?;
                    let frames = load_frames(cfg, acq)?;
                    decode_per_frame(&frames, &placements, &grid, &cfg.classify, &cfg.normalize)?
                }
            };
            report_threshold(a, &d);
            write_decoded(log, &acq_dir, &d)?;
            bits.push(d.bits);
        }
        finish(cfg, dir, log, bits, &layout)
    })
}

fn report_threshold(a: usize, d: &Decoded) {
    info!(
        "acquisition {a}: threshold {:.3}, gap {} bins, separability {:.4}",
        d.threshold.threshold, d.threshold.gap, d.threshold.separability
    );
}

fn finish(
    cfg: &PipelineConfig,
    dir: &Path,
    log: &mut ArtifactLog,
    bits: Vec<BitGrid>,
    layout: &LayoutConfig,
) -> Result<RunOutcome, PipelineError> {
    let (bits, disagreements) = if bits.len() > 1 {
        let voted = vote(&bits).stage("vote")?;
        let mask = mask_raster(voted.bits.rows(), voted.bits.cols(), &voted.disagreement);
        log.write(&dir.join(DISAGREEMENT_FILE), mask.to_pbm(), "vote")?;
        let n = voted.disagreement_count();
        (voted.bits, Some(n))
    } else {
        (bits.into_iter().next().expect("validated non-empty"), None)
    };
    log.write(&dir.join(BITS_FILE), bits.to_pbm(), "classify")?;

    let mem = bits_to_bytes(&bits, layout).stage("layout")?;
    let hex = emit_ihex(&mem).stage("emit")?;
    log.write(&cfg.resolve(&cfg.output.hex), hex, "emit")?;

    let report = match &cfg.truth {
        Some(t) => {
            let path = cfg.resolve(t);
            let text = fs::read_to_string(&path).map_err(|e| io_stage("compare", &path, e))?;
            let truth = parse_ihex(&text).map_err(|e| PipelineError::Stage {
                stage: "compare",
                message: format!("{}: {e}", path.display()),
            })?;
            let threshold = cfg.ber_threshold.unwrap_or(DEFAULT_BER_THRESHOLD);
            let report = compare_with_threshold(&mem, &truth, threshold).stage("compare")?;
            log.write(&cfg.resolve(&cfg.output.report), doc::to_string(&report), "compare")?;
            Some(report)
        }
        None => None,
    };
    Ok(RunOutcome {
        base_address: mem.base_address,
        bytes: mem.len(),
        report,
        disagreements,
    })
}
