#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use semflash_cli::config::DecodeMode;
use semflash_cli::synth::{random_truth, synth_dataset, Dataset, DatasetSpec};
use semflash_core::imagery::SynthParams;
use semflash_core::mosaic::TileLayout;

pub const ROWS: usize = 48;
pub const COLS: usize = 32;

/// 48×32 cells in 3×2 tiles; small enough for debug-profile tests.
pub fn small_dataset(dir: &Path, seed: u64, sigma: f64, acquisitions: usize, mode: DecodeMode) -> Dataset {
    let params = SynthParams {
        sigma,
        ..SynthParams::default()
    };
    let mut spec = DatasetSpec::new(ROWS, COLS, params, seed);
    spec.tiles = TileLayout::new(3, 2, 32);
    spec.jitter = 2;
    spec.acquisitions = acquisitions;
    spec.mode = mode;
    let truth = random_truth(ROWS * COLS / 8, 0, seed);
    synth_dataset(&truth, &spec, dir).expect("small dataset")
}

/// Every regular file under `root`, relative path → contents, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
