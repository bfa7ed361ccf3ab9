//! Stage-level checks against independently computed expectations.

use num::{BigInt, BigRational, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use semflash_core::classify::{
    build_histogram, classify_cells, sample_cells, select_threshold, vote, BitGrid, CellSamples,
    Histogram, Polarity,
};
use semflash_core::grid::{alignment_score, marker_pixels, refine_grid, render_overlay, GridSpec, Point};
use semflash_core::imagery::{synth_frame, Depth, Frame, SynthParams};
use semflash_core::mosaic::{
    cut_tiles, merge_frames, plan_registration, register_pair, MosaicError, Offset, TileLayout,
};

fn random_bits(rows: usize, cols: usize, seed: u64) -> BitGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..rows * cols).map(|_| rng.random_range(0..2u8)).collect();
    BitGrid::new(rows, cols, bits).unwrap()
}

/// Minimizes within-class variance with exact rationals, scanning every
/// boundary from scratch; ties resolved to the floor-midpoint of the first
/// run of consecutive optimal boundaries.
fn brute_force_boundary(counts: &[u64]) -> usize {
    let within = |t: usize| -> BigRational {
        let mut total = BigRational::zero();
        for range in [0..t, t..counts.len()] {
            let n: u64 = counts[range.clone()].iter().sum();
            if n == 0 {
                continue;
            }
            let mean = BigRational::new(
                BigInt::from(range.clone().map(|i| i as u64 * counts[i]).sum::<u64>()),
                BigInt::from(n),
            );
            for i in range {
                let d = BigRational::from_integer(BigInt::from(i)) - &mean;
                total += &d * &d * BigRational::from_integer(BigInt::from(counts[i]));
            }
        }
        total
    };
    let scores: Vec<BigRational> = (1..counts.len()).map(within).collect();
    let best = scores.iter().min().unwrap();
    let first = scores.iter().position(|s| s == best).unwrap();
    let mut last = first;
    while last + 1 < scores.len() && &scores[last + 1] == best {
        last += 1;
    }
    (first + 1 + last).div_ceil(2)
}

fn random_histogram(rng: &mut ChaCha8Rng) -> Histogram {
    let bins = rng.random_range(2..=64usize);
    let mut counts = vec![0u64; bins];
    match rng.random_range(0..4) {
        0 => {
            // two deltas, possibly equal weight: long plateau
            let a = rng.random_range(0..bins - 1);
            let b = rng.random_range(a + 1..bins);
            let w = rng.random_range(1..50);
            counts[a] = w;
            counts[b] = if rng.random_bool(0.5) { w } else { rng.random_range(1..50) };
        }
        1 => {
            // symmetric histogram
            for i in 0..bins / 2 {
                let c = rng.random_range(0..6);
                counts[i] = c;
                counts[bins - 1 - i] = c;
            }
        }
        2 => {
            for c in counts.iter_mut() {
                if rng.random_bool(0.3) {
                    *c = rng.random_range(1..4);
                }
            }
        }
        _ => {
            for c in counts.iter_mut() {
                *c = rng.random_range(0..1000);
            }
        }
    }
    // at least two non-empty bins
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        counts[0] += 1;
        counts[bins - 1] += 1;
    }
    Histogram {
        bin_count: bins,
        lo: 0.0,
        hi: bins as f64,
        counts,
    }
}

#[test]
fn otsu_matches_exact_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x07_5u64);
    for _ in 0..1000 {
        let h = random_histogram(&mut rng);
        let got = select_threshold(&h).unwrap();
        assert_eq!(got.boundary, brute_force_boundary(&h.counts), "{:?}", h.counts);
    }
}

#[test]
fn histogram_of_two_gaussians_has_modes_near_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = Normal::new(80.0, 5.0).unwrap();
    let b = Normal::new(180.0, 5.0).unwrap();
    let values: Vec<f64> = (0..20_000)
        .map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
        .collect();
    let h = build_histogram(&values, 256).unwrap();
    assert_eq!(h.total(), 20_000);
    let split = ((130.0 - h.lo) / h.bin_width()) as usize;
    let argmax = |r: std::ops::Range<usize>| r.max_by_key(|&i| (h.counts[i], std::cmp::Reverse(i))).unwrap();
    let low = h.bin_center(argmax(0..split));
    let high = h.bin_center(argmax(split..256));
    assert!((low - 80.0).abs() <= 5.0, "low mode at {low}");
    assert!((high - 180.0).abs() <= 5.0, "high mode at {high}");
}

#[test]
fn synthetic_cell_means_are_bimodal_around_levels() {
    let params = SynthParams {
        sigma: (200.0 - 90.0) / 8.0,
        ..SynthParams::default()
    };
    let bits = random_bits(64, 64, 5);
    let frame = synth_frame(&bits, &params, 11).unwrap();
    let grid = params.oracle_grid(64, 64, params.spot_radius);
    let samples = sample_cells(&frame, &grid).unwrap();
    let spot = params.spot_offsets().len() as f64;
    let mean_of = |bit: u8| {
        let v: Vec<f64> = samples
            .values
            .iter()
            .zip(bits.bits())
            .filter(|(_, &b)| b == bit)
            .map(|(&v, _)| v)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let tol = 3.0 * params.sigma / spot.sqrt();
    assert!((mean_of(0) - params.mu_bright).abs() <= tol);
    assert!((mean_of(1) - params.mu_dark).abs() <= tol);
    // and Otsu separates them perfectly
    let h = build_histogram(&samples.values, 256).unwrap();
    let t = select_threshold(&h).unwrap();
    let decoded = classify_cells(&samples, t.threshold, Polarity::BrightIsZero);
    assert_eq!(decoded.hamming(&bits), Some(0));
}

#[test]
fn zero_noise_closure_recovers_bits_with_full_margins() {
    let params = SynthParams::default();
    let bits = random_bits(40, 24, 77);
    let frame = synth_frame(&bits, &params, 0).unwrap();
    let grid = params.oracle_grid(40, 24, params.default_window_radius());
    let samples = sample_cells(&frame, &grid).unwrap();
    let t = select_threshold(&build_histogram(&samples.values, 256).unwrap()).unwrap();
    assert_eq!(t.threshold, (params.mu_bright + params.mu_dark) / 2.0);
    let decoded = classify_cells(&samples, t.threshold, Polarity::BrightIsZero);
    assert_eq!(decoded.bits(), bits.bits());
    let floor = (params.mu_bright - params.mu_dark) / 2.0 - 1.0;
    assert!(decoded.margins().iter().all(|&m| m >= floor));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let params = SynthParams {
        sigma: 12.0,
        ..SynthParams::default()
    };
    let bits = random_bits(16, 16, 1);
    let a = synth_frame(&bits, &params, 99).unwrap();
    let b = synth_frame(&bits, &params, 99).unwrap();
    let c = synth_frame(&bits, &params, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn noisy_synth(rows: usize, cols: usize, sigma: f64, seed: u64) -> Frame {
    let params = SynthParams {
        sigma,
        ..SynthParams::default()
    };
    synth_frame(&random_bits(rows, cols, seed), &params, seed).unwrap()
}

#[test]
fn shifted_copy_is_recovered() {
    let source = noisy_synth(40, 40, 0.0, 3);
    let reference = source.crop(20, 20, 160, 160).unwrap();
    // moving window sits 3 px right and 2 px up of the reference window
    let moving = source.crop(23, 18, 160, 160).unwrap();
    let o = register_pair(&reference, &moving, 8).unwrap();
    assert_eq!((o.dx, o.dy), (3, -2));
    assert_eq!(o.score, 1.0);
}

#[test]
fn registration_is_equivariant() {
    let source = noisy_synth(48, 48, 6.0, 8);
    let reference = source.crop(40, 40, 160, 160).unwrap();
    let base = register_pair(&reference, &source.crop(41, 39, 160, 160).unwrap(), 8).unwrap();
    for (a, b) in [(2, 3), (-4, 1), (0, -5), (3, 3)] {
        let moved = source
            .crop((41 + a) as usize, (39 + b) as usize, 160, 160)
            .unwrap();
        let o = register_pair(&reference, &moved, 8).unwrap();
        assert_eq!((o.dx, o.dy), (base.dx + a, base.dy + b));
    }
}

#[test]
fn two_by_two_cut_and_reassemble_is_pixel_exact() {
    let source = noisy_synth(22, 22, 0.0, 4).crop(0, 0, 128, 128).unwrap();
    let tile = (72, 72); // 16 px overlap
    let origins = [(0, 0), (56, 0), (0, 56), (56, 56)];
    let tiles = cut_tiles(&source, &origins, tile).unwrap();
    let offsets: Vec<Offset> = origins
        .iter()
        .map(|&(x, y)| Offset { dx: x as i64, dy: y as i64, score: 1.0 })
        .collect();
    let layout = TileLayout::new(2, 2, 16);
    let m = merge_frames(&tiles, &layout, &offsets).unwrap();
    assert_eq!(m.frame, source);
    assert_eq!(m.covered_pixels(), 128 * 128);

    // a 16 px overlap only admits the nominal placement
    let planned = plan_registration(&tiles, &layout, 0).unwrap();
    let planned: Vec<(i64, i64)> = planned.iter().map(|o| (o.dx, o.dy)).collect();
    let truth: Vec<(i64, i64)> = origins.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    assert_eq!(planned, truth);
}

#[test]
fn twelve_by_eight_plan_recovers_jittered_positions() {
    let source = noisy_synth(192, 128, 0.0, 12);
    let layout = TileLayout::new(12, 8, 32);
    let size = layout.tile_size(source.width(), source.height());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let origins: Vec<(usize, usize)> = layout
        .tile_origins(source.width(), source.height())
        .into_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            if k == 0 {
                return (x, y);
            }
            let jitter = |v: usize, limit: usize, rng: &mut ChaCha8Rng| {
                (v as i64 + rng.random_range(-3..=3)).clamp(0, limit as i64) as usize
            };
            (
                jitter(x, source.width() - size.0, &mut rng),
                jitter(y, source.height() - size.1, &mut rng),
            )
        })
        .collect();
    let tiles = cut_tiles(&source, &origins, size).unwrap();
    let planned = plan_registration(&tiles, &layout, 8).unwrap();
    for (k, (o, &(x, y))) in planned.iter().zip(&origins).enumerate() {
        assert_eq!((o.dx, o.dy), (x as i64, y as i64), "tile {k}");
    }
    let m = merge_frames(&tiles, &layout, &planned).unwrap();
    let (w, h) = (m.frame.width(), m.frame.height());
    for y in 0..h {
        for x in 0..w {
            if m.coverage[y * w + x] {
                assert_eq!(m.frame.get(x, y), source.get(x, y));
            }
        }
    }
}

#[test]
fn flat_tile_is_named() {
    let source = noisy_synth(40, 40, 0.0, 2);
    let layout = TileLayout::new(2, 2, 32);
    let size = layout.tile_size(source.width(), source.height());
    let mut tiles = cut_tiles(&source, &layout.tile_origins(source.width(), source.height()), size).unwrap();
    tiles[2] = Frame::filled(size.0, size.1, Depth::Eight, 30);
    assert_eq!(
        plan_registration(&tiles, &layout, 8),
        Err(MosaicError::FlatTile { index: 2 })
    );
}

#[test]
fn overlay_of_zero_frame_marks_exactly_the_markers() {
    let frame = Frame::filled(64, 48, Depth::Eight, 0);
    let grid = GridSpec {
        corners: [
            Point::new(4.0, 5.0),
            Point::new(58.3, 3.0),
            Point::new(6.0, 41.0),
            Point::new(60.0, 43.7),
        ],
        rows: 5,
        cols: 7,
        window_radius: 2.0,
    };
    let out = render_overlay(&frame, &grid).unwrap();
    // footprint enumerated independently: arm of round(r) px around the
    // rounded center, horizontally and vertically
    let mut expected = std::collections::BTreeSet::new();
    for p in grid.cell_centers() {
        let (cx, cy) = ((p.x + 0.5).floor() as i64, (p.y + 0.5).floor() as i64);
        for k in -2..=2 {
            expected.insert((cx + k, cy));
            expected.insert((cx, cy + k));
        }
    }
    let nonzero = out.pixels().iter().filter(|&&p| p != 0).count();
    assert_eq!(nonzero, expected.len());
    for (x, y) in expected {
        assert_eq!(out.get(x as usize, y as usize), 255);
    }
    assert_eq!(marker_pixels(Point::new(10.0, 10.0), 2.0, 64, 48).len(), 9);
}

fn oracle_scene(rows: usize, cols: usize) -> (Frame, GridSpec) {
    let params = SynthParams {
        cell_pitch: 8,
        spot_radius: 3.0,
        ..SynthParams::default()
    };
    let frame = synth_frame(&random_bits(rows, cols, 21), &params, 0).unwrap();
    (frame, params.oracle_grid(rows, cols, 1.5))
}

#[test]
fn refine_keeps_optimal_grid() {
    let (frame, grid) = oracle_scene(12, 16);
    assert_eq!(refine_grid(&frame, &grid, 2).unwrap(), grid);
}

#[test]
fn refine_recovers_perturbed_corners() {
    let (frame, truth) = oracle_scene(12, 16);
    let perturbations = [[(2, -1), (-2, 2), (1, 2), (-2, -2)], [(0, 2), (2, 0), (-1, -2), (2, 1)]];
    for moves in perturbations {
        let mut g = truth.clone();
        for (p, (dx, dy)) in g.corners.iter_mut().zip(moves) {
            p.x += dx as f64;
            p.y += dy as f64;
        }
        let refined = refine_grid(&frame, &g, 2).unwrap();
        for (got, want) in refined.corners.iter().zip(&truth.corners) {
            assert!(
                (got.x - want.x).abs() <= 1.0 && (got.y - want.y).abs() <= 1.0,
                "{got:?} vs {want:?}"
            );
        }
    }
}

#[test]
fn refine_undoes_a_uniform_shift() {
    // without noise a uniform shift keeps every class two-valued and scores 1
    let params = SynthParams {
        cell_pitch: 8,
        spot_radius: 3.0,
        sigma: 12.0,
        ..SynthParams::default()
    };
    let frame = synth_frame(&random_bits(12, 16, 21), &params, 5).unwrap();
    let truth = params.oracle_grid(12, 16, 1.5);
    for (dx, dy) in [(-2.0, 2.0), (2.0, 0.0), (2.0, -2.0)] {
        let shifted = truth.translated(dx, dy);
        let refined = refine_grid(&frame, &shifted, 2).unwrap();
        assert!(alignment_score(&frame, &refined) > alignment_score(&frame, &shifted));
        for (got, want) in refined.corners.iter().zip(&truth.corners) {
            assert!(
                (got.x - want.x).abs() <= 1.0 && (got.y - want.y).abs() <= 1.0,
                "{got:?} vs {want:?}"
            );
        }
    }
}

#[test]
fn mirrored_samples_with_flipped_polarity_decode_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 123.25;
    let values: Vec<f64> = (0..500)
        .map(|_| loop {
            let v: f64 = rng.random_range(0.0..255.0);
            if v != t {
                break v;
            }
        })
        .collect();
    let mirrored: Vec<f64> = values.iter().map(|v| 2.0 * t - v).collect();
    let a = classify_cells(&CellSamples::new(20, 25, values).unwrap(), t, Polarity::BrightIsZero);
    let b = classify_cells(&CellSamples::new(20, 25, mirrored).unwrap(), t, Polarity::BrightIsOne);
    assert_eq!(a.bits(), b.bits());
}

#[test]
fn voting_three_reads_matches_binomial_rate() {
    let (rows, cols) = (768, 512);
    let p = 0.01;
    let truth = random_bits(rows, cols, 1);
    let reads: Vec<BitGrid> = (0..3)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
            let bits = truth
                .bits()
                .iter()
                .map(|&b| if rng.random_bool(p) { b ^ 1 } else { b })
                .collect();
            BitGrid::new(rows, cols, bits).unwrap()
        })
        .collect();
    let voted = vote(&reads).unwrap();
    let ber = voted.bits.hamming(&truth).unwrap() as f64 / (rows * cols) as f64;
    let expected = 3.0 * p * p - 2.0 * p * p * p;
    assert!((ber - expected).abs() <= 0.3 * expected, "voted ber {ber}");
    assert_eq!(vote(&reads[..1]).unwrap().bits.bits(), reads[0].bits());
}
