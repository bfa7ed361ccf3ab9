use proptest::prelude::*;

use semflash_core::classify::{classify_cells, BitGrid, CellSamples, Polarity};
use semflash_core::grid::{GridSpec, Point};
use semflash_core::hexio::{compare, emit_ihex, parse_ihex};
use semflash_core::imagery::{decode_image, encode_pgm, normalize, Depth, Frame};
use semflash_core::layout::{bits_to_bytes, bytes_to_bits, BitOrder, LayoutConfig, MemoryImage, Scan};

fn layout_strategy() -> impl Strategy<Value = LayoutConfig> {
    (
        prop_oneof![Just(Scan::RowMajor), Just(Scan::ColumnMajor)],
        any::<bool>(),
        prop_oneof![Just(1usize), Just(2), Just(4), Just(8)],
        prop_oneof![Just(BitOrder::MsbFirst), Just(BitOrder::LsbFirst)],
        any::<bool>(),
        0u32..0x8000,
    )
        .prop_map(|(scan, row_serpentine, col_interleave, bit_order, invert_data, base_address)| {
            LayoutConfig {
                scan,
                row_serpentine,
                col_interleave,
                bit_order,
                invert_data,
                base_address,
                ..LayoutConfig::default()
            }
        })
}

/// Shapes with cols divisible by 8, so every interleave factor applies.
fn shaped_bits() -> impl Strategy<Value = BitGrid> {
    (1usize..12, 1usize..5).prop_flat_map(|(rows, col_words)| {
        let cols = col_words * 8;
        prop::collection::vec(0u8..2, rows * cols)
            .prop_map(move |bits| BitGrid::new(rows, cols, bits).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn layout_round_trips(cfg in layout_strategy(), bits in shaped_bits()) {
        let mem = bits_to_bytes(&bits, &cfg).unwrap();
        let back = bytes_to_bits(&mem, &cfg, bits.rows(), bits.cols()).unwrap();
        prop_assert_eq!(back.bits(), bits.bits());
        prop_assert_eq!(bits_to_bytes(&back, &cfg).unwrap(), mem);
    }

    #[test]
    fn layout_is_injective(cfg in layout_strategy(), bits in shaped_bits(), flip in any::<prop::sample::Index>()) {
        let mut other = bits.bits().to_vec();
        let i = flip.index(other.len());
        other[i] ^= 1;
        let other = BitGrid::new(bits.rows(), bits.cols(), other).unwrap();
        prop_assert_ne!(bits_to_bytes(&bits, &cfg).unwrap(), bits_to_bytes(&other, &cfg).unwrap());
    }

    #[test]
    fn double_inversion_is_identity(bits in shaped_bits()) {
        let inv = LayoutConfig { invert_data: true, ..LayoutConfig::default() };
        let plain = bits_to_bytes(&bits, &LayoutConfig::default()).unwrap();
        let once = bits_to_bytes(&bits, &inv).unwrap();
        let twice: Vec<u8> = once.bytes.iter().map(|b| b ^ 0xFF).collect();
        prop_assert_eq!(twice, plain.bytes);
    }

    #[test]
    fn affine_maps_commute_with_centers(
        a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0,
        tx in -500.0f64..500.0, ty in -500.0f64..500.0,
        rows in 2usize..20, cols in 2usize..20,
    ) {
        let grid = GridSpec {
            corners: [Point::new(10.0, 12.0), Point::new(210.0, 7.0), Point::new(14.0, 150.0), Point::new(205.0, 160.0)],
            rows, cols, window_radius: 0.0,
        };
        let map = |p: Point| Point::new(a * p.x + b * p.y + tx, c * p.x + d * p.y + ty);
        let mut mapped = grid.clone();
        mapped.corners = grid.corners.map(map);
        for (orig, got) in grid.cell_centers().into_iter().zip(mapped.cell_centers()) {
            let want = map(orig);
            prop_assert!((want.x - got.x).abs() <= 1e-9 && (want.y - got.y).abs() <= 1e-9);
        }
    }

    #[test]
    fn classification_ignores_offset_and_positive_scale(
        values in prop::collection::vec(0.0f64..1000.0, 1..200),
        t in 0.0f64..1000.0,
        shift in -500.0f64..500.0,
        scale in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.25)],
    ) {
        let n = values.len();
        let base = classify_cells(&CellSamples::new(1, n, values.clone()).unwrap(), t, Polarity::BrightIsZero);
        // dyadic scales keep v > t exact; offsets are checked away from the boundary
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let s = classify_cells(&CellSamples::new(1, n, scaled).unwrap(), t * scale, Polarity::BrightIsZero);
        prop_assert_eq!(s.bits(), base.bits());
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let s = classify_cells(&CellSamples::new(1, n, shifted).unwrap(), t + shift, Polarity::BrightIsZero);
        for i in 0..n {
            if (values[i] - t).abs() > 1e-9 {
                prop_assert_eq!(s.bits()[i], base.bits()[i]);
            }
        }
    }

    #[test]
    fn pgm_round_trips(w in 1usize..20, h in 1usize..20, sixteen in any::<bool>(), seed in any::<u64>()) {
        let depth = if sixteen { Depth::Sixteen } else { Depth::Eight };
        let max = depth.max_value() as u64 + 1;
        let px: Vec<u16> = (0..w * h).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % max) as u16).collect();
        let f = Frame::new(w, h, depth, px).unwrap();
        prop_assert_eq!(decode_image(&encode_pgm(&f)).unwrap(), f);
    }

    #[test]
    fn normalize_is_monotone(px in prop::collection::vec(0u16..256, 2..300)) {
        let n = px.len();
        let f = Frame::new(n, 1, Depth::Eight, px.clone()).unwrap();
        let out = normalize(&f, 1.0, 99.0).unwrap().frame;
        for i in 0..n {
            for j in 0..n {
                if px[i] <= px[j] {
                    prop_assert!(out.pixels()[i] <= out.pixels()[j]);
                }
            }
        }
    }

    #[test]
    fn normalize_full_range_is_idempotent(mut px in prop::collection::vec(0u16..256, 0..100)) {
        px.push(0);
        px.push(255);
        let f = Frame::new(px.len(), 1, Depth::Eight, px).unwrap();
        prop_assert_eq!(normalize(&f, 0.0, 100.0).unwrap().frame, f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ihex_round_trips(base in 0u32..0xF000, bytes in prop::collection::vec(any::<u8>(), 1..600)) {
        let m = MemoryImage::new(base, bytes).unwrap();
        let text = emit_ihex(&m).unwrap();
        prop_assert_eq!(parse_ihex(&text).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn any_single_character_mutation_is_detected(
        bytes in prop::collection::vec(any::<u8>(), 1..64),
        pos in any::<prop::sample::Index>(),
        replacement in prop::sample::select(b"0123456789ABCDEFabcdefGZ: x".to_vec()),
    ) {
        let text = emit_ihex(&MemoryImage::new(0, bytes).unwrap()).unwrap();
        let data_len = text.len() - ":00000001FF\n".len();
        let record_chars: Vec<usize> = text[..data_len]
            .char_indices()
            .filter(|&(_, c)| c != '\n')
            .map(|(i, _)| i)
            .collect();
        let at = record_chars[pos.index(record_chars.len())];
        let original = text.as_bytes()[at];
        prop_assume!(!original.eq_ignore_ascii_case(&replacement));
        let mut mutated = text.into_bytes();
        mutated[at] = replacement;
        prop_assert!(parse_ihex(std::str::from_utf8(&mutated).unwrap()).is_err());
    }

    #[test]
    fn ber_is_symmetric(a in prop::collection::vec(any::<u8>(), 1..200), seed in any::<u64>()) {
        let b: Vec<u8> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 57)) as u8 & 0x11)).collect();
        let (ma, mb) = (MemoryImage::new(0, a).unwrap(), MemoryImage::new(0, b).unwrap());
        prop_assert_eq!(compare(&ma, &mb).unwrap().ber, compare(&mb, &ma).unwrap().ber);
        prop_assert_eq!(compare(&ma, &ma).unwrap().ber, 0.0);
    }
}
