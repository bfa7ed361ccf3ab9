//! Intel HEX (I8HEX subset) emission and parsing, and bitwise comparison of
//! an extracted image against ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::MemoryImage;

pub const RECORD_LEN: usize = 16;
pub const EOF_RECORD: &str = ":00000001FF";
/// Pass/fail bit error rate: 0.005 %.
pub const DEFAULT_BER_THRESHOLD: f64 = 5e-5;
pub const MAX_MISMATCH_ENTRIES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HexError {
    #[error("address range 0x{base:X}..0x{end:X} exceeds 64 KiB (extended records unsupported)")]
    AddressOverflow { base: u32, end: u64 },
    #[error("record {record}: missing ':' start code")]
    MissingStartCode { record: usize },
    #[error("record {record}: invalid hex digits")]
    BadHex { record: usize },
    #[error("record {record}: length field says {declared} data bytes, record holds {actual}")]
    BadLength {
        record: usize,
        declared: usize,
        actual: usize,
    },
    #[error("record {record}: checksum 0x{found:02X}, expected 0x{expected:02X}")]
    BadChecksum {
        record: usize,
        found: u8,
        expected: u8,
    },
    #[error("record {record}: unsupported record type 0x{kind:02X}")]
    UnsupportedRecord { record: usize, kind: u8 },
    #[error("record {record}: address 0x{address:04X} already written")]
    Overlap { record: usize, address: u32 },
    #[error("record {record}: data after end-of-file record")]
    DataAfterEof { record: usize },
    #[error("missing end-of-file record")]
    MissingEof,
    #[error("no data records")]
    NoData,
    #[error("images differ in {0}")]
    Mismatch(String),
}

fn push_record(out: &mut String, address: u16, kind: u8, data: &[u8]) {
    let mut sum = data.len() as u8;
    sum = sum.wrapping_add((address >> 8) as u8);
    sum = sum.wrapping_add(address as u8);
    sum = sum.wrapping_add(kind);
    let _ = write!(out, ":{:02X}{:04X}{:02X}", data.len(), address, kind);
    for &b in data {
        sum = sum.wrapping_add(b);
        let _ = write!(out, "{b:02X}");
    }
    let _ = writeln!(out, "{:02X}", sum.wrapping_neg());
}

/// Canonical text: 16-byte type-00 records from `base` upward, then EOF.
pub fn emit_records(base: u32, bytes: &[u8]) -> Result<String, HexError> {
    let end = base as u64 + bytes.len() as u64;
    if end > 0x1_0000 {
        return Err(HexError::AddressOverflow { base, end });
    }
    let mut out = String::with_capacity(bytes.len().div_ceil(RECORD_LEN) * 44 + 12);
    for (i, chunk) in bytes.chunks(RECORD_LEN).enumerate() {
        push_record(&mut out, (base as usize + i * RECORD_LEN) as u16, 0x00, chunk);
    }
    push_record(&mut out, 0, 0x01, &[]);
    Ok(out)
}

pub fn emit_ihex(mem: &MemoryImage) -> Result<String, HexError> {
    emit_records(mem.base_address, &mem.bytes)
}

fn decode_hex(s: &str, record: usize) -> Result<Vec<u8>, HexError> {
    if !s.len().is_multiple_of(2) || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HexError::BadHex { record });
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| HexError::BadHex { record }))
        .collect()
}

/// Parses I8HEX text. The base address is the lowest data address; gaps
/// between records read as erased (0xFF). Record numbers are 1-based lines.
pub fn parse_ihex(text: &str) -> Result<MemoryImage, HexError> {
    let mut data: BTreeMap<u32, u8> = BTreeMap::new();
    let mut seen_eof = false;
    for (i, line) in text.lines().enumerate() {
        let record = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if seen_eof {
            return Err(HexError::DataAfterEof { record });
        }
        let body = line
            .strip_prefix(':')
            .ok_or(HexError::MissingStartCode { record })?;
        let raw = decode_hex(body, record)?;
        if raw.len() < 5 {
            return Err(HexError::BadLength {
                record,
                declared: raw.first().copied().unwrap_or(0) as usize,
                actual: raw.len().saturating_sub(5),
            });
        }
        let declared = raw[0] as usize;
        if raw.len() != declared + 5 {
            return Err(HexError::BadLength {
                record,
                declared,
                actual: raw.len() - 5,
            });
        }
        let sum = raw[..raw.len() - 1]
            .iter()
            .fold(0u8, |acc, &b| acc.wrapping_add(b));
        let expected = sum.wrapping_neg();
        let found = raw[raw.len() - 1];
        if found != expected {
            return Err(HexError::BadChecksum {
                record,
                found,
                expected,
            });
        }
        let address = u16::from_be_bytes([raw[1], raw[2]]) as u32;
        match raw[3] {
            0x00 => {
                for (k, &b) in raw[4..4 + declared].iter().enumerate() {
                    let at = address + k as u32;
                    if at > 0xFFFF {
                        return Err(HexError::AddressOverflow {
                            base: address,
                            end: at as u64 + 1,
                        });
                    }
                    if data.insert(at, b).is_some() {
                        return Err(HexError::Overlap { record, address: at });
                    }
                }
            }
            0x01 => seen_eof = true,
            kind => return Err(HexError::UnsupportedRecord { record, kind }),
        }
    }
    if !seen_eof {
        return Err(HexError::MissingEof);
    }
    let (&lo, _) = data.first_key_value().ok_or(HexError::NoData)?;
    let (&hi, _) = data.last_key_value().expect("non-empty");
    let mut bytes = vec![0xFF; (hi - lo + 1) as usize];
    for (addr, b) in data {
        bytes[(addr - lo) as usize] = b;
    }
    Ok(MemoryImage {
        base_address: lo,
        bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitAddress {
    pub address: u32,
    /// 0 = least significant bit.
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total_bits: u64,
    pub mismatched_bits: u64,
    pub ber: f64,
    pub threshold: f64,
    pub pass: bool,
    pub mismatch_addresses: Vec<BitAddress>,
    /// More mismatches exist than are listed.
    pub truncated: bool,
}

pub fn compare(extracted: &MemoryImage, truth: &MemoryImage) -> Result<ErrorReport, HexError> {
    compare_with_threshold(extracted, truth, DEFAULT_BER_THRESHOLD)
}

/// Bitwise comparison; passes when `ber <= threshold`.
pub fn compare_with_threshold(
    extracted: &MemoryImage,
    truth: &MemoryImage,
    threshold: f64,
) -> Result<ErrorReport, HexError> {
    if extracted.base_address != truth.base_address {
        return Err(HexError::Mismatch(format!(
            "base address (0x{:X} vs 0x{:X})",
            extracted.base_address, truth.base_address
        )));
    }
    if extracted.bytes.len() != truth.bytes.len() {
        return Err(HexError::Mismatch(format!(
            "length ({} vs {} bytes)",
            extracted.bytes.len(),
            truth.bytes.len()
        )));
    }
    let mut mismatched = 0u64;
    let mut addresses = Vec::new();
    let mut truncated = false;
    for (i, (&a, &b)) in extracted.bytes.iter().zip(&truth.bytes).enumerate() {
        let diff = a ^ b;
        if diff == 0 {
            continue;
        }
        mismatched += diff.count_ones() as u64;
        for bit in 0..8u8 {
            if diff & (1 << bit) != 0 {
                if addresses.len() < MAX_MISMATCH_ENTRIES {
                    addresses.push(BitAddress {
                        address: extracted.base_address + i as u32,
                        bit,
                    });
                } else {
                    truncated = true;
                }
            }
        }
    }
    let total_bits = truth.bytes.len() as u64 * 8;
    let ber = if total_bits == 0 {
        0.0
    } else {
        mismatched as f64 / total_bits as f64
    };
    Ok(ErrorReport {
        total_bits,
        mismatched_bits: mismatched,
        ber,
        threshold,
        pass: ber <= threshold,
        mismatch_addresses: addresses,
        truncated,
    })
}
