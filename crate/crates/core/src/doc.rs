//! Schema-tagged JSON documents (`grid.v1`, `layout.v1`, `report.v1`, ...).
//!
//! Every document is a flat JSON object whose `schema` field names its type
//! and version; the remaining fields are the value's own.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{CellSamples, Histogram, ThresholdResult};
use crate::grid::GridSpec;
use crate::hexio::ErrorReport;
use crate::imagery::SynthParams;
use crate::layout::LayoutConfig;
use crate::mosaic::{Offset, TileLayout};

#[derive(Debug, Error)]
pub enum DocError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected schema {expected:?}, found {found:?}")]
    WrongSchema { expected: &'static str, found: String },
}

pub trait Schema: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

impl Schema for GridSpec {
    const SCHEMA: &'static str = "grid.v1";
}

impl Schema for LayoutConfig {
    const SCHEMA: &'static str = "layout.v1";
}

impl Schema for ErrorReport {
    const SCHEMA: &'static str = "report.v1";
}

impl Schema for TileLayout {
    const SCHEMA: &'static str = "tiles.v1";
}

impl Schema for SynthParams {
    const SCHEMA: &'static str = "synth.v1";
}

impl Schema for Histogram {
    const SCHEMA: &'static str = "histogram.v1";
}

impl Schema for ThresholdResult {
    const SCHEMA: &'static str = "threshold.v1";
}

impl Schema for CellSamples {
    const SCHEMA: &'static str = "cells.v1";
}

/// Registered global tile positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placements {
    pub offsets: Vec<Offset>,
    /// Global coordinates of the mosaic's top-left pixel.
    pub origin: (i64, i64),
}

impl Schema for Placements {
    const SCHEMA: &'static str = "offsets.v1";
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    schema: &'a str,
    #[serde(flatten)]
    value: &'a T,
}

#[derive(Deserialize)]
struct Header {
    schema: String,
}

/// Pretty-printed document with a trailing newline.
pub fn to_string<T: Schema>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Tagged {
        schema: T::SCHEMA,
        value,
    })
    .expect("document types serialize infallibly");
    s.push('\n');
    s
}

pub fn from_str<T: Schema>(text: &str) -> Result<T, DocError> {
    let header: Header = serde_json::from_str(text)?;
    if header.schema != T::SCHEMA {
        return Err(DocError::WrongSchema {
            expected: T::SCHEMA,
            found: header.schema,
        });
    }
    Ok(serde_json::from_str(text)?)
}

pub fn from_value<T: Schema>(value: serde_json::Value) -> Result<T, DocError> {
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(s) if s == T::SCHEMA => Ok(serde_json::from_value(value)?),
        other => Err(DocError::WrongSchema {
            expected: T::SCHEMA,
            found: other.unwrap_or("<missing>").to_string(),
        }),
    }
}
