//! Frame-level event annotations.
//!
//! CSV rows of `frame,class,track,azimuth,elevation` with integer degrees,
//! one row per active event per label frame. Parsing is strict: any
//! malformed row fails with its line number.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Label frame period in seconds.
pub const LABEL_HOP_SECS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabelRow {
    pub frame: u32,
    pub class: u32,
    pub track: u32,
    /// Azimuth in integer degrees, [-180, 180].
    pub azimuth: i32,
    /// Elevation in integer degrees, [-90, 90].
    pub elevation: i32,
}

pub fn parse_metadata_str(text: &str, path: &Path) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(fail(format!("expected 5 fields, found {}", fields.len())));
        }
        let parse_u32 = |s: &str, name: &str| {
            s.parse::<u32>()
                .map_err(|_| fail(format!("{name} must be a nonnegative integer, got '{s}'")))
        };
        let parse_i32 = |s: &str, name: &str| {
            s.parse::<i32>()
                .map_err(|_| fail(format!("{name} must be an integer, got '{s}'")))
        };
        let row = LabelRow {
            frame: parse_u32(fields[0], "frame")?,
            class: parse_u32(fields[1], "class")?,
            track: parse_u32(fields[2], "track")?,
            azimuth: parse_i32(fields[3], "azimuth")?,
            elevation: parse_i32(fields[4], "elevation")?,
        };
        if !(-180..=180).contains(&row.azimuth) {
            return Err(fail(format!("azimuth {} outside [-180, 180]", row.azimuth)));
        }
        if !(-90..=90).contains(&row.elevation) {
            return Err(fail(format!("elevation {} outside [-90, 90]", row.elevation)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_metadata_str(&text, path)
}

/// Serialize rows sorted by (frame, track).
pub fn format_metadata(rows: &[LabelRow]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.track, r.class));
    let mut out = String::new();
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.frame, r.class, r.track, r.azimuth, r.elevation
        )
        .unwrap();
    }
    out
}

pub fn write_metadata(path: impl AsRef<Path>, rows: &[LabelRow]) -> Result<()> {
    std::fs::write(path, format_metadata(rows))?;
    Ok(())
}
