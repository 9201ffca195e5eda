//! Array geometry files: a `radius_m=<float>` header line followed by
//! `index azimuth_deg elevation_deg` rows. Parsed strictly.

use std::path::Path;

use crate::array::ArraySpec;
use crate::error::{Error, Result};
use crate::special::SphDirection;

pub fn parse_geometry_str(text: &str, sample_rate: u32, name: &str) -> Result<ArraySpec> {
    let mut radius: Option<f64> = None;
    let mut dirs: Vec<(usize, SphDirection)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: name.into(),
            line: lineno + 1,
            msg,
        };
        if let Some(v) = line.strip_prefix("radius_m=") {
            if radius.is_some() {
                return Err(err("duplicate radius_m header".into()));
            }
            let r: f64 = v
                .trim()
                .parse()
                .map_err(|e| err(format!("bad radius: {e}")))?;
            radius = Some(r);
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected `index azimuth_deg elevation_deg`, got {} fields",
                fields.len()
            )));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|e| err(format!("bad index: {e}")))?;
        let az: f64 = fields[1]
            .parse()
            .map_err(|e| err(format!("bad azimuth: {e}")))?;
        let el: f64 = fields[2]
            .parse()
            .map_err(|e| err(format!("bad elevation: {e}")))?;
        let dir = SphDirection::from_degrees(az, el)
            .map_err(|e| err(format!("bad direction: {e}")))?;
        dirs.push((index, dir));
    }
    let radius =
        radius.ok_or_else(|| Error::config(format!("{name}: missing radius_m header")))?;
    if dirs.is_empty() {
        return Err(Error::config(format!("{name}: no microphone rows")));
    }
    dirs.sort_by_key(|(i, _)| *i);
    for (expect, (idx, _)) in dirs.iter().enumerate() {
        if *idx != expect + 1 {
            return Err(Error::config(format!(
                "{name}: microphone indices must be 1..M contiguous, found {idx}"
            )));
        }
    }
    ArraySpec::new(
        radius,
        dirs.into_iter().map(|(_, d)| d).collect(),
        sample_rate,
        name,
    )
}

pub fn read_geometry(path: &Path, sample_rate: u32) -> Result<ArraySpec> {
    let text = std::fs::read_to_string(path)?;
    parse_geometry_str(&text, sample_rate, &path.display().to_string())
}
