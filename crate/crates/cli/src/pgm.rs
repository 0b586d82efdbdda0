//! Binary greyscale (P5) image output.

use std::path::Path;

use crate::error::{io_err, Result};

/// Min-max scales `values` (row-major, `width × height`) to 0..=255. A
/// constant map becomes a single mid-grey level.
pub fn encode(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pgm dimensions do not match data");
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    }));
    out
}

pub fn write(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    std::fs::write(path, encode(values, width, height)).map_err(io_err(path))
}
