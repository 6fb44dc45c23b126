//! Interpretability proxy: the compressed size of a quantized heatmap.
//! Lossless DEFLATE at a fixed level keeps the measure deterministic; only
//! size orderings between methods are meaningful, not absolute byte counts.

use crate::attribution::Explanation;
use crate::error::{Error, Result};
use flate2::write::DeflateEncoder;
use flate2::Compression;
use std::io::Write;

/// Quantize relevance to `bins` levels symmetric about zero (zero maps to
/// the middle level), serialize as an 8-bit raster, DEFLATE-compress at
/// level 6, and return the compressed byte count.
pub fn filesize_proxy(expl: &Explanation, bins: usize) -> Result<usize> {
    if !(2..=256).contains(&bins) {
        return Err(Error::Config(format!("bins must be in [2, 256], got {bins}")));
    }
    let a = expl.relevance.max_abs();
    let half = (bins - 1) as f64 / 2.0;
    let raster: Vec<u8> = expl
        .relevance
        .data()
        .iter()
        .map(|&r| {
            let unit = if a > 0.0 { r / a } else { 0.0 };
            ((unit + 1.0) * half).round().clamp(0.0, (bins - 1) as f64) as u8
        })
        .collect();
    let mut encoder = DeflateEncoder::new(Vec::new(), Compression::new(6));
    encoder.write_all(&raster)?;
    Ok(encoder.finish()?.len())
}
