//! B-mode rendering: envelope, optional gain match, log compression, clip,
//! 8-bit grayscale.

use std::io::Write;

use ndarray::Array2;

use crate::beamform::ComplexImage;
use crate::error::{Error, Result};
use crate::metrics::{tenengrad, RoiSpec};
use crate::pipeline::match_gain;

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Log-compressed image in dB relative to `reference_level`, clipped to
/// `[-dynamic_range, 0]`. Zero envelope maps to the floor.
pub fn log_compress(envelope: &Array2<f64>, reference_level: f64, dynamic_range: f64) -> Result<Array2<f64>> {
    check_range(dynamic_range)?;
    if !(reference_level > 0.0) || !reference_level.is_finite() {
        return Err(Error::domain(format!("reference level must be positive, got {reference_level}")));
    }
    Ok(envelope.mapv(|e| {
        let db = 20.0 * (e / reference_level).log10();
        if db.is_nan() {
            -dynamic_range
        } else {
            db.clamp(-dynamic_range, 0.0)
        }
    }))
}

fn check_range(dynamic_range: f64) -> Result<()> {
    if !(dynamic_range > 0.0) || !dynamic_range.is_finite() {
        return Err(Error::invalid(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    Ok(())
}

/// Maps `[-dynamic_range, 0]` dB linearly onto `0..=255`.
pub fn to_gray8(db: &Array2<f64>, dynamic_range: f64) -> Result<Vec<u8>> {
    check_range(dynamic_range)?;
    Ok(db
        .iter()
        .map(|&v| ((v + dynamic_range) / dynamic_range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// A rendered B-mode image and how it was scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct BMode {
    /// Clipped dB values, depth-major.
    pub db: Array2<f64>,
    pub dynamic_range: f64,
    /// Linear gain applied to the envelope before compression.
    pub gain: f64,
    /// Envelope level mapped to 0 dB.
    pub reference_level: f64,
    pub warnings: Vec<String>,
}

impl BMode {
    pub fn gray8(&self) -> Vec<u8> {
        to_gray8(&self.db, self.dynamic_range).expect("dynamic range validated at render time")
    }
}

/// Renders `image`. With a `reference`, the envelope is first scaled to the
/// reference's 80th-percentile level and both share the reference's peak as
/// 0 dB; otherwise the image's own peak is 0 dB.
pub fn render(image: &ComplexImage, reference: Option<&ComplexImage>, dynamic_range: f64) -> Result<BMode> {
    check_range(dynamic_range)?;
    let env = image.envelope();
    let mut warnings = Vec::new();
    let (env, gain, peak) = match reference {
        Some(r) => {
            if r.grid != image.grid {
                return Err(Error::shape("reference image is on a different grid"));
            }
            let renv = r.envelope();
            let (scaled, gain, warning) = match_gain(&env, &renv);
            warnings.extend(warning);
            (scaled, gain, peak_of(&renv))
        }
        None => {
            let p = peak_of(&env);
            (env, 1.0, p)
        }
    };
    let reference_level = if peak > 0.0 {
        peak
    } else {
        warnings.push("image is identically zero; rendered at the floor".into());
        1.0
    };
    Ok(BMode {
        db: log_compress(&env, reference_level, dynamic_range)?,
        dynamic_range,
        gain,
        reference_level,
        warnings,
    })
}

fn peak_of(env: &Array2<f64>) -> f64 {
    env.iter().copied().fold(0.0, f64::max)
}

/// Binary PGM (P5).
pub fn write_pgm(mut w: impl Write, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != rows * cols {
        return Err(Error::shape(format!("{} pixels for a {rows}x{cols} image", pixels.len())));
    }
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

/// Sharpness of the rendered pair `a` and `b`: `b` is rendered against its
/// own peak and `a` is gain-matched to `b`. Returns `(F_a, F_b)`.
pub fn display_sharpness(a: &ComplexImage, b: &ComplexImage, dynamic_range: f64, roi: &RoiSpec) -> Result<(f64, f64)> {
    let rb = render(b, None, dynamic_range)?;
    let ra = render(a, Some(b), dynamic_range)?;
    Ok((tenengrad(&ra.db, &a.grid, roi)?, tenengrad(&rb.db, &b.grid, roi)?))
}
