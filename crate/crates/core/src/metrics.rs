//! Sharpness and estimator statistics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGrid;
use crate::wavemodel::SpeedMap;

/// Lateral Sobel response, computed as a correlation with
/// `[[1, 0, -1], [2, 0, -2], [1, 0, -1]]` (columns are lateral). Border
/// pixels are left at zero and carry no information.
pub fn sobel_lateral(img: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = img.dim();
    if rows < 3 || cols < 3 {
        return Err(Error::invalid(format!("Sobel needs at least 3x3 pixels, got {rows}x{cols}")));
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 1..rows - 1 {
        for j in 1..cols - 1 {
            let left = img[[i - 1, j - 1]] + 2.0 * img[[i, j - 1]] + img[[i + 1, j - 1]];
            let right = img[[i - 1, j + 1]] + 2.0 * img[[i, j + 1]] + img[[i + 1, j + 1]];
            out[[i, j]] = left - right;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub min_depth_mm: f64,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec { min_depth_mm: 10.0 }
    }
}

/// Sum of absolute lateral Sobel responses over interior pixels at or below
/// the ROI's minimum depth.
pub fn tenengrad(img: &Array2<f64>, grid: &ScanGrid, roi: &RoiSpec) -> Result<f64> {
    if img.dim() != grid.shape() {
        return Err(Error::shape(format!("image is {:?}, grid is {:?}", img.dim(), grid.shape())));
    }
    if !(roi.min_depth_mm >= 0.0) {
        return Err(Error::invalid("ROI minimum depth must be non-negative"));
    }
    let g = sobel_lateral(img)?;
    let (rows, cols) = img.dim();
    let first = (1..rows - 1).find(|&i| grid.depths[i] * 1e3 >= roi.min_depth_mm - 1e-9);
    let Some(first) = first else {
        return Err(Error::invalid(format!(
            "ROI below {} mm contains no interior pixels",
            roi.min_depth_mm
        )));
    };
    let mut f = 0.0;
    for i in first..rows - 1 {
        for j in 1..cols - 1 {
            f += g[[i, j]].abs();
        }
    }
    Ok(f)
}

/// Percentage sharpness increase of `corrected` over `uncorrected`.
pub fn kappa(corrected: f64, uncorrected: f64) -> Result<f64> {
    if uncorrected == 0.0 || !uncorrected.is_finite() {
        return Err(Error::domain("uncorrected sharpness must be non-zero"));
    }
    Ok(100.0 * (corrected / uncorrected - 1.0))
}

pub fn mad_from_reference(map: &SpeedMap, reference: f64) -> f64 {
    map.values.iter().map(|v| (v - reference).abs()).sum::<f64>() / map.values.len() as f64
}

pub fn mae(a: &SpeedMap, b: &SpeedMap) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::shape("maps are defined on different grids"));
    }
    Ok(mean_abs_diff(&a.values, &b.values))
}

pub(crate) fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Product-moment correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("series lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("correlation is undefined for a constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Scores for one image pair, serialised as the `score` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tenengrad_a: f64,
    pub tenengrad_b: f64,
    /// Sharpness increase of `a` over `b` [%].
    pub kappa: f64,
    pub roi_min_depth_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub global_speed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae: Option<f64>,
}
