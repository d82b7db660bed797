//! Image operators for coherence filtering and map cleanup.
//!
//! Images are depth-major `Array2<f64>` on a [`ScanGrid`]. Every spatial
//! filter replicates edge pixels at the boundary. Physical kernel extents are
//! given in native grid units: millimetres laterally on linear grids, degrees
//! laterally on sector grids, and millimetres axially.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::CoherenceVolume;
use crate::error::{Error, Result};
use crate::geometry::{GridKind, ScanGrid};

/// Odd window size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::invalid(format!("window {rows}x{cols} must have odd sides")));
        }
        Ok(Window { rows, cols })
    }

    fn half(self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }
}

/// Smallest odd pixel count covering `extent` at `spacing`.
pub fn odd_pixels(extent: f64, spacing: f64) -> usize {
    let n = (extent / spacing - 1e-9).ceil().max(1.0) as usize;
    n | 1
}

/// Millimetres or degrees per lateral pixel, millimetres per depth pixel.
fn native_spacing(grid: &ScanGrid) -> (f64, f64) {
    let lateral = match grid.kind {
        GridKind::Linear => grid.lateral_spacing() * 1e3,
        GridKind::Sector => grid.lateral_spacing().to_degrees(),
    };
    (lateral, grid.depth_spacing() * 1e3)
}

/// Lateral × axial kernel extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Millimetres on linear grids, degrees on sector grids.
    pub lateral: f64,
    pub axial_mm: f64,
}

impl KernelSpec {
    pub fn new(lateral: f64, axial_mm: f64) -> Result<Self> {
        let k = KernelSpec { lateral, axial_mm };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lateral > 0.0 && self.lateral.is_finite())
            || !(self.axial_mm > 0.0 && self.axial_mm.is_finite())
        {
            return Err(Error::invalid(format!(
                "kernel extents must be positive, got {} x {}",
                self.lateral, self.axial_mm
            )));
        }
        Ok(())
    }

    pub fn window(&self, grid: &ScanGrid) -> Result<Window> {
        self.validate()?;
        let (lat, ax) = native_spacing(grid);
        Window::new(odd_pixels(self.axial_mm, ax), odd_pixels(self.lateral, lat))
    }

    /// Gaussian standard deviations (rows, cols) in pixels: a quarter of
    /// each extent.
    pub fn sigma_pixels(&self, grid: &ScanGrid) -> (f64, f64) {
        let (lat, ax) = native_spacing(grid);
        (self.axial_mm / 4.0 / ax, self.lateral / 4.0 / lat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub coherence_threshold: f64,
    pub nearfield_depth_mm: f64,
    /// Central share of the lateral axis kept, in percent.
    pub valid_sector_percent: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            coherence_threshold: 0.2,
            nearfield_depth_mm: 0.0,
            valid_sector_percent: 100.0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coherence_threshold) {
            return Err(Error::invalid("coherence threshold must lie in [0, 1]"));
        }
        if !(self.nearfield_depth_mm >= 0.0 && self.nearfield_depth_mm.is_finite()) {
            return Err(Error::invalid("nearfield depth must be non-negative"));
        }
        if !(self.valid_sector_percent > 0.0 && self.valid_sector_percent <= 100.0) {
            return Err(Error::invalid("valid sector percentage must lie in (0, 100]"));
        }
        Ok(())
    }

    /// Pixels excluded by depth or lateral position alone.
    pub fn geometry_mask(&self, grid: &ScanGrid) -> Array2<bool> {
        let lo = grid.lateral[0];
        let hi = grid.lateral[grid.cols() - 1];
        let centre = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let keep = self.valid_sector_percent / 100.0;
        Array2::from_shape_fn(grid.shape(), |(i, j)| {
            let outside = half > 0.0 && (grid.lateral[j] - centre).abs() > keep * half * (1.0 + 1e-12);
            grid.depths[i] * 1e3 < self.nearfield_depth_mm || outside
        })
    }

    /// Full mask: geometry plus low coherence.
    pub fn mask(&self, coh: &Array2<f64>, grid: &ScanGrid) -> Result<Array2<bool>> {
        check_shape(coh, grid)?;
        let mut m = self.geometry_mask(grid);
        m.zip_mut_with(coh, |m, &c| *m = *m || c < self.coherence_threshold);
        Ok(m)
    }
}

fn check_shape(img: &Array2<f64>, grid: &ScanGrid) -> Result<()> {
    if img.dim() != grid.shape() {
        return Err(Error::shape(format!(
            "image is {:?}, grid is {:?}",
            img.dim(),
            grid.shape()
        )));
    }
    Ok(())
}

/// Replace masked pixels by the mean of the unmasked ones, or everything by
/// the global mean when nothing is unmasked.
pub fn replace_masked(img: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (&v, &m) in img.iter().zip(mask) {
        if !m {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        let mean = img.mean().unwrap_or(0.0);
        return Array2::from_elem(img.dim(), mean);
    }
    let fill = sum / count as f64;
    let mut out = img.clone();
    out.zip_mut_with(mask, |v, &m| {
        if m {
            *v = fill;
        }
    });
    out
}

pub fn mask_and_replace(coh: &Array2<f64>, grid: &ScanGrid, spec: &MaskSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mask = spec.mask(coh, grid)?;
    Ok(replace_masked(coh, &mask))
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let h = (len / 2) as isize;
    if len == 1 || !(sigma > 0.0) || !sigma.is_finite() {
        let mut t = vec![0.0; len];
        t[len / 2] = 1.0;
        return t;
    }
    let raw: Vec<f64> = (-h..=h)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable convolution with `row_taps` along depth and `col_taps` along
/// the lateral axis.
pub fn separable_filter(img: &Array2<f64>, row_taps: &[f64], col_taps: &[f64]) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let hr = (row_taps.len() / 2) as isize;
    let hc = (col_taps.len() / 2) as isize;
    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in col_taps.iter().enumerate() {
                acc += w * img[[i, clamp_index(j as isize + t as isize - hc, cols)]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in row_taps.iter().enumerate() {
                acc += w * tmp[[clamp_index(i as isize + t as isize - hr, rows), j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Gaussian blur with a window and per-axis standard deviations in pixels.
pub fn gaussian_filter(img: &Array2<f64>, window: Window, sigma: (f64, f64)) -> Array2<f64> {
    separable_filter(
        img,
        &gaussian_taps(window.rows, sigma.0),
        &gaussian_taps(window.cols, sigma.1),
    )
}

pub fn gaussian_smooth(img: &Array2<f64>, grid: &ScanGrid, kernel: &KernelSpec) -> Result<Array2<f64>> {
    check_shape(img, grid)?;
    let window = kernel.window(grid)?;
    Ok(gaussian_filter(img, window, kernel.sigma_pixels(grid)))
}

/// Moving average along the candidate axis; the window shrinks at both ends.
pub fn speed_axis_smooth(vol: &CoherenceVolume, length: usize) -> Result<CoherenceVolume> {
    let s_count = vol.speeds.len();
    if length % 2 == 0 || length == 0 {
        return Err(Error::invalid(format!("moving-average length {length} must be odd")));
    }
    if length > s_count {
        return Err(Error::invalid(format!(
            "moving-average length {length} exceeds {s_count} candidates"
        )));
    }
    let h = length / 2;
    let (_, rows, cols) = vol.images.dim();
    let mut images = Array3::zeros((s_count, rows, cols));
    for s in 0..s_count {
        let lo = s.saturating_sub(h);
        let hi = (s + h).min(s_count - 1);
        let mut acc = Array2::<f64>::zeros((rows, cols));
        for q in lo..=hi {
            acc += &vol.images.index_axis(Axis(0), q);
        }
        acc /= (hi - lo + 1) as f64;
        images.index_axis_mut(Axis(0), s).assign(&acc);
    }
    CoherenceVolume::new(vol.speeds.clone(), images)
}

/// Nearest-rank position of `percentile` in a sorted list of `n` values.
pub fn nearest_rank(percentile: f64, n: usize) -> usize {
    let r = (percentile / 100.0 * n as f64).ceil() as isize - 1;
    r.clamp(0, n as isize - 1) as usize
}

/// Sliding-window percentile with the nearest-rank definition.
pub fn rank_filter(img: &Array2<f64>, window: Window, percentile: f64) -> Result<Array2<f64>> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let (rows, cols) = img.dim();
    let (hr, hc) = window.half();
    let n = window.rows * window.cols;
    let rank = nearest_rank(percentile, n);
    let out: Vec<f64> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut buf = Vec::with_capacity(n);
            (0..cols)
                .map(|j| {
                    buf.clear();
                    for di in 0..window.rows {
                        let ii = clamp_index(i as isize + di as isize - hr as isize, rows);
                        for dj in 0..window.cols {
                            let jj = clamp_index(j as isize + dj as isize - hc as isize, cols);
                            buf.push(img[[ii, jj]]);
                        }
                    }
                    *buf.select_nth_unstable_by(rank, f64::total_cmp).1
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), out).unwrap())
}

pub fn median_filter(img: &Array2<f64>, window: Window) -> Array2<f64> {
    rank_filter(img, window, 50.0).unwrap()
}

/// Box filter whose window grows linearly with depth:
/// `extent(depth) = base + rate · depth_mm` per axis.
pub fn depth_growing_smooth(
    img: &Array2<f64>,
    grid: &ScanGrid,
    base: &KernelSpec,
    lateral_rate: f64,
    axial_rate: f64,
) -> Result<Array2<f64>> {
    check_shape(img, grid)?;
    base.validate()?;
    if !(lateral_rate >= 0.0 && lateral_rate.is_finite()) || !(axial_rate >= 0.0 && axial_rate.is_finite()) {
        return Err(Error::invalid("growth rates must be non-negative"));
    }
    let (lat_sp, ax_sp) = native_spacing(grid);
    let (rows, cols) = img.dim();
    let windows: Vec<(usize, usize)> = grid
        .depths
        .iter()
        .map(|d| {
            let depth_mm = d * 1e3;
            let wr = odd_pixels(base.axial_mm + axial_rate * depth_mm, ax_sp);
            let wc = odd_pixels(base.lateral + lateral_rate * depth_mm, lat_sp);
            (wr / 2, wc / 2)
        })
        .collect();
    // Half-widths beyond the image add nothing but replicated edges; cap them
    // so the padded table stays small.
    let pad_r = windows.iter().map(|w| w.0).max().unwrap_or(0).min(rows.max(1) * 4);
    let pad_c = windows.iter().map(|w| w.1).max().unwrap_or(0).min(cols.max(1) * 4);
    let (pr, pc) = (rows + 2 * pad_r, cols + 2 * pad_c);
    // summed-area table of the replicate-padded image, with a zero border
    let mut sat = Array2::<f64>::zeros((pr + 1, pc + 1));
    for i in 0..pr {
        let si = clamp_index(i as isize - pad_r as isize, rows);
        let mut row_sum = 0.0;
        for j in 0..pc {
            let sj = clamp_index(j as isize - pad_c as isize, cols);
            row_sum += img[[si, sj]];
            sat[[i + 1, j + 1]] = sat[[i, j + 1]] + row_sum;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        let (hr, hc) = (windows[i].0.min(pad_r), windows[i].1.min(pad_c));
        let count = ((2 * hr + 1) * (2 * hc + 1)) as f64;
        let (r0, r1) = (i + pad_r - hr, i + pad_r + hr + 1);
        for j in 0..cols {
            let (c0, c1) = (j + pad_c - hc, j + pad_c + hc + 1);
            let s = sat[[r1, c1]] - sat[[r0, c1]] - sat[[r1, c0]] + sat[[r0, c0]];
            out[[i, j]] = s / count;
        }
    }
    Ok(out)
}
