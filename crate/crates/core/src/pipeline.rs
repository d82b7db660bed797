//! Average sound-speed estimation and corrected beamforming.
//!
//! Estimation order: coherence sweep, masking with mean replacement,
//! Gaussian smoothing, moving average across candidates, optional rank
//! filter per candidate image, per-pixel argmax, median filter, and finally a
//! box filter that widens with depth.

use log::warn;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::beamform::{das, sweep_coherence, BeamformConfig, ChannelData, CoherenceVolume, ComplexImage};
use crate::error::{Error, Result};
use crate::geometry::{GridKind, ScanGrid};
use crate::imgproc::{
    depth_growing_smooth, gaussian_smooth, median_filter, nearest_rank, rank_filter, replace_masked,
    speed_axis_smooth, KernelSpec, MaskSpec,
};
use crate::wavemodel::{SpeedMap, SPEED_BOUNDS};

/// Speed assumed when the data carry no usable coherence.
pub const CONVENTIONAL_SPEED: f64 = 1540.0;

/// Unit of lateral kernel extents; must match the grid kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LateralUnit {
    Mm,
    Deg,
}

/// Candidate speeds, either listed or as an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidates {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Default for Candidates {
    fn default() -> Self {
        Candidates::Range {
            start: 1440.0,
            stop: 1640.0,
            step: 10.0,
        }
    }
}

impl Candidates {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Candidates::List(v) => v.clone(),
            Candidates::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return Err(Error::invalid("candidate range needs start <= stop and a positive step"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| start + step * i as f64).collect()
            }
        };
        if v.len() < 2 {
            return Err(Error::invalid("at least two candidate speeds are required"));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("candidate speeds must be strictly increasing"));
        }
        if v.iter().any(|c| *c < SPEED_BOUNDS.0 || *c > SPEED_BOUNDS.1) {
            return Err(Error::invalid(format!(
                "candidate speeds must lie in [{}, {}] m/s",
                SPEED_BOUNDS.0, SPEED_BOUNDS.1
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSpec {
    pub percentile: f64,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub base: KernelSpec,
    /// Lateral growth per millimetre of depth, in lateral units.
    pub lateral_rate: f64,
    /// Axial growth in millimetres per millimetre of depth.
    pub axial_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub lateral_unit: LateralUnit,
    #[serde(default)]
    pub candidates: Candidates,
    pub mask: MaskSpec,
    pub gaussian: KernelSpec,
    pub moving_average: usize,
    /// `None` skips the rank filter.
    pub rank_filter: Option<RankSpec>,
    pub median: KernelSpec,
    pub smoothing: SmoothingSpec,
    #[serde(default)]
    pub beamform: BeamformConfig,
}

/// Names accepted by [`PipelineConfig::preset`].
pub const PIPELINE_PRESETS: &[&str] = &["kwave", "em6c"];

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "kwave" => include_str!("../presets/kwave.json"),
            "em6c" => include_str!("../presets/em6c.json"),
            other => {
                return Err(Error::invalid(format!(
                    "unknown pipeline preset '{other}' (expected one of {})",
                    PIPELINE_PRESETS.join(", ")
                )))
            }
        };
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.candidates.values()?.len();
        self.mask.validate()?;
        self.gaussian.validate()?;
        if self.moving_average % 2 == 0 || self.moving_average > n {
            return Err(Error::invalid(format!(
                "moving-average length {} must be odd and at most {n}",
                self.moving_average
            )));
        }
        if let Some(r) = &self.rank_filter {
            r.kernel.validate()?;
            if !(0.0..=100.0).contains(&r.percentile) {
                return Err(Error::invalid("rank percentile must lie in [0, 100]"));
            }
        }
        self.median.validate()?;
        self.smoothing.base.validate()?;
        if !(self.smoothing.lateral_rate >= 0.0) || !(self.smoothing.axial_rate >= 0.0) {
            return Err(Error::invalid("smoothing growth rates must be non-negative"));
        }
        self.beamform.validate()
    }

    fn check_grid(&self, grid: &ScanGrid) -> Result<()> {
        let expected = match grid.kind {
            GridKind::Linear => LateralUnit::Mm,
            GridKind::Sector => LateralUnit::Deg,
        };
        if self.lateral_unit != expected {
            return Err(Error::invalid(format!(
                "config gives lateral kernels in {:?} but the grid is {:?}",
                self.lateral_unit, grid.kind
            )));
        }
        Ok(())
    }
}

/// Intermediate products kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub coherence: CoherenceVolume,
    /// Coherence after masking, smoothing and rank filtering.
    pub filtered: CoherenceVolume,
    pub argmax: SpeedMap,
    pub median: SpeedMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub speed_map: SpeedMap,
    pub global_speed: f64,
    pub warnings: Vec<String>,
    pub diagnostics: Option<Diagnostics>,
}

/// Per-pixel candidate with the highest coherence. Exact ties go to the
/// candidate closest to the conventional speed, then to the lower one.
pub fn select_max_speed(vol: &CoherenceVolume, grid: &ScanGrid) -> Result<SpeedMap> {
    let (s_count, rows, cols) = vol.images.dim();
    if (rows, cols) != grid.shape() {
        return Err(Error::shape("coherence volume does not match the grid"));
    }
    let preference = |s: usize| (vol.speeds[s] - CONVENTIONAL_SPEED).abs();
    let values = Array2::from_shape_fn((rows, cols), |(i, j)| {
        let mut best = 0;
        for s in 1..s_count {
            let (v, b) = (vol.images[[s, i, j]], vol.images[[best, i, j]]);
            if v > b || (v == b && preference(s) < preference(best)) {
                best = s;
            }
        }
        vol.speeds[best]
    });
    SpeedMap::new(grid.clone(), values)
}

fn map_volume(vol: &CoherenceVolume, f: impl Fn(&Array2<f64>) -> Result<Array2<f64>>) -> Result<CoherenceVolume> {
    let mut images = Array3::zeros(vol.images.dim());
    for (s, img) in vol.images.axis_iter(Axis(0)).enumerate() {
        let out = f(&img.to_owned())?;
        images.index_axis_mut(Axis(0), s).assign(&out);
    }
    CoherenceVolume::new(vol.speeds.clone(), images)
}

/// Coherence filtering, speed selection and map cleanup on a precomputed
/// coherence volume.
pub fn estimate_from_volume(
    vol: &CoherenceVolume,
    grid: &ScanGrid,
    cfg: &PipelineConfig,
    keep_diagnostics: bool,
) -> Result<EstimationResult> {
    cfg.validate()?;
    cfg.check_grid(grid)?;
    if vol.images.dim().1 != grid.rows() || vol.images.dim().2 != grid.cols() {
        return Err(Error::shape("coherence volume does not match the grid"));
    }

    let mut warnings = Vec::new();
    let geometry = cfg.mask.geometry_mask(grid);
    let threshold = cfg.mask.coherence_threshold;
    let all_masked = vol.images.axis_iter(Axis(0)).all(|img| {
        img.iter().zip(&geometry).all(|(&c, &g)| g || c < threshold)
    });
    if all_masked {
        let msg = format!(
            "every pixel is masked for every candidate; reporting {CONVENTIONAL_SPEED} m/s everywhere"
        );
        warn!("{msg}");
        warnings.push(msg);
        let speed_map = SpeedMap::constant(grid.clone(), CONVENTIONAL_SPEED)?;
        let diagnostics = keep_diagnostics.then(|| Diagnostics {
            coherence: vol.clone(),
            filtered: vol.clone(),
            argmax: speed_map.clone(),
            median: speed_map.clone(),
        });
        return Ok(EstimationResult {
            speed_map,
            global_speed: CONVENTIONAL_SPEED,
            warnings,
            diagnostics,
        });
    }

    let smoothed = map_volume(vol, |img| {
        let mut mask = geometry.clone();
        mask.zip_mut_with(img, |m, &c| *m = *m || c < threshold);
        gaussian_smooth(&replace_masked(img, &mask), grid, &cfg.gaussian)
    })?;
    let mut filtered = speed_axis_smooth(&smoothed, cfg.moving_average)?;
    if let Some(rank) = &cfg.rank_filter {
        let window = rank.kernel.window(grid)?;
        filtered = map_volume(&filtered, |img| rank_filter(img, window, rank.percentile))?;
    }

    let argmax = select_max_speed(&filtered, grid)?;
    let median_values = median_filter(&argmax.values, cfg.median.window(grid)?);
    let median = SpeedMap::new(grid.clone(), median_values)?;
    let s = &cfg.smoothing;
    let smooth = depth_growing_smooth(&median.values, grid, &s.base, s.lateral_rate, s.axial_rate)?;
    let speed_map = SpeedMap::new(grid.clone(), smooth)?;
    let global_speed = speed_map.mean();
    Ok(EstimationResult {
        speed_map,
        global_speed,
        warnings,
        diagnostics: keep_diagnostics.then(|| Diagnostics {
            coherence: vol.clone(),
            filtered,
            argmax,
            median,
        }),
    })
}

pub fn estimate(
    data: &ChannelData,
    grid: &ScanGrid,
    cfg: &PipelineConfig,
    keep_diagnostics: bool,
) -> Result<EstimationResult> {
    cfg.validate()?;
    cfg.check_grid(grid)?;
    let vol = sweep_coherence(data, grid, &cfg.candidates.values()?, &cfg.beamform)?;
    estimate_from_volume(&vol, grid, cfg, keep_diagnostics)
}

/// Beamform with the estimated per-pixel average speeds.
pub fn correct(data: &ChannelData, grid: &ScanGrid, map: &SpeedMap, cfg: &BeamformConfig) -> Result<ComplexImage> {
    if map.grid != *grid {
        return Err(Error::shape("speed map is defined on a different grid"));
    }
    das(data, grid, map, cfg)
}

fn percentile80(img: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = img.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let r = nearest_rank(80.0, v.len());
    *v.select_nth_unstable_by(r, f64::total_cmp).1
}

/// Scale `corrected` so its 80th-percentile value equals the reference's.
/// Returns the scaled image and the factor applied; a zero percentile leaves
/// the image unchanged with a warning.
pub fn match_gain(corrected: &Array2<f64>, reference: &Array2<f64>) -> (Array2<f64>, f64, Option<String>) {
    let pc = percentile80(corrected);
    let pr = percentile80(reference);
    if !(pc > 0.0) || !pc.is_finite() || !pr.is_finite() {
        let msg = "80th percentile of the image is zero; gain left unchanged".to_string();
        warn!("{msg}");
        return (corrected.clone(), 1.0, Some(msg));
    }
    let scale = pr / pc;
    (corrected.mapv(|v| v * scale), scale, None)
}
