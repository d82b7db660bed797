//! Local and average sound-speed maps, the straight-ray average-speed model,
//! and a point-scatterer channel-data simulator built on the same model.
//!
//! The simulator deliberately shares the estimator's forward model: straight
//! rays, per-leg harmonic-average speeds, no refraction, no multiple
//! scattering, no element directivity. Estimation errors measured on its
//! output therefore isolate the estimation pipeline.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::RfData;
use crate::error::{Error, Result};
use crate::geometry::{linspace, nearest, GridKind, ProbeAndSequence, ScanGrid, Vec3};

/// Plausible soft-tissue speed range [m/s]; maps outside it are rejected.
pub const SPEED_BOUNDS: (f64, f64) = (1300.0, 1800.0);

/// Wavelength used to bound the ray-integration step when no pulse is known:
/// 1540 m/s at 4 MHz.
pub const DEFAULT_WAVELENGTH: f64 = 1540.0 / 4.0e6;

/// Per-pixel sound speed on a scan grid or rectangular lattice. Used both for
/// local speeds and for two-way average speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedMap {
    pub grid: ScanGrid,
    /// Depth-major values [m/s], shape `grid.shape()`.
    pub values: Array2<f64>,
}

impl SpeedMap {
    pub fn new(grid: ScanGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::shape(format!(
                "speed values are {:?}, grid is {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !v.is_finite() || **v < SPEED_BOUNDS.0 || **v > SPEED_BOUNDS.1)
        {
            return Err(Error::domain(format!(
                "speed {bad} m/s outside [{}, {}]",
                SPEED_BOUNDS.0, SPEED_BOUNDS.1
            )));
        }
        Ok(SpeedMap { grid, values })
    }

    pub fn constant(grid: ScanGrid, c: f64) -> Result<Self> {
        let values = Array2::from_elem(grid.shape(), c);
        Self::new(grid, values)
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(f64::NAN)
    }

    /// Whether every value equals the first one.
    pub fn is_uniform(&self) -> bool {
        let first = self.values[[0, 0]];
        self.values.iter().all(|&v| v == first)
    }

    /// Nearest-cell value at `p`, extending edge cells outward.
    pub fn value_at(&self, p: Vec3) -> f64 {
        let (i, j) = self.grid.nearest_index(p);
        self.values[[i, j]]
    }

    /// Default ray-integration step: half the smaller of the cell size and
    /// [`DEFAULT_WAVELENGTH`].
    pub fn ray_step(&self) -> f64 {
        let g = &self.grid;
        let lateral = match g.kind {
            GridKind::Linear => g.lateral_spacing(),
            GridKind::Sector => {
                let mid = 0.5 * (g.depths[0] + g.depths[g.rows() - 1]);
                g.lateral_spacing() * mid.max(g.depth_spacing())
            }
        };
        lateral.min(g.depth_spacing()).min(DEFAULT_WAVELENGTH) / 2.0
    }

    fn sampler(&self) -> Sampler<'_> {
        Sampler {
            map: self,
            lat: AxisLookup::new(&self.grid.lateral),
            depth: AxisLookup::new(&self.grid.depths),
        }
    }
}

/// Nearest-index lookup with an O(1) path for evenly spaced axes.
struct AxisLookup<'a> {
    values: &'a [f64],
    start: f64,
    inv_step: Option<f64>,
}

impl<'a> AxisLookup<'a> {
    fn new(values: &'a [f64]) -> Self {
        let n = values.len();
        let inv_step = (n >= 2)
            .then(|| (values[n - 1] - values[0]) / (n - 1) as f64)
            .filter(|&step| {
                values
                    .windows(2)
                    .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step)
            })
            .map(|step| 1.0 / step);
        AxisLookup {
            values,
            start: values[0],
            inv_step,
        }
    }

    #[inline]
    fn index(&self, v: f64) -> usize {
        match self.inv_step {
            Some(inv) => {
                let f = ((v - self.start) * inv).round();
                if f <= 0.0 {
                    0
                } else {
                    (f as usize).min(self.values.len() - 1)
                }
            }
            None if self.values.len() == 1 => 0,
            None => nearest(self.values, v),
        }
    }
}

struct Sampler<'a> {
    map: &'a SpeedMap,
    lat: AxisLookup<'a>,
    depth: AxisLookup<'a>,
}

impl Sampler<'_> {
    #[inline]
    fn slowness(&self, p: Vec3) -> f64 {
        let g = &self.map.grid;
        let d = p - g.beam_origin;
        let (lat, depth) = match g.kind {
            GridKind::Linear => (d.x, d.z),
            GridKind::Sector => (d.x.atan2(d.z), (d.x * d.x + d.z * d.z).sqrt()),
        };
        1.0 / self.map.values[[self.depth.index(depth), self.lat.index(lat)]]
    }

    fn harmonic(&self, r: Vec3, e: Vec3, max_step: f64) -> f64 {
        let len = r.distance(e);
        if len == 0.0 {
            return 1.0 / self.slowness(e);
        }
        let n = (len / max_step).ceil().max(1.0) as usize;
        let dir = (r - e) * (1.0 / n as f64);
        let sum: f64 = (0..n)
            .map(|i| self.slowness(e + dir * (i as f64 + 0.5)))
            .sum();
        n as f64 / sum
    }
}

/// One-way harmonic average of `local` along the straight segment from `e` to
/// `r`, by the midpoint rule with the map's default [`SpeedMap::ray_step`].
pub fn harmonic_average(local: &SpeedMap, r: Vec3, e: Vec3) -> f64 {
    harmonic_average_with_step(local, r, e, local.ray_step())
}

/// [`harmonic_average`] with an explicit upper bound on the integration step.
pub fn harmonic_average_with_step(local: &SpeedMap, r: Vec3, e: Vec3, max_step: f64) -> f64 {
    local.sampler().harmonic(r, e, max_step)
}

/// Per-element harmonic speeds from `r`, indexed like `elements`.
fn element_speeds(sampler: &Sampler<'_>, r: Vec3, elements: &[Vec3], step: f64) -> Vec<f64> {
    elements.iter().map(|&e| sampler.harmonic(r, e, step)).collect()
}

/// Ground-truth two-way average speed on `grid`.
///
/// Each pixel gets the mean over all (tx, rx) element pairs of the average of
/// the two one-way harmonic speeds, so a constant medium maps to itself. The
/// transmit set is the union of active elements over all events.
pub fn average_speed_oracle(
    local: &SpeedMap,
    grid: &ScanGrid,
    probe: &ProbeAndSequence,
) -> Result<SpeedMap> {
    average_speed_oracle_at(local, grid, probe, |i, j, _| grid.pixel_position(i, j))
}

/// Ground truth expressed on the display grid: pixel `(i, j)` is evaluated at
/// the position it occupies after grid compensation with its own average
/// speed, found by fixed-point iteration. This is the quantity the estimator
/// recovers, because it reports speeds on the grid assumed at transmit.
pub fn average_speed_oracle_compensated(
    local: &SpeedMap,
    grid: &ScanGrid,
    probe: &ProbeAndSequence,
) -> Result<SpeedMap> {
    probe.validate()?;
    let sampler = local.sampler();
    let step = local.ray_step();
    let (rows, cols) = grid.shape();
    let c0 = probe.c0;
    let sets = PairSets::new(probe);
    let values: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            let mut c = c0;
            for _ in 0..50 {
                let p = grid.compensated_position(i, j, c / c0).0;
                let next = pair_average(&sampler, p, &sets, step);
                let done = (next - c).abs() < 1e-9;
                c = next;
                if done {
                    break;
                }
            }
            c
        })
        .collect();
    SpeedMap::new(grid.clone(), Array2::from_shape_vec((rows, cols), values).unwrap())
}

fn average_speed_oracle_at(
    local: &SpeedMap,
    grid: &ScanGrid,
    probe: &ProbeAndSequence,
    position: impl Fn(usize, usize, f64) -> Vec3 + Sync,
) -> Result<SpeedMap> {
    probe.validate()?;
    let sampler = local.sampler();
    let step = local.ray_step();
    let (rows, cols) = grid.shape();
    let sets = PairSets::new(probe);
    let values: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            pair_average(&sampler, position(i, j, probe.c0), &sets, step)
        })
        .collect();
    SpeedMap::new(grid.clone(), Array2::from_shape_vec((rows, cols), values).unwrap())
}

/// Element sets entering the two-way average.
struct PairSets {
    tx: Vec<Vec3>,
    rx: Vec<Vec3>,
}

impl PairSets {
    fn new(probe: &ProbeAndSequence) -> Self {
        let tx = probe
            .tx_union()
            .into_iter()
            .map(|i| probe.tx_elements[i])
            .collect();
        PairSets {
            tx,
            rx: probe.rx_elements.clone(),
        }
    }
}

fn pair_average(sampler: &Sampler<'_>, r: Vec3, sets: &PairSets, step: f64) -> f64 {
    let tx_speeds = element_speeds(sampler, r, &sets.tx, step);
    let rx_speeds = if sets.tx == sets.rx {
        tx_speeds.clone()
    } else {
        element_speeds(sampler, r, &sets.rx, step)
    };
    // sum over m, n of (a_n + b_m) / (2MN) = (mean(a) + mean(b)) / 2
    let mean_tx = tx_speeds.iter().sum::<f64>() / tx_speeds.len() as f64;
    let mean_rx = rx_speeds.iter().sum::<f64>() / rx_speeds.len() as f64;
    0.5 * (mean_tx + mean_rx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointScatterer {
    pub position: Vec3,
    pub amplitude: f64,
}

/// Uniformly distributed speckle scatterers with Rayleigh amplitudes in the
/// `y = 0` imaging plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeckleSpec {
    /// Lateral extent [m].
    pub x: [f64; 2],
    /// Depth extent [m].
    pub z: [f64; 2],
    /// Scatterers per square meter.
    pub density: f64,
    /// Rayleigh scale parameter of the amplitudes.
    #[serde(default = "one")]
    pub amplitude_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererScene {
    #[serde(default)]
    pub points: Vec<PointScatterer>,
    #[serde(default)]
    pub speckle: Option<SpeckleSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ScattererScene {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.position.is_finite() || !p.amplitude.is_finite() {
                return Err(Error::invalid(format!("point {i} is not finite")));
            }
            if p.position.z <= 0.0 {
                return Err(Error::invalid(format!("point {i} lies behind the array")));
            }
        }
        if let Some(s) = &self.speckle {
            let ok = s.x[0] < s.x[1]
                && s.z[0] < s.z[1]
                && s.z[0] > 0.0
                && s.density >= 0.0
                && s.density.is_finite()
                && s.amplitude_scale.is_finite();
            if !ok {
                return Err(Error::invalid("speckle region must be non-empty, in front of the array, with finite density"));
            }
        }
        Ok(())
    }

    /// Explicit points followed by the seeded speckle realisation.
    pub fn realize(&self) -> Vec<PointScatterer> {
        let mut out = self.points.clone();
        if let Some(s) = &self.speckle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let area = (s.x[1] - s.x[0]) * (s.z[1] - s.z[0]);
            let count = (s.density * area).round() as usize;
            out.reserve(count);
            for _ in 0..count {
                let x = rng.random_range(s.x[0]..s.x[1]);
                let z = rng.random_range(s.z[0]..s.z[1]);
                let u: f64 = rng.random();
                // Rayleigh by inversion
                let a = s.amplitude_scale * (-2.0 * (1.0 - u).ln()).sqrt();
                out.push(PointScatterer {
                    position: Vec3::new(x, 0.0, z),
                    amplitude: a,
                });
            }
        }
        out
    }

    /// Same geometry with every reflectivity multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut s = self.clone();
        for p in &mut s.points {
            p.amplitude *= alpha;
        }
        if let Some(sp) = &mut s.speckle {
            sp.amplitude_scale *= alpha;
        }
        s
    }
}

/// Gaussian-enveloped tone burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub center_frequency: f64,
    /// Envelope full width at half maximum, in periods of the centre frequency.
    pub num_cycles: f64,
    pub sampling_frequency: f64,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        let fc = self.center_frequency;
        if !(fc > 0.0 && fc < self.sampling_frequency / 2.0) {
            return Err(Error::invalid(format!(
                "centre frequency {fc} Hz must lie in (0, fs/2) with fs = {} Hz",
                self.sampling_frequency
            )));
        }
        if !(self.num_cycles > 0.0 && self.num_cycles.is_finite()) {
            return Err(Error::invalid("num_cycles must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian envelope [s].
    pub fn envelope_sigma(&self) -> f64 {
        self.num_cycles / (self.center_frequency * 2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Half-width of the simulated pulse support [s]; the envelope is cut at 4σ.
    pub fn half_support(&self) -> f64 {
        4.0 * self.envelope_sigma()
    }

    pub fn wavelength(&self, c: f64) -> f64 {
        c / self.center_frequency
    }

    pub fn waveform(&self, t: f64) -> f64 {
        let s = self.envelope_sigma();
        (-(t * t) / (2.0 * s * s)).exp() * (2.0 * std::f64::consts::PI * self.center_frequency * t).cos()
    }
}

/// Time window recorded for every event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordWindow {
    pub start_time: f64,
    pub num_samples: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub rf: RfData,
    /// Echoes whose support extended past either end of the record.
    pub truncated_echoes: usize,
}

/// Arrival time at receive element `m` of the echo from `p` launched by
/// transmit element `n` of event `k`, with each leg at its own harmonic speed.
pub fn echo_arrival_time(
    local: &SpeedMap,
    p: Vec3,
    m: usize,
    k: usize,
    n: usize,
    probe: &ProbeAndSequence,
) -> Result<f64> {
    let e_tx = probe.tx_position(k, n)?;
    let e_rx = probe.rx_position(m)?;
    let c_tx = harmonic_average(local, p, e_tx);
    let c_rx = harmonic_average(local, p, e_rx);
    Ok(probe.transmit_delay(k, n)? + p.distance(e_tx) / c_tx + p.distance(e_rx) / c_rx)
}

/// Oversampling of the tabulated pulse relative to the record sampling rate.
const PULSE_OVERSAMPLING: usize = 64;

/// Per-scatterer, per-element one-way travel times and distances.
struct Legs {
    time: Vec<f64>,
    inv_dist: Vec<f64>,
    stride: usize,
}

fn legs(points: &[PointScatterer], elements: &[Vec3], local: &SpeedMap) -> Legs {
    let stride = elements.len();
    let uniform = local.is_uniform().then(|| local.values[[0, 0]]);
    let sampler = local.sampler();
    let step = local.ray_step();
    let per_point: Vec<(Vec<f64>, Vec<f64>)> = points
        .par_iter()
        .map(|p| {
            elements
                .iter()
                .map(|&e| {
                    let d = p.position.distance(e);
                    let c = uniform.unwrap_or_else(|| sampler.harmonic(p.position, e, step));
                    (d / c, 1.0 / d.max(1e-9))
                })
                .unzip()
        })
        .collect();
    let mut time = Vec::with_capacity(points.len() * stride);
    let mut inv_dist = Vec::with_capacity(points.len() * stride);
    for (t, d) in per_point {
        time.extend(t);
        inv_dist.extend(d);
    }
    Legs {
        time,
        inv_dist,
        stride,
    }
}

/// Simulate real RF channel data for a focused transmit sequence.
///
/// Every (event, receive channel, transmit element, scatterer) combination
/// deposits one pulse, delayed by the applied transmit delay plus the two
/// straight-ray legs and scaled by reflectivity and `1 / (r_tx · r_rx)`.
pub fn simulate(
    scene: &ScattererScene,
    local: &SpeedMap,
    probe: &ProbeAndSequence,
    pulse: &PulseSpec,
    record: &RecordWindow,
) -> Result<SimulationOutput> {
    probe.validate()?;
    pulse.validate()?;
    scene.validate()?;
    if record.num_samples == 0 || !(record.start_time >= 0.0) {
        return Err(Error::invalid("record needs samples and a non-negative start time"));
    }
    let points = scene.realize();
    let fs = pulse.sampling_frequency;
    let t_len = record.num_samples;
    let k_count = probe.num_events();
    let m_count = probe.num_rx();

    let tx_legs = legs(&points, &probe.tx_elements, local);
    let rx_legs = legs(&points, &probe.rx_elements, local);

    // Pulse tabulated on a fine grid spanning [-H, H].
    let half = pulse.half_support();
    let os = PULSE_OVERSAMPLING;
    let table_len = (2.0 * half * fs * os as f64).ceil() as usize + 2;
    let table: Vec<f64> = (0..table_len)
        .map(|q| pulse.waveform(q as f64 / (fs * os as f64) - half))
        .collect();

    // Transmit delays per event and active element.
    let delays: Vec<Vec<(usize, f64)>> = (0..k_count)
        .map(|k| {
            probe.events[k]
                .active
                .iter()
                .enumerate()
                .map(|(n, &j)| (j, probe.transmit_delay(k, n).unwrap()))
                .collect()
        })
        .collect();

    let mut samples = vec![0f32; k_count * m_count * t_len];
    let truncated: usize = samples
        .par_chunks_mut(t_len)
        .enumerate()
        .map(|(trace, out)| {
            let (k, m) = (trace / m_count, trace % m_count);
            let mut acc = vec![0f64; t_len];
            let mut truncated = 0usize;
            for (p, pt) in points.iter().enumerate() {
                if pt.amplitude == 0.0 {
                    continue;
                }
                let rx_t = rx_legs.time[p * rx_legs.stride + m];
                let rx_a = pt.amplitude * rx_legs.inv_dist[p * rx_legs.stride + m];
                for &(j, delay) in &delays[k] {
                    let leg = p * tx_legs.stride + j;
                    let t = delay + tx_legs.time[leg] + rx_t - record.start_time;
                    let amp = rx_a * tx_legs.inv_dist[leg];
                    truncated += deposit(&mut acc, &table, os, fs, half, t, amp) as usize;
                }
            }
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
            truncated
        })
        .sum();
    if truncated > 0 {
        log::warn!("{truncated} echoes extended past the record window and were truncated");
    }
    let rf = RfData::new(
        probe.clone(),
        fs,
        vec![record.start_time; k_count],
        t_len,
        samples,
    )?;
    Ok(SimulationOutput {
        rf,
        truncated_echoes: truncated,
    })
}

/// Add `amp · pulse(t_i - t)` to `acc`; returns whether the pulse support was
/// cut by the record bounds.
#[inline]
fn deposit(acc: &mut [f64], table: &[f64], os: usize, fs: f64, half: f64, t: f64, amp: f64) -> bool {
    let len = acc.len() as isize;
    let lead = (t - half) * fs;
    let first = lead.ceil() as isize;
    let last = ((t + half) * fs).floor() as isize;
    let cut = first < 0 || last >= len;
    let lo = first.max(0);
    let hi = last.min(len - 1);
    if lo > hi {
        return cut;
    }
    // Table position of sample i is (i - lead) · os; its fractional part is
    // the same for every sample of this echo.
    let pos0 = (lo as f64 - lead) * os as f64;
    let base = pos0.floor();
    let frac = pos0 - base;
    let mut q = base as usize;
    for a in &mut acc[lo as usize..=hi as usize] {
        if q + 1 >= table.len() {
            break;
        }
        *a += amp * (table[q] + frac * (table[q + 1] - table[q]));
        q += os;
    }
    cut
}

/// Shape of a region carrying its own speed in a [`MediumDescription`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Horizontal slab `z_min ≤ z < z_max` (open below when `z_max` is absent).
    Layer {
        z_min: f64,
        #[serde(default)]
        z_max: Option<f64>,
    },
    Circle { center: [f64; 2], radius: f64 },
    Rectangle { x: [f64; 2], z: [f64; 2] },
}

impl Region {
    fn contains(&self, x: f64, z: f64) -> bool {
        match self {
            Region::Layer { z_min, z_max } => z >= *z_min && z_max.is_none_or(|m| z < m),
            Region::Circle { center, radius } => {
                let (dx, dz) = (x - center[0], z - center[1]);
                dx * dx + dz * dz <= radius * radius
            }
            Region::Rectangle { x: xr, z: zr } => x >= xr[0] && x < xr[1] && z >= zr[0] && z < zr[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpeed {
    #[serde(flatten)]
    pub region: Region,
    pub speed: f64,
}

/// JSON description of a local speed map: a background speed overridden, in
/// order, by layers and inclusions. Lengths in meters, speeds in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumDescription {
    /// Lateral extent `[x_min, x_max]` [m].
    pub x: [f64; 2],
    /// Depth extent `[z_min, z_max]` [m].
    pub z: [f64; 2],
    /// Cell size [m].
    pub spacing: f64,
    pub background: f64,
    #[serde(default)]
    pub regions: Vec<RegionSpeed>,
}

impl MediumDescription {
    pub fn homogeneous(x: [f64; 2], z: [f64; 2], spacing: f64, speed: f64) -> Self {
        MediumDescription {
            x,
            z,
            spacing,
            background: speed,
            regions: Vec::new(),
        }
    }

    /// Sample onto a linear lattice with cell centres at half-cell offsets, so
    /// region boundaries on multiples of `spacing` fall between cells.
    pub fn rasterize(&self) -> Result<SpeedMap> {
        if !(self.spacing > 0.0) || !(self.x[1] > self.x[0]) || !(self.z[1] > self.z[0]) {
            return Err(Error::invalid("medium needs a positive spacing and non-empty extents"));
        }
        let nx = ((self.x[1] - self.x[0]) / self.spacing).round().max(1.0) as usize;
        let nz = ((self.z[1] - self.z[0]) / self.spacing).round().max(1.0) as usize;
        let h = self.spacing;
        let xs = linspace(self.x[0] + h / 2.0, self.x[0] + h / 2.0 + h * (nx - 1) as f64, nx);
        let zs = linspace(self.z[0] + h / 2.0, self.z[0] + h / 2.0 + h * (nz - 1) as f64, nz);
        let values = Array2::from_shape_fn((nz, nx), |(i, j)| {
            self.regions
                .iter()
                .rev()
                .find(|r| r.region.contains(xs[j], zs[i]))
                .map_or(self.background, |r| r.speed)
        });
        let grid = ScanGrid::new(GridKind::Linear, Vec3::ZERO, xs, zs)?;
        SpeedMap::new(grid, values)
    }
}
