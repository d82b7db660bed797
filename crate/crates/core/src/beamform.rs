//! Channel data, analytic-signal conversion, per-channel beamsums, the
//! coherence factor, and delay-and-sum with per-pixel average speeds.
//!
//! Every output pixel is computed independently. Within a pixel, samples are
//! accumulated sequentially over (event, transmit element) for each receive
//! channel, and channels are combined in index order, so results do not
//! depend on how pixels are scheduled across threads.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::{Complex, Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CompensatedGrid, ProbeAndSequence, ScanGrid, Vec3};
use crate::wavemodel::SpeedMap;

fn check_layout(
    probe: &ProbeAndSequence,
    sampling_frequency: f64,
    start_times: &[f64],
    num_samples: usize,
    len: usize,
) -> Result<()> {
    probe.validate()?;
    if !(sampling_frequency > 0.0 && sampling_frequency.is_finite()) {
        return Err(Error::invalid("sampling frequency must be positive"));
    }
    if start_times.len() != probe.num_events() {
        return Err(Error::shape(format!(
            "{} start times for {} events",
            start_times.len(),
            probe.num_events()
        )));
    }
    if start_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid("start times must be finite and non-negative"));
    }
    let expected = probe.num_events() * probe.num_rx() * num_samples;
    if len != expected {
        return Err(Error::shape(format!(
            "{len} samples, expected {expected} ({} events x {} channels x {num_samples})",
            probe.num_events(),
            probe.num_rx()
        )));
    }
    Ok(())
}

/// Real RF channel data, stored event-major, then channel, then time.
#[derive(Debug, Clone, PartialEq)]
pub struct RfData {
    pub probe: ProbeAndSequence,
    pub sampling_frequency: f64,
    /// Time of the first sample of each event [s].
    pub start_times: Vec<f64>,
    pub num_samples: usize,
    pub samples: Vec<f32>,
}

impl RfData {
    pub fn new(
        probe: ProbeAndSequence,
        sampling_frequency: f64,
        start_times: Vec<f64>,
        num_samples: usize,
        samples: Vec<f32>,
    ) -> Result<Self> {
        check_layout(&probe, sampling_frequency, &start_times, num_samples, samples.len())?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("channel samples must be finite"));
        }
        Ok(RfData {
            probe,
            sampling_frequency,
            start_times,
            num_samples,
            samples,
        })
    }

    pub fn trace(&self, k: usize, m: usize) -> &[f32] {
        let t = self.num_samples;
        let start = (k * self.probe.num_rx() + m) * t;
        &self.samples[start..start + t]
    }
}

/// Complex analytic channel data `s(k, m, t)`, same layout as [`RfData`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub probe: ProbeAndSequence,
    pub sampling_frequency: f64,
    pub start_times: Vec<f64>,
    pub num_samples: usize,
    pub samples: Vec<Complex32>,
}

impl ChannelData {
    pub fn new(
        probe: ProbeAndSequence,
        sampling_frequency: f64,
        start_times: Vec<f64>,
        num_samples: usize,
        samples: Vec<Complex32>,
    ) -> Result<Self> {
        check_layout(&probe, sampling_frequency, &start_times, num_samples, samples.len())?;
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::invalid("channel samples must be finite"));
        }
        Ok(ChannelData {
            probe,
            sampling_frequency,
            start_times,
            num_samples,
            samples,
        })
    }

    pub fn trace(&self, k: usize, m: usize) -> &[Complex32] {
        let t = self.num_samples;
        let start = (k * self.probe.num_rx() + m) * t;
        &self.samples[start..start + t]
    }

    /// `alpha · self + beta · other`, sample by sample.
    pub fn combine(&self, alpha: f32, other: &ChannelData, beta: f32) -> Result<ChannelData> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::shape("channel data sizes differ"));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * alpha + b * beta)
            .collect();
        Ok(ChannelData {
            samples,
            ..self.clone()
        })
    }
}

/// Analytic signal of every trace by one-sided spectrum doubling.
pub fn analytic_signal(rf: &RfData) -> Result<ChannelData> {
    let n = rf.num_samples;
    if n < 8 {
        return Err(Error::invalid(format!(
            "time axis of {n} samples is too short for an analytic signal (need 8)"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    // bins 1..ceil(n/2) doubled, DC and (for even n) Nyquist kept, rest zeroed
    let positive_end = n.div_ceil(2);
    let scale = 1.0 / n as f64;
    let mut samples = vec![Complex32::default(); rf.samples.len()];
    samples
        .par_chunks_mut(n)
        .zip(rf.samples.par_chunks(n))
        .for_each_init(
            || vec![Complex64::default(); n],
            |buf, (out, input)| {
                for (b, &x) in buf.iter_mut().zip(input) {
                    *b = Complex64::new(x as f64, 0.0);
                }
                forward.process(buf);
                for b in &mut buf[1..positive_end] {
                    *b *= 2.0;
                }
                let negative_start = n / 2 + 1;
                for b in &mut buf[negative_start..] {
                    *b = Complex64::default();
                }
                inverse.process(buf);
                for (o, b) in out.iter_mut().zip(buf.iter()) {
                    *o = Complex32::new((b.re * scale) as f32, (b.im * scale) as f32);
                }
            },
        );
    ChannelData::new(
        rf.probe.clone(),
        rf.sampling_frequency,
        rf.start_times.clone(),
        n,
        samples,
    )
}

/// Per-contribution weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Apodization {
    /// Unit weight for every (rx, event, tx) contribution.
    Uniform,
    /// Receive aperture growing with depth at a fixed f-number; uniform
    /// transmit weights.
    ExpandingAperture { f_number: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamformConfig {
    pub apodization: Apodization,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Remap pixel positions with the beamforming speed so structures stay
    /// where they appear at the transmit speed.
    #[serde(default = "enabled")]
    pub grid_compensation: bool,
}

fn enabled() -> bool {
    true
}

impl Default for BeamformConfig {
    fn default() -> Self {
        BeamformConfig {
            apodization: Apodization::ExpandingAperture { f_number: 1.5 },
            interpolation: Interpolation::Linear,
            grid_compensation: true,
        }
    }
}

impl BeamformConfig {
    pub fn uniform() -> Self {
        BeamformConfig {
            apodization: Apodization::Uniform,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Apodization::ExpandingAperture { f_number } = self.apodization {
            if !(f_number > 0.0 && f_number.is_finite()) {
                return Err(Error::invalid(format!("f-number must be positive, got {f_number}")));
            }
        }
        Ok(())
    }
}

/// Beamforming speed: one value for every pixel or a per-pixel map.
#[derive(Debug, Clone, Copy)]
pub enum Speed<'a> {
    Constant(f64),
    Map(&'a SpeedMap),
}

/// Complex beamformed image on a scan grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub grid: ScanGrid,
    pub values: Array2<Complex64>,
}

impl ComplexImage {
    pub fn envelope(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }
}

/// Per-receive-channel beamsums, shape `(rows, cols, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamsumStack {
    pub grid: ScanGrid,
    pub values: Array3<Complex32>,
}

/// Coherence images for a list of candidate speeds, shape
/// `(candidates, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceVolume {
    pub speeds: Vec<f64>,
    pub images: Array3<f64>,
}

impl CoherenceVolume {
    pub fn new(speeds: Vec<f64>, images: Array3<f64>) -> Result<Self> {
        if speeds.is_empty() || speeds.len() != images.dim().0 {
            return Err(Error::shape(format!(
                "{} speeds for {} coherence images",
                speeds.len(),
                images.dim().0
            )));
        }
        if speeds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("candidate speeds must be strictly increasing"));
        }
        Ok(CoherenceVolume { speeds, images })
    }
}

/// `|Σ v| / Σ |v|`, or 0 when every value is zero.
pub fn coherence_of<T>(values: &[Complex<T>]) -> f64
where
    T: Copy + Into<f64>,
{
    let mut coherent = Complex64::default();
    let mut incoherent = 0.0;
    for v in values {
        let v = Complex64::new(v.re.into(), v.im.into());
        coherent += v;
        incoherent += v.norm();
    }
    if incoherent > 0.0 {
        (coherent.norm() / incoherent).min(1.0)
    } else {
        0.0
    }
}

/// Coherence factor of a beamsum stack, per pixel.
pub fn coherence_factor(stack: &BeamsumStack) -> Array2<f64> {
    let (rows, cols, _) = stack.values.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let lane = stack.values.slice(ndarray::s![i, j, ..]);
        match lane.as_slice() {
            Some(s) => coherence_of(s),
            None => coherence_of(&lane.to_vec()),
        }
    })
}

/// One transmit element firing in one event.
struct Tap {
    position: Vec3,
    /// Applied transmit delay minus the event's record start [s].
    offset: f64,
}

/// Precomputed sequence geometry shared by all pixels.
struct Kernel<'a> {
    data: &'a ChannelData,
    /// Taps grouped per event.
    events: Vec<Vec<Tap>>,
    apodization: Apodization,
}

/// A pixel to beamform within one column.
struct PixelJob {
    row: usize,
    position: Vec3,
    speed: f64,
}

/// Per-column buffers, laid out channel-major over the column's pixels.
#[derive(Default)]
struct ColumnScratch {
    jobs: Vec<PixelJob>,
    active: Vec<bool>,
    /// One-way receive time in samples.
    delay: Vec<f64>,
    /// Transmit-side sample position per tap of the current event.
    base: Vec<f64>,
    acc: Vec<Complex32>,
    /// Range of pixels with this channel active.
    span: Vec<(usize, usize)>,
    lane_channels: Vec<usize>,
    lane_values: Vec<Complex32>,
}

impl<'a> Kernel<'a> {
    fn new(data: &'a ChannelData, cfg: &BeamformConfig) -> Result<Self> {
        cfg.validate()?;
        let probe = &data.probe;
        let mut events = Vec::with_capacity(probe.num_events());
        for (k, ev) in probe.events.iter().enumerate() {
            let mut taps = Vec::with_capacity(ev.active.len());
            for n in 0..ev.active.len() {
                taps.push(Tap {
                    position: probe.tx_position(k, n)?,
                    offset: probe.transmit_delay(k, n)? - data.start_times[k],
                });
            }
            events.push(taps);
        }
        Ok(Kernel {
            data,
            events,
            apodization: cfg.apodization,
        })
    }

    // Both schemes weight contributions by 0 or 1.
    fn is_active(&self, r: Vec3, e: Vec3) -> bool {
        match self.apodization {
            Apodization::Uniform => true,
            Apodization::ExpandingAperture { f_number } => (r.x - e.x).abs() <= (r.z - e.z) / (2.0 * f_number),
        }
    }

    /// Evaluate `reduce` on the per-channel beamsums of every pixel. `reduce`
    /// receives the active channel indices and their sums, in channel order.
    ///
    /// `pixel(i, j)` yields the physical position and speed for a pixel, or
    /// `None` for pixels excluded from beamforming.
    fn map_pixels<T, P, R>(&self, rows: usize, cols: usize, pixel: P, reduce: R) -> Array2<T>
    where
        T: Send + Clone + Default,
        P: Fn(usize, usize) -> Option<(Vec3, f64)> + Sync,
        R: Fn(&[usize], &[Complex32]) -> T + Sync,
    {
        let columns: Vec<Vec<T>> = (0..cols)
            .into_par_iter()
            .map_init(ColumnScratch::default, |scratch, j| {
                self.column(rows, j, &pixel, &reduce, scratch)
            })
            .collect();
        Array2::from_shape_fn((rows, cols), |(i, j)| columns[j][i].clone())
    }

    /// One image column. Loops run event, channel, transmit element, pixel so
    /// a single trace is read at a time; each channel still accumulates its
    /// contributions in (event, transmit element) order.
    fn column<T, P, R>(&self, rows: usize, j: usize, pixel: &P, reduce: &R, s: &mut ColumnScratch) -> Vec<T>
    where
        T: Clone + Default,
        P: Fn(usize, usize) -> Option<(Vec3, f64)>,
        R: Fn(&[usize], &[Complex32]) -> T,
    {
        let fs = self.data.sampling_frequency;
        let t_len = self.data.num_samples;
        let m_count = self.data.probe.num_rx();

        s.jobs.clear();
        s.jobs.extend((0..rows).filter_map(|i| {
            pixel(i, j).map(|(position, speed)| PixelJob { row: i, position, speed })
        }));
        let p_count = s.jobs.len();
        s.active.clear();
        s.delay.clear();
        s.span.clear();
        for &e in &self.data.probe.rx_elements {
            let (mut lo, mut hi) = (p_count, 0);
            for (p, job) in s.jobs.iter().enumerate() {
                let on = self.is_active(job.position, e);
                if on {
                    lo = lo.min(p);
                    hi = p + 1;
                }
                s.active.push(on);
                s.delay.push(job.position.distance(e) / job.speed * fs);
            }
            s.span.push((lo, hi.max(lo)));
        }
        s.acc.clear();
        s.acc.resize(m_count * p_count, Complex32::default());

        let last = t_len as f64 - 1.0;
        let event_len = m_count * t_len;
        for (k, taps) in self.events.iter().enumerate() {
            s.base.clear();
            for tap in taps {
                s.base.extend(
                    s.jobs
                        .iter()
                        .map(|job| (tap.offset + job.position.distance(tap.position) / job.speed) * fs),
                );
            }
            let event = &self.data.samples[k * event_len..(k + 1) * event_len];
            for m in 0..m_count {
                let (lo, hi) = s.span[m];
                if lo >= hi {
                    continue;
                }
                let trace = &event[m * t_len..(m + 1) * t_len];
                let row = m * p_count;
                let acc = &mut s.acc[row + lo..row + hi];
                let active = &s.active[row + lo..row + hi];
                let delay = &s.delay[row + lo..row + hi];
                for n in 0..taps.len() {
                    let base = &s.base[n * p_count + lo..n * p_count + hi];
                    for p in 0..acc.len() {
                        if !active[p] {
                            continue;
                        }
                        let f = base[p] + delay[p];
                        if f >= 0.0 && f < last {
                            let i0 = f as usize;
                            let frac = (f - i0 as f64) as f32;
                            let (s0, s1) = (trace[i0], trace[i0 + 1]);
                            acc[p] += s0 + (s1 - s0) * frac;
                        } else if f == last {
                            acc[p] += trace[t_len - 1];
                        }
                    }
                }
            }
        }

        let mut out = vec![reduce(&[], &[]); rows];
        for (p, job) in s.jobs.iter().enumerate() {
            s.lane_channels.clear();
            s.lane_values.clear();
            for m in 0..m_count {
                if s.active[m * p_count + p] {
                    s.lane_channels.push(m);
                    s.lane_values.push(s.acc[m * p_count + p]);
                }
            }
            out[job.row] = reduce(&s.lane_channels, &s.lane_values);
        }
        out
    }
}

fn check_speed(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("beamforming speed must be positive, got {c}")))
    }
}

/// Per-pixel (position, speed) for beamforming `grid` at `speed`.
fn pixel_geometry(
    grid: &ScanGrid,
    speed: Speed<'_>,
    c0: f64,
    cfg: &BeamformConfig,
) -> Result<(CompensatedGrid, Option<Arc<Array2<f64>>>, f64)> {
    match speed {
        Speed::Constant(c) => {
            check_speed(c)?;
            let cg = if cfg.grid_compensation {
                CompensatedGrid::uniform(grid, c, c0)?
            } else {
                CompensatedGrid::identity(grid)
            };
            Ok((cg, None, c))
        }
        Speed::Map(map) => {
            if map.grid.shape() != grid.shape() {
                return Err(Error::shape(format!(
                    "speed map is {:?}, grid is {:?}",
                    map.grid.shape(),
                    grid.shape()
                )));
            }
            let cg = if cfg.grid_compensation {
                crate::geometry::compensate_grid(grid, map, c0)?
            } else {
                CompensatedGrid::identity(grid)
            };
            Ok((cg, Some(Arc::new(map.values.clone())), f64::NAN))
        }
    }
}

fn beamform_with<T, R>(
    data: &ChannelData,
    grid: &ScanGrid,
    speed: Speed<'_>,
    cfg: &BeamformConfig,
    reduce: R,
) -> Result<Array2<T>>
where
    T: Send + Clone + Default,
    R: Fn(&[usize], &[Complex32]) -> T + Sync,
{
    let kernel = Kernel::new(data, cfg)?;
    let (cg, map, c) = pixel_geometry(grid, speed, data.probe.c0, cfg)?;
    let (rows, cols) = grid.shape();
    Ok(kernel.map_pixels(
        rows,
        cols,
        |i, j| {
            let idx = i * cols + j;
            if cg.clamped[idx] {
                return None;
            }
            let speed = map.as_ref().map_or(c, |m| m[[i, j]]);
            Some((cg.positions[idx], speed))
        },
        reduce,
    ))
}

/// Per-receive-channel beamsums of `data` on `grid`.
pub fn beamsum(
    data: &ChannelData,
    grid: &ScanGrid,
    speed: Speed<'_>,
    cfg: &BeamformConfig,
) -> Result<BeamsumStack> {
    let m_count = data.probe.num_rx();
    let lanes = beamform_with(data, grid, speed, cfg, |rx, acc| {
        let mut lane = vec![Complex32::default(); m_count];
        for (&m, a) in rx.iter().zip(acc) {
            lane[m] = *a;
        }
        lane
    })?;
    let (rows, cols) = grid.shape();
    let values = Array3::from_shape_fn((rows, cols, m_count), |(i, j, m)| lanes[[i, j]][m]);
    Ok(BeamsumStack {
        grid: grid.clone(),
        values,
    })
}

fn channel_sum(acc: &[Complex32]) -> Complex64 {
    acc.iter()
        .fold(Complex64::default(), |s, a| s + Complex64::new(a.re as f64, a.im as f64))
}

/// Delay-and-sum image with a per-pixel average-speed map.
pub fn das(
    data: &ChannelData,
    grid: &ScanGrid,
    c_map: &SpeedMap,
    cfg: &BeamformConfig,
) -> Result<ComplexImage> {
    let values = beamform_with(data, grid, Speed::Map(c_map), cfg, |_, acc| channel_sum(acc))?;
    Ok(ComplexImage {
        grid: grid.clone(),
        values,
    })
}

/// Delay-and-sum image at one constant speed.
pub fn das_constant(
    data: &ChannelData,
    grid: &ScanGrid,
    c: f64,
    cfg: &BeamformConfig,
) -> Result<ComplexImage> {
    let values = beamform_with(data, grid, Speed::Constant(c), cfg, |_, acc| channel_sum(acc))?;
    Ok(ComplexImage {
        grid: grid.clone(),
        values,
    })
}

/// Coherence image at a single constant speed, without materialising the
/// per-channel stack.
pub fn coherence_image(
    data: &ChannelData,
    grid: &ScanGrid,
    c: f64,
    cfg: &BeamformConfig,
) -> Result<Array2<f64>> {
    beamform_with(data, grid, Speed::Constant(c), cfg, |_, acc| coherence_of(acc))
}

/// One coherence image per candidate speed, each on its own compensated grid.
pub fn sweep_coherence(
    data: &ChannelData,
    grid: &ScanGrid,
    speeds: &[f64],
    cfg: &BeamformConfig,
) -> Result<CoherenceVolume> {
    if speeds.is_empty() {
        return Err(Error::invalid("no candidate speeds"));
    }
    if speeds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("candidate speeds must be strictly increasing"));
    }
    let (rows, cols) = grid.shape();
    let mut images = Array3::zeros((speeds.len(), rows, cols));
    for (s, &c) in speeds.iter().enumerate() {
        let img = coherence_image(data, grid, c, cfg)?;
        images.index_axis_mut(ndarray::Axis(0), s).assign(&img);
    }
    CoherenceVolume::new(speeds.to_vec(), images)
}
