//! Coordinate conventions, probe and transmit-sequence description, scan grids,
//! two-way time of flight, and speed-dependent pixel-grid compensation.
//!
//! Positions are 3D and in meters. `x` is the lateral (array) axis, `y` the
//! elevation axis and `z` the depth axis pointing into the medium. Times are
//! in seconds and speeds in m/s.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavemodel::SpeedMap;

/// A point or displacement in 3D space [m].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// One transmit event: the applied focusing delays are those of a spherical
/// wave converging on `virtual_source`, referenced to `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitEvent {
    pub origin: Vec3,
    pub virtual_source: Vec3,
    /// Indices into [`ProbeAndSequence::tx_elements`] that fire in this event.
    pub active: Vec<usize>,
}

/// Element positions, transmit sequence and the sound speed assumed when the
/// transmit delays were applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAndSequence {
    pub tx_elements: Vec<Vec3>,
    pub rx_elements: Vec<Vec3>,
    pub events: Vec<TransmitEvent>,
    /// Assumed transmit sound speed c0 [m/s].
    pub c0: f64,
}

/// Uniform linear array centred on the origin along `x`.
pub fn linear_array(num_elements: usize, pitch: f64) -> Vec<Vec3> {
    let offset = (num_elements as f64 - 1.0) / 2.0;
    (0..num_elements)
        .map(|i| Vec3::new((i as f64 - offset) * pitch, 0.0, 0.0))
        .collect()
}

impl ProbeAndSequence {
    /// Focused walking-aperture sequence on a linear array: each event fires
    /// `active` adjacent elements focused at `focus_depth` below the centre of
    /// the sub-aperture. The same elements are used for receive.
    pub fn walking_aperture(
        elements: Vec<Vec3>,
        active: usize,
        num_events: usize,
        focus_depth: f64,
        c0: f64,
    ) -> Result<Self> {
        let m = elements.len();
        if active == 0 || active > m {
            return Err(Error::invalid(format!(
                "active sub-aperture of {active} elements does not fit a {m}-element array"
            )));
        }
        if num_events == 0 {
            return Err(Error::invalid("at least one transmit event is required"));
        }
        let span = (m - active) as f64;
        let events = (0..num_events)
            .map(|k| {
                let start = if num_events == 1 {
                    (span / 2.0).round() as usize
                } else {
                    (k as f64 * span / (num_events - 1) as f64).round() as usize
                };
                let idx: Vec<usize> = (start..start + active).collect();
                let origin = idx
                    .iter()
                    .fold(Vec3::ZERO, |acc, &i| acc + elements[i])
                    * (1.0 / active as f64);
                TransmitEvent {
                    origin,
                    virtual_source: origin + Vec3::new(0.0, 0.0, focus_depth),
                    active: idx,
                }
            })
            .collect();
        let probe = ProbeAndSequence {
            tx_elements: elements.clone(),
            rx_elements: elements,
            events,
            c0,
        };
        probe.validate()?;
        Ok(probe)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::domain(format!("c0 must be positive, got {}", self.c0)));
        }
        if self.rx_elements.is_empty() || self.tx_elements.is_empty() || self.events.is_empty() {
            return Err(Error::invalid(
                "probe needs at least one tx element, one rx element and one event",
            ));
        }
        let finite = self
            .tx_elements
            .iter()
            .chain(&self.rx_elements)
            .all(|p| p.is_finite());
        if !finite {
            return Err(Error::invalid("element positions must be finite"));
        }
        for (k, ev) in self.events.iter().enumerate() {
            if ev.active.is_empty() {
                return Err(Error::invalid(format!("event {k} has no active elements")));
            }
            if !ev.origin.is_finite() || !ev.virtual_source.is_finite() {
                return Err(Error::invalid(format!("event {k} has non-finite geometry")));
            }
            if let Some(&bad) = ev.active.iter().find(|&&i| i >= self.tx_elements.len()) {
                return Err(Error::Index {
                    what: "tx_elements",
                    index: bad,
                    len: self.tx_elements.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn num_rx(&self) -> usize {
        self.rx_elements.len()
    }

    /// Number of active transmit elements in event `k`.
    pub fn num_tx(&self, k: usize) -> usize {
        self.events.get(k).map_or(0, |e| e.active.len())
    }

    fn event(&self, k: usize) -> Result<&TransmitEvent> {
        self.events.get(k).ok_or(Error::Index {
            what: "events",
            index: k,
            len: self.events.len(),
        })
    }

    /// Position of the `n`-th active transmit element of event `k`.
    pub fn tx_position(&self, k: usize, n: usize) -> Result<Vec3> {
        let ev = self.event(k)?;
        let &idx = ev.active.get(n).ok_or(Error::Index {
            what: "active tx elements",
            index: n,
            len: ev.active.len(),
        })?;
        Ok(self.tx_elements[idx])
    }

    pub fn rx_position(&self, m: usize) -> Result<Vec3> {
        self.rx_elements.get(m).copied().ok_or(Error::Index {
            what: "rx_elements",
            index: m,
            len: self.rx_elements.len(),
        })
    }

    /// Firing time of the `n`-th element of event `k` relative to the
    /// reference wave leaving the transmit origin, computed with `c0`.
    pub fn transmit_delay(&self, k: usize, n: usize) -> Result<f64> {
        let ev = self.event(k)?;
        let e = self.tx_position(k, n)?;
        Ok((ev.virtual_source.distance(ev.origin) - ev.virtual_source.distance(e)) / self.c0)
    }

    /// Indices of transmit elements used by at least one event, ascending.
    pub fn tx_union(&self) -> Vec<usize> {
        let mut used = vec![false; self.tx_elements.len()];
        for ev in &self.events {
            for &i in &ev.active {
                used[i] = true;
            }
        }
        used.iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i))
            .collect()
    }
}

/// Two-way time of flight from transmit element `n` of event `k`, via the
/// point `r`, to receive element `m`.
///
/// The applied transmit delay is undone with `probe.c0`; the two propagation
/// legs use `c_r`.
pub fn two_way_tof(
    r: Vec3,
    m: usize,
    k: usize,
    n: usize,
    c_r: f64,
    probe: &ProbeAndSequence,
) -> Result<f64> {
    if !(c_r > 0.0 && c_r.is_finite()) {
        return Err(Error::domain(format!("speed must be positive, got {c_r}")));
    }
    let delay = probe.transmit_delay(k, n)?;
    let e_tx = probe.tx_position(k, n)?;
    let e_rx = probe.rx_position(m)?;
    Ok(delay + r.distance(e_tx) / c_r + r.distance(e_rx) / c_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Lateral axis holds steering angles [rad] about the beam origin.
    Sector,
    /// Lateral axis holds offsets [m] along `x`; each column has its own
    /// beam origin directly above it.
    Linear,
}

/// Pixel lattice on (depth, lateral) axes. Images on a grid are stored
/// depth-major: row `i` is `depths[i]`, column `j` is `lateral[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub kind: GridKind,
    pub beam_origin: Vec3,
    pub lateral: Vec<f64>,
    pub depths: Vec<f64>,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} axis has non-finite values")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n).map(|i| start + step * i as f64).collect()
        }
    }
}

impl ScanGrid {
    pub fn new(kind: GridKind, beam_origin: Vec3, lateral: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        let grid = ScanGrid {
            kind,
            beam_origin,
            lateral,
            depths,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn linear(lateral: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        Self::new(GridKind::Linear, Vec3::ZERO, lateral, depths)
    }

    pub fn sector(beam_origin: Vec3, angles: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        Self::new(GridKind::Sector, beam_origin, angles, depths)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("lateral", &self.lateral)?;
        check_axis("depth", &self.depths)?;
        if self.depths[0] < 0.0 {
            return Err(Error::invalid("depths must be non-negative"));
        }
        if !self.beam_origin.is_finite() {
            return Err(Error::invalid("beam origin must be finite"));
        }
        if self.kind == GridKind::Sector
            && self.lateral.iter().any(|a| a.abs() >= std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::invalid("sector angles must lie inside (-90°, 90°)"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.depths.len()
    }

    pub fn cols(&self) -> usize {
        self.lateral.len()
    }

    /// `(rows, cols)` = `(depths, lateral)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean spacing of the depth axis [m]; infinite for a single row.
    pub fn depth_spacing(&self) -> f64 {
        mean_spacing(&self.depths)
    }

    /// Mean spacing of the lateral axis [m or rad]; infinite for a single column.
    pub fn lateral_spacing(&self) -> f64 {
        mean_spacing(&self.lateral)
    }

    pub fn pixel_position(&self, i: usize, j: usize) -> Vec3 {
        self.compensated_position(i, j, 1.0).0
    }

    /// Physical position of pixel `(i, j)` when beamforming at `ratio = c/c0`.
    ///
    /// Depth from the beam origin scales with the ratio; sector angles follow
    /// `sin θ = ratio · sin θ0`. Returns `true` in the second slot when the
    /// sine had to be clamped to ±1.
    pub fn compensated_position(&self, i: usize, j: usize, ratio: f64) -> (Vec3, bool) {
        let depth = self.depths[i] * ratio;
        match self.kind {
            GridKind::Linear => (
                self.beam_origin + Vec3::new(self.lateral[j], 0.0, depth),
                false,
            ),
            GridKind::Sector => {
                let s = ratio * self.lateral[j].sin();
                let clamped = s.abs() > 1.0;
                let theta = s.clamp(-1.0, 1.0).asin();
                (
                    self.beam_origin + Vec3::new(depth * theta.sin(), 0.0, depth * theta.cos()),
                    clamped,
                )
            }
        }
    }

    /// Grid indices of the pixel nearest to `p`, clamped to the grid.
    pub fn nearest_index(&self, p: Vec3) -> (usize, usize) {
        let d = p - self.beam_origin;
        let (lat, depth) = match self.kind {
            GridKind::Linear => (d.x, d.z),
            GridKind::Sector => (d.x.atan2(d.z), (d.x * d.x + d.z * d.z).sqrt()),
        };
        (nearest(&self.depths, depth), nearest(&self.lateral, lat))
    }
}

fn mean_spacing(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        f64::INFINITY
    } else {
        (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
    }
}

/// Index of the value in an increasing `axis` closest to `v`.
pub(crate) fn nearest(axis: &[f64], v: f64) -> usize {
    let hi = axis.partition_point(|&a| a < v);
    if hi == 0 {
        0
    } else if hi == axis.len() {
        axis.len() - 1
    } else if v - axis[hi - 1] <= axis[hi] - v {
        hi - 1
    } else {
        hi
    }
}

/// Per-pixel physical positions of a grid after speed compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedGrid {
    pub rows: usize,
    pub cols: usize,
    /// Depth-major pixel positions.
    pub positions: Vec<Vec3>,
    /// Pixels whose angle remapping left the arcsine domain. They are excluded
    /// from speed estimation.
    pub clamped: Vec<bool>,
}

impl CompensatedGrid {
    /// Positions for beamforming at a single speed `c`.
    pub fn uniform(grid: &ScanGrid, c: f64, c0: f64) -> Result<Self> {
        check_speed(c)?;
        check_speed(c0)?;
        Ok(Self::build(grid, |_, _| c / c0))
    }

    /// The uncompensated grid.
    pub fn identity(grid: &ScanGrid) -> Self {
        Self::build(grid, |_, _| 1.0)
    }

    fn build(grid: &ScanGrid, ratio: impl Fn(usize, usize) -> f64) -> Self {
        let (rows, cols) = grid.shape();
        let mut positions = Vec::with_capacity(rows * cols);
        let mut clamped = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let (p, c) = grid.compensated_position(i, j, ratio(i, j));
                positions.push(p);
                clamped.push(c);
            }
        }
        CompensatedGrid {
            rows,
            cols,
            positions,
            clamped,
        }
    }

    pub fn position(&self, i: usize, j: usize) -> Vec3 {
        self.positions[i * self.cols + j]
    }
}

fn check_speed(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("speed must be positive, got {c}")))
    }
}

/// Remap every pixel of `grid0` to where it lies when beamforming with the
/// per-pixel speeds in `c_map`, so structures stay where they appear at `c0`.
pub fn compensate_grid(grid0: &ScanGrid, c_map: &SpeedMap, c0: f64) -> Result<CompensatedGrid> {
    check_speed(c0)?;
    if c_map.grid.shape() != grid0.shape() {
        return Err(Error::shape(format!(
            "speed map is {:?}, grid is {:?}",
            c_map.grid.shape(),
            grid0.shape()
        )));
    }
    let values = &c_map.values;
    Ok(CompensatedGrid::build(grid0, |i, j| values[[i, j]] / c0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn monostatic(c0: f64) -> ProbeAndSequence {
        ProbeAndSequence {
            tx_elements: vec![Vec3::ZERO],
            rx_elements: vec![Vec3::ZERO],
            events: vec![TransmitEvent {
                origin: Vec3::ZERO,
                virtual_source: Vec3::new(0.0, 0.0, 0.03),
                active: vec![0],
            }],
            c0,
        }
    }

    #[test]
    fn tof_monostatic_round_trip() {
        let p = monostatic(1540.0);
        let r = Vec3::new(0.0, 0.0, 0.03);
        let t = two_way_tof(r, 0, 0, 0, 1540.0, &p).unwrap();
        assert_relative_eq!(t, 2.0 * 0.03 / 1540.0, max_relative = 1e-14);
        assert_relative_eq!(t * 1e6, 38.961, epsilon = 5e-4);

        let t = two_way_tof(r, 0, 0, 0, 1480.0, &p).unwrap();
        assert_relative_eq!(t * 1e6, 40.541, epsilon = 5e-4);
    }

    #[test]
    fn tof_bistatic_hand_evaluation() {
        let p = ProbeAndSequence {
            tx_elements: vec![Vec3::new(0.01, 0.0, 0.0)],
            rx_elements: vec![Vec3::new(-0.01, 0.0, 0.0)],
            events: vec![TransmitEvent {
                origin: Vec3::ZERO,
                virtual_source: Vec3::new(0.0, 0.0, 0.03),
                active: vec![0],
            }],
            c0: 1540.0,
        };
        let r = Vec3::new(0.0, 0.0, 0.02);
        let expected = (0.03 - (0.0001f64 + 0.0009).sqrt()) / 1540.0
            + ((0.0001f64 + 0.0004).sqrt() + (0.0001f64 + 0.0004).sqrt()) / 1540.0;
        let t = two_way_tof(r, 0, 0, 0, 1540.0, &p).unwrap();
        assert_relative_eq!(t, expected, max_relative = 1e-14);
        // Independent scalar evaluation: 27.986 µs.
        assert_relative_eq!(t * 1e6, 27.98609, epsilon = 1e-5);
    }

    #[test]
    fn tof_errors() {
        let p = monostatic(1540.0);
        assert!(matches!(
            two_way_tof(Vec3::ZERO, 0, 0, 0, 0.0, &p),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            two_way_tof(Vec3::ZERO, 3, 0, 0, 1540.0, &p),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            two_way_tof(Vec3::ZERO, 0, 1, 0, 1540.0, &p),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            two_way_tof(Vec3::ZERO, 0, 0, 2, 1540.0, &p),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn tof_strictly_decreasing_in_speed() {
        let p = ProbeAndSequence::walking_aperture(linear_array(8, 4e-4), 4, 3, 0.03, 1540.0).unwrap();
        let r = Vec3::new(0.002, 0.0, 0.025);
        let mut prev = f64::INFINITY;
        for c in (1300..=1800).step_by(25) {
            let t = two_way_tof(r, 5, 1, 2, c as f64, &p).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn walking_aperture_layout() {
        let p = ProbeAndSequence::walking_aperture(linear_array(64, 4e-4), 16, 32, 0.03, 1540.0).unwrap();
        assert_eq!(p.num_events(), 32);
        assert_eq!(p.events[0].active[0], 0);
        assert_eq!(*p.events[31].active.last().unwrap(), 63);
        for ev in &p.events {
            assert_relative_eq!(ev.virtual_source.z - ev.origin.z, 0.03);
        }
        assert_eq!(p.tx_union().len(), 64);
        // Elements further from the focus fire earlier.
        assert!(p.transmit_delay(0, 0).unwrap() < p.transmit_delay(0, 7).unwrap());
    }

    #[test]
    fn compensation_examples() {
        let grid = ScanGrid::sector(
            Vec3::ZERO,
            vec![0.0, 30f64.to_radians()],
            vec![0.01, 0.03],
        )
        .unwrap();
        let ratio = 1480.0 / 1540.0;
        let (p, clamped) = grid.compensated_position(1, 0, ratio);
        assert!(!clamped);
        assert_relative_eq!(p.z * 1e3, 28.831, epsilon = 5e-4);
        let (p, _) = grid.compensated_position(1, 1, ratio);
        let theta = p.x.atan2(p.z).to_degrees();
        assert_relative_eq!(theta, 28.72, epsilon = 5e-3);
        assert_relative_eq!(p.norm(), 0.03 * ratio, max_relative = 1e-12);
    }

    #[test]
    fn compensation_clamps_outside_arcsine_domain() {
        let grid = ScanGrid::sector(Vec3::ZERO, vec![80f64.to_radians()], vec![0.02]).unwrap();
        let (p, clamped) = grid.compensated_position(0, 0, 1640.0 / 1540.0);
        assert!(clamped);
        assert_relative_eq!(p.x.atan2(p.z), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn identity_compensation() {
        let grid = ScanGrid::sector(
            Vec3::new(0.0, 0.0, -0.005),
            linspace(-0.6, 0.6, 9),
            linspace(0.0, 0.05, 11),
        )
        .unwrap();
        let cg = CompensatedGrid::uniform(&grid, 1540.0, 1540.0).unwrap();
        for i in 0..grid.rows() {
            for j in 0..grid.cols() {
                let a = grid.pixel_position(i, j);
                let b = cg.position(i, j);
                assert!(a.distance(b) < 1e-15);
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(ScanGrid::linear(vec![0.0, 0.0], vec![0.0]).is_err());
        assert!(ScanGrid::linear(vec![0.0], vec![-0.001, 0.01]).is_err());
        assert!(ScanGrid::linear(vec![], vec![0.01]).is_err());
        assert!(ScanGrid::sector(Vec3::ZERO, vec![2.0], vec![0.01]).is_err());
    }

    #[test]
    fn nearest_index_clamps() {
        let grid = ScanGrid::linear(linspace(-0.01, 0.01, 21), linspace(0.0, 0.04, 41)).unwrap();
        assert_eq!(grid.nearest_index(Vec3::new(0.0, 0.0, 0.02)), (20, 10));
        assert_eq!(grid.nearest_index(Vec3::new(1.0, 0.0, -1.0)), (0, 20));
    }
}
