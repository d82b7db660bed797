//! Named acquisition setups: probe, transmit sequence, pulse, record window
//! and display grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{linear_array, linspace, ProbeAndSequence, ScanGrid};
use crate::wavemodel::{PulseSpec, RecordWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionPreset {
    pub name: String,
    pub probe: ProbeAndSequence,
    pub pulse: PulseSpec,
    pub record: RecordWindow,
    pub grid: ScanGrid,
}

struct Layout {
    elements: usize,
    pitch: f64,
    active: usize,
    events: usize,
    max_depth: f64,
    lateral_half_width: f64,
    lateral_step: f64,
    depth_step: f64,
}

const FOCUS_DEPTH: f64 = 30e-3;
const MIN_DEPTH: f64 = 2e-3;
/// Slowest speed the record must accommodate.
const SLOWEST: f64 = 1400.0;

fn build(name: &str, l: &Layout, c0: f64) -> Result<AcquisitionPreset> {
    let probe = ProbeAndSequence::walking_aperture(
        linear_array(l.elements, l.pitch),
        l.active,
        l.events,
        FOCUS_DEPTH,
        c0,
    )?;
    let pulse = PulseSpec {
        center_frequency: 4e6,
        num_cycles: 2.0,
        sampling_frequency: 20e6,
    };
    // Deepest pixel seen from the farthest element, plus the pulse tail.
    let aperture = l.elements as f64 * l.pitch;
    let far_leg = (l.max_depth.powi(2) + aperture.powi(2)).sqrt();
    let duration = (l.max_depth + far_leg) / SLOWEST + 2.0 * pulse.half_support();
    let record = RecordWindow {
        start_time: 0.0,
        num_samples: (duration * pulse.sampling_frequency).ceil() as usize,
    };
    let cols = (2.0 * l.lateral_half_width / l.lateral_step).round() as usize + 1;
    let rows = ((l.max_depth - MIN_DEPTH) / l.depth_step).round() as usize + 1;
    let grid = ScanGrid::linear(
        linspace(-l.lateral_half_width, l.lateral_half_width, cols),
        linspace(MIN_DEPTH, l.max_depth, rows),
    )?;
    Ok(AcquisitionPreset {
        name: name.to_string(),
        probe,
        pulse,
        record,
        grid,
    })
}

/// Names accepted by [`acquisition_preset`].
pub const ACQUISITION_PRESETS: &[&str] = &["kwave", "em6c-desk", "desk"];

/// Look up a named acquisition preset with transmit focusing at `c0`.
///
/// `kwave` is the full 128-element linear array. `em6c-desk` (alias `desk`)
/// is the reduced 64-element array used for fast end-to-end runs.
pub fn acquisition_preset(name: &str, c0: f64) -> Result<AcquisitionPreset> {
    let layout = match name {
        "kwave" => Layout {
            elements: 128,
            pitch: 400e-6,
            active: 32,
            events: 64,
            max_depth: 60e-3,
            lateral_half_width: 24e-3,
            lateral_step: 0.2e-3,
            depth_step: 0.2e-3,
        },
        "em6c-desk" | "desk" => Layout {
            elements: 64,
            pitch: 400e-6,
            active: 16,
            events: 32,
            max_depth: 42e-3,
            lateral_half_width: 12e-3,
            lateral_step: 0.2e-3,
            depth_step: 0.2e-3,
        },
        other => {
            return Err(Error::invalid(format!(
                "unknown acquisition preset '{other}' (expected one of {})",
                ACQUISITION_PRESETS.join(", ")
            )))
        }
    };
    build(if name == "desk" { "em6c-desk" } else { name }, &layout, c0)
}
