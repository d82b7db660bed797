//! Single-file containers: a little-endian `u64` header length, a JSON
//! header, then a little-endian `f32` payload.
//!
//! | kind               | payload order                                  |
//! |--------------------|------------------------------------------------|
//! | `channel-data`     | event, channel, time; `(re, im)` when complex  |
//! | `speed-map`        | depth-major                                    |
//! | `real-image`       | depth-major                                    |
//! | `complex-image`    | depth-major, `(re, im)` interleaved            |
//! | `coherence-volume` | candidate, then depth-major                    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::{analytic_signal, ChannelData, CoherenceVolume, ComplexImage, RfData};
use crate::error::{Error, Result};
use crate::geometry::{ProbeAndSequence, ScanGrid};
use crate::wavemodel::SpeedMap;

pub const FORMAT_VERSION: u32 = 1;

/// Headers larger than this are rejected as corrupt.
const MAX_HEADER_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Header {
    ChannelData {
        encoding: Encoding,
        sampling_frequency: f64,
        start_times: Vec<f64>,
        num_events: usize,
        num_channels: usize,
        num_samples: usize,
        probe: ProbeAndSequence,
    },
    SpeedMap {
        grid: ScanGrid,
        unit: String,
    },
    RealImage {
        grid: ScanGrid,
        quantity: String,
    },
    ComplexImage {
        grid: ScanGrid,
    },
    CoherenceVolume {
        grid: ScanGrid,
        speeds: Vec<f64>,
    },
}

impl Header {
    fn kind(&self) -> &'static str {
        match self {
            Header::ChannelData { .. } => "channel-data",
            Header::SpeedMap { .. } => "speed-map",
            Header::RealImage { .. } => "real-image",
            Header::ComplexImage { .. } => "complex-image",
            Header::CoherenceVolume { .. } => "coherence-volume",
        }
    }

    /// Number of `f32` values in the payload.
    pub fn payload_len(&self) -> usize {
        match self {
            Header::ChannelData {
                encoding,
                num_events,
                num_channels,
                num_samples,
                ..
            } => {
                let per = if *encoding == Encoding::Complex { 2 } else { 1 };
                num_events * num_channels * num_samples * per
            }
            Header::SpeedMap { grid, .. } | Header::RealImage { grid, .. } => grid.len(),
            Header::ComplexImage { grid } => 2 * grid.len(),
            Header::CoherenceVolume { grid, speeds } => speeds.len() * grid.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    #[serde(flatten)]
    header: Header,
    /// Free-form provenance (presets, seeds, config hashes).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    metadata: serde_json::Value,
}

/// A decoded container: header, metadata and raw payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub metadata: serde_json::Value,
    pub payload: Vec<f32>,
}

impl Container {
    pub fn new(header: Header, metadata: serde_json::Value, payload: Vec<f32>) -> Result<Self> {
        if payload.len() != header.payload_len() {
            return Err(Error::Format(format!(
                "{} payload has {} values, header implies {}",
                header.kind(),
                payload.len(),
                header.payload_len()
            )));
        }
        Ok(Container {
            header,
            metadata,
            payload,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let env = Envelope {
            format_version: FORMAT_VERSION,
            header: self.header.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&env)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut bytes = Vec::with_capacity(self.payload.len() * 4);
        for v in &self.payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::Format("missing header length".into()))?;
        let len = u64::from_le_bytes(len);
        if len > MAX_HEADER_BYTES {
            return Err(Error::Format(format!("header length {len} is implausible")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)
            .map_err(|_| Error::Format("truncated header".into()))?;
        let version: serde_json::Value = serde_json::from_slice(&json)?;
        match version.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Format(format!("unsupported format version {v}"))),
            None => return Err(Error::Format("header lacks format_version".into())),
        }
        let env: Envelope = serde_json::from_value(version)?;
        let expected = env.header.payload_len();
        let mut bytes = Vec::with_capacity(expected * 4);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 4 {
            return Err(Error::Format(format!(
                "payload is {} bytes, header implies {}",
                bytes.len(),
                expected * 4
            )));
        }
        let payload = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Container {
            header: env.header,
            metadata: env.metadata,
            payload,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    fn wrong_kind(&self, expected: &str) -> Error {
        Error::Format(format!("expected a {expected} container, found {}", self.header.kind()))
    }

    /// Channel data as stored (real RF or analytic).
    pub fn into_channels(self) -> Result<Channels> {
        let Header::ChannelData {
            encoding,
            sampling_frequency,
            start_times,
            num_events,
            num_channels,
            num_samples,
            probe,
        } = self.header
        else {
            return Err(Error::Format(format!(
                "expected a channel-data container, found {}",
                self.header.kind()
            )));
        };
        if probe.num_events() != num_events || probe.num_rx() != num_channels {
            return Err(Error::Format(format!(
                "header dimensions {num_events}x{num_channels} disagree with the probe ({}x{})",
                probe.num_events(),
                probe.num_rx()
            )));
        }
        Ok(match encoding {
            Encoding::Real => Channels::Real(RfData::new(
                probe,
                sampling_frequency,
                start_times,
                num_samples,
                self.payload,
            )?),
            Encoding::Complex => Channels::Complex(ChannelData::new(
                probe,
                sampling_frequency,
                start_times,
                num_samples,
                self.payload
                    .chunks_exact(2)
                    .map(|c| Complex32::new(c[0], c[1]))
                    .collect(),
            )?),
        })
    }

    pub fn into_speed_map(self) -> Result<SpeedMap> {
        match self.header {
            Header::SpeedMap { grid, .. } => {
                let values = to_array2(&grid, &self.payload);
                SpeedMap::new(grid, values)
            }
            _ => Err(self.wrong_kind("speed-map")),
        }
    }

    pub fn into_real_image(self) -> Result<(ScanGrid, String, Array2<f64>)> {
        match self.header {
            Header::RealImage { grid, quantity } => {
                let values = to_array2(&grid, &self.payload);
                Ok((grid, quantity, values))
            }
            _ => Err(self.wrong_kind("real-image")),
        }
    }

    pub fn into_complex_image(self) -> Result<ComplexImage> {
        match self.header {
            Header::ComplexImage { grid } => {
                let (rows, cols) = grid.shape();
                let v: Vec<Complex64> = self
                    .payload
                    .chunks_exact(2)
                    .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
                    .collect();
                let values = Array2::from_shape_vec((rows, cols), v).unwrap();
                Ok(ComplexImage { grid, values })
            }
            _ => Err(self.wrong_kind("complex-image")),
        }
    }

    pub fn into_coherence_volume(self) -> Result<(ScanGrid, CoherenceVolume)> {
        match self.header {
            Header::CoherenceVolume { grid, speeds } => {
                let (rows, cols) = grid.shape();
                let v = self.payload.iter().map(|&x| x as f64).collect();
                let images = Array3::from_shape_vec((speeds.len(), rows, cols), v).unwrap();
                Ok((grid, CoherenceVolume::new(speeds, images)?))
            }
            _ => Err(self.wrong_kind("coherence-volume")),
        }
    }
}

fn to_array2(grid: &ScanGrid, payload: &[f32]) -> Array2<f64> {
    Array2::from_shape_vec(grid.shape(), payload.iter().map(|&v| v as f64).collect()).unwrap()
}

/// Channel data in either stored encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Channels {
    Real(RfData),
    Complex(ChannelData),
}

impl Channels {
    pub fn probe(&self) -> &ProbeAndSequence {
        match self {
            Channels::Real(d) => &d.probe,
            Channels::Complex(d) => &d.probe,
        }
    }

    /// Analytic channel data, converting real RF when needed.
    pub fn into_analytic(self) -> Result<ChannelData> {
        match self {
            Channels::Real(rf) => analytic_signal(&rf),
            Channels::Complex(d) => Ok(d),
        }
    }
}

pub fn rf_container(rf: &RfData, metadata: serde_json::Value) -> Result<Container> {
    Container::new(
        Header::ChannelData {
            encoding: Encoding::Real,
            sampling_frequency: rf.sampling_frequency,
            start_times: rf.start_times.clone(),
            num_events: rf.probe.num_events(),
            num_channels: rf.probe.num_rx(),
            num_samples: rf.num_samples,
            probe: rf.probe.clone(),
        },
        metadata,
        rf.samples.clone(),
    )
}

pub fn channel_container(data: &ChannelData, metadata: serde_json::Value) -> Result<Container> {
    Container::new(
        Header::ChannelData {
            encoding: Encoding::Complex,
            sampling_frequency: data.sampling_frequency,
            start_times: data.start_times.clone(),
            num_events: data.probe.num_events(),
            num_channels: data.probe.num_rx(),
            num_samples: data.num_samples,
            probe: data.probe.clone(),
        },
        metadata,
        data.samples.iter().flat_map(|c| [c.re, c.im]).collect(),
    )
}

pub fn speed_map_container(map: &SpeedMap, metadata: serde_json::Value) -> Result<Container> {
    Container::new(
        Header::SpeedMap {
            grid: map.grid.clone(),
            unit: "m/s".into(),
        },
        metadata,
        map.values.iter().map(|&v| v as f32).collect(),
    )
}

pub fn real_image_container(
    grid: &ScanGrid,
    quantity: &str,
    values: &Array2<f64>,
    metadata: serde_json::Value,
) -> Result<Container> {
    if values.dim() != grid.shape() {
        return Err(Error::shape("image does not match its grid"));
    }
    Container::new(
        Header::RealImage {
            grid: grid.clone(),
            quantity: quantity.into(),
        },
        metadata,
        values.iter().map(|&v| v as f32).collect(),
    )
}

pub fn complex_image_container(img: &ComplexImage, metadata: serde_json::Value) -> Result<Container> {
    if img.values.dim() != img.grid.shape() {
        return Err(Error::shape("image does not match its grid"));
    }
    Container::new(
        Header::ComplexImage { grid: img.grid.clone() },
        metadata,
        img.values.iter().flat_map(|c| [c.re as f32, c.im as f32]).collect(),
    )
}

pub fn coherence_volume_container(
    grid: &ScanGrid,
    vol: &CoherenceVolume,
    metadata: serde_json::Value,
) -> Result<Container> {
    let (_, rows, cols) = vol.images.dim();
    if (rows, cols) != grid.shape() {
        return Err(Error::shape("coherence volume does not match its grid"));
    }
    Container::new(
        Header::CoherenceVolume {
            grid: grid.clone(),
            speeds: vol.speeds.clone(),
        },
        metadata,
        vol.images.iter().map(|&v| v as f32).collect(),
    )
}

/// Lowercase hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex_digest(&bytes))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
