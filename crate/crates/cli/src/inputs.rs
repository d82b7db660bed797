//! Reading inputs named on the command line.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use coherospeed::container::{hex_digest, Container};
use coherospeed::geometry::ScanGrid;
use coherospeed::pipeline::{PipelineConfig, PIPELINE_PRESETS};
use coherospeed::presets::{acquisition_preset, ACQUISITION_PRESETS};
use coherospeed::wavemodel::SpeedMap;

/// A file's bytes with their SHA-256.
pub struct Loaded {
    pub bytes: Vec<u8>,
    pub sha256: String,
}

pub fn read(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let sha256 = hex_digest(&bytes);
    Ok(Loaded { bytes, sha256 })
}

/// Parses a JSON document, reporting schema violations as `path:line:column`.
pub fn json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        anyhow!("{}:{}:{}: {msg}", path.display(), e.line(), e.column())
    })
}

pub fn container(path: &Path) -> Result<(Container, String)> {
    let loaded = read(path)?;
    let c = Container::read_from(loaded.bytes.as_slice())
        .with_context(|| format!("{} is not a valid container", path.display()))?;
    Ok((c, loaded.sha256))
}

/// A named pipeline preset or a JSON config file.
pub fn pipeline_config(arg: &str) -> Result<PipelineConfig> {
    if PIPELINE_PRESETS.contains(&arg) {
        return Ok(PipelineConfig::preset(arg)?);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!(
            "config '{arg}' is neither a file nor a preset ({})",
            PIPELINE_PRESETS.join(", ")
        );
    }
    let cfg: PipelineConfig = json(path, &read(path)?.bytes)?;
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

/// Grid from `--grid` (preset name or JSON file), else from the channel
/// container's metadata.
pub fn grid(arg: Option<&str>, metadata: &Value) -> Result<ScanGrid> {
    match arg {
        Some(name) if ACQUISITION_PRESETS.contains(&name) => Ok(acquisition_preset(name, 1540.0)?.grid),
        Some(file) => {
            let path = Path::new(file);
            let g: ScanGrid = json(path, &read(path)?.bytes)?;
            g.validate()?;
            Ok(g)
        }
        None => {
            let g = metadata
                .get("grid")
                .ok_or_else(|| anyhow!("input carries no grid; pass --grid <preset|file>"))?;
            let g: ScanGrid = serde_json::from_value(g.clone()).context("malformed grid in container metadata")?;
            g.validate()?;
            Ok(g)
        }
    }
}

/// Speed map from a map container or `const:<m/s>` on `grid`.
pub fn speed_map(arg: &str, grid: impl FnOnce() -> Result<ScanGrid>) -> Result<(SpeedMap, String)> {
    if let Some(speed) = arg.strip_prefix("const:") {
        let c: f64 = speed
            .parse()
            .map_err(|_| anyhow!("'{speed}' is not a speed in m/s"))?;
        return Ok((SpeedMap::constant(grid()?, c)?, format!("const:{c}")));
    }
    let path = Path::new(arg);
    let (c, sha) = container(path)?;
    let map = c
        .into_speed_map()
        .with_context(|| format!("{} does not hold a speed map", path.display()))?;
    Ok((map, sha))
}
