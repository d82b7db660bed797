//! `coherospeed`: simulate channel data, estimate average sound-speed maps,
//! beamform corrected images and score their sharpness.

mod inputs;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::warn;
use serde_json::{json, Value};

use coherospeed::beamform::{BeamformConfig, ComplexImage};
use coherospeed::container::{
    coherence_volume_container, complex_image_container, config_hash, rf_container, speed_map_container,
};
use coherospeed::display::{display_sharpness, render, write_pgm, BMode, DEFAULT_DYNAMIC_RANGE_DB};
use coherospeed::metrics::{kappa, mad_from_reference, mae, MetricsReport, RoiSpec};
use coherospeed::pipeline::{self, Candidates, CONVENTIONAL_SPEED};
use coherospeed::presets::acquisition_preset;
use coherospeed::wavemodel::{simulate, MediumDescription, ScattererScene};

#[derive(Parser)]
#[command(name = "coherospeed", version, about = "Coherence-based sound-speed estimation and aberration correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Png,
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate RF channel data for a medium and scatterer scene.
    Simulate {
        /// Medium description (JSON).
        #[arg(long)]
        medium: PathBuf,
        /// Scatterer scene (JSON).
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "em6c-desk")]
        preset: String,
        /// Speed assumed for transmit focusing [m/s].
        #[arg(long, default_value_t = CONVENTIONAL_SPEED)]
        c0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the average sound-speed map of a channel-data container.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Pipeline preset name or JSON config file.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Report path; defaults to the output with a `.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Scan grid: acquisition preset name or JSON file. Defaults to the
        /// grid recorded in the input.
        #[arg(long)]
        grid: Option<String>,
        /// Candidate speeds as `start:step:stop` [m/s], overriding the config.
        #[arg(long)]
        candidates: Option<String>,
        /// Directory receiving the coherence volumes and intermediate maps.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Beamform with a speed map (or `const:<m/s>`) into a complex image.
    Correct {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        map: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid: Option<String>,
        /// Pipeline preset or config file whose beamforming section applies.
        #[arg(long)]
        config: Option<String>,
        /// Also write a B-mode image next to the output.
        #[arg(long)]
        render: Option<ImageFormat>,
        /// Complex image whose 80th-percentile level the rendering matches.
        #[arg(long = "match")]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DYNAMIC_RANGE_DB)]
        dynamic_range: f64,
    },
    /// Compare the display sharpness of two complex images.
    Score {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Speed map whose global speed and deviation are reported.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Ground-truth map for the mean absolute error of `--map`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Reference speed for the mean absolute deviation [m/s].
        #[arg(long, default_value_t = CONVENTIONAL_SPEED)]
        reference_speed: f64,
        #[arg(long, default_value_t = RoiSpec::default().min_depth_mm)]
        roi_min_depth: f64,
        #[arg(long, default_value_t = DEFAULT_DYNAMIC_RANGE_DB)]
        dynamic_range: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a complex image as an 8-bit B-mode PNG or PGM.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path; the extension selects the format.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "match")]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DYNAMIC_RANGE_DB)]
        dynamic_range: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Writes a line to stdout. A closed pipe is not an error: the outputs are
/// already on disk by the time anything is printed.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// `COHEROSPEED_THREADS` caps the worker pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("COHEROSPEED_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("COHEROSPEED_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the worker pool")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            medium,
            scene,
            preset,
            c0,
            out,
        } => cmd_simulate(&medium, &scene, &preset, c0, &out),
        Command::Estimate {
            input,
            config,
            out,
            report,
            grid,
            candidates,
            diagnostics,
        } => cmd_estimate(
            &input,
            &config,
            &out,
            report.as_deref(),
            grid.as_deref(),
            candidates.as_deref(),
            diagnostics.as_deref(),
        ),
        Command::Correct {
            input,
            map,
            out,
            grid,
            config,
            render,
            reference,
            dynamic_range,
        } => cmd_correct(
            &input,
            &map,
            &out,
            grid.as_deref(),
            config.as_deref(),
            render,
            reference.as_deref(),
            dynamic_range,
        ),
        Command::Score {
            a,
            b,
            map,
            truth,
            reference_speed,
            roi_min_depth,
            dynamic_range,
            out,
        } => cmd_score(
            &a,
            &b,
            map.as_deref(),
            truth.as_deref(),
            reference_speed,
            roi_min_depth,
            dynamic_range,
            out.as_deref(),
        ),
        Command::Render {
            input,
            out,
            reference,
            dynamic_range,
        } => {
            let format = match out.extension().and_then(|e| e.to_str()) {
                Some("png") => ImageFormat::Png,
                Some("pgm") => ImageFormat::Pgm,
                _ => bail!("{}: output must end in .png or .pgm", out.display()),
            };
            let image = load_image(&input)?;
            let reference = reference.as_deref().map(load_image).transpose()?;
            write_bmode(&image, reference.as_ref(), dynamic_range, format, &out)
        }
    }
}

fn cmd_simulate(medium: &Path, scene: &Path, preset: &str, c0: f64, out: &Path) -> Result<()> {
    let medium_file = inputs::read(medium)?;
    let scene_file = inputs::read(scene)?;
    let description: MediumDescription = inputs::json(medium, &medium_file.bytes)?;
    let scene_spec: ScattererScene = inputs::json(scene, &scene_file.bytes)?;
    let local = description
        .rasterize()
        .with_context(|| format!("invalid medium {}", medium.display()))?;
    let acq = acquisition_preset(preset, c0)?;
    let sim = simulate(&scene_spec, &local, &acq.probe, &acq.pulse, &acq.record)?;
    if sim.truncated_echoes > 0 {
        warn!("{} echoes extend past the record window", sim.truncated_echoes);
    }
    let metadata = json!({
        "preset": acq.name,
        "c0": c0,
        "grid": acq.grid,
        "pulse": acq.pulse,
        "medium_sha256": medium_file.sha256,
        "scene_sha256": scene_file.sha256,
        "truncated_echoes": sim.truncated_echoes,
    });
    rf_container(&sim.rf, metadata)?.save(out)?;
    let duration_us = sim.rf.num_samples as f64 / sim.rf.sampling_frequency * 1e6;
    emit(&format!(
        "events {} channels {} samples {} duration {:.2} us",
        sim.rf.probe.num_events(),
        sim.rf.probe.num_rx(),
        sim.rf.num_samples,
        duration_us
    ))
}

fn parse_candidates(arg: &str) -> Result<Candidates> {
    let parts: Vec<f64> = arg
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("candidates '{arg}' must be start:step:stop"))?;
    let [start, step, stop] = parts[..] else {
        bail!("candidates '{arg}' must be start:step:stop");
    };
    Ok(Candidates::Range { start, stop, step })
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    input: &Path,
    config: &str,
    out: &Path,
    report: Option<&Path>,
    grid: Option<&str>,
    candidates: Option<&str>,
    diagnostics: Option<&Path>,
) -> Result<()> {
    let mut cfg = inputs::pipeline_config(config)?;
    if let Some(c) = candidates {
        cfg.candidates = parse_candidates(c)?;
    }
    cfg.validate()?;
    let (container, input_sha) = inputs::container(input)?;
    let metadata = container.metadata.clone();
    let grid = inputs::grid(grid, &metadata)?;
    let data = container.into_channels()?.into_analytic()?;
    let result = pipeline::estimate(&data, &grid, &cfg, diagnostics.is_some())?;

    let cfg_hash = config_hash(&cfg)?;
    let provenance = json!({ "config_sha256": cfg_hash, "input_sha256": input_sha });
    speed_map_container(&result.speed_map, provenance.clone())?.save(out)?;

    if let (Some(dir), Some(d)) = (diagnostics, &result.diagnostics) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        coherence_volume_container(&grid, &d.coherence, provenance.clone())?.save(dir.join("coherence.bin"))?;
        coherence_volume_container(&grid, &d.filtered, provenance.clone())?.save(dir.join("filtered.bin"))?;
        speed_map_container(&d.argmax, provenance.clone())?.save(dir.join("argmax.bin"))?;
        speed_map_container(&d.median, provenance.clone())?.save(dir.join("median.bin"))?;
    }

    let report_json = json!({
        "global_speed": result.global_speed,
        "mad": mad_from_reference(&result.speed_map, CONVENTIONAL_SPEED),
        "mad_reference_speed": CONVENTIONAL_SPEED,
        "candidates": cfg.candidates.values()?,
        "grid_shape": [grid.rows(), grid.cols()],
        "warnings": result.warnings,
        "config_sha256": cfg_hash,
        "input_sha256": input_sha,
    });
    let report_path = report.map_or_else(|| out.with_extension("json"), Path::to_path_buf);
    write_report(&report_json, &report_path)?;
    emit(&serde_json::to_string_pretty(&report_json)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_correct(
    input: &Path,
    map: &str,
    out: &Path,
    grid: Option<&str>,
    config: Option<&str>,
    render_as: Option<ImageFormat>,
    reference: Option<&Path>,
    dynamic_range: f64,
) -> Result<()> {
    let beamform = match config {
        Some(c) => inputs::pipeline_config(c)?.beamform,
        None => BeamformConfig::default(),
    };
    let (container, input_sha) = inputs::container(input)?;
    let metadata = container.metadata.clone();
    let (map, map_source) = inputs::speed_map(map, || inputs::grid(grid, &metadata))?;
    if let Some(g) = grid {
        let requested = inputs::grid(Some(g), &metadata)?;
        if requested != map.grid {
            bail!("speed map grid differs from --grid {g}");
        }
    }
    let data = container.into_channels()?.into_analytic()?;
    let image = pipeline::correct(&data, &map.grid, &map, &beamform)?;
    let provenance = json!({
        "input_sha256": input_sha,
        "map": map_source,
        "beamform_sha256": config_hash(&beamform)?,
    });
    complex_image_container(&image, provenance)?.save(out)?;
    if let Some(format) = render_as {
        let reference = reference.map(load_image).transpose()?;
        let path = out.with_extension(match format {
            ImageFormat::Png => "png",
            ImageFormat::Pgm => "pgm",
        });
        write_bmode(&image, reference.as_ref(), dynamic_range, format, &path)?;
    } else if reference.is_some() {
        warn!("--match has no effect without --render");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    a: &Path,
    b: &Path,
    map: Option<&Path>,
    truth: Option<&Path>,
    reference_speed: f64,
    roi_min_depth: f64,
    dynamic_range: f64,
    out: Option<&Path>,
) -> Result<()> {
    let (ca, sha_a) = inputs::container(a)?;
    let (cb, sha_b) = inputs::container(b)?;
    let ia = ca.into_complex_image()?;
    let ib = cb.into_complex_image()?;
    if ia.grid != ib.grid {
        bail!("{} and {} are on different grids", a.display(), b.display());
    }
    let roi = RoiSpec {
        min_depth_mm: roi_min_depth,
    };
    let (fa, fb) = display_sharpness(&ia, &ib, dynamic_range, &roi)?;
    let mut report = MetricsReport {
        tenengrad_a: fa,
        tenengrad_b: fb,
        kappa: kappa(fa, fb)?,
        roi_min_depth_mm: roi_min_depth,
        global_speed: None,
        mad: None,
        mae: None,
    };
    let mut hashes = json!({ "a": sha_a, "b": sha_b });
    if let Some(path) = map {
        let (c, sha) = inputs::container(path)?;
        let m = c.into_speed_map()?;
        report.global_speed = Some(m.mean());
        report.mad = Some(mad_from_reference(&m, reference_speed));
        hashes["map"] = json!(sha);
        if let Some(tp) = truth {
            let (t, sha) = inputs::container(tp)?;
            report.mae = Some(mae(&m, &t.into_speed_map()?)?);
            hashes["truth"] = json!(sha);
        }
    } else if truth.is_some() {
        bail!("--truth needs --map");
    }
    let mut value = serde_json::to_value(&report)?;
    value["mad_reference_speed"] = json!(reference_speed);
    value["dynamic_range_db"] = json!(dynamic_range);
    value["inputs_sha256"] = hashes;
    if let Some(path) = out {
        write_report(&value, path)?;
    }
    emit(&serde_json::to_string_pretty(&value)?)
}

fn load_image(path: &Path) -> Result<ComplexImage> {
    let (c, _) = inputs::container(path)?;
    c.into_complex_image()
        .with_context(|| format!("{} does not hold a complex image", path.display()))
}

fn write_bmode(
    image: &ComplexImage,
    reference: Option<&ComplexImage>,
    dynamic_range: f64,
    format: ImageFormat,
    path: &Path,
) -> Result<()> {
    let bmode: BMode = render(image, reference, dynamic_range)?;
    for w in &bmode.warnings {
        warn!("{w}");
    }
    let (rows, cols) = image.grid.shape();
    let pixels = bmode.gray8();
    let file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    match format {
        ImageFormat::Pgm => write_pgm(file, rows, cols, &pixels)?,
        ImageFormat::Png => {
            let mut encoder = png::Encoder::new(file, cols as u32, rows as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&pixels)?;
            writer.finish()?;
        }
    }
    Ok(())
}

fn write_report(value: &Value, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
