//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array2;
use num_complex::Complex32;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use coherospeed::beamform::{
    coherence_of, das, das_constant, Apodization, BeamformConfig, ChannelData, ComplexImage,
};
use coherospeed::container::{config_hash, speed_map_container};
use coherospeed::display::{display_sharpness, DEFAULT_DYNAMIC_RANGE_DB};
use coherospeed::geometry::{linspace, ScanGrid, Vec3};
use coherospeed::imgproc::{depth_growing_smooth, gaussian_filter, median_filter, rank_filter, KernelSpec, Window};
use coherospeed::metrics::{mad_from_reference, mae, tenengrad, RoiSpec};
use coherospeed::pipeline::{estimate, EstimationResult, PipelineConfig, CONVENTIONAL_SPEED};
use coherospeed::presets::AcquisitionPreset;
use coherospeed::wavemodel::{average_speed_oracle, average_speed_oracle_compensated, PointScatterer, ScattererScene, SpeckleSpec, SpeedMap};

use common::{acquire, desk, homogeneous, layered, point_and_speckle_scene, FIXTURE_SEED};

const MAE_LIMIT: f64 = 5.0;
const RUNTIME_LIMIT: Duration = Duration::from_secs(600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Run {
    preset: AcquisitionPreset,
    data: ChannelData,
    result: EstimationResult,
    elapsed: Duration,
}

fn config() -> PipelineConfig {
    PipelineConfig::preset("kwave").unwrap()
}

/// Simulate, convert to analytic channels and estimate.
fn run_fixture(medium: &SpeedMap, c0: f64, keep_diagnostics: bool) -> Run {
    let start = Instant::now();
    let preset = desk(c0);
    let data = acquire(&preset, medium, &point_and_speckle_scene(FIXTURE_SEED));
    let result = estimate(&data, &preset.grid, &config(), keep_diagnostics).unwrap();
    Run {
        preset,
        data,
        result,
        elapsed: start.elapsed(),
    }
}

/// Sharpness increase of the image corrected with the estimated map over the
/// conventional 1540 m/s image.
fn kappa_of(run: &Run) -> f64 {
    let cfg = config().beamform;
    let corrected = das(&run.data, &run.preset.grid, &run.result.speed_map, &cfg).unwrap();
    let plain = das_constant(&run.data, &run.preset.grid, CONVENTIONAL_SPEED, &cfg).unwrap();
    let (fa, fb) = display_sharpness(&corrected, &plain, DEFAULT_DYNAMIC_RANGE_DB, &RoiSpec::default()).unwrap();
    coherospeed::metrics::kappa(fa, fb).unwrap()
}

fn report_bytes(run: &Run) -> (Vec<u8>, Vec<u8>) {
    let cfg = config();
    let hash = config_hash(&cfg).unwrap();
    let mut map = Vec::new();
    speed_map_container(&run.result.speed_map, serde_json::json!({ "config_sha256": hash }))
        .unwrap()
        .write_to(&mut map)
        .unwrap();
    let report = serde_json::json!({
        "global_speed": run.result.global_speed,
        "mad": mad_from_reference(&run.result.speed_map, CONVENTIONAL_SPEED),
        "warnings": run.result.warnings,
        "config_sha256": hash,
    });
    (map, serde_json::to_vec_pretty(&report).unwrap())
}

fn criterion_1(h1480: &Run, h1610: &Run) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (speed, run) in [(1480.0, h1480), (1610.0, h1610)] {
        let truth = SpeedMap::constant(run.preset.grid.clone(), speed).unwrap();
        let err = mae(&run.result.speed_map, &truth).unwrap();
        pass &= err <= MAE_LIMIT && run.elapsed <= RUNTIME_LIMIT;
        parts.push(format!(
            "{speed} m/s MAE {err:.2} m/s (global {:.1}) in {:.0} s",
            run.result.global_speed,
            run.elapsed.as_secs_f64()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_2(layer: &Run) -> Outcome {
    let medium = layered();
    let grid = &layer.preset.grid;
    let truth = average_speed_oracle_compensated(&medium, grid, &layer.preset.probe).unwrap();
    let plain = average_speed_oracle(&medium, grid, &layer.preset.probe).unwrap();
    let err = mae(&layer.result.speed_map, &truth).unwrap();
    let err_plain = mae(&layer.result.speed_map, &plain).unwrap();

    // oracle against explicit pair enumeration on a sparse pixel sample
    let mut worst: f64 = 0.0;
    for i in (0..grid.rows()).step_by(40) {
        for j in (0..grid.cols()).step_by(30) {
            let want = common::average_speed_brute(&medium, grid.pixel_position(i, j), &layer.preset.probe);
            worst = worst.max(common::rel_err(plain.values[[i, j]], want));
        }
    }
    outcome(
        err <= MAE_LIMIT && worst <= 1e-9,
        format!(
            "MAE {err:.2} m/s vs compensated truth ({err_plain:.2} vs uncompensated); oracle vs pair enumeration {worst:.1e}"
        ),
    )
}

fn criterion_3(layer: &Run, layer_1480: &Run) -> Outcome {
    let diff = mae(&layer.result.speed_map, &layer_1480.result.speed_map).unwrap();
    outcome(
        diff <= MAE_LIMIT,
        format!(
            "maps from c0 = 1540 and c0 = 1480 transmits differ by MAE {diff:.2} m/s (global {:.1} vs {:.1})",
            layer.result.global_speed, layer_1480.result.global_speed
        ),
    )
}

fn peak_spread(data: &ChannelData, grid: &ScanGrid, cfg: &BeamformConfig, speeds: &[f64]) -> (usize, usize) {
    let peaks: Vec<(usize, usize)> = speeds
        .iter()
        .map(|&c| {
            let env = das_constant(data, grid, c, cfg).unwrap().envelope();
            let (idx, _) = env
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            (idx / grid.cols(), idx % grid.cols())
        })
        .collect();
    let spread = |f: fn(&(usize, usize)) -> usize| {
        let v: Vec<usize> = peaks.iter().map(f).collect();
        v.iter().max().unwrap() - v.iter().min().unwrap()
    };
    (spread(|p| p.0), spread(|p| p.1))
}

fn criterion_4() -> Outcome {
    let preset = desk(1540.0);
    let scene = ScattererScene {
        points: vec![PointScatterer {
            position: Vec3::new(2e-3, 0.0, 26e-3),
            amplitude: 1.0,
        }],
        speckle: None,
        seed: 0,
    };
    let data = acquire(&preset, &homogeneous(1540.0), &scene);
    let grid = ScanGrid::linear(linspace(-2e-3, 6e-3, 41), linspace(20e-3, 32e-3, 61)).unwrap();
    let speeds = config().candidates.values().unwrap();
    let on = BeamformConfig::default();
    let off = BeamformConfig {
        grid_compensation: false,
        ..BeamformConfig::default()
    };
    let (r_on, c_on) = peak_spread(&data, &grid, &on, &speeds);
    let (r_off, c_off) = peak_spread(&data, &grid, &off, &speeds);
    outcome(
        r_on.max(c_on) <= 1 && r_off.max(c_off) > 1,
        format!(
            "peak moves {r_on} rows / {c_on} cols with compensation, {r_off} rows / {c_off} cols without"
        ),
    )
}

fn criterion_5() -> Outcome {
    let speed = 1500.0;
    let preset = desk(1540.0);
    let scatterer = Vec3::new(0.0, 0.0, 24e-3);
    let sigma = 1.0;
    // rms of a Rayleigh amplitude is sigma * sqrt(2); +30 dB above it
    let strong = 10f64.powf(30.0 / 20.0) * sigma * 2f64.sqrt();
    let scene = ScattererScene {
        points: vec![PointScatterer {
            position: scatterer,
            amplitude: strong,
        }],
        speckle: Some(SpeckleSpec {
            x: [-10e-3, 10e-3],
            z: [8e-3, 42e-3],
            density: 10e6,
            amplitude_scale: sigma,
        }),
        seed: FIXTURE_SEED,
    };
    let data = acquire(&preset, &homogeneous(speed), &scene);
    let grid = ScanGrid::linear(linspace(-6e-3, 6e-3, 61), linspace(14e-3, 34e-3, 101)).unwrap();

    let with = config();
    let without = PipelineConfig {
        rank_filter: None,
        ..config()
    };
    let f_number = match with.beamform.apodization {
        Apodization::ExpandingAperture { f_number } => f_number,
        Apodization::Uniform => 1.0,
    };
    let beamwidth = preset.pulse.wavelength(speed) * f_number;
    // display position of the scatterer on the compensated grid
    let shown = Vec3::new(scatterer.x, 0.0, scatterer.z * preset.probe.c0 / speed);
    let near: Vec<(usize, usize)> = (0..grid.rows())
        .flat_map(|i| (0..grid.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| (grid.pixel_position(i, j) - shown).norm() <= 3.0 * beamwidth)
        .collect();

    let fraction = |cfg: &PipelineConfig| {
        let r = estimate(&data, &grid, cfg, true).unwrap();
        let argmax = &r.diagnostics.unwrap().argmax;
        near.iter().filter(|&&(i, j)| argmax.values[[i, j]] == speed).count() as f64 / near.len() as f64
    };
    let (f_with, f_without) = (fraction(&with), fraction(&without));
    outcome(
        f_with > f_without,
        format!(
            "{:.1}% of {} pixels within 3 beamwidths at the true speed with the 90th-percentile filter, {:.1}% without",
            100.0 * f_with,
            near.len(),
            100.0 * f_without
        ),
    )
}

fn criterion_6(aberrated: &[(&str, &Run)], unaberrated: &Run) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, run) in aberrated {
        let k = kappa_of(run);
        pass &= k > 0.0;
        parts.push(format!("{name} {k:+.2}%"));
    }
    let k = kappa_of(unaberrated);
    pass &= k.abs() <= 0.5;
    parts.push(format!("1540 m/s {k:+.3}%"));
    outcome(pass, format!("kappa: {}", parts.join(", ")))
}

fn criterion_7() -> Outcome {
    const TRIALS: usize = 1000;
    let coherence = common::check_coherence(TRIALS, 11);
    let rank = common::check_rank_filters(TRIALS, 12);
    let pearson = common::check_pearson(TRIALS, 13);
    let errors = common::check_mae_mad(TRIALS, 14);
    outcome(
        coherence <= 1e-12 && rank == 0 && pearson <= 1e-12 && errors <= 1e-12,
        format!(
            "{TRIALS} trials each: coherence {coherence:.1e}, rank/median mismatches {rank}, Pearson {pearson:.1e}, MAE/MAD {errors:.1e}"
        ),
    )
}

fn image_strategy() -> impl Strategy<Value = Array2<f64>> {
    (3usize..12, 3usize..12).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn quiet_config(cases: u32) -> Config {
    Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new_with_rng(
        quiet_config(200),
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let mut failures = Vec::new();

    let coherence = runner.run(
        &prop::collection::vec((-1.0..1.0f32, -1.0..1.0f32), 1..32),
        |v| {
            let vals: Vec<Complex32> = v.iter().map(|&(a, b)| Complex32::new(a, b)).collect();
            let c = coherence_of(&vals);
            prop_assert!((0.0..=1.0).contains(&c));
            Ok(())
        },
    );
    if let Err(e) = coherence {
        failures.push(format!("coherence: {e}"));
    }

    let filters = runner.run(&(image_strategy(), 0usize..3, 0usize..3), |(img, a, b)| {
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let win = Window::new(2 * a + 1, 2 * b + 1).unwrap();
        let (r, c) = img.dim();
        let grid = ScanGrid::linear(linspace(0.0, 2e-3, c), linspace(5e-3, 7e-3, r)).unwrap();
        let outputs = [
            gaussian_filter(&img, win, (1.0, 1.0)),
            median_filter(&img, win),
            depth_growing_smooth(&img, &grid, &KernelSpec::new(0.5, 0.5).unwrap(), 0.1, 0.1).unwrap(),
        ];
        for o in &outputs {
            prop_assert!(o.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        }
        prop_assert!(rank_filter(&img, win, 90.0).unwrap().iter().all(|&x| x <= hi));
        let flat = Array2::from_elem((r, c), lo);
        for o in [gaussian_filter(&flat, win, (1.0, 1.0)), rank_filter(&flat, win, 90.0).unwrap()] {
            prop_assert!(o.iter().all(|&x| (x - lo).abs() <= 1e-12 * (1.0 + lo.abs())));
        }
        Ok(())
    });
    if let Err(e) = filters {
        failures.push(format!("filters: {e}"));
    }

    let probe = desk(1540.0).probe;
    let samples = 64;
    let len = probe.num_events() * probe.num_rx() * samples;
    let grid = ScanGrid::linear(linspace(-1e-3, 1e-3, 3), linspace(2e-3, 4e-3, 3)).unwrap();
    let cfg = BeamformConfig::default();
    let map = SpeedMap::constant(grid.clone(), 1500.0).unwrap();
    let mut lin_runner = TestRunner::new_with_rng(
        quiet_config(16),
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let linear = lin_runner.run(&(any::<u64>(), -2.0..2.0f32, -2.0..2.0f32), |(seed, alpha, beta)| {
        use rand::Rng;
        let mut r = common::rng(seed);
        let mut make = || {
            let v = (0..len)
                .map(|_| Complex32::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect();
            ChannelData::new(probe.clone(), 20e6, vec![2e-6; probe.num_events()], samples, v).unwrap()
        };
        let (d1, d2) = (make(), make());
        let both: ComplexImage = das(&d1.combine(alpha, &d2, beta).unwrap(), &grid, &map, &cfg).unwrap();
        let (i1, i2) = (das(&d1, &grid, &map, &cfg).unwrap(), das(&d2, &grid, &map, &cfg).unwrap());
        for ((c, a), b) in both.values.iter().zip(&i1.values).zip(&i2.values) {
            let want = a * alpha as f64 + b * beta as f64;
            prop_assert!((c - want).norm() <= 1e-4 * (1.0 + a.norm() + b.norm()));
        }
        Ok(())
    });
    if let Err(e) = linear {
        failures.push(format!("das linearity: {e}"));
    }

    let affine = runner.run(&(image_strategy(), -10.0..10.0f64, -5.0..5.0f64), |(img, shift, scale)| {
        let (r, c) = img.dim();
        let grid = ScanGrid::linear(linspace(0.0, 2e-3, c), linspace(5e-3, 7e-3, r)).unwrap();
        let roi = RoiSpec { min_depth_mm: 0.0 };
        let f = tenengrad(&img, &grid, &roi).unwrap();
        let fs = tenengrad(&img.mapv(|v| v + shift), &grid, &roi).unwrap();
        let fm = tenengrad(&img.mapv(|v| v * scale), &grid, &roi).unwrap();
        prop_assert!((fs - f).abs() <= 1e-9 * (1.0 + f));
        prop_assert!((fm - scale.abs() * f).abs() <= 1e-9 * (1.0 + f));
        Ok(())
    });
    if let Err(e) = affine {
        failures.push(format!("tenengrad: {e}"));
    }

    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    let detail = if failures.is_empty() {
        format!("coherence, filter, das-linearity and tenengrad suites hold ({:.1} s)", elapsed.as_secs_f64())
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn criterion_9(first: &Run) -> Outcome {
    // rerun end to end on a differently sized pool
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let second = pool.install(|| run_fixture(&homogeneous(1480.0), 1540.0, false));
    let (map_a, report_a) = report_bytes(first);
    let (map_b, report_b) = report_bytes(&second);
    let same_data = first.data == second.data;
    outcome(
        map_a == map_b && report_a == report_b && same_data,
        format!(
            "repeat run: channel data {}, map container {} bytes {}, report {}",
            if same_data { "identical" } else { "differs" },
            map_a.len(),
            if map_a == map_b { "identical" } else { "differ" },
            if report_a == report_b { "identical" } else { "differs" }
        ),
    )
}

fn main() {
    // single worker: runtimes are single-threaded figures
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let results = pool.install(|| {
        let h1480 = run_fixture(&homogeneous(1480.0), 1540.0, false);
        let h1610 = run_fixture(&homogeneous(1610.0), 1540.0, false);
        let layer = run_fixture(&layered(), 1540.0, false);
        let layer_1480 = run_fixture(&layered(), 1480.0, false);
        let h1540 = run_fixture(&homogeneous(1540.0), 1540.0, false);
        vec![
            ("constant-medium recovery", criterion_1(&h1480, &h1610)),
            ("layered-medium recovery", criterion_2(&layer)),
            ("transmit-speed independence", criterion_3(&layer, &layer_1480)),
            ("grid-compensation stationarity", criterion_4()),
            ("rank-filter efficacy", criterion_5()),
            (
                "sharpness improvement",
                criterion_6(&[("1480 m/s", &h1480), ("1610 m/s", &h1610), ("layered", &layer)], &h1540),
            ),
            ("unit-level oracle equivalence", criterion_7()),
            ("invariant suites", criterion_8()),
            ("determinism", criterion_9(&h1480)),
        ]
    });
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        std::process::exit(1);
    }
}
