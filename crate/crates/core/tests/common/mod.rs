#![allow(dead_code)]

//! Fixtures and brute-force reference implementations shared by the
//! integration tests and the acceptance run.

use ndarray::{Array2, Array3};
use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coherospeed::beamform::{analytic_signal, coherence_factor, BeamsumStack, ChannelData};
use coherospeed::geometry::{linspace, ProbeAndSequence, ScanGrid, Vec3};
use coherospeed::imgproc::{median_filter, rank_filter, Window};
use coherospeed::metrics::{mad_from_reference, mae, pearson};
use coherospeed::presets::{acquisition_preset, AcquisitionPreset};
use coherospeed::wavemodel::{
    harmonic_average, simulate, MediumDescription, PointScatterer, Region, RegionSpeed, ScattererScene,
    SpeckleSpec, SpeedMap,
};

pub const FIXTURE_SEED: u64 = 7;

pub fn desk(c0: f64) -> AcquisitionPreset {
    acquisition_preset("em6c-desk", c0).unwrap()
}

/// Speckle plus five on-axis point targets. The speckle extends past the
/// deepest compensated pixel at the fastest candidate.
pub fn point_and_speckle_scene(seed: u64) -> ScattererScene {
    ScattererScene {
        points: (0..5)
            .map(|i| PointScatterer {
                position: Vec3::new(0.0, 0.0, 10e-3 + 6e-3 * i as f64),
                amplitude: 10.0,
            })
            .collect(),
        speckle: Some(SpeckleSpec {
            x: [-16e-3, 16e-3],
            z: [1e-3, 50e-3],
            density: 10e6,
            amplitude_scale: 1.0,
        }),
        seed,
    }
}

pub fn homogeneous(speed: f64) -> SpeedMap {
    MediumDescription::homogeneous([-20e-3, 20e-3], [0.0, 50e-3], 0.5e-3, speed)
        .rasterize()
        .unwrap()
}

/// 1480 m/s above 15 mm, 1580 m/s below.
pub fn layered() -> SpeedMap {
    MediumDescription {
        x: [-20e-3, 20e-3],
        z: [0.0, 50e-3],
        spacing: 0.25e-3,
        background: 1580.0,
        regions: vec![RegionSpeed {
            region: Region::Layer {
                z_min: 0.0,
                z_max: Some(15e-3),
            },
            speed: 1480.0,
        }],
    }
    .rasterize()
    .unwrap()
}

pub fn acquire(preset: &AcquisitionPreset, medium: &SpeedMap, scene: &ScattererScene) -> ChannelData {
    let sim = simulate(scene, medium, &preset.probe, &preset.pulse, &preset.record).unwrap();
    analytic_signal(&sim.rf).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Coherence factor by explicit double-precision sums over channels.
pub fn coherence_brute(stack: &Array3<Complex32>) -> Array2<f64> {
    let (rows, cols, ch) = stack.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let (mut re, mut im, mut mag) = (0.0f64, 0.0f64, 0.0f64);
        for m in 0..ch {
            let v = stack[[i, j, m]];
            re += v.re as f64;
            im += v.im as f64;
            mag += ((v.re as f64).powi(2) + (v.im as f64).powi(2)).sqrt();
        }
        if mag == 0.0 {
            0.0
        } else {
            (re * re + im * im).sqrt() / mag
        }
    })
}

/// Window percentile by full sort with replicated borders. The nearest rank
/// is the smallest sorted value covering at least `p` percent of the window.
pub fn rank_brute(img: &Array2<f64>, win_rows: usize, win_cols: usize, p: f64) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let (hr, hc) = ((win_rows / 2) as isize, (win_cols / 2) as isize);
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let mut v = Vec::new();
        for di in -hr..=hr {
            for dj in -hc..=hc {
                let ii = (i as isize + di).clamp(0, rows as isize - 1) as usize;
                let jj = (j as isize + dj).clamp(0, cols as isize - 1) as usize;
                v.push(img[[ii, jj]]);
            }
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let k = (1..=n).find(|&k| k as f64 * 100.0 >= p * n as f64).unwrap_or(1);
        v[k - 1]
    })
}

pub fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Per-pixel mean over every (tx, rx) pair of the two one-way harmonic
/// speeds, enumerating pairs explicitly.
pub fn average_speed_brute(local: &SpeedMap, r: Vec3, probe: &ProbeAndSequence) -> f64 {
    let tx: Vec<usize> = probe.tx_union();
    let mut sum = 0.0;
    let mut count = 0usize;
    for &n in &tx {
        let c_tx = harmonic_average(local, r, probe.tx_elements[n]);
        for e_rx in &probe.rx_elements {
            let c_rx = harmonic_average(local, r, *e_rx);
            sum += 0.5 * (c_tx + c_rx);
            count += 1;
        }
    }
    sum / count as f64
}

fn small_grid(rows: usize, cols: usize) -> ScanGrid {
    ScanGrid::linear(linspace(-1e-3, 1e-3, cols), linspace(1e-3, 3e-3, rows)).unwrap()
}

/// Largest relative deviation between `coherence_factor` and the brute-force
/// sum over `trials` random stacks.
pub fn check_coherence(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (rows, cols, ch) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..12));
        let zero_some = r.random_bool(0.3);
        let values = Array3::from_shape_fn((rows, cols, ch), |_| {
            if zero_some && r.random_bool(0.5) {
                Complex32::default()
            } else {
                Complex32::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
            }
        });
        let stack = BeamsumStack {
            grid: small_grid(rows, cols),
            values: values.clone(),
        };
        let got = coherence_factor(&stack);
        let want = coherence_brute(&values);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    worst
}

/// Number of pixels where rank or median filtering differs from the sort
/// oracle over `trials` random 16 x 16 images.
pub fn check_rank_filters(trials: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut mismatches = 0;
    for t in 0..trials {
        // some images with heavy ties
        let levels = if t % 3 == 0 { 4.0 } else { 0.0 };
        let img = Array2::from_shape_fn((16, 16), |_| {
            let v: f64 = r.random_range(0.0..1.0);
            if levels > 0.0 {
                (v * levels).floor()
            } else {
                v
            }
        });
        let (wr, wc) = (2 * r.random_range(0..4) + 1, 2 * r.random_range(0..4) + 1);
        let p = if t % 5 == 0 {
            [0.0, 50.0, 90.0, 100.0][t / 5 % 4]
        } else {
            r.random_range(0.0..100.0)
        };
        let win = Window::new(wr, wc).unwrap();
        let got = rank_filter(&img, win, p).unwrap();
        let want = rank_brute(&img, wr, wc, p);
        mismatches += got.iter().zip(&want).filter(|(a, b)| a != b).count();
        let med = median_filter(&img, win);
        let want = rank_brute(&img, wr, wc, 50.0);
        mismatches += med.iter().zip(&want).filter(|(a, b)| a != b).count();
    }
    mismatches
}

/// Largest relative deviation from the one-pass textbook formula.
pub fn check_pearson(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + r.random_range(-1.0..1.0)).collect();
        worst = worst.max(rel_err(pearson(&x, &y).unwrap(), pearson_brute(&x, &y)));
    }
    worst
}

/// Largest relative deviation of MAE and MAD from explicit loops.
pub fn check_mae_mad(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (rows, cols) = (r.random_range(1..10), r.random_range(1..10));
        let grid = small_grid(rows, cols);
        let a = Array2::from_shape_fn((rows, cols), |_| r.random_range(1400.0..1700.0));
        let b = Array2::from_shape_fn((rows, cols), |_| r.random_range(1400.0..1700.0));
        let reference: f64 = r.random_range(1400.0..1700.0);
        let (ma, mb) = (
            SpeedMap::new(grid.clone(), a.clone()).unwrap(),
            SpeedMap::new(grid, b.clone()).unwrap(),
        );
        let mut s = 0.0;
        let mut d = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                s += (a[[i, j]] - b[[i, j]]).abs();
                d += (a[[i, j]] - reference).abs();
            }
        }
        let n = (rows * cols) as f64;
        worst = worst.max(rel_err(mae(&ma, &mb).unwrap(), s / n));
        worst = worst.max(rel_err(mad_from_reference(&ma, reference), d / n));
    }
    worst
}
