mod common;

use fmdas::beamform::{
    das_beamform, envelope_detect, gaussian_blur, interp_linear, log_compress, median_filter,
    ApodizationSpec, Window,
};
use fmdas::delays::{
    build_transmit_events, DelayProvider, FmDelays, GeometricDelays, TransmitScheme,
};
use fmdas::eikonal::FmConfig;
use fmdas::medium::{Field2, Grid2D, SosMap, TransducerArray};
use fmdas::phantom::Scatterer;
use fmdas::rf::RfDataSet;
use fmdas::rfsim::{simulate_with, PulseSpec, SimConfig};
use proptest::prelude::*;

use common::{argmax, naive_das};

/// Two transmissions, three elements, 64 samples per trace.
fn tiny_rf(samples: Vec<f64>, fs: f64, t0: f64) -> RfDataSet {
    let array = TransducerArray::new(3, 0.3e-3, 5e6, 1540.0).unwrap();
    let scheme = TransmitScheme {
        n_transmits: 2,
        focal_depth: 2e-3,
        f_number: 2.0,
    };
    let events = build_transmit_events(&array, &scheme).unwrap();
    RfDataSet::new(samples, 64, fs, t0, array, events).unwrap()
}

fn tiny_pixels() -> Grid2D {
    Grid2D::new(-0.45e-3, 0.8e-3, 0.3e-3, 0.4e-3, 4, 4).unwrap()
}

fn samples_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2 * 3 * 64)
}

fn max_abs(f: &Field2) -> f64 {
    f.data.iter().fold(0.0, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force_oracle(
        samples in samples_strategy(),
        fs in 15e6..40e6f64,
        t0 in -0.2e-6..0.5e-6f64,
        f_number in 0.3..2.0f64,
        boxcar in any::<bool>(),
    ) {
        let rf = tiny_rf(samples, fs, t0);
        let delays = GeometricDelays::new(&rf.array, &rf.events, 1540.0).unwrap();
        let apod = ApodizationSpec {
            window: if boxcar { Window::Boxcar } else { Window::Hanning },
            rx_f_number: f_number,
            tx_gate: false,
        };
        let got = das_beamform(&rf, &delays, &apod, &tiny_pixels()).unwrap();
        let want = naive_das(&rf, &delays, &apod, &tiny_pixels());
        for (a, b) in got.data.iter().zip(&want.data) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn linear_in_the_rf(
        s1 in samples_strategy(),
        s2 in samples_strategy(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let fs = 25e6;
        let combined: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let (r1, r2, r) = (tiny_rf(s1, fs, 0.0), tiny_rf(s2, fs, 0.0), tiny_rf(combined, fs, 0.0));
        let delays = GeometricDelays::new(&r.array, &r.events, 1540.0).unwrap();
        let apod = ApodizationSpec { rx_f_number: 0.5, ..Default::default() };
        let pixels = tiny_pixels();
        let (i1, i2, i) = (
            das_beamform(&r1, &delays, &apod, &pixels).unwrap(),
            das_beamform(&r2, &delays, &apod, &pixels).unwrap(),
            das_beamform(&r, &delays, &apod, &pixels).unwrap(),
        );
        let scale = 1.0 + max_abs(&i);
        for ((x, y), z) in i1.data.iter().zip(&i2.data).zip(&i.data) {
            prop_assert!((a * x + b * y - z).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn compounding_order_does_not_matter(samples in samples_strategy(), integer in any::<bool>()) {
        // With constant integer traces and unit weights every term is exact,
        // so both summation orders agree bit for bit.
        let samples: Vec<f64> = if integer {
            samples.chunks(64).flat_map(|t| vec![(t[0] * 50.0).round(); 64]).collect()
        } else {
            samples
        };
        let rf = tiny_rf(samples, 25e6, 0.0);
        let delays = GeometricDelays::new(&rf.array, &rf.events, 1540.0).unwrap();
        let apod = ApodizationSpec {
            window: if integer { Window::Boxcar } else { Window::Hanning },
            rx_f_number: 0.5,
            tx_gate: false,
        };
        let pixels = tiny_pixels();
        let got = das_beamform(&rf, &delays, &apod, &pixels).unwrap();
        let element_major = Field2::from_fn(pixels, |x, z| {
            let mut sum = 0.0;
            for i in 0..rf.n_elements() {
                let w = apod.rx_weight(rf.array.element_x[i] - x, z);
                for j in 0..rf.n_transmits() {
                    let pos = (delays.delay(j, i, x, z).unwrap() - rf.t0) * rf.fs;
                    sum += w * interp_linear(rf.trace(j, i), pos);
                }
            }
            sum
        });
        for (a, b) in got.data.iter().zip(&element_major.data) {
            if integer {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            } else {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn elements_outside_the_dynamic_aperture_contribute_nothing() {
    // Only the leftmost element carries signal.
    let mut samples = vec![0.0; 2 * 3 * 64];
    for j in 0..2 {
        let start = (j * 3) * 64;
        samples[start..start + 64].iter_mut().for_each(|v| *v = 1.0);
    }
    let rf = tiny_rf(samples, 25e6, 0.0);
    let delays = GeometricDelays::new(&rf.array, &rf.events, 1540.0).unwrap();
    let apod = ApodizationSpec {
        window: Window::Boxcar,
        rx_f_number: 2.0,
        tx_gate: false,
    };
    let pixels = Grid2D::new(-0.3e-3, 0.2e-3, 0.3e-3, 0.2e-3, 3, 3).unwrap();
    let img = das_beamform(&rf, &delays, &apod, &pixels).unwrap();
    let x0 = rf.array.element_x[0];
    for k in 0..pixels.nz {
        for ix in 0..pixels.nx {
            let (x, z) = (pixels.x(ix), pixels.z(k));
            if (x - x0).abs() > z / (2.0 * apod.rx_f_number) {
                assert_eq!(img.at(ix, k), 0.0, "pixel ({x}, {z})");
            }
        }
    }
}

fn test_field(nx: usize, nz: usize) -> Field2 {
    let grid = Grid2D::new(0.0, 0.0, 1.0, 1.0, nx, nz).unwrap();
    Field2::from_fn(grid, |x, z| {
        let step = if x + 0.5 * z > 14.0 { 1600.0 } else { 1450.0 };
        step + 37.0 * ((x * 0.7).sin() * (z * 0.31).cos())
            + if (x as usize * 7 + z as usize * 3) % 11 == 0 {
                400.0
            } else {
                0.0
            }
    })
}

#[test]
fn gaussian_blur_matches_direct_convolution() {
    let field = test_field(23, 19);
    let g = field.grid;
    for sigma in [0.7, 2.0, 3.3] {
        let blurred = gaussian_blur(&field, sigma);
        let half = (3.0 * sigma).ceil() as isize;
        for k in 0..g.nz as isize {
            for i in 0..g.nx as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for dk in -half..=half {
                    for di in -half..=half {
                        let w = (-((di * di + dk * dk) as f64) / (2.0 * sigma * sigma)).exp();
                        let ii = (i + di).clamp(0, g.nx as isize - 1) as usize;
                        let kk = (k + dk).clamp(0, g.nz as isize - 1) as usize;
                        acc += w * field.at(ii, kk);
                        norm += w;
                    }
                }
                let want = acc / norm;
                let got = blurred.at(i as usize, k as usize);
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs(),
                    "sigma {sigma} ({i}, {k}): {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn median_filter_matches_sorting() {
    let field = test_field(17, 13);
    let g = field.grid;
    for r in [1isize, 2] {
        let filtered = median_filter(&field, r as usize);
        for k in 0..g.nz as isize {
            for i in 0..g.nx as isize {
                let mut window = Vec::new();
                for dk in -r..=r {
                    for di in -r..=r {
                        let ii = (i + di).clamp(0, g.nx as isize - 1) as usize;
                        let kk = (k + dk).clamp(0, g.nz as isize - 1) as usize;
                        window.push(field.at(ii, kk));
                    }
                }
                window.sort_by(f64::total_cmp);
                assert_eq!(
                    filtered.at(i as usize, k as usize),
                    window[window.len() / 2]
                );
            }
        }
    }
}

#[test]
fn envelope_of_a_modulated_tone_is_its_gaussian() {
    let nz = 400;
    let grid = Grid2D::new(0.0, 0.0, 1.0, 1.0, 3, nz).unwrap();
    let (center, width, period) = (200.0, 25.0, 8.0);
    let gauss = |z: f64| (-(z - center).powi(2) / (2.0 * width * width)).exp();
    let rf = Field2::from_fn(grid, |x, z| {
        (1.0 + x) * gauss(z) * (2.0 * std::f64::consts::PI * z / period).cos()
    });
    let env = envelope_detect(&rf);
    for i in 0..3 {
        for k in 100..300 {
            let want = (1.0 + i as f64) * gauss(k as f64);
            assert!(
                (env.at(i, k) - want).abs() < 1e-3 * (1.0 + i as f64),
                "column {i} depth {k}"
            );
        }
    }
    let (_, zpk) = argmax(&env);
    assert!((zpk - center).abs() <= 1.0);
}

#[test]
fn log_compression_normalizes_and_clamps() {
    let grid = Grid2D::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
    let env = Field2::new(grid, vec![2.0, 1.0, 0.02, 0.0]).unwrap();
    let db = log_compress(&env, 30.0).unwrap();
    assert_eq!(db.data[0], 0.0);
    assert!((db.data[1] + 20.0 * 2f64.log10()).abs() < 1e-12);
    assert_eq!(db.data[2], -30.0);
    assert_eq!(db.data[3], -30.0);
    assert!(log_compress(&env, 0.0).is_err());
}

/// Desk-sized probe: 64 elements at 0.3 mm, 3 MHz, transmits focused at 30 mm.
fn desk_probe(
    n_transmits: usize,
) -> (
    TransducerArray,
    Vec<fmdas::delays::TransmitEvent>,
    PulseSpec,
) {
    let array = TransducerArray::new(64, 0.3e-3, 3e6, 1540.0).unwrap();
    let scheme = TransmitScheme {
        n_transmits,
        focal_depth: 30e-3,
        f_number: 2.0,
    };
    let events = build_transmit_events(&array, &scheme).unwrap();
    (
        array,
        events,
        PulseSpec {
            f0: 3e6,
            fractional_bandwidth: 0.6,
        },
    )
}

fn peak_near(
    scatterer: (f64, f64),
    sim: &dyn DelayProvider,
    recon: &dyn DelayProvider,
    array: &TransducerArray,
    events: &[fmdas::delays::TransmitEvent],
    pulse: &PulseSpec,
) -> (f64, f64) {
    let scatterers = [Scatterer {
        x: scatterer.0,
        z: scatterer.1,
        amplitude: 1.0,
    }];
    let rf = simulate_with(
        &scatterers,
        sim,
        array,
        events,
        pulse,
        &SimConfig::default(),
    )
    .unwrap();
    let pixels = Grid2D::new(
        scatterer.0 - 3e-3,
        scatterer.1 - 3e-3,
        50e-6,
        25e-6,
        121,
        241,
    )
    .unwrap();
    let img = das_beamform(&rf, recon, &ApodizationSpec::default(), &pixels).unwrap();
    argmax(&envelope_detect(&img))
}

#[test]
fn homogeneous_closed_loop_focuses_on_the_scatterer() {
    let (array, events, pulse) = desk_probe(16);
    let geo = GeometricDelays::new(&array, &events, 1540.0).unwrap();
    let truth = (1.2e-3, 25e-3);
    let peak = peak_near(truth, &geo, &geo, &array, &events, &pulse);
    assert!(
        (peak.0 - truth.0).abs() <= 50e-6 && (peak.1 - truth.1).abs() <= 25e-6,
        "peak {peak:?}"
    );
}

#[test]
fn inclined_fat_displaces_das_but_not_fm_das() {
    let (array, events, pulse) = desk_probe(16);
    let lambda = array.wavelength();
    let grid = Grid2D::centered(19.2e-3, 60e-3, 150e-6).unwrap();
    let (top, thickness, tilt) = (5e-3, 10e-3, 25f64.to_radians());
    let sos = SosMap::from_fn(grid, |x, z| {
        let upper = top + x * tilt.tan();
        if z >= upper && z <= upper + thickness / tilt.cos() {
            1400.0
        } else {
            1540.0
        }
    })
    .unwrap();
    let fm = FmDelays::build(&sos, &array, &events, &FmConfig::for_grid(&grid)).unwrap();
    let geo = GeometricDelays::new(&array, &events, 1540.0).unwrap();
    let truth = (0.0, 52e-3);
    let dist = |p: (f64, f64)| (p.0 - truth.0).hypot(p.1 - truth.1);
    let fm_peak = peak_near(truth, &fm, &fm, &array, &events, &pulse);
    let das_peak = peak_near(truth, &fm, &geo, &array, &events, &pulse);
    assert!(
        dist(fm_peak) <= lambda,
        "fm-das peak {fm_peak:?} is {} m off",
        dist(fm_peak)
    );
    assert!(
        dist(das_peak) > lambda,
        "das peak {das_peak:?} is only {} m off",
        dist(das_peak)
    );
}
