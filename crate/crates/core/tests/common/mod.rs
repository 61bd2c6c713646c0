// Independent reference implementations shared by the integration tests and
// the acceptance target. None of them call into the crate's numerics.
#![allow(dead_code)]

use fmdas::beamform::{ApodizationSpec, Window};
use fmdas::delays::DelayProvider;
use fmdas::medium::{Field2, Grid2D};
use fmdas::rf::RfDataSet;

/// Two-layer first arrival by Fermat's principle: speed `c1` above the
/// horizontal interface at depth `h`, `c2` below. The crossing point is
/// scanned at `step` between the two lateral positions.
pub fn fermat_two_layer(
    src: (f64, f64),
    p: (f64, f64),
    h: f64,
    c1: f64,
    c2: f64,
    step: f64,
) -> f64 {
    let (top, bottom, c_top, c_bottom) = if src.1 <= p.1 {
        (src, p, c1, c2)
    } else {
        (p, src, c1, c2)
    };
    if bottom.1 <= h {
        return ((p.0 - src.0).powi(2) + (p.1 - src.1).powi(2)).sqrt() / c1;
    }
    if top.1 >= h {
        return ((p.0 - src.0).powi(2) + (p.1 - src.1).powi(2)).sqrt() / c2;
    }
    let lo = top.0.min(bottom.0);
    let hi = top.0.max(bottom.0);
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best = f64::INFINITY;
    for s in 0..=n {
        let xc = (lo + s as f64 * step).min(hi);
        let a = ((xc - top.0).powi(2) + (h - top.1).powi(2)).sqrt() / c_top;
        let b = ((bottom.0 - xc).powi(2) + (bottom.1 - h).powi(2)).sqrt() / c_bottom;
        best = best.min(a + b);
    }
    best
}

/// Travel time in the linear medium `c(z) = c0 + g z` between two points.
pub fn gradient_time(src: (f64, f64), p: (f64, f64), c0: f64, g: f64) -> f64 {
    let cs = c0 + g * src.1;
    let cp = c0 + g * p.1;
    let r2 = (p.0 - src.0).powi(2) + (p.1 - src.1).powi(2);
    (1.0 + g * g * r2 / (2.0 * cs * cp)).acosh() / g
}

/// Receive weight written from the window definition: `cos^2(pi u)` for the
/// Hann window inside `|x_i - x_p| <= z / (2 F)`.
pub fn reference_rx_weight(apod: &ApodizationSpec, dx: f64, z: f64) -> f64 {
    let aperture = z / apod.rx_f_number;
    if dx.abs() > aperture / 2.0 || aperture <= 0.0 {
        return 0.0;
    }
    match apod.window {
        Window::Hanning => (std::f64::consts::PI * dx / aperture).cos().powi(2),
        Window::Boxcar => 1.0,
    }
}

/// Trace value at time `t` by linear interpolation, zero outside the record.
pub fn reference_sample(trace: &[f64], t0: f64, fs: f64, t: f64) -> f64 {
    let pos = (t - t0) * fs;
    let last = (trace.len() - 1) as f64;
    if pos < 0.0 || pos > last || pos.is_nan() {
        return 0.0;
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = lo as usize;
    if frac == 0.0 {
        return trace[lo];
    }
    (1.0 - frac) * trace[lo] + frac * trace[lo + 1]
}

/// Brute-force delay-and-sum: every pixel, every transmission, every element,
/// with delays queried pointwise from the provider.
pub fn naive_das(
    rf: &RfDataSet,
    provider: &dyn DelayProvider,
    apod: &ApodizationSpec,
    grid: &Grid2D,
) -> Field2 {
    Field2::from_fn(*grid, |x, z| {
        let mut sum = 0.0;
        for j in 0..rf.n_transmits() {
            for i in 0..rf.n_elements() {
                let w = reference_rx_weight(apod, rf.array.element_x[i] - x, z);
                if w == 0.0 {
                    continue;
                }
                let t = provider.tx_delay(j, x, z).unwrap() + provider.rx_delay(i, x, z).unwrap();
                sum += w * reference_sample(rf.trace(j, i), rf.t0, rf.fs, t);
            }
        }
        sum
    })
}

/// Location of the largest value of a field.
pub fn argmax(field: &Field2) -> (f64, f64) {
    let (idx, _) = field
        .data
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    let g = field.grid;
    (g.x(idx % g.nx), g.z(idx / g.nx))
}

/// Isotropic 2-D Gaussian blob of unit amplitude.
pub fn blob(grid: Grid2D, center: (f64, f64), sigma: f64) -> Field2 {
    Field2::from_fn(grid, |x, z| {
        (-((x - center.0).powi(2) + (z - center.1).powi(2)) / (2.0 * sigma * sigma)).exp()
    })
}
