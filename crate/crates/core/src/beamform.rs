//! Delay-and-sum beamforming, envelope detection and log compression.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::delays::DelayProvider;
use crate::error::{Error, Result};
use crate::medium::{Field2, Grid2D, SosMap};
use crate::rf::RfDataSet;

/// Delay model used to form an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BeamformMethod {
    /// Straight rays at a constant speed of sound.
    #[serde(rename = "das")]
    Das,
    /// Fast-marching travel times on a speed-of-sound map.
    #[serde(rename = "fm-das")]
    FmDas,
}

impl BeamformMethod {
    pub const ALL: [BeamformMethod; 2] = [BeamformMethod::Das, BeamformMethod::FmDas];

    pub fn as_str(self) -> &'static str {
        match self {
            BeamformMethod::Das => "das",
            BeamformMethod::FmDas => "fm-das",
        }
    }
}

impl std::fmt::Display for BeamformMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BeamformMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "das" => Ok(BeamformMethod::Das),
            "fm-das" => Ok(BeamformMethod::FmDas),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (valid: das, fm-das)"
            ))),
        }
    }
}

/// Receive apodization window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hanning,
    Boxcar,
}

impl Window {
    /// Weight at normalized offset `u = (x_i - x_p) / aperture`, `|u| <= 1/2`.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Window::Hanning => 0.5 * (1.0 + (2.0 * std::f64::consts::PI * u).cos()),
            Window::Boxcar => 1.0,
        }
    }
}

/// Dynamic receive apodization and optional transmit gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApodizationSpec {
    pub window: Window,
    /// Receive F-number: the aperture at depth `z` spans `z / f_number`.
    pub rx_f_number: f64,
    /// Restrict each transmission to an hourglass around its beam axis.
    #[serde(default)]
    pub tx_gate: bool,
}

impl Default for ApodizationSpec {
    fn default() -> Self {
        ApodizationSpec {
            window: Window::Hanning,
            rx_f_number: 2.0,
            tx_gate: false,
        }
    }
}

impl ApodizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rx_f_number > 0.0 && self.rx_f_number.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "receive F-number must be positive, got {}",
                self.rx_f_number
            )));
        }
        Ok(())
    }

    /// Receive weight of an element at lateral offset `dx` from a pixel at
    /// depth `z`; zero outside the dynamic aperture.
    #[inline]
    pub fn rx_weight(&self, dx: f64, z: f64) -> f64 {
        let aperture = z.max(0.0) / self.rx_f_number;
        if dx.abs() > aperture / 2.0 {
            return 0.0;
        }
        if aperture == 0.0 {
            return self.window.weight(0.0);
        }
        self.window.weight(dx / aperture)
    }
}

/// Linear interpolation of a trace at a fractional sample index; zero outside
/// `[0, len - 1]`.
#[inline]
pub fn interp_linear(trace: &[f64], pos: f64) -> f64 {
    let last = trace.len() - 1;
    if !(pos >= 0.0) || pos > last as f64 {
        return 0.0;
    }
    let i0 = pos.floor() as usize;
    if i0 >= last {
        return trace[last];
    }
    let frac = pos - i0 as f64;
    trace[i0] + frac * (trace[i0 + 1] - trace[i0])
}

/// Delay-and-sum over every transmission and element for every pixel.
///
/// Pixel rows are processed in parallel; within a pixel the sum runs over
/// transmissions in the outer loop and elements in the inner loop, so the
/// result does not depend on the thread count.
pub fn das_beamform(
    rf: &RfDataSet,
    provider: &dyn DelayProvider,
    apod: &ApodizationSpec,
    pixel_grid: &Grid2D,
) -> Result<Field2> {
    apod.validate()?;
    pixel_grid.validate()?;
    if provider.n_elements() != rf.n_elements() || provider.n_transmits() != rf.n_transmits() {
        return Err(Error::DimensionMismatch(format!(
            "delays cover {} transmits x {} elements, RF has {} x {}",
            provider.n_transmits(),
            provider.n_elements(),
            rf.n_transmits(),
            rf.n_elements()
        )));
    }
    let g = *pixel_grid;
    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(g.nx)
        .enumerate()
        .try_for_each(|(k, row)| -> Result<()> {
            let z = g.z(k);
            let mut active: Vec<(usize, f64, f64)> = Vec::with_capacity(rf.n_elements());
            for (ix, value) in row.iter_mut().enumerate() {
                *value = beamform_pixel(rf, provider, apod, g.x(ix), z, &mut active)?;
            }
            Ok(())
        })?;
    Field2::new(g, out)
}

fn beamform_pixel(
    rf: &RfDataSet,
    provider: &dyn DelayProvider,
    apod: &ApodizationSpec,
    x: f64,
    z: f64,
    active: &mut Vec<(usize, f64, f64)>,
) -> Result<f64> {
    active.clear();
    for (i, &xi) in rf.array.element_x.iter().enumerate() {
        let w = apod.rx_weight(xi - x, z);
        if w > 0.0 {
            active.push((i, w, provider.rx_delay(i, x, z)?));
        }
    }
    if active.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (j, event) in rf.events.iter().enumerate() {
        if apod.tx_gate && !inside_hourglass(rf, event, x, z) {
            continue;
        }
        let tx = provider.tx_delay(j, x, z)?;
        for &(i, w, rx) in active.iter() {
            let pos = (tx + rx - rf.t0) * rf.fs;
            sum += w * interp_linear(rf.trace(j, i), pos);
        }
    }
    Ok(sum)
}

/// Beam hourglass: half-width shrinks linearly from the aperture half-width
/// at the surface to one wavelength at the focus, then widens again.
fn inside_hourglass(rf: &RfDataSet, event: &crate::delays::TransmitEvent, x: f64, z: f64) -> bool {
    let (xt, _) = event.center;
    let (xf, zf) = event.focus;
    let half_aperture = (event.aperture_len().saturating_sub(1)) as f64 * rf.array.pitch / 2.0;
    let axis = xt + (xf - xt) * z / zf;
    let half_width = (half_aperture * (z - zf).abs() / zf).max(rf.array.wavelength());
    (x - axis).abs() <= half_width
}

/// Magnitude of the analytic signal of every lateral column (along depth).
///
/// Columns are zero-padded to twice their length before the transform so the
/// top and bottom of the image do not wrap into each other.
pub fn envelope_detect(rf_sum: &Field2) -> Field2 {
    let g = rf_sum.grid;
    let n = 2 * g.nz;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let columns: Vec<Vec<f64>> = (0..g.nx)
        .into_par_iter()
        .map(|i| {
            let mut buf: Vec<Complex64> = (0..n)
                .map(|k| Complex64::new(if k < g.nz { rf_sum.at(i, k) } else { 0.0 }, 0.0))
                .collect();
            fwd.process(&mut buf);
            // One-sided spectrum: keep DC (and Nyquist), double positive bins.
            let half = n / 2;
            for (b, v) in buf.iter_mut().enumerate() {
                let gain = if b == 0 || (n % 2 == 0 && b == half) {
                    1.0
                } else if b < n.div_ceil(2) {
                    2.0
                } else {
                    0.0
                };
                *v *= gain;
            }
            inv.process(&mut buf);
            buf[..g.nz].iter().map(|c| c.norm() / n as f64).collect()
        })
        .collect();
    let mut data = vec![0.0; g.len()];
    for (i, col) in columns.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            data[g.index(i, k)] = v;
        }
    }
    Field2 { grid: g, data }
}

/// `20 log10(env / max)` clamped to `[-dynamic_range_db, 0]`.
pub fn log_compress(envelope: &Field2, dynamic_range_db: f64) -> Result<Field2> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic range must be positive, got {dynamic_range_db}"
        )));
    }
    let max = envelope.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::InvalidArgument(
            "envelope has no positive value to normalize by".into(),
        ));
    }
    let data = envelope
        .data
        .iter()
        .map(|&v| {
            let db = if v > 0.0 {
                20.0 * (v / max).log10()
            } else {
                f64::NEG_INFINITY
            };
            db.clamp(-dynamic_range_db, 0.0)
        })
        .collect();
    Ok(Field2 {
        grid: envelope.grid,
        data,
    })
}

/// The stages of one reconstructed image.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedImage {
    pub rf_sum: Field2,
    pub envelope: Field2,
    pub log_db: Field2,
}

impl BeamformedImage {
    pub fn from_rf_sum(rf_sum: Field2, dynamic_range_db: f64) -> Result<Self> {
        let envelope = envelope_detect(&rf_sum);
        let log_db = log_compress(&envelope, dynamic_range_db)?;
        Ok(BeamformedImage {
            rf_sum,
            envelope,
            log_db,
        })
    }

    pub fn pixel_grid(&self) -> &Grid2D {
        &self.rf_sum.grid
    }
}

/// Median filter (square window, edge-replicated) followed by a Gaussian blur
/// of `smooth_sigma` nodes. Zero radius and zero sigma skip the respective
/// stage.
pub fn preprocess_sos(map: &SosMap, median_radius: usize, smooth_sigma: f64) -> Result<SosMap> {
    if !(smooth_sigma >= 0.0 && smooth_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing sigma must be >= 0, got {smooth_sigma}"
        )));
    }
    let mut field = map.field().clone();
    if median_radius > 0 {
        field = median_filter(&field, median_radius);
    }
    if smooth_sigma > 0.0 {
        field = gaussian_blur(&field, smooth_sigma);
    }
    SosMap::new(field)
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

pub fn median_filter(field: &Field2, radius: usize) -> Field2 {
    let g = field.grid;
    let r = radius as isize;
    let data = (0..g.len())
        .into_par_iter()
        .map_init(Vec::new, |window, idx| {
            let (i, k) = ((idx % g.nx) as isize, (idx / g.nx) as isize);
            window.clear();
            for dk in -r..=r {
                for di in -r..=r {
                    window.push(field.at(clamp_index(i + di, g.nx), clamp_index(k + dk, g.nz)));
                }
            }
            let mid = window.len() / 2;
            *window.select_nth_unstable_by(mid, f64::total_cmp).1
        })
        .collect();
    Field2 { grid: g, data }
}

/// Normalized sampled Gaussian truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(field: &Field2, sigma: f64) -> Field2 {
    let g = field.grid;
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as isize;
    let pass = |src: &Field2, lateral: bool| -> Field2 {
        let data = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let (i, k) = ((idx % g.nx) as isize, (idx / g.nx) as isize);
                kernel
                    .iter()
                    .enumerate()
                    .map(|(t, w)| {
                        let off = t as isize - half;
                        let v = if lateral {
                            src.at(clamp_index(i + off, g.nx), k as usize)
                        } else {
                            src.at(i as usize, clamp_index(k + off, g.nz))
                        };
                        w * v
                    })
                    .sum()
            })
            .collect();
        Field2 { grid: g, data }
    };
    pass(&pass(field, true), false)
}
