//! Round-trip delays for focused transmissions.
//!
//! Every transmit is modeled with a virtual source at its focal point. The
//! transmit delay to a pixel is the time from the aperture center to the
//! focus, plus the time from the focus to the pixel, the latter negated for
//! pixels shallower than the focus. The receive delay is the one-way time
//! from the pixel back to an element.
//!
//! Two interchangeable [`DelayProvider`]s implement this: [`GeometricDelays`]
//! with straight rays at a constant speed, and [`FmDelays`] which reads
//! fast-marching travel-time fields computed on a speed-of-sound map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eikonal::{EikonalSolver, FmConfig, TravelTimeField};
use crate::error::{Error, Result};
use crate::medium::{Field2, Grid2D, SosMap, TransducerArray};

/// One focused transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitEvent {
    pub index: usize,
    /// First element of the contiguous transmit sub-aperture.
    pub aperture_start: usize,
    /// Transmit weight for each aperture element, in `[0, 1]`.
    pub apodization: Vec<f64>,
    pub center: (f64, f64),
    pub focus: (f64, f64),
}

impl TransmitEvent {
    pub fn aperture_len(&self) -> usize {
        self.apodization.len()
    }

    pub fn aperture(&self) -> std::ops::Range<usize> {
        self.aperture_start..self.aperture_start + self.aperture_len()
    }

    pub fn validate(&self, array: &TransducerArray) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::InvalidArgument(format!(
                "transmit {}: {msg}",
                self.index
            )))
        };
        if self.apodization.is_empty() || self.aperture().end > array.n_elements() {
            return bad(format!(
                "aperture {:?} outside the {}-element array",
                self.aperture(),
                array.n_elements()
            ));
        }
        if self.center.1 != 0.0 {
            return bad(format!(
                "aperture center depth must be 0, got {}",
                self.center.1
            ));
        }
        if !(self.focus.1 > 0.0 && self.focus.0.is_finite() && self.focus.1.is_finite()) {
            return bad(format!(
                "focal depth must be positive, got {}",
                self.focus.1
            ));
        }
        if self.apodization.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad("apodization weights must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Symmetric Hann window of length `n` with no zero end points.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let phase = 2.0 * std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64;
            0.5 * (1.0 - phase.cos())
        })
        .collect()
}

/// How the focused transmissions are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitScheme {
    /// Number of transmissions `M`.
    pub n_transmits: usize,
    /// Focal depth shared by all transmissions, meters.
    pub focal_depth: f64,
    /// Transmit F-number; sets the sub-aperture width at the focus.
    pub f_number: f64,
}

impl TransmitScheme {
    pub fn validate(&self) -> Result<()> {
        if self.n_transmits == 0 {
            return Err(Error::InvalidArgument(
                "at least one transmission is required".into(),
            ));
        }
        if !(self.focal_depth > 0.0 && self.focal_depth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal depth must be positive, got {}",
                self.focal_depth
            )));
        }
        if !(self.f_number > 0.0 && self.f_number.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "transmit F-number must be positive, got {}",
                self.f_number
            )));
        }
        Ok(())
    }
}

/// Focal points spaced uniformly between the outermost elements, each with a
/// Hann-apodized sub-aperture `focal_depth / f_number` wide centered on the
/// element nearest the focus and truncated at the array edges.
pub fn build_transmit_events(
    array: &TransducerArray,
    scheme: &TransmitScheme,
) -> Result<Vec<TransmitEvent>> {
    scheme.validate()?;
    let n = array.n_elements();
    let (x_lo, x_hi) = (array.element_x[0], array.element_x[n - 1]);
    let width_elems = ((scheme.focal_depth / scheme.f_number) / array.pitch)
        .round()
        .max(1.0) as usize;
    let events = (0..scheme.n_transmits)
        .map(|j| {
            let x_f = if scheme.n_transmits == 1 {
                0.5 * (x_lo + x_hi)
            } else {
                x_lo + (x_hi - x_lo) * j as f64 / (scheme.n_transmits - 1) as f64
            };
            let nearest = ((x_f - x_lo) / array.pitch).round() as isize;
            let lo = (nearest - (width_elems as isize) / 2).max(0) as usize;
            let hi = ((nearest + (width_elems as isize + 1) / 2) as usize).min(n);
            let hi = hi.max(lo + 1);
            let x_t = array.element_x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            TransmitEvent {
                index: j,
                aperture_start: lo,
                apodization: hann_window(hi - lo),
                center: (x_t, 0.0),
                focus: (x_f, scheme.focal_depth),
            }
        })
        .collect();
    Ok(events)
}

/// Transmit delay with straight rays at speed `c`.
pub fn geometric_tx_delay(event: &TransmitEvent, pixel: (f64, f64), c: f64) -> f64 {
    let (xt, zt) = event.center;
    let (xf, zf) = event.focus;
    let (xp, zp) = pixel;
    let to_focus = (xt - xf).hypot(zt - zf) / c;
    let focus_to_pixel = (xp - xf).hypot(zp - zf) / c;
    if zp < zf {
        to_focus - focus_to_pixel
    } else {
        to_focus + focus_to_pixel
    }
}

/// Receive delay with a straight ray at speed `c`.
pub fn geometric_rx_delay(element: (f64, f64), pixel: (f64, f64), c: f64) -> f64 {
    (element.0 - pixel.0).hypot(element.1 - pixel.1) / c
}

/// Refraction-corrected transmit delay from the two fast-marching fields of
/// one transmission: one sourced at the aperture center, one at the focus.
pub fn fm_tx_delay(
    event: &TransmitEvent,
    pixel: (f64, f64),
    from_center: &TravelTimeField,
    from_focus: &TravelTimeField,
) -> Result<f64> {
    let to_focus = from_center.sample(event.focus.0, event.focus.1)?;
    Ok(to_focus + signed_focus_leg(event, pixel, from_focus)?)
}

fn signed_focus_leg(
    event: &TransmitEvent,
    pixel: (f64, f64),
    from_focus: &TravelTimeField,
) -> Result<f64> {
    let leg = from_focus.sample(pixel.0, pixel.1)?;
    Ok(if pixel.1 < event.focus.1 { -leg } else { leg })
}

/// Refraction-corrected receive delay: field of element `i` at the pixel.
pub fn fm_rx_delay(
    element: usize,
    pixel: (f64, f64),
    receive_fields: &[TravelTimeField],
) -> Result<f64> {
    let field = receive_fields.get(element).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no receive field for element {element} ({} fields)",
            receive_fields.len()
        ))
    })?;
    field.sample(pixel.0, pixel.1)
}

/// Source of per-pixel transmit and receive delays.
pub trait DelayProvider: Sync {
    fn n_transmits(&self) -> usize;

    fn n_elements(&self) -> usize;

    /// Transmit delay of event `j` to the pixel at `(x, z)`, seconds.
    fn tx_delay(&self, j: usize, x: f64, z: f64) -> Result<f64>;

    /// Receive delay from `(x, z)` to element `i`, seconds.
    fn rx_delay(&self, i: usize, x: f64, z: f64) -> Result<f64>;

    /// Round-trip delay.
    fn delay(&self, j: usize, i: usize, x: f64, z: f64) -> Result<f64> {
        Ok(self.tx_delay(j, x, z)? + self.rx_delay(i, x, z)?)
    }
}

/// Conventional constant-speed delays.
#[derive(Debug, Clone)]
pub struct GeometricDelays {
    events: Vec<TransmitEvent>,
    element_x: Vec<f64>,
    c: f64,
}

impl GeometricDelays {
    pub fn new(array: &TransducerArray, events: &[TransmitEvent], c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "speed of sound must be positive, got {c}"
            )));
        }
        for e in events {
            e.validate(array)?;
        }
        Ok(GeometricDelays {
            events: events.to_vec(),
            element_x: array.element_x.clone(),
            c,
        })
    }
}

impl DelayProvider for GeometricDelays {
    fn n_transmits(&self) -> usize {
        self.events.len()
    }

    fn n_elements(&self) -> usize {
        self.element_x.len()
    }

    fn tx_delay(&self, j: usize, x: f64, z: f64) -> Result<f64> {
        Ok(geometric_tx_delay(&self.events[j], (x, z), self.c))
    }

    fn rx_delay(&self, i: usize, x: f64, z: f64) -> Result<f64> {
        Ok(geometric_rx_delay((self.element_x[i], 0.0), (x, z), self.c))
    }
}

/// Fast-marching delays on a speed-of-sound map.
///
/// Construction performs exactly `2M + N` eikonal solves: one from each
/// aperture center (sampled once at its focus and then dropped), one from
/// each focus, and one from each element.
#[derive(Debug, Clone)]
pub struct FmDelays {
    events: Vec<TransmitEvent>,
    center_to_focus: Vec<f64>,
    focus_fields: Vec<TravelTimeField>,
    receive_fields: Vec<TravelTimeField>,
    solves: usize,
}

impl FmDelays {
    pub fn build(
        sos: &SosMap,
        array: &TransducerArray,
        events: &[TransmitEvent],
        cfg: &FmConfig,
    ) -> Result<Self> {
        for e in events {
            e.validate(array)?;
            let grid = sos.grid();
            for (x, z) in [e.center, e.focus] {
                if !grid.contains(x, z) {
                    return Err(Error::OutOfBounds { x, z });
                }
            }
        }
        let solver = EikonalSolver::new(sos, *cfg)?;
        let center_to_focus = events
            .par_iter()
            .map(|e| solver.solve(e.center)?.sample(e.focus.0, e.focus.1))
            .collect::<Result<Vec<_>>>()?;
        let focus_fields = events
            .par_iter()
            .map(|e| solver.solve(e.focus))
            .collect::<Result<Vec<_>>>()?;
        let receive_fields = crate::eikonal::receive_fields_with(&solver, array)?;
        Ok(FmDelays {
            events: events.to_vec(),
            center_to_focus,
            focus_fields,
            receive_fields,
            solves: solver.solve_count(),
        })
    }

    /// Number of eikonal solves performed while building.
    pub fn solve_count(&self) -> usize {
        self.solves
    }

    pub fn receive_fields(&self) -> &[TravelTimeField] {
        &self.receive_fields
    }

    pub fn focus_fields(&self) -> &[TravelTimeField] {
        &self.focus_fields
    }

    /// Aperture-center-to-focus time of each transmission.
    pub fn center_to_focus(&self) -> &[f64] {
        &self.center_to_focus
    }
}

impl DelayProvider for FmDelays {
    fn n_transmits(&self) -> usize {
        self.events.len()
    }

    fn n_elements(&self) -> usize {
        self.receive_fields.len()
    }

    fn tx_delay(&self, j: usize, x: f64, z: f64) -> Result<f64> {
        Ok(self.center_to_focus[j]
            + signed_focus_leg(&self.events[j], (x, z), &self.focus_fields[j])?)
    }

    fn rx_delay(&self, i: usize, x: f64, z: f64) -> Result<f64> {
        fm_rx_delay(i, (x, z), &self.receive_fields)
    }
}

/// Per-pixel transmit and receive delays materialized on a pixel grid.
///
/// The round-trip table of a `(j, i)` pair is formed on demand as
/// `tx[j] + rx[i]`, which is bit-identical to [`DelayProvider::delay`].
#[derive(Debug, Clone)]
pub struct DelayTables {
    pub pixel_grid: Grid2D,
    pub tx: Vec<Vec<f64>>,
    pub rx: Vec<Vec<f64>>,
}

impl DelayTables {
    /// Round-trip delay raster of transmit `j` and element `i`.
    pub fn pair(&self, j: usize, i: usize) -> Field2 {
        let data = self.tx[j]
            .iter()
            .zip(&self.rx[i])
            .map(|(t, r)| t + r)
            .collect();
        Field2 {
            grid: self.pixel_grid,
            data,
        }
    }
}

pub fn build_delay_tables(
    provider: &dyn DelayProvider,
    pixel_grid: &Grid2D,
) -> Result<DelayTables> {
    let raster = |f: &(dyn Fn(f64, f64) -> Result<f64> + Sync)| -> Result<Vec<f64>> {
        (0..pixel_grid.len())
            .into_par_iter()
            .map(|p| {
                f(
                    pixel_grid.x(p % pixel_grid.nx),
                    pixel_grid.z(p / pixel_grid.nx),
                )
            })
            .collect()
    };
    let tx = (0..provider.n_transmits())
        .map(|j| raster(&|x, z| provider.tx_delay(j, x, z)))
        .collect::<Result<Vec<_>>>()?;
    let rx = (0..provider.n_elements())
        .map(|i| raster(&|x, z| provider.rx_delay(i, x, z)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DelayTables {
        pixel_grid: *pixel_grid,
        tx,
        rx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::make_array;

    fn on_axis_event() -> TransmitEvent {
        TransmitEvent {
            index: 0,
            aperture_start: 0,
            apodization: vec![1.0],
            center: (0.0, 0.0),
            focus: (0.0, 60e-3),
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn geometric_tx_examples() {
        let e = on_axis_event();
        assert!(close(
            geometric_tx_delay(&e, (0.0, 60e-3), 1540.0),
            38.961e-6,
            1e-4
        ));
        assert!(close(
            geometric_tx_delay(&e, (0.0, 30e-3), 1540.0),
            19.481e-6,
            1e-4
        ));
        assert!(close(
            geometric_tx_delay(&e, (0.0, 90e-3), 1540.0),
            58.442e-6,
            1e-4
        ));
    }

    #[test]
    fn geometric_rx_examples() {
        assert!(close(
            geometric_rx_delay((0.0, 0.0), (0.0, 77e-3), 1540.0),
            50e-6,
            1e-12
        ));
        assert!(close(
            geometric_rx_delay((3e-3, 0.0), (0.0, 4e-3), 1540.0),
            5e-3 / 1540.0,
            1e-12
        ));
        assert_eq!(geometric_rx_delay((1e-3, 0.0), (1e-3, 0.0), 1540.0), 0.0);
    }

    #[test]
    fn tx_delay_monotone_in_depth_and_continuous_on_axis() {
        let e = on_axis_event();
        for &x in &[0.0, 2e-3, -7e-3] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..1200 {
                let z = k as f64 * 0.1e-3;
                let d = geometric_tx_delay(&e, (x, z), 1540.0);
                assert!(d >= prev, "x {x} z {z}");
                prev = d;
            }
        }
        let above = geometric_tx_delay(&e, (0.0, 60e-3 - 1e-9), 1540.0);
        let below = geometric_tx_delay(&e, (0.0, 60e-3 + 1e-9), 1540.0);
        assert!((below - above).abs() < 2e-12);
    }

    #[test]
    fn transmit_layout() {
        let array = make_array(128, 0.3e-3, 3e6).unwrap();
        let scheme = TransmitScheme {
            n_transmits: 128,
            focal_depth: 60e-3,
            f_number: 2.0,
        };
        let events = build_transmit_events(&array, &scheme).unwrap();
        assert_eq!(events.len(), 128);
        let mid = &events[64];
        assert_eq!(mid.aperture_len(), 100);
        assert!(mid.focus.1 == 60e-3);
        // edge transmissions are truncated, and centered on what remains
        assert_eq!(events[0].aperture_start, 0);
        assert_eq!(events[0].aperture_len(), 50);
        assert!(events[0].center.0 > events[0].focus.0);
        for e in &events {
            e.validate(&array).unwrap();
            let w = &e.apodization;
            for k in 0..w.len() {
                assert!((w[k] - w[w.len() - 1 - k]).abs() < 1e-12);
            }
        }
        assert!((events[0].focus.0 - array.element_x[0]).abs() < 1e-15);
        assert!((events[127].focus.0 - array.element_x[127]).abs() < 1e-15);
    }

    #[test]
    fn invalid_scheme_rejected() {
        let array = make_array(16, 0.3e-3, 3e6).unwrap();
        let bad = TransmitScheme {
            n_transmits: 0,
            focal_depth: 30e-3,
            f_number: 2.0,
        };
        assert!(build_transmit_events(&array, &bad).is_err());
        let bad = TransmitScheme {
            n_transmits: 4,
            focal_depth: -1.0,
            f_number: 2.0,
        };
        assert!(build_transmit_events(&array, &bad).is_err());
    }

    #[test]
    fn hann_window_is_symmetric_and_positive() {
        let w = hann_window(5);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((w[2] - 1.0).abs() < 1e-15);
        assert!((w[0] - w[4]).abs() < 1e-15);
    }

    #[test]
    fn tables_match_provider_bitwise() {
        let array = make_array(4, 0.5e-3, 3e6).unwrap();
        let scheme = TransmitScheme {
            n_transmits: 3,
            focal_depth: 5e-3,
            f_number: 2.0,
        };
        let events = build_transmit_events(&array, &scheme).unwrap();
        let p = GeometricDelays::new(&array, &events, 1540.0).unwrap();
        let grid = Grid2D::new(-1e-3, 1e-3, 0.25e-3, 0.5e-3, 9, 12).unwrap();
        let tables = build_delay_tables(&p, &grid).unwrap();
        for j in 0..3 {
            for i in 0..4 {
                let pair = tables.pair(j, i);
                for k in 0..grid.nz {
                    for ix in 0..grid.nx {
                        let lazy = p.delay(j, i, grid.x(ix), grid.z(k)).unwrap();
                        assert_eq!(pair.at(ix, k).to_bits(), lazy.to_bits());
                    }
                }
            }
        }
    }
}
