//! Image-quality metrics: geometric distortion score and generalized CNR.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::beamform::BeamformMethod;
use crate::error::{Error, Result};
use crate::medium::Field2;
use crate::phantom::Scenario;

/// Peaks below this fraction of the image maximum (-60 dB) count as absent.
pub const NOISE_FLOOR: f64 = 1e-3;
/// Amplitude ratio of a -6 dB crossing.
pub const HALF_AMPLITUDE: f64 = 0.5;
pub const DEFAULT_GCNR_BINS: usize = 100;
pub const MIN_REGION_PIXELS: usize = 100;

/// Half-width of the default 5 lambda x 5 lambda search window.
pub fn default_search_radius(wavelength: f64) -> f64 {
    2.5 * wavelength
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub truth: (f64, f64),
    /// Envelope peak inside the search window.
    pub peak: Option<(f64, f64)>,
    /// Lateral -6 dB crossings on the peak row.
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub score: u8,
    pub found: bool,
}

impl TargetScore {
    pub fn width(&self) -> Option<f64> {
        Some(self.right? - self.left?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdsReport {
    pub targets: Vec<TargetScore>,
    pub mean: f64,
}

/// Scores each target 1 if the envelope peak near it and both lateral -6 dB
/// points of that peak lie within one wavelength of the true position.
///
/// The search window is the square of half-width `search_radius` centered on
/// the truth. A target is "not found" (score 0) when the window peak is below
/// [`NOISE_FLOOR`] times the image maximum or a -6 dB crossing runs off the
/// image edge.
pub fn gds(
    envelope: &Field2,
    targets: &[(f64, f64)],
    wavelength: f64,
    search_radius: f64,
) -> Result<GdsReport> {
    if !(wavelength > 0.0) || !(search_radius >= wavelength) {
        return Err(Error::InvalidArgument(format!(
            "need wavelength > 0 and search radius >= wavelength, got {wavelength} and {search_radius}"
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no point targets to score".into()));
    }
    let g = &envelope.grid;
    let image_max = envelope.max();
    let mut scores = Vec::with_capacity(targets.len());
    for &(xt, zt) in targets {
        if !g.contains(xt, zt) {
            return Err(Error::OutOfBounds { x: xt, z: zt });
        }
        let mut row = TargetScore {
            truth: (xt, zt),
            peak: None,
            left: None,
            right: None,
            score: 0,
            found: false,
        };

        let mut best: Option<(usize, usize, f64)> = None;
        for k in 0..g.nz {
            if (g.z(k) - zt).abs() > search_radius {
                continue;
            }
            for i in 0..g.nx {
                if (g.x(i) - xt).abs() > search_radius {
                    continue;
                }
                let v = envelope.at(i, k);
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, k, v));
                }
            }
        }
        let Some((ip, kp, peak)) = best else {
            scores.push(row);
            continue;
        };
        row.peak = Some((g.x(ip), g.z(kp)));
        if !(peak > NOISE_FLOOR * image_max) {
            scores.push(row);
            continue;
        }
        let level = HALF_AMPLITUDE * peak;
        row.left = crossing(envelope, ip, kp, level, -1);
        row.right = crossing(envelope, ip, kp, level, 1);
        if let (Some(l), Some(r)) = (row.left, row.right) {
            row.found = true;
            let (xp, zp) = (g.x(ip), g.z(kp));
            let far = [(xp, zp), (l, zp), (r, zp)]
                .iter()
                .map(|&(x, z)| (x - xt).hypot(z - zt))
                .fold(0.0, f64::max);
            row.score = u8::from(far <= wavelength);
        }
        scores.push(row);
    }
    let mean = scores.iter().map(|s| f64::from(s.score)).sum::<f64>() / scores.len() as f64;
    Ok(GdsReport {
        targets: scores,
        mean,
    })
}

/// Lateral position where the row through `(ip, kp)` first drops below
/// `level` walking in direction `step`, linearly interpolated.
fn crossing(envelope: &Field2, ip: usize, kp: usize, level: f64, step: isize) -> Option<f64> {
    let g = &envelope.grid;
    let mut i = ip;
    loop {
        let next = i.checked_add_signed(step).filter(|&n| n < g.nx)?;
        let (a, b) = (envelope.at(i, kp), envelope.at(next, kp));
        if b < level {
            let frac = (a - level) / (a - b);
            return Some(g.x(i) + step as f64 * frac * g.dx);
        }
        i = next;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnrReport {
    pub gcnr: f64,
    pub n_bins: usize,
    pub cyst_pixels: usize,
    pub background_pixels: usize,
}

/// gCNR between two amplitude samples: one minus the overlap of their
/// normalized histograms over a shared range.
///
/// The range is `[min(0, lowest), highest]` taken over both samples, which is
/// `[0, max]` for envelope data.
pub fn gcnr_samples(a: &[f64], b: &[f64], n_bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "gCNR needs two non-empty samples".into(),
        ));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("gCNR needs at least one bin".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("gCNR samples must be finite".into()));
    }
    let lo = a.iter().chain(b).copied().fold(0.0, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let hist = |s: &[f64]| {
        let mut h = vec![0.0; n_bins];
        for &v in s {
            let bin = if hi > lo {
                ((v - lo) / (hi - lo) * n_bins as f64) as usize
            } else {
                0
            };
            h[bin.min(n_bins - 1)] += 1.0;
        }
        h.iter_mut().for_each(|c| *c /= s.len() as f64);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    let overlap: f64 = ha.iter().zip(&hb).map(|(p, q)| p.min(*q)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// gCNR of the envelope inside `cyst_mask` against `background_mask`.
pub fn gcnr(
    envelope: &Field2,
    cyst_mask: &[bool],
    background_mask: &[bool],
    n_bins: usize,
) -> Result<GcnrReport> {
    let n = envelope.data.len();
    if cyst_mask.len() != n || background_mask.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "masks of length {} and {} for an image of {n} pixels",
            cyst_mask.len(),
            background_mask.len()
        )));
    }
    if cyst_mask.iter().zip(background_mask).any(|(a, b)| *a && *b) {
        return Err(Error::InvalidArgument(
            "cyst and background masks overlap".into(),
        ));
    }
    let pick = |m: &[bool]| {
        envelope
            .data
            .iter()
            .zip(m)
            .filter(|(_, &on)| on)
            .map(|(v, _)| *v)
            .collect::<Vec<_>>()
    };
    let (cyst, bg) = (pick(cyst_mask), pick(background_mask));
    for (name, s) in [("cyst", &cyst), ("background", &bg)] {
        if s.len() < MIN_REGION_PIXELS {
            return Err(Error::InvalidArgument(format!(
                "{name} region has {} pixels, need at least {MIN_REGION_PIXELS}",
                s.len()
            )));
        }
    }
    Ok(GcnrReport {
        gcnr: gcnr_samples(&cyst, &bg, n_bins)?,
        n_bins,
        cyst_pixels: cyst.len(),
        background_pixels: bg.len(),
    })
}

/// Metrics of one beamforming method on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: BeamformMethod,
    pub scenario: Scenario,
    pub gds: GdsReport,
    /// `(cyst label, report)` in registry order.
    pub gcnr: Vec<(String, GcnrReport)>,
}

/// Renders a CSV with one row per `(method, scenario)`: mean GDS then gCNR
/// per cyst. Every method must cover the same scenarios with the same cysts.
pub fn compare_report(results: &[MethodResult]) -> Result<String> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no results to report".into()))?;
    let labels: Vec<&str> = first.gcnr.iter().map(|(l, _)| l.as_str()).collect();
    let methods: BTreeSet<BeamformMethod> = results.iter().map(|r| r.method).collect();
    let scenarios_of = |m: BeamformMethod| -> Vec<Scenario> {
        let mut v: Vec<Scenario> = results
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.scenario)
            .collect();
        v.sort();
        v
    };
    let reference = scenarios_of(first.method);
    for &m in &methods {
        let s = scenarios_of(m);
        if s != reference || s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "method {m} covers scenarios {s:?}, expected {reference:?}"
            )));
        }
    }
    let mut csv = String::from("method,scenario,mean_gds");
    for l in &labels {
        write!(csv, ",gcnr_{l}").unwrap();
    }
    csv.push('\n');
    let mut rows: Vec<&MethodResult> = results.iter().collect();
    rows.sort_by_key(|r| (r.method, r.scenario));
    for r in rows {
        let row_labels: Vec<&str> = r.gcnr.iter().map(|(l, _)| l.as_str()).collect();
        if row_labels != labels {
            return Err(Error::InvalidArgument(format!(
                "{} {} has cysts {row_labels:?}",
                r.method, r.scenario
            )));
        }
        write!(csv, "{},{},{:.1}", r.method, r.scenario, r.gds.mean).unwrap();
        for (_, g) in &r.gcnr {
            write!(csv, ",{:.4}", g.gcnr).unwrap();
        }
        csv.push('\n');
    }
    Ok(csv)
}
