//! Channel data and the `EIKF` RF file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "EIKF" | version u32 | M u32 | N_c u32 | N_t u32 | fs f64 | t0 f64
//! array:  pitch f64 | f0 f64 | c_ref f64 | element_x f64 * N_c
//! events: M * ( focus_x f64 | focus_z f64 | center_x f64 | center_z f64
//!              | aperture_start u32 | aperture_len u32 | apodization f64 * len )
//! samples: f32 * (M * N_c * N_t), ordered [transmit][element][time]
//! ```

use std::fs;
use std::path::Path;

use crate::delays::TransmitEvent;
use crate::error::{Error, Result};
use crate::medium::TransducerArray;
use crate::raster::ByteReader;

pub const RF_MAGIC: &[u8; 4] = b"EIKF";
pub const RF_VERSION: u32 = 1;

/// Focused-transmit channel data, `samples[j][i][t]`.
///
/// Sample `t` of every trace is taken at time `t0 + t / fs`, measured from the
/// instant the transmit wavefront leaves the aperture center.
#[derive(Debug, Clone, PartialEq)]
pub struct RfDataSet {
    pub samples: Vec<f64>,
    pub n_samples: usize,
    pub fs: f64,
    pub t0: f64,
    pub array: TransducerArray,
    pub events: Vec<TransmitEvent>,
}

impl RfDataSet {
    pub fn new(
        samples: Vec<f64>,
        n_samples: usize,
        fs: f64,
        t0: f64,
        array: TransducerArray,
        events: Vec<TransmitEvent>,
    ) -> Result<Self> {
        let rf = RfDataSet {
            samples,
            n_samples,
            fs,
            t0,
            array,
            events,
        };
        rf.validate()?;
        Ok(rf)
    }

    pub fn zeros(
        n_samples: usize,
        fs: f64,
        t0: f64,
        array: TransducerArray,
        events: Vec<TransmitEvent>,
    ) -> Result<Self> {
        let len = events.len() * array.n_elements() * n_samples;
        RfDataSet::new(vec![0.0; len], n_samples, fs, t0, array, events)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.n_transmits() * self.n_elements() * self.n_samples;
        if self.samples.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} samples stored, {} x {} x {} expected",
                self.samples.len(),
                self.n_transmits(),
                self.n_elements(),
                self.n_samples
            )));
        }
        if self.n_samples == 0 || self.events.is_empty() {
            return Err(Error::InvalidArgument(
                "RF data set has no transmissions or no samples".into(),
            ));
        }
        if !(self.fs.is_finite() && self.fs > 2.0 * self.array.f0) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate {} Hz must exceed twice the center frequency {} Hz",
                self.fs, self.array.f0
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidArgument("t0 must be finite".into()));
        }
        if let Some(p) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite RF sample at flat index {p}"
            )));
        }
        for e in &self.events {
            e.validate(&self.array)?;
        }
        Ok(())
    }

    #[inline]
    pub fn n_transmits(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.array.n_elements()
    }

    #[inline]
    pub fn trace(&self, j: usize, i: usize) -> &[f64] {
        let start = (j * self.n_elements() + i) * self.n_samples;
        &self.samples[start..start + self.n_samples]
    }

    #[inline]
    pub fn trace_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let start = (j * self.n_elements() + i) * self.n_samples;
        let n = self.n_samples;
        &mut self.samples[start..start + n]
    }
}

pub fn encode_rf(rf: &RfDataSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * rf.samples.len());
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f64le = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(RF_MAGIC);
    out.extend_from_slice(&RF_VERSION.to_le_bytes());
    u32le(&mut out, rf.n_transmits());
    u32le(&mut out, rf.n_elements());
    u32le(&mut out, rf.n_samples);
    f64le(&mut out, rf.fs);
    f64le(&mut out, rf.t0);
    f64le(&mut out, rf.array.pitch);
    f64le(&mut out, rf.array.f0);
    f64le(&mut out, rf.array.c_ref);
    for &x in &rf.array.element_x {
        f64le(&mut out, x);
    }
    for e in &rf.events {
        for v in [e.focus.0, e.focus.1, e.center.0, e.center.1] {
            f64le(&mut out, v);
        }
        u32le(&mut out, e.aperture_start);
        u32le(&mut out, e.aperture_len());
        for &w in &e.apodization {
            f64le(&mut out, w);
        }
    }
    for &s in &rf.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

pub fn decode_rf(bytes: &[u8]) -> Result<RfDataSet> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != RF_MAGIC {
        return Err(Error::Format("RF magic is not EIKF".into()));
    }
    let version = r.u32()?;
    if version != RF_VERSION {
        return Err(Error::Format(format!("unsupported RF version {version}")));
    }
    let m = r.u32()? as usize;
    let n_c = r.u32()? as usize;
    let n_t = r.u32()? as usize;
    let fs = r.f64()?;
    let t0 = r.f64()?;
    let pitch = r.f64()?;
    let f0 = r.f64()?;
    let c_ref = r.f64()?;
    let element_x = (0..n_c).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let array = TransducerArray {
        pitch,
        element_x,
        f0,
        c_ref,
    };
    let mut events = Vec::with_capacity(m);
    for index in 0..m {
        let focus = (r.f64()?, r.f64()?);
        let center = (r.f64()?, r.f64()?);
        let aperture_start = r.u32()? as usize;
        let len = r.u32()? as usize;
        let apodization = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        events.push(TransmitEvent {
            index,
            aperture_start,
            apodization,
            center,
            focus,
        });
    }
    let total = m
        .checked_mul(n_c)
        .and_then(|v| v.checked_mul(n_t))
        .ok_or_else(|| Error::Format("RF dimensions overflow".into()))?;
    let samples = (0..total)
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    if !r.is_at_end() {
        return Err(Error::Format("trailing bytes after RF samples".into()));
    }
    RfDataSet::new(samples, n_t, fs, t0, array, events)
}

pub fn write_rf(path: impl AsRef<Path>, rf: &RfDataSet) -> Result<()> {
    fs::write(path, encode_rf(rf))?;
    Ok(())
}

pub fn read_rf(path: impl AsRef<Path>) -> Result<RfDataSet> {
    decode_rf(&fs::read(path)?)
}
