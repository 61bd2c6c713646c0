//! Spatial grid, scalar fields on it, speed-of-sound maps and the linear array.
//!
//! Positions are in meters with `x` lateral and `z` axial (depth). Node
//! `(i, k)` sits at `(origin_x + i*dx, origin_z + k*dz)`. Field storage is
//! z-major: the flat index of node `(i, k)` is `k * nx + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal soft-tissue speed of sound, m/s.
pub const C_REF: f64 = 1540.0;

/// Sanity bounds on any speed-of-sound value, m/s.
pub const SOS_MIN: f64 = 500.0;
pub const SOS_MAX: f64 = 5000.0;

/// A regular 2-D raster of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub origin_x: f64,
    pub origin_z: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl Grid2D {
    pub fn new(
        origin_x: f64,
        origin_z: f64,
        dx: f64,
        dz: f64,
        nx: usize,
        nz: usize,
    ) -> Result<Self> {
        let grid = Grid2D {
            origin_x,
            origin_z,
            dx,
            dz,
            nx,
            nz,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of `width` x `depth` meters at spacing `step`, laterally centered
    /// on `x = 0` and starting at `z = 0`. The node count is rounded so the
    /// far edge lands within half a step of the requested extent.
    pub fn centered(width: f64, depth: f64, step: f64) -> Result<Self> {
        if !(width > 0.0 && depth > 0.0 && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid extent and step must be positive (width {width}, depth {depth}, step {step})"
            )));
        }
        let nx = (width / step).round() as usize + 1;
        let nz = (depth / step).round() as usize + 1;
        let span = (nx - 1) as f64 * step;
        Grid2D::new(-span / 2.0, 0.0, step, step, nx, nz)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.origin_x, self.origin_z, self.dx, self.dz]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.dx <= 0.0 || self.dz <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive and finite (dx {}, dz {})",
                self.dx, self.dz
            )));
        }
        if self.nx < 2 || self.nz < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2x2 nodes (got {}x{})",
                self.nx, self.nz
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, k: usize) -> usize {
        k * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin_x + i as f64 * self.dx
    }

    #[inline]
    pub fn z(&self, k: usize) -> f64 {
        self.origin_z + k as f64 * self.dz
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.nz - 1)
    }

    /// Fractional node coordinates of a physical point. No clamping.
    #[inline]
    pub fn world_to_index(&self, x: f64, z: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.dx, (z - self.origin_z) / self.dz)
    }

    #[inline]
    pub fn index_to_world(&self, fi: f64, fk: f64) -> (f64, f64) {
        (self.origin_x + fi * self.dx, self.origin_z + fk * self.dz)
    }

    /// True if `(x, z)` is inside the closed rectangle spanned by the nodes,
    /// with a relative slack of 1e-9 step for round-off at the edges.
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (fi, fk) = self.world_to_index(x, z);
        let tol = 1e-9;
        fi >= -tol
            && fk >= -tol
            && fi <= (self.nx - 1) as f64 + tol
            && fk <= (self.nz - 1) as f64 + tol
    }

    /// Nearest node to a point, clamped into the grid.
    pub fn nearest_node(&self, x: f64, z: f64) -> (usize, usize) {
        let (fi, fk) = self.world_to_index(x, z);
        let i = fi.round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let k = fk.round().clamp(0.0, (self.nz - 1) as f64) as usize;
        (i, k)
    }
}

/// Free-function form of [`Grid2D::world_to_index`].
pub fn world_to_index(grid: &Grid2D, x: f64, z: f64) -> (f64, f64) {
    grid.world_to_index(x, z)
}

/// Scalar values on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub grid: Grid2D,
    pub data: Vec<f64>,
}

impl Field2 {
    pub fn new(grid: Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, grid has {} nodes",
                data.len(),
                grid.len()
            )));
        }
        Ok(Field2 { grid, data })
    }

    pub fn filled(grid: Grid2D, value: f64) -> Self {
        Field2 {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.nz {
            let z = grid.z(k);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), z));
            }
        }
        Field2 { grid, data }
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, k: usize) -> &mut f64 {
        let idx = self.grid.index(i, k);
        &mut self.data[idx]
    }

    pub fn sample(&self, x: f64, z: f64) -> Result<f64> {
        sample_bilinear(self, x, z)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bilinear interpolation of a node field at a physical point.
///
/// Points on the outer boundary are accepted; anything beyond it is an
/// [`Error::OutOfBounds`].
pub fn sample_bilinear(field: &Field2, x: f64, z: f64) -> Result<f64> {
    let g = &field.grid;
    if !g.contains(x, z) {
        return Err(Error::OutOfBounds { x, z });
    }
    let (fi, fk) = g.world_to_index(x, z);
    let fi = fi.clamp(0.0, (g.nx - 1) as f64);
    let fk = fk.clamp(0.0, (g.nz - 1) as f64);
    let i0 = (fi.floor() as usize).min(g.nx - 2);
    let k0 = (fk.floor() as usize).min(g.nz - 2);
    let u = fi - i0 as f64;
    let v = fk - k0 as f64;
    let f00 = field.at(i0, k0);
    let f10 = field.at(i0 + 1, k0);
    let f01 = field.at(i0, k0 + 1);
    let f11 = field.at(i0 + 1, k0 + 1);
    Ok((1.0 - v) * ((1.0 - u) * f00 + u * f10) + v * ((1.0 - u) * f01 + u * f11))
}

/// Speed-of-sound map in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SosMap {
    field: Field2,
}

impl SosMap {
    /// Wraps a field after checking every value is finite and within
    /// [`SOS_MIN`, `SOS_MAX`].
    pub fn new(field: Field2) -> Result<Self> {
        field.grid.validate()?;
        let nx = field.grid.nx;
        if let Some((idx, &value)) = field
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (SOS_MIN..=SOS_MAX).contains(*v)))
        {
            return Err(Error::InvalidSos {
                i: idx % nx,
                k: idx / nx,
                value,
            });
        }
        Ok(SosMap { field })
    }

    pub fn homogeneous(grid: Grid2D, c: f64) -> Result<Self> {
        SosMap::new(Field2::filled(grid, c))
    }

    pub fn from_fn(grid: Grid2D, f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        SosMap::new(Field2::from_fn(grid, f))
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.field.grid
    }

    #[inline]
    pub fn field(&self) -> &Field2 {
        &self.field
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.field.at(i, k)
    }

    pub fn into_field(self) -> Field2 {
        self.field
    }

    pub fn min(&self) -> f64 {
        self.field.min()
    }

    pub fn max(&self) -> f64 {
        self.field.max()
    }
}

/// Uniform linear array lying on `z = 0`, centered on `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerArray {
    pub pitch: f64,
    pub element_x: Vec<f64>,
    pub f0: f64,
    pub c_ref: f64,
}

impl TransducerArray {
    pub fn new(n_elements: usize, pitch: f64, f0: f64, c_ref: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidArgument(format!(
                "array needs at least 2 elements, got {n_elements}"
            )));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pitch must be positive, got {pitch}"
            )));
        }
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "center frequency must be positive, got {f0}"
            )));
        }
        if !(c_ref > 0.0 && c_ref.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reference speed must be positive, got {c_ref}"
            )));
        }
        let mid = (n_elements - 1) as f64 / 2.0;
        let element_x = (0..n_elements).map(|i| (i as f64 - mid) * pitch).collect();
        Ok(TransducerArray {
            pitch,
            element_x,
            f0,
            c_ref,
        })
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.element_x.len()
    }

    /// Element positions are all at depth zero.
    #[inline]
    pub fn element_z(&self) -> f64 {
        0.0
    }

    pub fn element_position(&self, i: usize) -> (f64, f64) {
        (self.element_x[i], 0.0)
    }

    /// Wavelength at the reference speed.
    pub fn wavelength(&self) -> f64 {
        self.c_ref / self.f0
    }

    /// Distance between the outermost element centers.
    pub fn aperture_width(&self) -> f64 {
        self.element_x[self.n_elements() - 1] - self.element_x[0]
    }
}

/// Array with the nominal 1540 m/s reference speed.
pub fn make_array(n_elements: usize, pitch: f64, f0: f64) -> Result<TransducerArray> {
    TransducerArray::new(n_elements, pitch, f0, C_REF)
}
