//! The `EIKR` raster file format and 8-bit PGM export.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `EIKR` |
//! | 4     | version (u32, currently 1) |
//! | 4 + 4 | nx, nz (u32) |
//! | 4 x 8 | origin_x, origin_z, dx, dz (f64, meters) |
//! | nx*nz*4 | values (f32), z-major: node `(i, k)` at position `k*nx + i` |
//!
//! The same container stores speed-of-sound maps, travel-time fields and
//! beamformed images.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::medium::{Field2, Grid2D};

pub const RASTER_MAGIC: &[u8; 4] = b"EIKR";
pub const RASTER_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 32;

pub fn encode_raster(field: &Field2) -> Vec<u8> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * field.data.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.nz as u32).to_le_bytes());
    for v in [g.origin_x, g.origin_z, g.dx, g.dz] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &field.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<Field2> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != RASTER_MAGIC {
        return Err(Error::Format("raster magic is not EIKR".into()));
    }
    let version = r.u32()?;
    if version != RASTER_VERSION {
        return Err(Error::Format(format!(
            "unsupported raster version {version}"
        )));
    }
    let nx = r.u32()? as usize;
    let nz = r.u32()? as usize;
    let grid = Grid2D::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?, nx, nz)?;
    let data = (0..grid.len())
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    if !r.is_at_end() {
        return Err(Error::Format("trailing bytes after raster payload".into()));
    }
    Field2::new(grid, data)
}

pub fn write_raster(path: impl AsRef<Path>, field: &Field2) -> Result<()> {
    fs::write(path, encode_raster(field))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Field2> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_raster(&bytes)
}

/// Binary PGM (P5) of a dB image, mapping `[-dynamic_range_db, 0]` linearly
/// onto `[0, 255]`. Rows run along depth, columns along lateral position.
pub fn encode_pgm(log_db: &Field2, dynamic_range_db: f64) -> Vec<u8> {
    let g = &log_db.grid;
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.nz).into_bytes();
    out.extend(log_db.data.iter().map(|&db| {
        let level = ((db + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0);
        (level * 255.0).round() as u8
    }));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, log_db: &Field2, dynamic_range_db: f64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(log_db, dynamic_range_db))?;
    Ok(())
}

/// Little-endian cursor over a byte slice, shared by the binary formats.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "unexpected end of data at byte {} (need {n} more)",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let g = Grid2D::new(-1.0, 2.0, 0.5, 0.25, 3, 2).unwrap();
        let f = Field2::from_fn(g, |x, z| x * 10.0 + z);
        let bytes = encode_raster(&f);
        assert_eq!(&bytes[0..4], b"EIKR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.25);
        assert_eq!(bytes.len(), 48 + 6 * 4);
        // z-major: second value is node (1, 0)
        assert_eq!(
            f32::from_le_bytes(bytes[52..56].try_into().unwrap()),
            -5.0 + 2.0
        );
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = Grid2D::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let bytes = encode_raster(&Field2::filled(g, 1.0));
        assert!(decode_raster(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_raster(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_raster(&long).is_err());
    }

    #[test]
    fn pgm_maps_range_to_gray_levels() {
        let g = Grid2D::new(0.0, 0.0, 1.0, 1.0, 3, 2).unwrap();
        let f = Field2::new(g, vec![0.0, -30.0, -60.0, -90.0, -0.0, -15.0]).unwrap();
        let pgm = encode_pgm(&f, 60.0);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 128, 0, 0, 255, 191]);
    }

    proptest! {
        #[test]
        fn round_trip_is_f32_exact(vals in proptest::collection::vec(-1e4f32..1e4, 12)) {
            let g = Grid2D::new(-0.3, 0.1, 1e-4, 2e-4, 4, 3).unwrap();
            let f = Field2::new(g, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let back = decode_raster(&encode_raster(&f)).unwrap();
            prop_assert_eq!(back.grid, g);
            prop_assert_eq!(back.data, f.data);
        }
    }
}
