//! Numerical phantoms: speed-of-sound maps with fat layers, cysts and point
//! targets, the scatterers that populate them, and the ground-truth target
//! registry used for scoring.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{Field2, Grid2D, SosMap};
use crate::raster::{read_raster, write_raster, ByteReader};

/// The four fat-layer scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// No fat layer.
    M1,
    /// Horizontal fat layer.
    M2,
    /// Fat layer inclined at 10 degrees.
    M3,
    /// Fat layer inclined at 25 degrees.
    M4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::M1, Scenario::M2, Scenario::M3, Scenario::M4];

    /// Fat-layer inclination in degrees, `None` without a layer.
    pub fn fat_inclination_deg(self) -> Option<f64> {
        match self {
            Scenario::M1 => None,
            Scenario::M2 => Some(0.0),
            Scenario::M3 => Some(10.0),
            Scenario::M4 => Some(25.0),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(Scenario::M1),
            "M2" => Ok(Scenario::M2),
            "M3" => Ok(Scenario::M3),
            "M4" => Ok(Scenario::M4),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

/// A band of fat. The upper boundary passes through `(0, top)` and tilts by
/// `inclination_deg`; `thickness` is measured perpendicular to the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatLayerSpec {
    pub mean_sos: f64,
    pub top: f64,
    pub thickness: f64,
    pub inclination_deg: f64,
}

impl FatLayerSpec {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !(0.0..=45.0).contains(&self.inclination_deg) {
            return Err(Error::InvalidArgument(format!(
                "fat inclination {} deg outside [0, 45]",
                self.inclination_deg
            )));
        }
        if !(self.thickness > 0.0)
            || self.top < grid.origin_z
            || self.top + self.thickness > grid.z_max()
        {
            return Err(Error::InvalidArgument(format!(
                "fat layer (top {}, thickness {}) does not fit the grid depth",
                self.top, self.thickness
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let theta = self.inclination_deg.to_radians();
        let upper = self.top + x * theta.tan();
        z >= upper && z < upper + self.thickness / theta.cos()
    }
}

/// An anechoic inclusion: ellipse with lateral/axial semi-axes rotated by
/// `rotation_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CystSpec {
    pub label: String,
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation_deg: f64,
}

impl CystSpec {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dz) = (x - self.center.0, z - self.center.1);
        let u = c * dx + s * dz;
        let v = -s * dx + c * dz;
        (u / self.semi_axes.0).powi(2) + (v / self.semi_axes.1).powi(2) <= 1.0
    }
}

/// Circular evaluation region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub center: (f64, f64),
    pub diameter: f64,
}

/// Ground truth used by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRegistry {
    pub point_targets: Vec<(f64, f64)>,
    /// Evaluation circle inside each cyst.
    pub cyst_regions: Vec<Region>,
    /// Background circle paired with each cyst region, same order.
    pub background_regions: Vec<Region>,
}

/// Geometry and material parameters shared by the four scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLayout {
    pub background_sos: f64,
    /// Relative standard deviation of the per-node speed perturbation.
    pub perturbation_std: f64,
    pub fat: FatLayerSpec,
    pub cysts: Vec<CystSpec>,
    pub target_sos: f64,
    pub target_reflectivity: f64,
    /// Probability that a background node hosts a scatterer.
    pub scatterer_fraction: f64,
    /// Node spacing (m) at which one scatterer per node is the reference
    /// speckle density. Coarser or sparser scatterer grids scale speckle
    /// amplitudes so diffuse backscatter power per unit area is unchanged.
    pub speckle_reference_step: f64,
    pub registry: TargetRegistry,
}

impl PhantomLayout {
    /// Full-size layout on a 38.5 mm x 120 mm field of view.
    pub fn full() -> Self {
        let mm = 1e-3;
        let mut point_targets: Vec<(f64, f64)> =
            (1..=6).map(|n| (0.0, 15.0 * n as f64 * mm)).collect();
        point_targets.extend([-5.0, 5.0, 10.0, 15.0].iter().map(|&x| (x * mm, 53.0 * mm)));
        PhantomLayout {
            background_sos: 1540.0,
            perturbation_std: 0.01,
            fat: FatLayerSpec {
                mean_sos: 1400.0,
                top: 5.0 * mm,
                thickness: 10.0 * mm,
                inclination_deg: 0.0,
            },
            cysts: vec![
                cyst("CY1", (-13.0, 53.0), (6.0, 6.0), 0.0),
                cyst("CY2", (4.0, 26.0), (5.0, 3.0), 0.0),
                cyst("CY3", (13.0, 42.0), (4.0, 6.0), 30.0),
            ],
            target_sos: 3000.0,
            target_reflectivity: 1.0,
            scatterer_fraction: 1.0,
            speckle_reference_step: 75e-6,
            registry: TargetRegistry {
                point_targets,
                cyst_regions: vec![
                    region("CY1", (-13.0, 53.0), 10.0),
                    region("CY2", (4.0, 26.0), 4.0),
                    region("CY3", (13.0, 42.0), 6.0),
                ],
                background_regions: vec![
                    region("BG1", (-13.0, 30.0), 10.0),
                    region("BG2", (-8.0, 20.0), 4.0),
                    region("BG3", (-6.0, 42.0), 6.0),
                ],
            },
        }
    }

    /// Reduced layout for a 19.2 mm x 60 mm field of view.
    pub fn desk() -> Self {
        let mm = 1e-3;
        let mut point_targets: Vec<(f64, f64)> = (0..6)
            .map(|n| (0.0, (18.0 + 5.0 * n as f64) * mm))
            .collect();
        point_targets.extend([-2.5, 2.5, 5.0, 7.0].iter().map(|&x| (x * mm, 26.5 * mm)));
        PhantomLayout {
            background_sos: 1540.0,
            perturbation_std: 0.01,
            fat: FatLayerSpec {
                mean_sos: 1400.0,
                top: 5.0 * mm,
                thickness: 10.0 * mm,
                inclination_deg: 0.0,
            },
            cysts: vec![
                cyst("CY1", (-6.5, 26.5), (3.0, 3.0), 0.0),
                cyst("CY2", (4.0, 21.0), (2.5, 1.5), 0.0),
                cyst("CY3", (6.0, 36.0), (2.0, 3.0), 30.0),
            ],
            target_sos: 3000.0,
            target_reflectivity: 1.0,
            scatterer_fraction: 0.15,
            speckle_reference_step: 75e-6,
            registry: TargetRegistry {
                point_targets,
                cyst_regions: vec![
                    region("CY1", (-6.5, 26.5), 5.0),
                    region("CY2", (4.0, 21.0), 2.0),
                    region("CY3", (6.0, 36.0), 3.0),
                ],
                background_regions: vec![
                    region("BG1", (-6.5, 18.0), 5.0),
                    region("BG2", (-3.5, 33.0), 2.0),
                    region("BG3", (-4.0, 40.0), 3.0),
                ],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.2).contains(&self.perturbation_std) {
            return Err(Error::InvalidArgument(format!(
                "perturbation std {} outside [0, 0.2]",
                self.perturbation_std
            )));
        }
        if !(0.0..=1.0).contains(&self.scatterer_fraction) {
            return Err(Error::InvalidArgument(format!(
                "scatterer fraction {} outside [0, 1]",
                self.scatterer_fraction
            )));
        }
        if !(self.speckle_reference_step > 0.0 && self.speckle_reference_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "speckle reference step must be positive, got {}",
                self.speckle_reference_step
            )));
        }
        if self.registry.cyst_regions.len() != self.registry.background_regions.len() {
            return Err(Error::InvalidArgument(
                "every cyst region needs a paired background region".into(),
            ));
        }
        Ok(())
    }
}

fn cyst(
    label: &str,
    center_mm: (f64, f64),
    semi_axes_mm: (f64, f64),
    rotation_deg: f64,
) -> CystSpec {
    CystSpec {
        label: label.into(),
        center: (center_mm.0 * 1e-3, center_mm.1 * 1e-3),
        semi_axes: (semi_axes_mm.0 * 1e-3, semi_axes_mm.1 * 1e-3),
        rotation_deg,
    }
}

fn region(label: &str, center_mm: (f64, f64), diameter_mm: f64) -> Region {
    Region {
        label: label.into(),
        center: (center_mm.0 * 1e-3, center_mm.1 * 1e-3),
        diameter: diameter_mm * 1e-3,
    }
}

/// A point reflector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub z: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub scenario: Scenario,
    pub seed: u64,
    pub sos: SosMap,
    pub scatterers: Vec<Scatterer>,
    pub registry: TargetRegistry,
}

/// Builds a scenario with the full-size layout.
pub fn build_scenario(scenario: Scenario, grid: &Grid2D, seed: u64) -> Result<Phantom> {
    build_phantom(scenario, grid, &PhantomLayout::full(), seed)
}

/// Builds a scenario from an explicit layout. Deterministic in `seed`.
///
/// Every node gets `mean * (1 + e)` with `e ~ N(0, perturbation_std)`, where
/// the mean is the background or fat speed. Background nodes are kept as
/// scatterers with probability `scatterer_fraction` and reflectivity
/// `e * sqrt(dx dz / (ref^2 fraction))`, `ref` being the speckle reference
/// step; each kept node stands in for that many reference-density scatterers.
/// Cysts are set to the exact background speed with no scatterers; each
/// point target sets its nearest node to `target_sos` and adds a strong
/// scatterer at its exact position.
pub fn build_phantom(
    scenario: Scenario,
    grid: &Grid2D,
    layout: &PhantomLayout,
    seed: u64,
) -> Result<Phantom> {
    layout.validate()?;
    grid.validate()?;
    let fat = scenario
        .fat_inclination_deg()
        .map(|inclination_deg| FatLayerSpec {
            inclination_deg,
            ..layout.fat
        });
    if let Some(fat) = &fat {
        fat.validate(grid)?;
    }
    for &(x, z) in &layout.registry.point_targets {
        if !grid.contains(x, z) {
            return Err(Error::InvalidArgument(format!(
                "point target ({x}, {z}) outside the grid"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, layout.perturbation_std)
        .map_err(|e| Error::InvalidArgument(format!("perturbation std: {e}")))?;
    let speckle_gain = if layout.scatterer_fraction > 0.0 {
        (grid.dx * grid.dz / (layout.speckle_reference_step.powi(2) * layout.scatterer_fraction))
            .sqrt()
    } else {
        0.0
    };
    let mut c = Vec::with_capacity(grid.len());
    let mut scatterers = Vec::new();
    for k in 0..grid.nz {
        let z = grid.z(k);
        for i in 0..grid.nx {
            let x = grid.x(i);
            let eps: f64 = normal.sample(&mut rng);
            let keep = rng.random::<f64>() < layout.scatterer_fraction;
            if layout.cysts.iter().any(|cy| cy.contains(x, z)) {
                c.push(layout.background_sos);
                continue;
            }
            let mean = match &fat {
                Some(f) if f.contains(x, z) => f.mean_sos,
                _ => layout.background_sos,
            };
            c.push(mean * (1.0 + eps));
            if keep && eps != 0.0 {
                scatterers.push(Scatterer {
                    x,
                    z,
                    amplitude: eps * speckle_gain,
                });
            }
        }
    }
    let mut field = Field2::new(*grid, c)?;
    for &(x, z) in &layout.registry.point_targets {
        let (i, k) = grid.nearest_node(x, z);
        *field.at_mut(i, k) = layout.target_sos;
        scatterers.retain(|s| !(s.x == grid.x(i) && s.z == grid.z(k)));
        scatterers.push(Scatterer {
            x,
            z,
            amplitude: layout.target_reflectivity,
        });
    }
    Ok(Phantom {
        scenario,
        seed,
        sos: SosMap::new(field)?,
        scatterers,
        registry: layout.registry.clone(),
    })
}

/// Pixel masks of the cyst and background evaluation circles.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub cysts: Vec<Vec<bool>>,
    pub backgrounds: Vec<Vec<bool>>,
}

/// Mask of pixels whose centers lie within the circle.
pub fn rasterize_region(region: &Region, pixel_grid: &Grid2D) -> Result<Vec<bool>> {
    let r = region.diameter / 2.0;
    let (cx, cz) = region.center;
    let fits = [(cx - r, cz - r), (cx + r, cz + r)]
        .iter()
        .all(|&(x, z)| pixel_grid.contains(x, z));
    if !(r > 0.0) || !fits {
        return Err(Error::InvalidArgument(format!(
            "region {} does not fit inside the pixel grid",
            region.label
        )));
    }
    Ok((0..pixel_grid.len())
        .map(|p| {
            let x = pixel_grid.x(p % pixel_grid.nx);
            let z = pixel_grid.z(p / pixel_grid.nx);
            (x - cx).hypot(z - cz) <= r * (1.0 + 1e-9)
        })
        .collect())
}

pub fn rasterize_regions(registry: &TargetRegistry, pixel_grid: &Grid2D) -> Result<RegionMasks> {
    let masks = |rs: &[Region]| {
        rs.iter()
            .map(|r| rasterize_region(r, pixel_grid))
            .collect::<Result<Vec<_>>>()
    };
    Ok(RegionMasks {
        cysts: masks(&registry.cyst_regions)?,
        backgrounds: masks(&registry.background_regions)?,
    })
}

/// Registry file contents of a phantom bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryFile {
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(flatten)]
    pub registry: TargetRegistry,
}

pub const BUNDLE_SOS: &str = "sos.eikr";
pub const BUNDLE_REGISTRY: &str = "registry.toml";
pub const BUNDLE_SCATTERERS: &str = "scatterers.bin";

/// Writes `sos.eikr`, `registry.toml` and `scatterers.bin` (little-endian
/// f32 triples `x, z, amplitude`) into `dir`.
pub fn write_bundle(dir: impl AsRef<Path>, phantom: &Phantom) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_raster(dir.join(BUNDLE_SOS), phantom.sos.field())?;
    let reg = RegistryFile {
        scenario: phantom.scenario,
        seed: phantom.seed,
        registry: phantom.registry.clone(),
    };
    let text = toml::to_string(&reg).map_err(|e| Error::Format(format!("registry: {e}")))?;
    fs::write(dir.join(BUNDLE_REGISTRY), text)?;
    let mut bytes = Vec::with_capacity(12 * phantom.scatterers.len());
    for s in &phantom.scatterers {
        for v in [s.x, s.z, s.amplitude] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(BUNDLE_SCATTERERS), bytes)?;
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Phantom> {
    let dir = dir.as_ref();
    let sos = SosMap::new(read_raster(dir.join(BUNDLE_SOS))?)?;
    let text = fs::read_to_string(dir.join(BUNDLE_REGISTRY))?;
    let reg: RegistryFile =
        toml::from_str(&text).map_err(|e| Error::Format(format!("registry: {e}")))?;
    let bytes = fs::read(dir.join(BUNDLE_SCATTERERS))?;
    if bytes.len() % 12 != 0 {
        return Err(Error::Format(
            "scatterer file is not a whole number of f32 triples".into(),
        ));
    }
    let mut r = ByteReader::new(&bytes);
    let mut scatterers = Vec::with_capacity(bytes.len() / 12);
    let g = *sos.grid();
    // f32 storage can push edge nodes a hair outside the grid; snap those back.
    let snap = |v: f64, lo: f64, hi: f64, step: f64| {
        let slack = 1e-3 * step;
        if v >= lo - slack && v <= hi + slack {
            Ok(v.clamp(lo, hi))
        } else {
            Err(Error::Format(format!(
                "scatterer coordinate {v} outside the grid [{lo}, {hi}]"
            )))
        }
    };
    while !r.is_at_end() {
        let (x, z, a) = (r.f32()?, r.f32()?, r.f32()?);
        scatterers.push(Scatterer {
            x: snap(x.into(), g.origin_x, g.x_max(), g.dx)?,
            z: snap(z.into(), g.origin_z, g.z_max(), g.dz)?,
            amplitude: a.into(),
        });
    }
    Ok(Phantom {
        scenario: reg.scenario,
        seed: reg.seed,
        sos,
        scatterers,
        registry: reg.registry,
    })
}
