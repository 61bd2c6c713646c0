//! Pipeline configuration: presets, TOML loading and up-front validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamform::{ApodizationSpec, BeamformMethod};
use crate::delays::TransmitScheme;
use crate::eikonal::{FmConfig, FmScheme};
use crate::error::{Error, Result};
use crate::medium::{make_array, Grid2D, TransducerArray, C_REF, SOS_MAX, SOS_MIN};
use crate::phantom::{rasterize_regions, PhantomLayout, Scenario};
use crate::rfsim::{PulseSpec, SimConfig, TruthDelayModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Named starting points for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 19.2 mm x 60 mm, 64 elements, 32 transmits; runs in seconds.
    Desk,
    /// 38.5 mm x 120 mm at 75 um, 128 elements, 128 transmits.
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (valid: desk, full)"
            ))),
        }
    }
}

/// Speed-of-sound grid: lateral extent centered on the array, depth from the
/// array face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: f64,
    pub depth: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub n_elements: usize,
    pub pitch: f64,
    pub f0: f64,
    pub c_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub fractional_bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Sampling rate in Hz; omitted means `4 f0 (1 + bandwidth)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    pub truth_delay_model: TruthDelayModel,
    pub noise_std: f64,
}

/// Beamforming pixel grid, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub dx: f64,
    pub dz: f64,
}

impl ImageSpec {
    pub fn grid(&self) -> Result<Grid2D> {
        let nx = ((self.x_max - self.x_min) / self.dx).round() as usize + 1;
        let nz = ((self.z_max - self.z_min) / self.dz).round() as usize + 1;
        Grid2D::new(self.x_min, self.z_min, self.dx, self.dz, nx, nz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    /// Median filter half-width in nodes.
    pub median_radius: usize,
    /// Gaussian smoothing sigma in nodes.
    pub smooth_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EikonalSpec {
    /// Source disk radius in grid steps.
    pub disk_steps: f64,
    pub scheme: FmScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    pub gcnr_bins: usize,
    /// Half-width of the GDS search window in wavelengths.
    pub search_radius_wavelengths: f64,
}

/// Everything the pipeline needs, loaded from TOML over a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<BeamformMethod>,
    pub dynamic_range_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub array: ArraySpec,
    pub transmit: TransmitScheme,
    pub pulse: PulseSection,
    pub sim: SimSection,
    pub image: ImageSpec,
    pub apodization: ApodizationSpec,
    pub preprocess: PreprocessSpec,
    pub eikonal: EikonalSpec,
    pub metrics: MetricsSpec,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn desk() -> Self {
        let mm = 1e-3;
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            preset: Preset::Desk,
            seed: 7,
            scenarios: Scenario::ALL.to_vec(),
            methods: BeamformMethod::ALL.to_vec(),
            dynamic_range_db: 60.0,
            output_dir: None,
            grid: GridSpec {
                width: 19.2 * mm,
                depth: 60.0 * mm,
                step: 0.15 * mm,
            },
            array: ArraySpec {
                n_elements: 64,
                pitch: 0.3 * mm,
                f0: 3e6,
                c_ref: C_REF,
            },
            transmit: TransmitScheme {
                n_transmits: 32,
                focal_depth: 30.0 * mm,
                f_number: 2.0,
            },
            pulse: PulseSection {
                fractional_bandwidth: 0.6,
            },
            sim: SimSection {
                fs: None,
                truth_delay_model: TruthDelayModel::FmTrueSos,
                noise_std: 0.0,
            },
            image: ImageSpec {
                x_min: -9.6 * mm,
                x_max: 9.6 * mm,
                z_min: 2.0 * mm,
                z_max: 50.0 * mm,
                dx: 0.15 * mm,
                dz: 0.05 * mm,
            },
            apodization: ApodizationSpec::default(),
            preprocess: PreprocessSpec {
                median_radius: 1,
                smooth_sigma: 2.0,
            },
            eikonal: EikonalSpec {
                disk_steps: FmConfig::DEFAULT_DISK_STEPS,
                scheme: FmScheme::default(),
            },
            metrics: MetricsSpec {
                gcnr_bins: 100,
                search_radius_wavelengths: 2.5,
            },
        }
    }

    pub fn full() -> Self {
        let mm = 1e-3;
        PipelineConfig {
            preset: Preset::Full,
            grid: GridSpec {
                width: 38.5 * mm,
                depth: 120.0 * mm,
                step: 0.075 * mm,
            },
            array: ArraySpec {
                n_elements: 128,
                pitch: 0.3 * mm,
                f0: 3e6,
                c_ref: C_REF,
            },
            transmit: TransmitScheme {
                n_transmits: 128,
                focal_depth: 60.0 * mm,
                f_number: 2.0,
            },
            image: ImageSpec {
                x_min: -19.2 * mm,
                x_max: 19.2 * mm,
                z_min: 2.0 * mm,
                z_max: 115.0 * mm,
                dx: 0.15 * mm,
                dz: 0.05 * mm,
            },
            preprocess: PreprocessSpec {
                median_radius: 2,
                smooth_sigma: 4.0,
            },
            ..Self::desk()
        }
    }

    /// Parses TOML. Keys given in the document override the preset named by
    /// its `preset` key (desk when absent); tables merge key by key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "`preset` must be a string, got {other}"
                )))
            }
        };
        let mut base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut base, user);
        let cfg: Self = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn medium_grid(&self) -> Result<Grid2D> {
        Grid2D::centered(self.grid.width, self.grid.depth, self.grid.step)
    }

    pub fn image_grid(&self) -> Result<Grid2D> {
        self.image.grid()
    }

    pub fn transducer(&self) -> Result<TransducerArray> {
        let mut array = make_array(self.array.n_elements, self.array.pitch, self.array.f0)?;
        array.c_ref = self.array.c_ref;
        Ok(array)
    }

    pub fn pulse_spec(&self) -> PulseSpec {
        PulseSpec {
            f0: self.array.f0,
            fractional_bandwidth: self.pulse.fractional_bandwidth,
        }
    }

    /// Simulation settings; the noise stream is seeded from the run seed.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            fs: self.sim.fs,
            truth_delay_model: self.sim.truth_delay_model,
            noise_std: self.sim.noise_std,
            noise_seed: self.seed ^ 0x5eed_0f_a0_15e,
        }
    }

    pub fn fm_config(&self, grid: &Grid2D) -> FmConfig {
        FmConfig {
            source_disk_radius: self.eikonal.disk_steps * grid.dx.max(grid.dz),
            scheme: self.eikonal.scheme,
        }
    }

    pub fn layout(&self) -> PhantomLayout {
        match self.preset {
            Preset::Desk => PhantomLayout::desk(),
            Preset::Full => PhantomLayout::full(),
        }
    }

    pub fn wavelength(&self) -> f64 {
        self.array.c_ref / self.array.f0
    }

    /// Checks every field before any compute starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.scenarios.is_empty() || has_duplicates(&self.scenarios) {
            return bad("scenarios must be a non-empty list without repeats".into());
        }
        if self.methods.is_empty() || has_duplicates(&self.methods) {
            return bad("methods must be a non-empty list without repeats".into());
        }
        if !(self.dynamic_range_db > 0.0 && self.dynamic_range_db <= 200.0) {
            return bad(format!(
                "dynamic_range_db {} outside (0, 200]",
                self.dynamic_range_db
            ));
        }
        let positive = [
            ("grid.width", self.grid.width),
            ("grid.depth", self.grid.depth),
            ("grid.step", self.grid.step),
            ("array.pitch", self.array.pitch),
            ("array.f0", self.array.f0),
            ("image.dx", self.image.dx),
            ("image.dz", self.image.dz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(SOS_MIN..=SOS_MAX).contains(&self.array.c_ref) {
            return bad(format!(
                "array.c_ref {} outside [{SOS_MIN}, {SOS_MAX}]",
                self.array.c_ref
            ));
        }
        let grid = self.medium_grid().map_err(cfg_err("grid"))?;
        if grid.len() > 50_000_000 {
            return bad(format!(
                "grid has {} nodes, limit is 50 million",
                grid.len()
            ));
        }
        let array = self.transducer().map_err(cfg_err("array"))?;
        if !grid.contains(array.element_x[0], 0.0)
            || !grid.contains(array.element_x[array.n_elements() - 1], 0.0)
        {
            return bad(format!(
                "array aperture {} m is wider than grid.width",
                array.aperture_width()
            ));
        }
        self.transmit.validate().map_err(cfg_err("transmit"))?;
        if self.transmit.focal_depth >= grid.z_max() {
            return bad(format!(
                "transmit.focal_depth {} is below the grid",
                self.transmit.focal_depth
            ));
        }
        let pulse = self.pulse_spec();
        pulse.validate().map_err(cfg_err("pulse"))?;
        self.sim_config().validate(&pulse).map_err(cfg_err("sim"))?;

        let image = self.image_grid().map_err(cfg_err("image"))?;
        if image.nz < 4 || image.nx < 1 {
            return bad("image needs at least 4 rows".into());
        }
        if !grid.contains(image.x(0), image.z(0)) || !grid.contains(image.x_max(), image.z_max()) {
            return bad("image grid must lie inside the medium grid".into());
        }
        let max_dz = self.array.c_ref / (4.0 * pulse.f0 * (1.0 + pulse.fractional_bandwidth));
        if self.image.dz > max_dz {
            return bad(format!(
                "image.dz {} undersamples the RF band (max {max_dz})",
                self.image.dz
            ));
        }
        self.apodization
            .validate()
            .map_err(cfg_err("apodization"))?;
        if self.preprocess.median_radius > 16
            || !(0.0..=32.0).contains(&self.preprocess.smooth_sigma)
        {
            return bad(
                "preprocess.median_radius must be <= 16 and smooth_sigma in [0, 32]".into(),
            );
        }
        self.fm_config(&grid)
            .validate(&grid)
            .map_err(cfg_err("eikonal"))?;
        if self.metrics.gcnr_bins < 2 || self.metrics.gcnr_bins > 100_000 {
            return bad(format!(
                "metrics.gcnr_bins {} outside [2, 100000]",
                self.metrics.gcnr_bins
            ));
        }
        if !(self.metrics.search_radius_wavelengths >= 1.0
            && self.metrics.search_radius_wavelengths.is_finite())
        {
            return bad("metrics.search_radius_wavelengths must be >= 1".into());
        }

        let layout = self.layout();
        layout.validate().map_err(cfg_err("layout"))?;
        for &(x, z) in &layout.registry.point_targets {
            if !image.contains(x, z) {
                return bad(format!("point target ({x}, {z}) lies outside the image"));
            }
        }
        rasterize_regions(&layout.registry, &image).map_err(cfg_err("image"))?;
        for s in &self.scenarios {
            if let Some(inclination_deg) = s.fat_inclination_deg() {
                crate::phantom::FatLayerSpec {
                    inclination_deg,
                    ..layout.fat
                }
                .validate(&grid)
                .map_err(cfg_err("grid"))?;
            }
        }
        Ok(())
    }
}

fn cfg_err(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Config(format!("{section}: {e}"))
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(n, a)| v[..n].contains(a))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        PipelineConfig::desk().validate().unwrap();
        PipelineConfig::full().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::desk();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_overrides_preset() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 3\nscenarios = [\"M4\"]\n[transmit]\nn_transmits = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.scenarios, vec![Scenario::M4]);
        assert_eq!(cfg.transmit.n_transmits, 8);
        assert_eq!(
            cfg.transmit.focal_depth,
            PipelineConfig::desk().transmit.focal_depth
        );
        let full = PipelineConfig::from_toml_str("preset = \"full\"").unwrap();
        assert_eq!(full, PipelineConfig::full());
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "seed = \"x\"",
            "unknown_key = 1",
            "[grid]\nstep = -1.0",
            "scenarios = [\"M5\"]",
            "scenarios = []",
            "methods = [\"das\", \"das\"]",
            "preset = \"huge\"",
            "[image]\ndz = 0.2e-3",
            "[image]\nz_max = 0.2",
            "[transmit]\nfocal_depth = 0.5",
            "[array]\nn_elements = 200",
            "[metrics]\nsearch_radius_wavelengths = 0.5",
            "schema_version = 9",
            "[sim]\nfs = 1e6",
        ] {
            let err = PipelineConfig::from_toml_str(doc).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{doc}: {err}");
        }
    }
}
