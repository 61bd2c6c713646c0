//! Stage functions and the end-to-end comparison run.
//!
//! Each stage is a plain function over in-memory values plus a writer for its
//! on-disk products. [`run_pipeline`] chains them for every configured
//! scenario and method, times each stage, hashes every file it writes and
//! finishes with `report.csv` and `manifest.json`.
//!
//! Output tree of a run:
//!
//! ```text
//! out/config.toml
//! out/<scenario>/phantom/{sos.eikr, registry.toml, scatterers.bin}
//! out/<scenario>/rf.eikf
//! out/<scenario>/<method>/{rf_sum.eikr, envelope.eikr, log_db.eikr, image.pgm, metrics.json}
//! out/report.csv
//! out/manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::{das_beamform, preprocess_sos, BeamformMethod, BeamformedImage};
use crate::config::PipelineConfig;
use crate::delays::{build_transmit_events, FmDelays, GeometricDelays, TransmitEvent};
use crate::eikonal::{solve_eikonal, TravelTimeField};
use crate::error::{Error, Result};
use crate::medium::{Field2, SosMap};
use crate::metrics::{compare_report, gcnr, gds, GcnrReport, GdsReport, MethodResult};
use crate::phantom::{
    build_phantom, rasterize_regions, write_bundle, Phantom, Scenario, TargetRegistry,
};
use crate::raster::{write_pgm, write_raster};
use crate::rf::{write_rf, RfDataSet};
use crate::rfsim::simulate_rf;

pub const RF_FILE: &str = "rf.eikf";
pub const RF_SUM_FILE: &str = "rf_sum.eikr";
pub const ENVELOPE_FILE: &str = "envelope.eikr";
pub const LOG_DB_FILE: &str = "log_db.eikr";
pub const PGM_FILE: &str = "image.pgm";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Builds the phantom for one scenario from the configured grid, layout and
/// seed.
pub fn make_phantom(cfg: &PipelineConfig, scenario: Scenario) -> Result<Phantom> {
    build_phantom(scenario, &cfg.medium_grid()?, &cfg.layout(), cfg.seed)
}

pub fn transmit_events(cfg: &PipelineConfig) -> Result<Vec<TransmitEvent>> {
    build_transmit_events(&cfg.transducer()?, &cfg.transmit)
}

pub fn simulate(cfg: &PipelineConfig, phantom: &Phantom) -> Result<RfDataSet> {
    let array = cfg.transducer()?;
    let events = build_transmit_events(&array, &cfg.transmit)?;
    simulate_rf(
        phantom,
        &array,
        &events,
        &cfg.pulse_spec(),
        &cfg.sim_config(),
    )
}

/// A beamformed image plus the number of eikonal solves it took.
#[derive(Debug, Clone)]
pub struct BeamformOutput {
    pub image: BeamformedImage,
    pub fm_solves: Option<usize>,
}

/// Beamforms `rf` onto the configured image grid.
///
/// `das` uses straight rays at the array's reference speed. `fm-das` median
/// filters and smooths `sos` first, then uses fast-marching delays on it.
pub fn beamform(
    cfg: &PipelineConfig,
    rf: &RfDataSet,
    method: BeamformMethod,
    sos: Option<&SosMap>,
) -> Result<BeamformOutput> {
    let pixels = cfg.image_grid()?;
    let (rf_sum, fm_solves) = match method {
        BeamformMethod::Das => {
            let delays = GeometricDelays::new(&rf.array, &rf.events, rf.array.c_ref)?;
            (das_beamform(rf, &delays, &cfg.apodization, &pixels)?, None)
        }
        BeamformMethod::FmDas => {
            let sos =
                sos.ok_or_else(|| Error::Config("fm-das needs a speed-of-sound map".into()))?;
            let smoothed = preprocess_sos(
                sos,
                cfg.preprocess.median_radius,
                cfg.preprocess.smooth_sigma,
            )?;
            let fm = cfg.fm_config(smoothed.grid());
            let delays = FmDelays::build(&smoothed, &rf.array, &rf.events, &fm)?;
            (
                das_beamform(rf, &delays, &cfg.apodization, &pixels)?,
                Some(delays.solve_count()),
            )
        }
    };
    Ok(BeamformOutput {
        image: BeamformedImage::from_rf_sum(rf_sum, cfg.dynamic_range_db)?,
        fm_solves,
    })
}

/// Writes the three rasters and the display PGM; returns the paths written.
pub fn write_image(
    dir: impl AsRef<Path>,
    image: &BeamformedImage,
    dynamic_range_db: f64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [RF_SUM_FILE, ENVELOPE_FILE, LOG_DB_FILE, PGM_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_raster(&paths[0], &image.rf_sum)?;
    write_raster(&paths[1], &image.envelope)?;
    write_raster(&paths[2], &image.log_db)?;
    write_pgm(&paths[3], &image.log_db, dynamic_range_db)?;
    Ok(paths)
}

/// GDS over all point targets and gCNR for every cyst/background pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub gds: GdsReport,
    pub gcnr: Vec<(String, GcnrReport)>,
}

pub fn evaluate(
    cfg: &PipelineConfig,
    envelope: &Field2,
    registry: &TargetRegistry,
) -> Result<ImageMetrics> {
    let lambda = cfg.wavelength();
    let report = gds(
        envelope,
        &registry.point_targets,
        lambda,
        cfg.metrics.search_radius_wavelengths * lambda,
    )?;
    let masks = rasterize_regions(registry, &envelope.grid)?;
    let gcnrs = registry
        .cyst_regions
        .iter()
        .zip(masks.cysts.iter().zip(&masks.backgrounds))
        .map(|(region, (cyst, bg))| {
            Ok((
                region.label.clone(),
                gcnr(envelope, cyst, bg, cfg.metrics.gcnr_bins)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageMetrics {
        gds: report,
        gcnr: gcnrs,
    })
}

pub fn write_metrics(path: impl AsRef<Path>, metrics: &ImageMetrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Format(format!("metrics: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Travel times from one point source on a speed-of-sound map.
pub fn solve_times(
    cfg: &PipelineConfig,
    sos: &SosMap,
    source: (f64, f64),
) -> Result<TravelTimeField> {
    solve_eikonal(sos, source, &cfg.fm_config(sos.grid()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

/// Provenance of one run, written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub stages: Vec<StageRecord>,
    /// Eikonal solves per `<scenario>/fm-das` image.
    pub fm_solves: BTreeMap<String, usize>,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

/// Records stage timings and output hashes while a run progresses.
struct Recorder {
    root: PathBuf,
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<(T, Vec<PathBuf>)>) -> Result<T> {
        eprintln!("[{name}] started");
        let start = Instant::now();
        let (value, paths) = f().map_err(|e| e.in_stage(name))?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let outputs = paths
            .iter()
            .map(|p| {
                Ok(OutputRecord {
                    path: relative(&self.root, p),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage(name))?;
        eprintln!("[{name}] done in {wall_seconds:.2} s");
        self.stages.push(StageRecord {
            name: name.to_owned(),
            wall_seconds,
            outputs,
        });
        Ok(value)
    }
}

fn relative(root: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(root).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub results: Vec<MethodResult>,
    pub report_csv: String,
    pub manifest: RunManifest,
}

/// Runs phantom, simulation, both beamformers and metrics for every
/// configured scenario, then writes the comparison CSV and the manifest.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out: impl AsRef<Path>,
    threads: Option<usize>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let root = out.as_ref().to_path_buf();
    fs::create_dir_all(&root).map_err(|e| Error::from(e).in_stage("setup"))?;
    // The run location is not a parameter of the results; leaving it out keeps
    // the recorded config and its hash independent of where the run was written.
    let config_text = PipelineConfig {
        output_dir: None,
        ..cfg.clone()
    }
    .to_toml_string();
    let config_sha256 = hex::encode(Sha256::digest(config_text.as_bytes()));
    let mut rec = Recorder {
        root: root.clone(),
        stages: Vec::new(),
    };
    rec.stage("config", || {
        let p = root.join(CONFIG_FILE);
        fs::write(&p, &config_text)?;
        Ok(((), vec![p]))
    })?;

    let mut results = Vec::new();
    let mut fm_solves = BTreeMap::new();
    for &scenario in &cfg.scenarios {
        let dir = root.join(scenario.to_string());
        let phantom = rec.stage(&format!("{scenario}/phantom"), || {
            let phantom = make_phantom(cfg, scenario)?;
            let pdir = dir.join("phantom");
            write_bundle(&pdir, &phantom)?;
            let files = [
                crate::phantom::BUNDLE_SOS,
                crate::phantom::BUNDLE_REGISTRY,
                crate::phantom::BUNDLE_SCATTERERS,
            ];
            Ok((phantom, files.iter().map(|f| pdir.join(f)).collect()))
        })?;
        let rf = rec.stage(&format!("{scenario}/rfsim"), || {
            let rf = simulate(cfg, &phantom)?;
            let p = dir.join(RF_FILE);
            write_rf(&p, &rf)?;
            Ok((rf, vec![p]))
        })?;
        for &method in &cfg.methods {
            let mdir = dir.join(method.as_str());
            let image = rec.stage(&format!("{scenario}/beamform/{method}"), || {
                let output = beamform(cfg, &rf, method, Some(&phantom.sos))?;
                let paths = write_image(&mdir, &output.image, cfg.dynamic_range_db)?;
                if let Some(n) = output.fm_solves {
                    fm_solves.insert(format!("{scenario}/{method}"), n);
                }
                Ok((output.image, paths))
            })?;
            let metrics = rec.stage(&format!("{scenario}/metrics/{method}"), || {
                let m = evaluate(cfg, &image.envelope, &phantom.registry)?;
                let p = mdir.join(METRICS_FILE);
                write_metrics(&p, &m)?;
                Ok((m, vec![p]))
            })?;
            results.push(MethodResult {
                method,
                scenario,
                gds: metrics.gds,
                gcnr: metrics.gcnr,
            });
        }
    }

    let report_csv = rec.stage("report", || {
        let csv = compare_report(&results)?;
        let p = root.join(REPORT_FILE);
        fs::write(&p, &csv)?;
        Ok((csv, vec![p]))
    })?;

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256,
        seed: cfg.seed,
        threads,
        stages: rec.stages,
        fm_solves,
    };
    write_manifest(&root, &manifest).map_err(|e| e.in_stage("manifest"))?;
    Ok(PipelineOutcome {
        results,
        report_csv,
        manifest,
    })
}

/// Writes `manifest.json` through a temporary file and a rename.
pub fn write_manifest(root: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, text + "\n")?;
    fs::rename(&tmp, root.join(MANIFEST_FILE))?;
    Ok(())
}
