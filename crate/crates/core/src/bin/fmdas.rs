use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fmdas::beamform::{preprocess_sos, BeamformMethod};
use fmdas::config::PipelineConfig;
use fmdas::error::{Error, Result};
use fmdas::medium::SosMap;
use fmdas::phantom::{read_bundle, write_bundle, RegistryFile, Scenario};
use fmdas::pipeline::{self, RF_FILE};
use fmdas::raster::{read_raster, write_raster};
use fmdas::rf::{read_rf, write_rf};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

/// Fast-marching refraction-corrected delay-and-sum beamforming.
#[derive(Debug, Parser)]
#[command(name = "fmdas", version, about)]
struct Cli {
    /// TOML configuration; keys override the preset it names (desk by default).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on a single thread.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a phantom bundle (speed-of-sound raster, registry, scatterers).
    Phantom {
        #[arg(long)]
        scenario: Scenario,
    },
    /// Synthesize focused-transmit RF for a phantom bundle.
    Rfsim {
        /// Phantom bundle directory.
        #[arg(long, value_name = "DIR")]
        phantom: PathBuf,
    },
    /// Solve first-arrival travel times on a speed-of-sound raster.
    SolveTimes {
        #[arg(long, value_name = "FILE")]
        sos: PathBuf,
        /// Source position in meters.
        #[arg(
            long,
            value_name = "X,Z",
            conflicts_with = "element",
            required_unless_present = "element"
        )]
        source: Option<String>,
        /// Source at this array element.
        #[arg(long, value_name = "I")]
        element: Option<usize>,
        /// Median filter and smooth the map first.
        #[arg(long)]
        preprocess: bool,
    },
    /// Beamform an RF file into envelope and log-compressed images.
    Beamform {
        #[arg(long, value_name = "FILE")]
        rf: PathBuf,
        #[arg(long)]
        method: BeamformMethod,
        /// Speed-of-sound raster, required for fm-das.
        #[arg(long, value_name = "FILE")]
        sos: Option<PathBuf>,
    },
    /// Score an image directory against a phantom registry.
    Metrics {
        /// Directory holding envelope.eikr.
        #[arg(long, value_name = "DIR")]
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        registry: PathBuf,
    },
    /// Run every stage for every configured scenario and method.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_STAGE
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (use --out)".into()))?;
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    pipeline::with_threads(cli.threads, || {
        dispatch(&cli.command, &cfg, &out, cli.threads)
    })?
}

fn dispatch(
    command: &Command,
    cfg: &PipelineConfig,
    out: &Path,
    threads: Option<usize>,
) -> Result<()> {
    match command {
        Command::Phantom { scenario } => {
            let phantom =
                pipeline::make_phantom(cfg, *scenario).map_err(|e| e.in_stage("phantom"))?;
            write_bundle(out, &phantom).map_err(|e| e.in_stage("phantom"))?;
            eprintln!(
                "wrote {scenario} bundle ({} scatterers) to {}",
                phantom.scatterers.len(),
                out.display()
            );
        }
        Command::Rfsim { phantom } => {
            let stage = |e: Error| e.in_stage("rfsim");
            let phantom = read_bundle(phantom).map_err(stage)?;
            let rf = pipeline::simulate(cfg, &phantom).map_err(stage)?;
            std::fs::create_dir_all(out).map_err(|e| stage(e.into()))?;
            write_rf(out.join(RF_FILE), &rf).map_err(stage)?;
            eprintln!(
                "wrote {} x {} x {} samples to {}",
                rf.n_transmits(),
                rf.n_elements(),
                rf.n_samples,
                out.display()
            );
        }
        Command::SolveTimes {
            sos,
            source,
            element,
            preprocess,
        } => {
            let source = match (source, element) {
                (Some(s), _) => parse_point(s)?,
                (None, Some(i)) => {
                    let array = cfg.transducer()?;
                    if *i >= array.n_elements() {
                        return Err(Error::Config(format!(
                            "element {i} out of range (array has {})",
                            array.n_elements()
                        )));
                    }
                    array.element_position(*i)
                }
                (None, None) => {
                    return Err(Error::Config("give --source X,Z or --element I".into()))
                }
            };
            let stage = |e: Error| e.in_stage("solve-times");
            let mut map = SosMap::new(read_raster(sos).map_err(stage)?).map_err(stage)?;
            if *preprocess {
                map = preprocess_sos(
                    &map,
                    cfg.preprocess.median_radius,
                    cfg.preprocess.smooth_sigma,
                )
                .map_err(stage)?;
            }
            let times = pipeline::solve_times(cfg, &map, source).map_err(stage)?;
            std::fs::create_dir_all(out).map_err(|e| stage(e.into()))?;
            write_raster(out.join("times.eikr"), &times.times).map_err(stage)?;
            eprintln!(
                "solved from ({:.6}, {:.6}) m, max time {:.3e} s",
                source.0,
                source.1,
                times.times.max()
            );
        }
        Command::Beamform { rf, method, sos } => {
            if *method == BeamformMethod::FmDas && sos.is_none() {
                return Err(Error::Config("fm-das requires --sos FILE".into()));
            }
            let stage = |e: Error| e.in_stage("beamform");
            let rf = read_rf(rf).map_err(stage)?;
            let map = match sos {
                Some(p) => Some(SosMap::new(read_raster(p).map_err(stage)?).map_err(stage)?),
                None => None,
            };
            let output = pipeline::beamform(cfg, &rf, *method, map.as_ref()).map_err(stage)?;
            pipeline::write_image(out, &output.image, cfg.dynamic_range_db).map_err(stage)?;
            match output.fm_solves {
                Some(n) => eprintln!(
                    "{method} image written to {} ({n} eikonal solves)",
                    out.display()
                ),
                None => eprintln!("{method} image written to {}", out.display()),
            }
        }
        Command::Metrics { image, registry } => {
            let stage = |e: Error| e.in_stage("metrics");
            let envelope = read_raster(image.join(pipeline::ENVELOPE_FILE)).map_err(stage)?;
            let text = std::fs::read_to_string(registry).map_err(|e| stage(e.into()))?;
            let reg: RegistryFile = toml::from_str(&text)
                .map_err(|e| stage(Error::Format(format!("registry: {e}"))))?;
            let metrics = pipeline::evaluate(cfg, &envelope, &reg.registry).map_err(stage)?;
            std::fs::create_dir_all(out).map_err(|e| stage(e.into()))?;
            pipeline::write_metrics(out.join(pipeline::METRICS_FILE), &metrics).map_err(stage)?;
            let gcnr: Vec<String> = metrics
                .gcnr
                .iter()
                .map(|(l, g)| format!("{l} {:.3}", g.gcnr))
                .collect();
            eprintln!("mean GDS {:.1}, gCNR {}", metrics.gds.mean, gcnr.join(", "));
        }
        Command::Pipeline => {
            let outcome = pipeline::run_pipeline(cfg, out, threads)?;
            eprint!("{}", outcome.report_csv);
        }
    }
    Ok(())
}

fn parse_point(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("expected X,Z in meters, got `{s}`"));
    let (x, z) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        x.trim().parse().map_err(|_| bad())?,
        z.trim().parse().map_err(|_| bad())?,
    ))
}
