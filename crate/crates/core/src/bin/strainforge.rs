use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use strainforge::contour::Parameterization;
use strainforge::fusion::{LaxCloud, Weighting};
use strainforge::interp::Extrapolation;
use strainforge::mesh::ApexCap;
use strainforge::phantom::{PhantomOverrides, Preset, ViewLayout};
use strainforge::pipeline::{self, PipelineConfig, Stage, StageError, StageResult};
use strainforge::registration::{read_image_dir, track_sequence, RegistrationParams};
use strainforge::study::{TrackedView, XAxisConvention};
use strainforge::Error;

const THREADS_ENV: &str = "STRAINFORGE_THREADS";

#[derive(Parser)]
#[command(
    name = "strainforge",
    version,
    about = "Left-ventricle strain from multi-view 2D tracking data"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an analytic phantom study bundle with its strain oracle.
    Phantom(PhantomArgs),
    /// Track contour points through an image sequence, or prepare a bundle.
    Track(TrackArgs),
    /// Build the tetrahedral myocardium mesh.
    Reconstruct {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fuse the view displacements into a 3D motion field on the mesh.
    Fuse {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute element strains, AHA curves and per-frame VTK meshes.
    Strain {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize a run directory into report.json.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run every stage from a bundle.
    Run {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Mean and population SD of global peaks over report.json files.
    Cohort {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the summary to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value = "contractile")]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    /// Config file whose `phantom` section overrides preset constants.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    lambda_peak: Option<f64>,
    #[arg(long)]
    ri_ratio: Option<f64>,
    /// Peak torsion rate in rad/mm.
    #[arg(long)]
    torsion: Option<f64>,
    #[arg(long)]
    sax_slices: Option<usize>,
    /// Also render textured image sequences for every view.
    #[arg(long)]
    images: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Directory of .pgm or .f32grid frames (single-sequence mode).
    #[arg(long, requires = "seeds", conflicts_with = "bundle")]
    images: Option<PathBuf>,
    /// JSON with a list of [row, col] seeds or a tracked view.
    #[arg(long, requires = "images")]
    seeds: Option<PathBuf>,
    /// Bundle to prepare for reconstruction (bundle mode).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Output JSON file (single-sequence mode) or directory (bundle mode).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Command-line overrides of [`PipelineConfig`]; flags win over the file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON pipeline config (defaults to pipeline.json next to the inputs).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ring_samples: Option<usize>,
    #[arg(long)]
    lax_samples: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// fan | flat
    #[arg(long)]
    apex_cap: Option<ApexCap>,
    /// chord | centripetal
    #[arg(long)]
    parameterization: Option<Parameterization>,
    /// nearest | linear
    #[arg(long)]
    extrapolation: Option<Extrapolation>,
    /// global | per-point
    #[arg(long)]
    weighting: Option<Weighting>,
    /// points | cage
    #[arg(long)]
    lax_cloud: Option<LaxCloud>,
    #[arg(long)]
    measurable_fraction: Option<f64>,
    /// AHA reference angle in degrees.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<f64>,
    /// 4ch | 2ch | patient
    #[arg(long)]
    x_axis: Option<XAxisConvention>,
    /// Use an external tetrahedral mesh (VTK, patient coordinates).
    #[arg(long)]
    external_mesh: Option<PathBuf>,
    /// Re-track views from images stored in the bundle.
    #[arg(long)]
    track: bool,
    #[arg(long)]
    no_smooth: bool,
    #[arg(long)]
    align_peaks: bool,
    /// Bending-energy weight of the registration.
    #[arg(long)]
    alpha: Option<f64>,
    /// Registration pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Control-point spacing in pixels.
    #[arg(long)]
    control_spacing: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self, input_dir: Option<&Path>) -> StageResult<PipelineConfig> {
        let mut cfg = PipelineConfig::resolve(self.config.as_deref(), input_dir).map_err(config_error)?;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set!(
            ring_samples => cfg.ring_samples,
            lax_samples => cfg.lax_samples,
            layers => cfg.layers,
            apex_cap => cfg.apex_cap,
            parameterization => cfg.parameterization,
            extrapolation => cfg.extrapolation,
            weighting => cfg.weighting,
            lax_cloud => cfg.lax_cloud,
            measurable_fraction => cfg.measurable_fraction,
            theta0 => cfg.theta0,
            x_axis => cfg.x_axis,
            alpha => cfg.registration.alpha,
            levels => cfg.registration.pyramid_levels,
            max_iterations => cfg.registration.max_iterations,
            control_spacing => cfg.registration.control_spacing,
        );
        if let Some(m) = &self.external_mesh {
            cfg.mesh = Some(m.clone());
        }
        cfg.track |= self.track;
        cfg.align_peaks |= self.align_peaks;
        if self.no_smooth {
            cfg.smooth_tracks = false;
        }
        cfg.validate().map_err(config_error)?;
        Ok(cfg)
    }
}

fn config_error(source: Error) -> StageError {
    StageError {
        stage: Stage::Config,
        source,
    }
}

fn phantom(a: &PhantomArgs) -> StageResult<()> {
    let mut overrides = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(config_error)?.phantom,
        None => PhantomOverrides::default(),
    };
    overrides.frames = a.frames.or(overrides.frames);
    overrides.lambda_peak = a.lambda_peak.or(overrides.lambda_peak);
    overrides.ri_ratio = a.ri_ratio.or(overrides.ri_ratio);
    overrides.torsion = a.torsion.or(overrides.torsion);
    let mut layout = ViewLayout::default();
    if let Some(k) = a.sax_slices {
        layout.sax_slices = k;
    }
    let ph = pipeline::phantom_stage(a.preset, &overrides, &layout, &a.out, a.images)?;
    println!(
        "wrote {} ({} preset, {} frames)",
        a.out.display(),
        a.preset.name(),
        ph.frames
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Seeds {
    View(Box<TrackedView>),
    Points(Vec<[f64; 2]>),
}

fn track(a: &TrackArgs) -> StageResult<()> {
    let st = |source| StageError {
        stage: Stage::Track,
        source,
    };
    let (Some(images), Some(seeds)) = (&a.images, &a.seeds) else {
        let Some(bundle) = &a.bundle else {
            return Err(st(Error::validation("track needs --images and --seeds, or --bundle")));
        };
        let cfg = a.config.resolve(Some(bundle))?;
        let summary = pipeline::track_stage(&cfg, bundle, &a.out)?;
        println!(
            "wrote {} ({} views tracked)",
            a.out.join(pipeline::STUDY_FILE).display(),
            summary.tracked_views.len()
        );
        return Ok(());
    };
    let cfg = a.config.resolve(None)?;
    let params: &RegistrationParams = &cfg.registration;
    let text = std::fs::read_to_string(seeds).map_err(|e| st(Error::io(seeds, e)))?;
    let parsed: Seeds = serde_json::from_str(&text).map_err(|e| {
        st(Error::validation(format!(
            "{}: expected a point list or a tracked view ({e})",
            seeds.display()
        )))
    })?;
    let frames = read_image_dir(images).map_err(st)?;
    let json = match parsed {
        Seeds::Points(points) => {
            let seq = track_sequence(&frames, &points, params, cfg.smooth_tracks).map_err(st)?;
            serde_json::to_string_pretty(&seq)
        }
        Seeds::View(mut view) => {
            let points: Vec<[f64; 2]> = view.points().copied().collect();
            let seq = track_sequence(&frames, &points, params, cfg.smooth_tracks).map_err(st)?;
            view.frames = frames.len();
            view.displacements = seq.displacements;
            view.validate("view").map_err(st)?;
            serde_json::to_string_pretty(&view)
        }
    }
    .expect("plain data serializes");
    std::fs::write(&a.out, json + "\n").map_err(|e| st(Error::io(&a.out, e)))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parent_dir(p: &Path) -> Option<&Path> {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .or(Some(Path::new(".")))
}

fn execute(cmd: &Command) -> StageResult<()> {
    match cmd {
        Command::Phantom(a) => phantom(a),
        Command::Track(a) => track(a),
        Command::Reconstruct { bundle, out, config } => {
            let cfg = config.resolve(Some(bundle))?;
            let s = pipeline::reconstruct_stage(&cfg, bundle, out)?;
            println!(
                "wrote {} ({} nodes, {} tets)",
                out.join(pipeline::MESH_FILE).display(),
                s.quality.nodes,
                s.quality.tets
            );
            Ok(())
        }
        Command::Fuse {
            bundle,
            mesh,
            out,
            config,
        } => {
            let cfg = config.resolve(Some(bundle))?;
            let m = pipeline::fuse_stage(&cfg, bundle, mesh, out)?;
            println!(
                "wrote {} ({} frames, extrapolated fraction {:.3})",
                out.join(pipeline::MOTION_FILE).display(),
                m.frames,
                m.extrapolated_fraction
            );
            Ok(())
        }
        Command::Strain {
            mesh,
            motion,
            out,
            config,
        } => {
            let cfg = config.resolve(parent_dir(motion))?;
            let r = pipeline::strain_stage(&cfg, mesh, motion, out)?;
            println!(
                "wrote {} (global peaks Err {:.4} Ecc {:.4} Ell {:.4})",
                out.join(pipeline::CURVES_FILE).display(),
                r.global.err,
                r.global.ecc,
                r.global.ell
            );
            Ok(())
        }
        Command::Report { dir } => {
            let r = pipeline::report_stage(dir)?;
            print_report(dir, &r);
            Ok(())
        }
        Command::Run { bundle, out, config } => {
            let mut cfg = config.resolve(bundle.as_deref())?;
            if bundle.is_some() {
                cfg.bundle = bundle.clone();
            }
            if out.is_some() {
                cfg.out = out.clone();
            }
            let r = pipeline::run_pipeline(&cfg)?;
            print_report(cfg.out.as_deref().unwrap_or(Path::new(".")), &r);
            Ok(())
        }
        Command::Cohort { reports, out } => {
            let s = pipeline::cohort_from_reports(reports)?;
            let json = pipeline::cohort_json(&s);
            if let Some(p) = out {
                std::fs::write(p, &json).map_err(|e| StageError {
                    stage: Stage::Cohort,
                    source: Error::io(p, e),
                })?;
            }
            print!("{json}");
            Ok(())
        }
    }
}

fn print_report(dir: &Path, r: &pipeline::RunReport) {
    println!(
        "wrote {} (global peaks Err {:.4} Ecc {:.4} Ell {:.4}; extrapolated {:.1}%; qc {:?})",
        dir.join(pipeline::REPORT_FILE).display(),
        r.global_peaks.err,
        r.global_peaks.ecc,
        r.global_peaks.ell,
        100.0 * r.extrapolated_fraction,
        r.qc.status
    );
    for reason in &r.qc.reasons {
        println!("  degraded: {reason}");
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::validation(format!("cannot configure {n} threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = configure_threads()
        .map_err(config_error)
        .and_then(|_| execute(&cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
