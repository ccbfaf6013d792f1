//! Stage orchestration.
//!
//! Every stage reads its inputs from files and writes its outputs into an
//! output directory, so stages can be run one at a time or chained by
//! [`run_pipeline`] with identical results:
//!
//! | stage        | reads                          | writes                                   |
//! |--------------|--------------------------------|------------------------------------------|
//! | track        | bundle `study.json`, `images/` | `study.json`, `pipeline.json`, `track.json` |
//! | reconstruct  | `study.json`                   | `mesh.vtk`, `reconstruct.json`           |
//! | fuse         | `study.json`, `mesh.vtk`       | `motion.json`                            |
//! | strain       | `mesh.vtk`, `motion.json`      | `frame_NNN.vtk`, `curves.csv`, `peaks.csv`, `strain.json` |
//! | report       | the files above                | `report.json`                            |
//!
//! Mesh and motion files are in LV coordinates (see [`LvFrame`]).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contour::Parameterization;
use crate::error::{Error, Result};
use crate::fusion::{fuse_study, sax_levels, FusionConfig, LaxCloud, Weighting};
use crate::interp::Extrapolation;
use crate::mesh::vtk::{Attribute, UnstructuredGrid};
use crate::mesh::{load_external_mesh, mesh_quality, tetrahedralize, ApexCap, LvMesh, QualityReport};
use crate::phantom::{sample_views, textured_annulus_image, AnnulusPhantom, PhantomOverrides, Preset, ViewLayout};
use crate::registration::image::write_f32grid;
use crate::registration::{
    align_peak_times, area_change_curve, circular_shift_view, read_image_dir, track_sequence, RegistrationParams,
};
use crate::strain::{curves_csv, peaks_csv, strain_curves, GlobalPeaks, SegmentReport, MAX_EXCLUDED_FRACTION};
use crate::study::{build_lv_frame, load_study, save_study, LvFrame, LvStudy, XAxisConvention};
use crate::Vec3;

pub const CONFIG_FILE: &str = "pipeline.json";
pub const STUDY_FILE: &str = "study.json";
pub const TRACK_FILE: &str = "track.json";
pub const MESH_FILE: &str = "mesh.vtk";
pub const RECONSTRUCT_FILE: &str = "reconstruct.json";
pub const MOTION_FILE: &str = "motion.json";
pub const STRAIN_FILE: &str = "strain.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const PEAKS_FILE: &str = "peaks.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PHANTOM_FILE: &str = "phantom.json";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const IMAGES_DIR: &str = "images";

/// Runs with more extrapolated nodes than this are flagged as degraded.
pub const MAX_EXTRAPOLATED_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Phantom,
    Track,
    Reconstruct,
    Fuse,
    Strain,
    Report,
    Cohort,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Phantom => "phantom",
            Stage::Track => "track",
            Stage::Reconstruct => "reconstruct",
            Stage::Fuse => "fuse",
            Stage::Strain => "strain",
            Stage::Report => "report",
            Stage::Cohort => "cohort",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A module error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }

    /// `{"error": {"stage", "kind", "exit_code", "message"}}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "stage": self.stage.name(),
                "kind": self.source.kind(),
                "exit_code": self.exit_code(),
                "message": self.source.to_string(),
            }
        })
        .to_string()
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

/// All pipeline settings. Paths are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// External tetrahedral mesh (patient coordinates) used instead of the
    /// lofted one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    pub ring_samples: usize,
    pub lax_samples: usize,
    pub layers: usize,
    pub apex_cap: ApexCap,
    pub parameterization: Parameterization,
    pub extrapolation: Extrapolation,
    pub weighting: Weighting,
    pub lax_cloud: LaxCloud,
    pub measurable_fraction: f64,
    /// AHA reference angle (degrees) from the LV x-axis.
    pub theta0: f64,
    pub x_axis: XAxisConvention,
    /// Re-track views that have an image sequence under `images/view_<i>`.
    pub track: bool,
    pub smooth_tracks: bool,
    /// Circularly shift every view so that its contraction peak lines up
    /// with the short-axis stack.
    pub align_peaks: bool,
    pub registration: RegistrationParams,
    /// Used by the `phantom` command.
    #[serde(skip_serializing_if = "PhantomOverrides::is_empty")]
    pub phantom: PhantomOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        PipelineConfig {
            bundle: None,
            out: None,
            mesh: None,
            ring_samples: f.ring_samples,
            lax_samples: f.lax_samples,
            layers: 3,
            apex_cap: ApexCap::default(),
            parameterization: f.parameterization,
            extrapolation: f.extrapolation,
            weighting: f.weighting,
            lax_cloud: f.lax_cloud,
            measurable_fraction: f.measurable_fraction,
            theta0: 0.0,
            x_axis: XAxisConvention::default(),
            track: false,
            smooth_tracks: true,
            align_peaks: false,
            registration: RegistrationParams::default(),
            phantom: PhantomOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The explicit config file if given, otherwise `pipeline.json` next to
    /// the inputs when present, otherwise the defaults.
    pub fn resolve(explicit: Option<&Path>, input_dir: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Some(dir) = input_dir {
            let p = dir.join(CONFIG_FILE);
            if p.is_file() {
                log::info!("using {}", p.display());
                return Self::load(&p);
            }
        }
        Ok(Self::default())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("pipeline config: {m}")));
        if !(8..=4096).contains(&self.ring_samples) {
            return bad("ring_samples must lie in 8..=4096");
        }
        if !(4..=4096).contains(&self.lax_samples) {
            return bad("lax_samples must lie in 4..=4096");
        }
        if !(1..=16).contains(&self.layers) {
            return bad("layers must lie in 1..=16");
        }
        if !(self.measurable_fraction > 0.0 && self.measurable_fraction <= 1.0) {
            return bad("measurable_fraction must lie in (0, 1]");
        }
        if !(self.theta0.is_finite() && self.theta0.abs() <= 360.0) {
            return bad("theta0 must lie in [-360, 360] degrees");
        }
        self.registration.validate()
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            ring_samples: self.ring_samples,
            lax_samples: self.lax_samples,
            parameterization: self.parameterization,
            extrapolation: self.extrapolation,
            weighting: self.weighting,
            lax_cloud: self.lax_cloud,
            measurable_fraction: self.measurable_fraction,
        }
    }

    /// The settings without input and output paths.
    pub fn settings_only(&self) -> Self {
        PipelineConfig {
            bundle: None,
            out: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Writes a phantom study bundle: `study.json`, `phantom.json`,
/// `oracle.csv`, a `pipeline.json` that selects the flat apex cap and, if
/// asked, rendered image sequences under `images/view_<i>/`.
pub fn phantom_stage(
    preset: Preset,
    overrides: &PhantomOverrides,
    layout: &ViewLayout,
    out: &Path,
    with_images: bool,
) -> StageResult<AnnulusPhantom> {
    let st = Stage::Phantom;
    let ph = AnnulusPhantom::with_overrides(preset, overrides).at(st)?;
    let study = sample_views(&ph, layout).at(st)?;
    create_dir(out).at(st)?;
    save_study(&study, out).at(st)?;
    write_file(&out.join(PHANTOM_FILE), to_json(&ph)).at(st)?;

    let heights = layout.sax_heights(ph.h);
    let z_base = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z_apex = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let cfg = PipelineConfig {
        apex_cap: ApexCap::Flat,
        track: with_images,
        ..PipelineConfig::default()
    };
    let oracle = ph.oracle_csv(z_apex, z_base, cfg.theta0).at(st)?;
    write_file(&out.join(ORACLE_FILE), oracle).at(st)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_json()).at(st)?;

    if with_images {
        for (i, view) in study.views.iter().enumerate() {
            let dir = out.join(IMAGES_DIR).join(format!("view_{i}"));
            create_dir(&dir).at(st)?;
            for t in 0..ph.frames {
                let img = textured_annulus_image(&ph, &view.geometry, t).at(st)?;
                write_f32grid(&img, &dir.join(format!("frame_{t:03}.f32grid"))).at(st)?;
            }
        }
    }
    Ok(ph)
}

/// What the track stage changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    /// Indices of the views re-tracked from images.
    pub tracked_views: Vec<usize>,
    /// Tracked points that left the image at some frame.
    pub out_of_domain_points: usize,
    /// Per-view circular frame shift (empty when alignment is off).
    pub shifts: Vec<i64>,
}

/// Prepares the study for reconstruction: optional image tracking and peak
/// alignment. Writes `study.json`, the effective `pipeline.json` and
/// `track.json` into `out`.
pub fn track_stage(cfg: &PipelineConfig, bundle: &Path, out: &Path) -> StageResult<TrackSummary> {
    let st = Stage::Track;
    cfg.validate().at(st)?;
    let mut study = load_study(bundle).at(st)?;
    let mut summary = TrackSummary::default();
    if cfg.track {
        for (i, view) in study.views.iter_mut().enumerate() {
            let dir = bundle.join(IMAGES_DIR).join(format!("view_{i}"));
            if !dir.is_dir() {
                continue;
            }
            let images = read_image_dir(&dir).at(st)?;
            if images.len() != view.frames {
                return Err(Error::validation(format!(
                    "{}: {} images for a view with {} frames",
                    dir.display(),
                    images.len(),
                    view.frames
                )))
                .at(st);
            }
            let seeds: Vec<[f64; 2]> = view.points().copied().collect();
            let seq = track_sequence(&images, &seeds, &cfg.registration, cfg.smooth_tracks).at(st)?;
            summary.out_of_domain_points += seq.out_of_domain.iter().filter(|&&f| f).count();
            view.displacements = seq.displacements;
            summary.tracked_views.push(i);
        }
        if summary.out_of_domain_points > 0 {
            log::warn!("{} tracked points left their image", summary.out_of_domain_points);
        }
    }
    if cfg.align_peaks {
        let curves: Vec<_> = study.views.iter().map(|v| (v.kind, area_change_curve(v))).collect();
        summary.shifts = align_peak_times(&curves).at(st)?;
        for (v, &s) in study.views.iter_mut().zip(&summary.shifts) {
            if s != 0 {
                *v = circular_shift_view(v, s);
            }
        }
    }
    study.validate().at(st)?;
    if same_dir(bundle, out) {
        return Err(Error::validation(
            "the output directory must differ from the input bundle",
        ))
        .at(st);
    }
    create_dir(out).at(st)?;
    save_study(&study, out).at(st)?;
    write_file(&out.join(CONFIG_FILE), cfg.settings_only().to_json()).at(st)?;
    write_file(&out.join(TRACK_FILE), to_json(&summary)).at(st)?;
    Ok(summary)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvFrameRecord {
    pub center: [f64; 3],
    /// Rows are the LV x, y and z axes in patient coordinates.
    pub rotation: [[f64; 3]; 3],
}

impl From<&LvFrame> for LvFrameRecord {
    fn from(f: &LvFrame) -> Self {
        let r = &f.rotation;
        LvFrameRecord {
            center: [f.center.x, f.center.y, f.center.z],
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    /// `lofted` or `external`.
    pub source: String,
    pub lv_frame: LvFrameRecord,
    pub quality: QualityReport,
}

fn lv_study(cfg: &PipelineConfig, bundle: &Path) -> Result<LvStudy> {
    let study = load_study(bundle)?;
    let frame = build_lv_frame(&study, cfg.x_axis)?;
    Ok(LvStudy::new(&study, frame))
}

/// Lofts (or loads) the tetrahedral mesh in LV coordinates and writes
/// `mesh.vtk` and `reconstruct.json`.
pub fn reconstruct_stage(cfg: &PipelineConfig, bundle: &Path, out: &Path) -> StageResult<ReconstructSummary> {
    let st = Stage::Reconstruct;
    cfg.validate().at(st)?;
    let lv = lv_study(cfg, bundle).at(st)?;
    let (mesh, source) = match &cfg.mesh {
        Some(path) => {
            let mut mesh = load_external_mesh(path).at(st)?;
            for p in &mut mesh.nodes {
                *p = lv.frame.to_lv(p);
            }
            (mesh, "external")
        }
        None => {
            let levels = sax_levels(&lv, &cfg.fusion()).at(st)?;
            let endo: Vec<Vec<Vec3>> = levels.iter().map(|l| l.endo.points.clone()).collect();
            let epi: Vec<Vec<Vec3>> = levels.iter().map(|l| l.epi.points.clone()).collect();
            (tetrahedralize(&endo, &epi, cfg.layers, cfg.apex_cap).at(st)?, "lofted")
        }
    };
    let summary = ReconstructSummary {
        source: source.into(),
        lv_frame: LvFrameRecord::from(&lv.frame),
        quality: mesh_quality(&mesh),
    };
    create_dir(out).at(st)?;
    mesh_grid(&mesh).write(&out.join(MESH_FILE)).at(st)?;
    write_file(&out.join(RECONSTRUCT_FILE), to_json(&summary)).at(st)?;
    Ok(summary)
}

fn mesh_grid(mesh: &LvMesh) -> UnstructuredGrid {
    let mut g = UnstructuredGrid::tetrahedra("strainforge mesh", &mesh.nodes, &mesh.tets);
    let tag = |f: fn(&crate::mesh::NodeTag) -> Option<u32>| {
        Attribute::Ints(mesh.tags.iter().map(|t| f(t).map_or(-1, |v| v as i32)).collect())
    };
    g.point_data.push(("ring".into(), tag(|t| t.ring)));
    g.point_data.push(("layer".into(), tag(|t| t.layer)));
    g
}

/// Serialized [`crate::fusion::FusedMotion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub frames: usize,
    pub nodes: usize,
    /// `[frame][node]`, mm in LV coordinates.
    pub displacements: Vec<Vec<[f64; 3]>>,
    /// `[node]` X, Y, Z extrapolation flags.
    pub extrapolated: Vec<[bool; 3]>,
    pub extrapolated_fraction: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub degenerate_weights: bool,
    pub degenerate_clouds: Vec<String>,
}

impl MotionRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let m: MotionRecord = from_json(&read_file(path)?, path)?;
        if m.displacements.len() != m.frames
            || m.extrapolated.len() != m.nodes
            || m.displacements.iter().any(|f| f.len() != m.nodes)
        {
            return Err(Error::validation(format!(
                "{}: inconsistent frame or node counts",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn vectors(&self) -> Vec<Vec<Vec3>> {
        self.displacements
            .iter()
            .map(|f| f.iter().map(|d| Vec3::from(*d)).collect())
            .collect()
    }
}

/// Interpolates and fuses the view displacements at the mesh nodes and
/// writes `motion.json`.
pub fn fuse_stage(cfg: &PipelineConfig, bundle: &Path, mesh: &Path, out: &Path) -> StageResult<MotionRecord> {
    let st = Stage::Fuse;
    cfg.validate().at(st)?;
    let lv = lv_study(cfg, bundle).at(st)?;
    let mesh = load_external_mesh(mesh).at(st)?;
    let m = fuse_study(&lv, &mesh.nodes, &cfg.fusion()).at(st)?;
    let record = MotionRecord {
        frames: m.frames(),
        nodes: mesh.nodes.len(),
        displacements: m
            .displacements
            .iter()
            .map(|f| f.iter().map(|d| [d.x, d.y, d.z]).collect())
            .collect(),
        extrapolated: m.extrapolated.clone(),
        extrapolated_fraction: m.extrapolated_fraction(),
        w_min: m.w_min,
        w_max: m.w_max,
        degenerate_weights: m.degenerate_weights,
        degenerate_clouds: m.degenerate_clouds.clone(),
    };
    create_dir(out).at(st)?;
    write_file(&out.join(MOTION_FILE), to_json(&record)).at(st)?;
    Ok(record)
}

/// File name of the per-frame strain mesh.
pub fn frame_file(t: usize) -> String {
    format!("frame_{t:03}.vtk")
}

fn is_frame_file(name: &str) -> bool {
    name.strip_prefix("frame_")
        .and_then(|s| s.strip_suffix(".vtk"))
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Element strains and AHA curves: per-frame VTK meshes (point data
/// `displacement`, `extrapolated`; cell data `Err`, `Ecc`, `Ell`, `detF`,
/// `segment`), `curves.csv`, `peaks.csv` and `strain.json`.
pub fn strain_stage(cfg: &PipelineConfig, mesh: &Path, motion: &Path, out: &Path) -> StageResult<SegmentReport> {
    let st = Stage::Strain;
    cfg.validate().at(st)?;
    let mesh = load_external_mesh(mesh).at(st)?;
    let motion = MotionRecord::load(motion).at(st)?;
    if motion.nodes != mesh.nodes.len() {
        return Err(Error::validation(format!(
            "motion covers {} nodes but the mesh has {}",
            motion.nodes,
            mesh.nodes.len()
        )))
        .at(st);
    }
    let disp = motion.vectors();
    let (field, report) = strain_curves(&mesh, &disp, cfg.theta0).at(st)?;

    create_dir(out).at(st)?;
    let stale = fs::read_dir(out).map_err(|e| Error::io(out, e)).at(st)?;
    for entry in stale.flatten() {
        if entry.file_name().to_str().is_some_and(is_frame_file) {
            let p = entry.path();
            fs::remove_file(&p).map_err(|e| Error::io(&p, e)).at(st)?;
        }
    }
    let extrapolated = Attribute::Ints(
        motion
            .extrapolated
            .iter()
            .map(|e| e.iter().any(|&x| x) as i32)
            .collect(),
    );
    let segments = Attribute::Ints(field.segments.iter().map(|&s| s as i32).collect());
    for (t, d) in disp.into_iter().enumerate() {
        let mut g = UnstructuredGrid::tetrahedra(&format!("strainforge frame {t}"), &mesh.nodes, &mesh.tets);
        g.point_data.push(("displacement".into(), Attribute::Vectors(d)));
        g.point_data.push(("extrapolated".into(), extrapolated.clone()));
        g.cell_data
            .push(("Err".into(), Attribute::Scalars(field.err[t].clone())));
        g.cell_data
            .push(("Ecc".into(), Attribute::Scalars(field.ecc[t].clone())));
        g.cell_data
            .push(("Ell".into(), Attribute::Scalars(field.ell[t].clone())));
        g.cell_data
            .push(("detF".into(), Attribute::Scalars(field.det_f[t].clone())));
        g.cell_data.push(("segment".into(), segments.clone()));
        g.write(&out.join(frame_file(t))).at(st)?;
    }
    write_file(&out.join(CURVES_FILE), curves_csv(&report)).at(st)?;
    write_file(&out.join(PEAKS_FILE), peaks_csv(&report)).at(st)?;
    write_file(&out.join(STRAIN_FILE), to_json(&report)).at(st)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcStatus {
    Ok,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcFlags {
    pub status: QcStatus,
    pub reasons: Vec<String>,
}

impl QcFlags {
    pub fn evaluate(extrapolated_fraction: f64, excluded_fraction: f64, degenerate_weights: bool) -> Self {
        let mut reasons = Vec::new();
        if extrapolated_fraction > MAX_EXTRAPOLATED_FRACTION {
            reasons.push(format!(
                "extrapolated node fraction {extrapolated_fraction:.3} exceeds {MAX_EXTRAPOLATED_FRACTION}"
            ));
        }
        if excluded_fraction > MAX_EXCLUDED_FRACTION {
            reasons.push(format!(
                "excluded element fraction {excluded_fraction:.4} exceeds {MAX_EXCLUDED_FRACTION}"
            ));
        }
        if degenerate_weights {
            reasons.push("long-axis weighting range was empty; weights fell back to zero".into());
        }
        let status = if reasons.is_empty() {
            QcStatus::Ok
        } else {
            QcStatus::Degraded
        };
        QcFlags { status, reasons }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub global_peaks: GlobalPeaks,
    pub extrapolated_fraction: f64,
    pub excluded_elements: usize,
    pub total_elements: usize,
    pub excluded_fraction: f64,
    pub mesh_source: String,
    pub mesh_quality: QualityReport,
    pub lv_frame: LvFrameRecord,
    pub degenerate_clouds: Vec<String>,
    #[serde(default)]
    pub track: Option<TrackSummary>,
    pub qc: QcFlags,
    /// Files of the run, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        from_json(&read_file(path)?, path)
    }
}

/// Collects the stage outputs in `dir` into `report.json`.
pub fn report_stage(dir: &Path) -> StageResult<RunReport> {
    let st = Stage::Report;
    let load = |name: &str| -> Result<(PathBuf, String)> {
        let p = dir.join(name);
        let text = read_file(&p)?;
        Ok((p, text))
    };
    let (p, text) = load(RECONSTRUCT_FILE).at(st)?;
    let recon: ReconstructSummary = from_json(&text, &p).at(st)?;
    let motion = MotionRecord::load(&dir.join(MOTION_FILE)).at(st)?;
    let (p, text) = load(STRAIN_FILE).at(st)?;
    let strain: SegmentReport = from_json(&text, &p).at(st)?;
    let track_path = dir.join(TRACK_FILE);
    let track: Option<TrackSummary> = if track_path.is_file() {
        Some(from_json(&read_file(&track_path).at(st)?, &track_path).at(st)?)
    } else {
        None
    };

    let excluded_fraction = strain.excluded_elements as f64 / strain.total_elements.max(1) as f64;
    let mut artifacts: Vec<String> = [STUDY_FILE, CONFIG_FILE, TRACK_FILE]
        .iter()
        .filter(|n| dir.join(n).is_file())
        .map(|n| n.to_string())
        .collect();
    artifacts.extend([MESH_FILE, RECONSTRUCT_FILE, MOTION_FILE].map(String::from));
    artifacts.extend((0..strain.frames).map(frame_file));
    artifacts.extend([CURVES_FILE, PEAKS_FILE, STRAIN_FILE, REPORT_FILE].map(String::from));

    let report = RunReport {
        frames: strain.frames,
        global_peaks: strain.global,
        extrapolated_fraction: motion.extrapolated_fraction,
        excluded_elements: strain.excluded_elements,
        total_elements: strain.total_elements,
        excluded_fraction,
        mesh_source: recon.source,
        mesh_quality: recon.quality,
        lv_frame: recon.lv_frame,
        degenerate_clouds: motion.degenerate_clouds,
        track,
        qc: QcFlags::evaluate(
            motion.extrapolated_fraction,
            excluded_fraction,
            motion.degenerate_weights,
        ),
        artifacts,
    };
    write_file(&dir.join(REPORT_FILE), to_json(&report)).at(st)?;
    Ok(report)
}

/// Runs every stage from `cfg.bundle` into `cfg.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> StageResult<RunReport> {
    let st = Stage::Config;
    cfg.validate().at(st)?;
    let bundle = cfg
        .bundle
        .as_deref()
        .ok_or_else(|| Error::validation("no input bundle given"))
        .at(st)?;
    let out = cfg
        .out
        .as_deref()
        .ok_or_else(|| Error::validation("no output directory given"))
        .at(st)?;
    track_stage(cfg, bundle, out)?;
    reconstruct_stage(cfg, out, out)?;
    let mesh = out.join(MESH_FILE);
    fuse_stage(cfg, out, &mesh, out)?;
    strain_stage(cfg, &mesh, &out.join(MOTION_FILE), out)?;
    report_stage(out)
}

/// Component-wise mean and population standard deviation of global peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub count: usize,
    pub mean: GlobalPeaks,
    pub sd: GlobalPeaks,
}

pub fn cohort_summary(peaks: &[GlobalPeaks]) -> Result<CohortSummary> {
    if peaks.is_empty() {
        return Err(Error::validation("cohort summary needs at least one report"));
    }
    let n = peaks.len() as f64;
    let stats = |f: fn(&GlobalPeaks) -> f64| {
        let mean = peaks.iter().map(f).sum::<f64>() / n;
        let var = peaks.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (err, ecc, ell) = (stats(|p| p.err), stats(|p| p.ecc), stats(|p| p.ell));
    Ok(CohortSummary {
        count: peaks.len(),
        mean: GlobalPeaks {
            err: err.0,
            ecc: ecc.0,
            ell: ell.0,
        },
        sd: GlobalPeaks {
            err: err.1,
            ecc: ecc.1,
            ell: ell.1,
        },
    })
}

/// Reads the global peaks of each `report.json` and summarizes them.
pub fn cohort_from_reports(paths: &[PathBuf]) -> StageResult<CohortSummary> {
    let st = Stage::Cohort;
    let peaks: Vec<GlobalPeaks> = paths
        .iter()
        .map(|p| RunReport::load(p).map(|r| r.global_peaks))
        .collect::<Result<_>>()
        .at(st)?;
    cohort_summary(&peaks).at(st)
}

pub fn cohort_json(summary: &CohortSummary) -> String {
    to_json(summary)
}
