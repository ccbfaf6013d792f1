//! Study bundles: per-view imaging geometry, ED contours and tracked in-plane
//! displacements, plus the transforms into patient space and into the
//! LV-centred frame used by every later stage.
//!
//! A bundle is a directory holding `study.json`. Contours and displacements
//! are stored in pixels, geometry in millimetres. The displacement list of a
//! view is indexed `[frame][point]` where the points are the endocardial
//! contour followed by the epicardial contour.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

const UNIT_TOL: f64 = 1e-9;
const MAX_SAX_NORMAL_SPREAD_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    #[serde(rename = "SAX")]
    Sax,
    #[serde(rename = "4CH")]
    FourChamber,
    #[serde(rename = "2CH")]
    TwoChamber,
}

impl ViewKind {
    pub fn is_long_axis(self) -> bool {
        !matches!(self, ViewKind::Sax)
    }

    pub fn label(self) -> &'static str {
        match self {
            ViewKind::Sax => "SAX",
            ViewKind::FourChamber => "4CH",
            ViewKind::TwoChamber => "2CH",
        }
    }
}

/// Position, orientation and pixel spacing of one imaging plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewGeometry {
    pub origin: [f64; 3],
    pub row_dir: [f64; 3],
    pub col_dir: [f64; 3],
    pub row_spacing: f64,
    pub col_spacing: f64,
    pub rows: usize,
    pub cols: usize,
}

impl ViewGeometry {
    pub fn origin(&self) -> Vec3 {
        Vector3::from(self.origin)
    }

    pub fn row_dir(&self) -> Vec3 {
        Vector3::from(self.row_dir)
    }

    pub fn col_dir(&self) -> Vec3 {
        Vector3::from(self.col_dir)
    }

    /// Unit normal of the imaging plane (`row_dir × col_dir`).
    pub fn normal(&self) -> Vec3 {
        self.row_dir().cross(&self.col_dir())
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = self
            .origin
            .iter()
            .chain(&self.row_dir)
            .chain(&self.col_dir)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation(format!("{field}: non-finite value")));
        }
        if !(self.row_spacing > 0.0 && self.row_spacing.is_finite()) {
            return Err(Error::validation(format!("{field}.row_spacing must be > 0")));
        }
        if !(self.col_spacing > 0.0 && self.col_spacing.is_finite()) {
            return Err(Error::validation(format!("{field}.col_spacing must be > 0")));
        }
        let r = self.row_dir();
        let c = self.col_dir();
        if (r.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Geometry(format!("{field}.row_dir is not unit length")));
        }
        if (c.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Geometry(format!("{field}.col_dir is not unit length")));
        }
        if r.dot(&c).abs() > UNIT_TOL {
            return Err(Error::Geometry(format!(
                "{field}: row_dir and col_dir are not orthogonal"
            )));
        }
        Ok(())
    }
}

/// Maps fractional pixel coordinates `(row, col)` to patient space (mm).
pub fn pixel_to_patient(geom: &ViewGeometry, p: [f64; 2]) -> Vec3 {
    geom.origin() + geom.row_dir() * (p[0] * geom.row_spacing) + geom.col_dir() * (p[1] * geom.col_spacing)
}

/// Maps an in-plane pixel displacement to a patient-space vector (mm).
pub fn inplane_displacement_to_patient(geom: &ViewGeometry, d: [f64; 2]) -> Vec3 {
    geom.row_dir() * (d[0] * geom.row_spacing) + geom.col_dir() * (d[1] * geom.col_spacing)
}

/// ED contours of the tracked ROIs, in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contours {
    pub endo: Vec<[f64; 2]>,
    pub epi: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedView {
    pub kind: ViewKind,
    pub slice_index: i64,
    pub geometry: ViewGeometry,
    pub contours: Contours,
    pub frames: usize,
    /// `[frame][point][row, col]`, points ordered endo then epi.
    pub displacements: Vec<Vec<[f64; 2]>>,
}

impl TrackedView {
    pub fn point_count(&self) -> usize {
        self.contours.endo.len() + self.contours.epi.len()
    }

    /// ED contour points in pixel space, endo then epi.
    pub fn points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.contours.endo.iter().chain(&self.contours.epi)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        self.geometry.validate(&format!("{field}.geometry"))?;
        for (name, c) in [("endo", &self.contours.endo), ("epi", &self.contours.epi)] {
            if c.len() < 3 {
                return Err(Error::validation(format!(
                    "{field}.contours.{name}: needs at least 3 points, got {}",
                    c.len()
                )));
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "{field}.contours.{name}: non-finite coordinate"
                )));
            }
        }
        if self.frames == 0 {
            return Err(Error::validation(format!("{field}.frames must be >= 1")));
        }
        if self.displacements.len() != self.frames {
            return Err(Error::validation(format!(
                "{field}.displacements: expected {} frames, got {}",
                self.frames,
                self.displacements.len()
            )));
        }
        let n = self.point_count();
        for (t, frame) in self.displacements.iter().enumerate() {
            if frame.len() != n {
                return Err(Error::validation(format!(
                    "{field}.displacements[{t}]: expected {n} points, got {}",
                    frame.len()
                )));
            }
            if frame.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "{field}.displacements[{t}]: non-finite value"
                )));
            }
        }
        if self.displacements[0].iter().flatten().any(|&v| v != 0.0) {
            return Err(Error::validation(format!(
                "{field}.displacements[0]: frame 0 (ED) must be all zero"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub views: Vec<TrackedView>,
}

impl Study {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::validation("views: bundle holds no views"));
        }
        for (i, v) in self.views.iter().enumerate() {
            v.validate(&format!("views[{i}]"))?;
        }
        let frames = self.views[0].frames;
        if let Some((i, v)) = self.views.iter().enumerate().find(|(_, v)| v.frames != frames) {
            return Err(Error::validation(format!(
                "views[{i}].frames: {} differs from views[0].frames = {frames}",
                v.frames
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.views.first().map_or(0, |v| v.frames)
    }

    pub fn sax_views(&self) -> impl Iterator<Item = &TrackedView> {
        self.views.iter().filter(|v| v.kind == ViewKind::Sax)
    }

    pub fn from_json(text: &str) -> Result<Study> {
        let study: Study = serde_json::from_str(text).map_err(|e| Error::validation(format!("study.json: {e}")))?;
        study.validate()?;
        Ok(study)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serialization cannot fail")
    }
}

/// Loads `<bundle>/study.json` (or the file itself when given one).
pub fn load_study(bundle: &Path) -> Result<Study> {
    let file = if bundle.is_dir() {
        bundle.join("study.json")
    } else {
        bundle.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    Study::from_json(&text)
}

/// Writes `<dir>/study.json`, creating the directory when needed.
pub fn save_study(study: &Study, dir: &Path) -> Result<()> {
    study.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = dir.join("study.json");
    fs::write(&file, study.to_json()).map_err(|e| Error::io(&file, e))
}

/// Which image direction fixes the in-plane +X axis of the LV frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XAxisConvention {
    /// Intersection direction of the 4CH plane with the SAX plane.
    #[default]
    #[serde(rename = "4ch")]
    FourChamber,
    #[serde(rename = "2ch")]
    TwoChamber,
    /// Projection of patient +X.
    Patient,
}

impl std::str::FromStr for XAxisConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "4ch" => Ok(Self::FourChamber),
            "2ch" => Ok(Self::TwoChamber),
            "patient" => Ok(Self::Patient),
            other => Err(Error::validation(format!("unknown x-axis convention `{other}`"))),
        }
    }
}

/// Rigid transform from patient space to the LV frame: long axis along +Z
/// with the base at high Z, origin at the ED centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvFrame {
    pub center: Vec3,
    /// Rows are the LV X, Y and Z axes expressed in patient space.
    pub rotation: Mat3,
}

impl LvFrame {
    pub fn identity() -> Self {
        LvFrame {
            center: Vec3::zeros(),
            rotation: Mat3::identity(),
        }
    }

    pub fn to_lv(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.center)
    }

    pub fn vector_to_lv(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn from_lv(&self, q: &Vec3) -> Vec3 {
        self.rotation.transpose() * q + self.center
    }

    pub fn vector_from_lv(&self, d: &Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }
}

fn polygon_area(points: &[Vec3], normal: &Vec3) -> f64 {
    let n = points.len();
    let mut acc = Vec3::zeros();
    for i in 0..n {
        acc += points[i].cross(&points[(i + 1) % n]);
    }
    0.5 * acc.dot(normal).abs()
}

fn project_onto_plane(v: &Vec3, normal: &Vec3) -> Vec3 {
    v - normal * v.dot(normal)
}

/// Builds the LV-centred frame from the SAX stack.
pub fn build_lv_frame(study: &Study, convention: XAxisConvention) -> Result<LvFrame> {
    let sax: Vec<&TrackedView> = study.sax_views().collect();
    if sax.len() < 2 {
        return Err(Error::Geometry(format!(
            "LV frame needs at least 2 SAX slices, found {}",
            sax.len()
        )));
    }

    let reference = sax[0].geometry.normal().normalize();
    let cos_limit = MAX_SAX_NORMAL_SPREAD_DEG.to_radians().cos();
    let mut z_axis = Vec3::zeros();
    for v in &sax {
        let n = v.geometry.normal().normalize();
        let c = n.dot(&reference);
        if c.abs() < cos_limit {
            return Err(Error::Geometry(format!(
                "SAX slice {} normal deviates {:.2} deg from slice {}",
                v.slice_index,
                c.abs().min(1.0).acos().to_degrees(),
                sax[0].slice_index
            )));
        }
        z_axis += n * c.signum();
    }
    let mut z_axis = z_axis.normalize();

    // Orientation: basal slices get the largest Z.
    let height = |v: &TrackedView| v.geometry.origin().dot(&z_axis);
    let mut indices: Vec<i64> = sax.iter().map(|v| v.slice_index).collect();
    indices.sort_unstable();
    let distinct = indices.windows(2).all(|w| w[0] != w[1]);
    let mut decided = false;
    let mut flip = false;
    if distinct {
        let basal = sax.iter().min_by_key(|v| v.slice_index).unwrap();
        let apical = sax.iter().max_by_key(|v| v.slice_index).unwrap();
        let (hb, ha) = (height(basal), height(apical));
        if (hb - ha).abs() > 1e-9 {
            flip = hb < ha;
            decided = true;
        }
    }
    if !decided {
        let mut by_height: Vec<(f64, f64)> = sax
            .iter()
            .map(|v| {
                let pts =
                    |c: &[[f64; 2]]| -> Vec<Vec3> { c.iter().map(|p| pixel_to_patient(&v.geometry, *p)).collect() };
                let area = 0.5
                    * (polygon_area(&pts(&v.contours.endo), &z_axis) + polygon_area(&pts(&v.contours.epi), &z_axis));
                (height(v), area)
            })
            .collect();
        by_height.sort_by(|a, b| a.0.total_cmp(&b.0));
        let half = by_height.len() / 2;
        let low: f64 = by_height[..half].iter().map(|x| x.1).sum::<f64>() / half as f64;
        let high: f64 = by_height[by_height.len() - half..].iter().map(|x| x.1).sum::<f64>() / half as f64;
        flip = low > high;
    }
    if flip {
        z_axis = -z_axis;
    }

    let in_plane_axis = |kind: ViewKind| -> Option<Vec3> {
        let view = study.views.iter().find(|v| v.kind == kind)?;
        let c = project_onto_plane(&view.geometry.col_dir(), &z_axis);
        let r = project_onto_plane(&view.geometry.row_dir(), &z_axis);
        let pick = if c.norm() >= r.norm() { c } else { r };
        (pick.norm() > 1e-6).then(|| pick.normalize())
    };
    let patient_axis = || -> Vec3 {
        let x = project_onto_plane(&Vec3::x(), &z_axis);
        if x.norm() > 1e-6 {
            x.normalize()
        } else {
            project_onto_plane(&Vec3::y(), &z_axis).normalize()
        }
    };
    let x_axis = match convention {
        XAxisConvention::FourChamber => in_plane_axis(ViewKind::FourChamber),
        XAxisConvention::TwoChamber => in_plane_axis(ViewKind::TwoChamber),
        XAxisConvention::Patient => None,
    }
    .unwrap_or_else(patient_axis);
    let y_axis = z_axis.cross(&x_axis);

    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for v in &study.views {
        for p in v.points() {
            sum += pixel_to_patient(&v.geometry, *p);
            count += 1;
        }
    }
    let center = sum / count as f64;

    let rotation = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
    Ok(LvFrame { center, rotation })
}

/// One view with its ED contours and per-frame displacements in LV space (mm).
#[derive(Debug, Clone)]
pub struct LvView {
    pub kind: ViewKind,
    pub slice_index: i64,
    /// Plane normal in LV space.
    pub normal: Vec3,
    /// In-plane row and column directions in LV space.
    pub row_dir: Vec3,
    pub col_dir: Vec3,
    pub endo: Vec<Vec3>,
    pub epi: Vec<Vec3>,
    /// `[frame][point]`, endo then epi.
    pub displacements: Vec<Vec<Vec3>>,
}

impl LvView {
    pub fn endo_displacements(&self, frame: usize) -> &[Vec3] {
        &self.displacements[frame][..self.endo.len()]
    }

    pub fn epi_displacements(&self, frame: usize) -> &[Vec3] {
        &self.displacements[frame][self.endo.len()..]
    }

    /// Length of the projection of `axis` onto the imaging plane; 1 when the
    /// axis lies in the plane, 0 when it is the plane normal.
    pub fn in_plane_fraction(&self, axis: &Vec3) -> f64 {
        project_onto_plane(axis, &self.normal).norm()
    }
}

/// The study re-expressed in the LV frame.
#[derive(Debug, Clone)]
pub struct LvStudy {
    pub frame: LvFrame,
    pub frames: usize,
    pub views: Vec<LvView>,
}

impl LvStudy {
    pub fn new(study: &Study, frame: LvFrame) -> LvStudy {
        let views = study
            .views
            .iter()
            .map(|v| {
                let g = &v.geometry;
                let map_pts =
                    |c: &[[f64; 2]]| -> Vec<Vec3> { c.iter().map(|p| frame.to_lv(&pixel_to_patient(g, *p))).collect() };
                let displacements = v
                    .displacements
                    .iter()
                    .map(|f| {
                        f.iter()
                            .map(|d| frame.vector_to_lv(&inplane_displacement_to_patient(g, *d)))
                            .collect()
                    })
                    .collect();
                LvView {
                    kind: v.kind,
                    slice_index: v.slice_index,
                    normal: frame.vector_to_lv(&g.normal()).normalize(),
                    row_dir: frame.vector_to_lv(&g.row_dir()),
                    col_dir: frame.vector_to_lv(&g.col_dir()),
                    endo: map_pts(&v.contours.endo),
                    epi: map_pts(&v.contours.epi),
                    displacements,
                }
            })
            .collect();
        LvStudy {
            frame,
            frames: study.frames(),
            views,
        }
    }

    pub fn sax(&self) -> impl Iterator<Item = &LvView> {
        self.views.iter().filter(|v| v.kind == ViewKind::Sax)
    }

    pub fn lax(&self) -> impl Iterator<Item = &LvView> {
        self.views.iter().filter(|v| v.kind.is_long_axis())
    }
}
