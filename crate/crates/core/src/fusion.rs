//! Fusion of short- and long-axis tracking into one 3D displacement field.
//!
//! Short-axis rings supply the in-plane (X, Y) motion, long-axis traces the
//! longitudinal (Z) motion and a second estimate of X and Y. The two in-plane
//! estimates are blended per node with a weight that grows with the local
//! longitudinal displacement:
//!
//! ```text
//! W = clamp(w / (w_min - w_max), 0, 1)
//! u = (1 - W) u_sax + W u_lax
//! ```

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{
    carry_displacements, resample_closed, resample_open, split_at_gaps, ContourRing, CubicSpline, Parameterization, Roi,
};
use crate::error::{Error, Result};
use crate::interp::{Extrapolation, SampleSource, ScatterGeometry, ScatteredSamples, Stencil};
use crate::study::{LvStudy, ViewKind};
use crate::Vec3;

/// Gaps longer than this multiple of the median spacing split a long-axis
/// trace into separate wall pieces.
pub const GAP_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `w_min`, `w_max` taken over every node and frame.
    #[default]
    Global,
    /// `w_min`, `w_max` taken over the frames of each node separately.
    PerPoint,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "per-point" => Ok(Self::PerPoint),
            other => Err(Error::validation(format!(
                "unknown weighting mode `{other}` (global, per-point)"
            ))),
        }
    }
}

/// How the long-axis samples are arranged before interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaxCloud {
    /// The up-sampled trace points, every view contributing all three axes.
    Points,
    /// Rings through the traces' crossings with each short-axis level, plus
    /// the trace points; each axis only uses views that measure it.
    #[default]
    Cage,
}

impl std::str::FromStr for LaxCloud {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "points" => Ok(Self::Points),
            "cage" => Ok(Self::Cage),
            other => Err(Error::validation(format!("unknown lax cloud `{other}` (points, cage)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub ring_samples: usize,
    pub lax_samples: usize,
    pub parameterization: Parameterization,
    pub extrapolation: Extrapolation,
    pub weighting: Weighting,
    pub lax_cloud: LaxCloud,
    /// Minimum in-plane fraction of an axis for a view to count as measuring it.
    pub measurable_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            ring_samples: 64,
            lax_samples: 64,
            parameterization: Parameterization::default(),
            extrapolation: Extrapolation::default(),
            weighting: Weighting::default(),
            lax_cloud: LaxCloud::default(),
            measurable_fraction: 0.9,
        }
    }
}

/// Up-sampled contour with carried displacements `[frame][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSamples {
    pub points: Vec<Vec3>,
    pub displacements: Vec<Vec<Vec3>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaxLevel {
    pub slice: i64,
    pub endo: RingSamples,
    pub epi: RingSamples,
}

impl SaxLevel {
    pub fn z(&self) -> f64 {
        centroid(&self.endo.points).z
    }
}

/// One wall piece of a long-axis trace, up-sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxCurve {
    pub view: usize,
    pub kind: ViewKind,
    pub roi: Roi,
    pub samples: RingSamples,
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn angle_about_axis(p: &Vec3) -> f64 {
    p.y.atan2(p.x).rem_euclid(TAU)
}

fn sax_ring(study: &LvStudy, view: usize, roi: Roi, cfg: &FusionConfig) -> Result<RingSamples> {
    let v = &study.views[view];
    let (points, range) = match roi {
        Roi::Endo => (&v.endo, 0..v.endo.len()),
        Roi::Epi => (&v.epi, v.endo.len()..v.endo.len() + v.epi.len()),
    };
    let mut ring = ContourRing {
        points: points.clone(),
        closed: true,
        roi,
        slice: v.slice_index,
        displacements: v.displacements.iter().map(|f| f[range.clone()].to_vec()).collect(),
    };
    if ring.signed_area_xy() < 0.0 {
        ring = ring.reversed();
    }
    let mut rs = resample_closed(&ring, cfg.ring_samples, cfg.parameterization)?;
    let c = centroid(&rs.points);
    let start = rs
        .points
        .iter()
        .map(|p| {
            let a = (p.y - c.y).atan2(p.x - c.x).abs();
            a
        })
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    rs.roll(start);
    let displacements = carry_displacements(&ring.displacements, &rs)?;
    Ok(RingSamples {
        points: rs.points,
        displacements,
    })
}

/// Up-samples every short-axis view into counter-clockwise rings starting
/// near theta = 0, ordered from base (highest z) to apex.
pub fn sax_levels(study: &LvStudy, cfg: &FusionConfig) -> Result<Vec<SaxLevel>> {
    let mut levels = Vec::new();
    for (i, v) in study.views.iter().enumerate() {
        if v.kind != ViewKind::Sax {
            continue;
        }
        levels.push(SaxLevel {
            slice: v.slice_index,
            endo: sax_ring(study, i, Roi::Endo, cfg)?,
            epi: sax_ring(study, i, Roi::Epi, cfg)?,
        });
    }
    if levels.is_empty() {
        return Err(Error::validation("study has no short-axis views"));
    }
    levels.sort_by(|a, b| b.z().total_cmp(&a.z()));
    Ok(levels)
}

/// Splits each long-axis trace into wall pieces and up-samples them.
pub fn lax_curves(study: &LvStudy, cfg: &FusionConfig) -> Result<Vec<LaxCurve>> {
    let mut out = Vec::new();
    for (i, v) in study.views.iter().enumerate() {
        if !v.kind.is_long_axis() {
            continue;
        }
        for (roi, points, offset) in [(Roi::Endo, &v.endo, 0), (Roi::Epi, &v.epi, v.endo.len())] {
            for piece in split_at_gaps(points, GAP_FACTOR) {
                let rs = resample_open(&points[piece.clone()], cfg.lax_samples, cfg.parameterization)?;
                let disp: Vec<Vec<Vec3>> = v
                    .displacements
                    .iter()
                    .map(|f| f[offset + piece.start..offset + piece.end].to_vec())
                    .collect();
                let displacements = carry_displacements(&disp, &rs)?;
                out.push(LaxCurve {
                    view: i,
                    kind: v.kind,
                    roi,
                    samples: RingSamples {
                        points: rs.points,
                        displacements,
                    },
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation("study has no long-axis traces"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> Vec3 {
        let mut e = Vec3::zeros();
        e[self.index()] = 1.0;
        e
    }
}

/// Fixed sample positions with one scalar value per sample and frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisCloud {
    pub source: SampleSource,
    pub axis: Axis,
    pub positions: Vec<Vec3>,
    /// `[frame][sample]`.
    pub values: Vec<Vec<f64>>,
}

impl AxisCloud {
    fn new(source: SampleSource, axis: Axis, frames: usize) -> Self {
        AxisCloud {
            source,
            axis,
            positions: Vec::new(),
            values: vec![Vec::new(); frames],
        }
    }

    fn push_ring(&mut self, ring: &RingSamples) {
        self.positions.extend_from_slice(&ring.points);
        for (t, f) in ring.displacements.iter().enumerate() {
            self.values[t].extend(f.iter().map(|d| d[self.axis.index()]));
        }
    }

    pub fn samples(&self, frame: usize) -> ScatteredSamples {
        ScatteredSamples {
            positions: self.positions.clone(),
            values: self.values[frame].clone(),
            source: self.source,
        }
    }
}

/// Per-axis sample clouds for both sources.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionClouds {
    pub frames: usize,
    pub sax_x: AxisCloud,
    pub sax_y: AxisCloud,
    pub lax_x: AxisCloud,
    pub lax_y: AxisCloud,
    pub lax_z: AxisCloud,
}

impl FusionClouds {
    pub fn cloud(&self, source: SampleSource, axis: Axis) -> Option<&AxisCloud> {
        match (source, axis) {
            (SampleSource::Sax, Axis::X) => Some(&self.sax_x),
            (SampleSource::Sax, Axis::Y) => Some(&self.sax_y),
            (SampleSource::Sax, Axis::Z) => None,
            (SampleSource::Lax, Axis::X) => Some(&self.lax_x),
            (SampleSource::Lax, Axis::Y) => Some(&self.lax_y),
            (SampleSource::Lax, Axis::Z) => Some(&self.lax_z),
        }
    }

    /// The scattered samples of one source and axis at frame `t`.
    pub fn samples(&self, source: SampleSource, axis: Axis, t: usize) -> Result<ScatteredSamples> {
        let c = self
            .cloud(source, axis)
            .ok_or_else(|| Error::validation("short-axis views carry no Z samples"))?;
        if t >= self.frames {
            return Err(Error::validation(format!("frame {t} outside 0..{}", self.frames)));
        }
        Ok(c.samples(t))
    }
}

/// Value of a periodic function of angle known at a few angles.
enum AngularFit {
    Constant(f64),
    Harmonic { phase: f64, mean: f64, amp: f64 },
    Spline(CubicSpline),
}

impl AngularFit {
    fn new(samples: &[(f64, f64)]) -> Result<AngularFit> {
        match samples {
            [] => Err(Error::validation("angular fit needs at least one sample")),
            [(_, v)] => Ok(AngularFit::Constant(*v)),
            [(a1, v1), (a2, v2)] => {
                let denom = 1.0 - (a2 - a1).cos();
                if denom < 1e-9 {
                    return Ok(AngularFit::Constant(0.5 * (v1 + v2)));
                }
                let amp = (v1 - v2) / denom;
                Ok(AngularFit::Harmonic {
                    phase: *a1,
                    mean: v1 - amp,
                    amp,
                })
            }
            _ => {
                let knots: Vec<f64> = samples.iter().map(|s| s.0).collect();
                let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
                Ok(AngularFit::Spline(CubicSpline::periodic(&knots, &values, TAU)?))
            }
        }
    }

    fn eval(&self, a: f64) -> f64 {
        match self {
            AngularFit::Constant(v) => *v,
            AngularFit::Harmonic { phase, mean, amp } => mean + amp * (a - phase).cos(),
            AngularFit::Spline(s) => s.eval(a),
        }
    }
}

struct Crossing {
    view: usize,
    position: Vec3,
    displacements: Vec<Vec3>,
}

fn crossings(curves: &[LaxCurve], roi: Roi, z: f64) -> Vec<Crossing> {
    let mut out = Vec::new();
    for c in curves.iter().filter(|c| c.roi == roi) {
        let p = &c.samples.points;
        for i in 0..p.len() - 1 {
            let (za, zb) = (p[i].z - z, p[i + 1].z - z);
            if za == zb || za * zb > 0.0 || (zb == 0.0 && i + 2 < p.len()) {
                continue;
            }
            let s = za / (za - zb);
            out.push(Crossing {
                view: c.view,
                position: p[i].lerp(&p[i + 1], s),
                displacements: c
                    .samples
                    .displacements
                    .iter()
                    .map(|f| f[i].lerp(&f[i + 1], s))
                    .collect(),
            });
        }
    }
    out.sort_by(|a, b| angle_about_axis(&a.position).total_cmp(&angle_about_axis(&b.position)));
    out.dedup_by(|b, a| (a.position - b.position).norm() < 1e-6);
    out
}

fn measures(study: &LvStudy, view: usize, axis: Axis, cfg: &FusionConfig) -> bool {
    study.views[view].in_plane_fraction(&axis.unit()) >= cfg.measurable_fraction
}

fn cage_ring(
    study: &LvStudy,
    curves: &[LaxCurve],
    roi: Roi,
    slice: i64,
    z: f64,
    cfg: &FusionConfig,
    clouds: &mut [&mut AxisCloud; 3],
) -> Result<bool> {
    let cross = crossings(curves, roi, z);
    if cross.len() < 3 {
        log::warn!(
            "level z = {z:.2}: only {} long-axis crossings for the {roi:?} cage ring, skipped",
            cross.len()
        );
        return Ok(false);
    }
    let ring = ContourRing {
        points: cross.iter().map(|c| c.position).collect(),
        closed: true,
        roi,
        slice,
        displacements: Vec::new(),
    };
    let rs = resample_closed(&ring, cfg.ring_samples, cfg.parameterization)?;
    let angles: Vec<f64> = rs.points.iter().map(angle_about_axis).collect();
    for cloud in clouds.iter_mut() {
        let axis = cloud.axis;
        let m: Vec<&Crossing> = cross.iter().filter(|c| measures(study, c.view, axis, cfg)).collect();
        if m.is_empty() {
            continue;
        }
        cloud.positions.extend_from_slice(&rs.points);
        for t in 0..cloud.values.len() {
            let fit = AngularFit::new(
                &m.iter()
                    .map(|c| (angle_about_axis(&c.position), c.displacements[t][axis.index()]))
                    .collect::<Vec<_>>(),
            )?;
            cloud.values[t].extend(angles.iter().map(|&a| fit.eval(a)));
        }
    }
    Ok(true)
}

/// Builds the per-axis sample clouds from up-sampled rings and traces.
pub fn assemble_samples(
    study: &LvStudy,
    levels: &[SaxLevel],
    curves: &[LaxCurve],
    cfg: &FusionConfig,
) -> Result<FusionClouds> {
    if levels.is_empty() {
        return Err(Error::validation("no short-axis samples"));
    }
    if curves.is_empty() {
        return Err(Error::validation("no long-axis samples"));
    }
    let frames = study.frames;
    let mut sax_x = AxisCloud::new(SampleSource::Sax, Axis::X, frames);
    let mut sax_y = AxisCloud::new(SampleSource::Sax, Axis::Y, frames);
    for l in levels {
        for ring in [&l.endo, &l.epi] {
            sax_x.push_ring(ring);
            sax_y.push_ring(ring);
        }
    }
    let mut lax_x = AxisCloud::new(SampleSource::Lax, Axis::X, frames);
    let mut lax_y = AxisCloud::new(SampleSource::Lax, Axis::Y, frames);
    let mut lax_z = AxisCloud::new(SampleSource::Lax, Axis::Z, frames);
    {
        let mut lax = [&mut lax_x, &mut lax_y, &mut lax_z];
        if cfg.lax_cloud == LaxCloud::Cage {
            for l in levels {
                for (roi, ring) in [(Roi::Endo, &l.endo), (Roi::Epi, &l.epi)] {
                    cage_ring(study, curves, roi, l.slice, centroid(&ring.points).z, cfg, &mut lax)?;
                }
            }
        }
        for c in curves {
            for cloud in lax.iter_mut() {
                if cfg.lax_cloud == LaxCloud::Points || measures(study, c.view, cloud.axis, cfg) {
                    cloud.push_ring(&c.samples);
                }
            }
        }
    }
    for c in [&lax_x, &lax_y, &lax_z] {
        if c.positions.is_empty() {
            return Err(Error::validation(format!(
                "no long-axis view measures the {:?} axis",
                c.axis
            )));
        }
    }
    Ok(FusionClouds {
        frames,
        sax_x,
        sax_y,
        lax_x,
        lax_y,
        lax_z,
    })
}

/// `W = clamp(w_l / (w_min - w_max), 0, 1)`. Returns all zeros and `true`
/// when the range is empty (`w_min >= w_max`).
pub fn compute_weights(w_l: &[f64], w_min: f64, w_max: f64) -> Result<(Vec<f64>, bool)> {
    if !w_min.is_finite() || !w_max.is_finite() || w_l.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric(
            "non-finite longitudinal displacement in weighting".into(),
        ));
    }
    if w_min >= w_max {
        return Ok((vec![0.0; w_l.len()], true));
    }
    let d = w_min - w_max;
    Ok((w_l.iter().map(|w| (w / d).clamp(0.0, 1.0) + 0.0).collect(), false))
}

fn blend(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        (1.0 - w) * a + w * b
    }
}

/// `u = (1 - W) u_cs + W u_l`, `v = (1 - W) v_cs + W v_l`.
pub fn fuse_inplane(
    u_cs: &[f64],
    v_cs: &[f64],
    u_l: &[f64],
    v_l: &[f64],
    weights: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = weights.len();
    if [u_cs.len(), v_cs.len(), u_l.len(), v_l.len()].iter().any(|&l| l != n) {
        return Err(Error::validation("fuse_inplane: input lengths differ"));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::validation("fuse_inplane: weights must lie in [0, 1]"));
    }
    let u = (0..n).map(|i| blend(u_cs[i], u_l[i], weights[i])).collect();
    let v = (0..n).map(|i| blend(v_cs[i], v_l[i], weights[i])).collect();
    Ok((u, v))
}

/// Per-frame node displacements with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMotion {
    /// `[frame][node]`, mm in LV space.
    pub displacements: Vec<Vec<Vec3>>,
    /// `[node]`: X, Y, Z values came from outside a sample hull.
    pub extrapolated: Vec<[bool; 3]>,
    /// `[frame][node]`.
    pub weights: Vec<Vec<f64>>,
    pub w_min: f64,
    pub w_max: f64,
    /// The weighting range was empty somewhere and W was set to zero there.
    pub degenerate_weights: bool,
    /// Clouds that fell back to nearest-sample mode (coplanar samples).
    pub degenerate_clouds: Vec<String>,
}

impl FusedMotion {
    pub fn frames(&self) -> usize {
        self.displacements.len()
    }

    pub fn node_extrapolated(&self, node: usize) -> bool {
        self.extrapolated[node].iter().any(|&e| e)
    }

    pub fn extrapolated_fraction(&self) -> f64 {
        if self.extrapolated.is_empty() {
            return 0.0;
        }
        (0..self.extrapolated.len())
            .filter(|&i| self.node_extrapolated(i))
            .count() as f64
            / self.extrapolated.len() as f64
    }

    /// Deformed node positions at `frame`.
    pub fn deformed(&self, nodes: &[Vec3], frame: usize) -> Vec<Vec3> {
        nodes
            .iter()
            .zip(&self.displacements[frame])
            .map(|(p, d)| p + d)
            .collect()
    }
}

struct Evaluated {
    stencils: Vec<Stencil>,
    degenerate: bool,
}

/// Interpolates every cloud at the mesh nodes and fuses the estimates.
pub fn deform_mesh(nodes: &[Vec3], clouds: &FusionClouds, cfg: &FusionConfig) -> Result<FusedMotion> {
    let list = [
        &clouds.sax_x,
        &clouds.sax_y,
        &clouds.lax_x,
        &clouds.lax_y,
        &clouds.lax_z,
    ];
    // clouds sharing positions share a triangulation
    let mut owner: Vec<usize> = Vec::with_capacity(list.len());
    for (i, c) in list.iter().enumerate() {
        let o = (0..i).find(|&j| list[j].positions == c.positions).unwrap_or(i);
        owner.push(o);
    }
    let unique: Vec<usize> = (0..list.len()).filter(|&i| owner[i] == i).collect();
    let built: Vec<Result<Evaluated>> = unique
        .par_iter()
        .map(|&i| {
            let g = ScatterGeometry::new(&list[i].positions, cfg.extrapolation)?;
            Ok(Evaluated {
                stencils: g.stencils(nodes),
                degenerate: g.is_degenerate(),
            })
        })
        .collect();
    let mut evaluated: Vec<Option<Evaluated>> = (0..list.len()).map(|_| None).collect();
    for (&i, e) in unique.iter().zip(built) {
        evaluated[i] = Some(e?);
    }
    let ev = |i: usize| evaluated[owner[i]].as_ref().expect("evaluated owner");
    let degenerate_clouds = unique
        .iter()
        .filter(|&&i| ev(i).degenerate)
        .map(|&i| format!("{:?} {:?}", list[i].source, list[i].axis))
        .collect();

    let n = nodes.len();
    let frames = clouds.frames;
    let apply =
        |i: usize, t: usize| -> Vec<f64> { ev(i).stencils.iter().map(|s| s.apply(&list[i].values[t])).collect() };
    let w: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map(|t| if t == 0 { vec![0.0; n] } else { apply(4, t) })
        .collect();
    if w.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite longitudinal displacement".into()));
    }

    let fold = |it: &mut dyn Iterator<Item = f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (w_min, w_max) = fold(&mut w.iter().flatten().copied());
    let mut degenerate_weights = false;
    let weights: Vec<Vec<f64>> = match cfg.weighting {
        Weighting::Global => {
            let mut out = Vec::with_capacity(frames);
            for wt in &w {
                let (ws, deg) = compute_weights(wt, w_min, w_max)?;
                degenerate_weights |= deg;
                out.push(ws);
            }
            out
        }
        Weighting::PerPoint => {
            let mut out = vec![vec![0.0; n]; frames];
            for i in 0..n {
                let (lo, hi) = fold(&mut w.iter().map(|f| f[i]));
                let col: Vec<f64> = w.iter().map(|f| f[i]).collect();
                let (ws, deg) = compute_weights(&col, lo, hi)?;
                degenerate_weights |= deg;
                for t in 0..frames {
                    out[t][i] = ws[t];
                }
            }
            out
        }
    };

    let displacements: Vec<Vec<Vec3>> = (0..frames)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec3>> {
            if t == 0 {
                return Ok(vec![Vec3::zeros(); n]);
            }
            let (u, v) = fuse_inplane(&apply(0, t), &apply(1, t), &apply(2, t), &apply(3, t), &weights[t])?;
            Ok((0..n).map(|i| Vec3::new(u[i], v[i], w[t][i])).collect())
        })
        .collect::<Result<_>>()?;
    if displacements.iter().flatten().any(|d| !d.iter().all(|c| c.is_finite())) {
        return Err(Error::Numeric("non-finite fused displacement".into()));
    }

    let extrapolated = (0..n)
        .map(|i| {
            let e = |c: usize| ev(c).stencils[i].extrapolated;
            [e(0) || e(2), e(1) || e(3), e(4)]
        })
        .collect();
    Ok(FusedMotion {
        displacements,
        extrapolated,
        weights,
        w_min,
        w_max,
        degenerate_weights,
        degenerate_clouds,
    })
}

/// Resamples, assembles and fuses in one call.
pub fn fuse_study(study: &LvStudy, nodes: &[Vec3], cfg: &FusionConfig) -> Result<FusedMotion> {
    let levels = sax_levels(study, cfg)?;
    let curves = lax_curves(study, cfg)?;
    let clouds = assemble_samples(study, &levels, &curves, cfg)?;
    deform_mesh(nodes, &clouds, cfg)
}
