//! Constant-strain tetrahedron kinematics, cardiac strain projections, AHA-16
//! segmentation and strain-time curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{tet_volume, LvMesh, MIN_TET_VOLUME};
use crate::{Mat3, Vec3};

/// Largest fraction of elements that may be excluded before a run fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
/// Tolerance on the z-range check of segment assignment (mm).
pub const AHA_Z_MARGIN: f64 = 1.0;

/// `F = D R^-1` for a constant-strain tet, with `R` and `D` holding the edge
/// vectors from node 0 in the reference and deformed states.
pub fn deformation_gradient(element: usize, reference: &[Vec3; 4], deformed: &[Vec3; 4]) -> Result<Mat3> {
    let v = tet_volume(&reference[0], &reference[1], &reference[2], &reference[3]);
    if !(v.abs() >= MIN_TET_VOLUME) {
        return Err(Error::DegenerateElement {
            element,
            reason: format!("reference volume {v:e} mm^3"),
        });
    }
    let edges = |p: &[Vec3; 4]| Mat3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let r_inv = edges(reference).try_inverse().ok_or_else(|| Error::DegenerateElement {
        element,
        reason: "singular reference edge matrix".into(),
    })?;
    Ok(edges(deformed) * r_inv)
}

/// `E = (F^T F - I) / 2`.
pub fn green_lagrange(f: &Mat3) -> Mat3 {
    (f.transpose() * f - Mat3::identity()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDirections {
    pub radial: Vec3,
    pub circumferential: Vec3,
    pub longitudinal: Vec3,
}

/// Straight-axis cardiac directions at `centroid` for a long axis along +Z.
pub fn local_directions(centroid: &Vec3) -> Result<LocalDirections> {
    let rxy = centroid.x.hypot(centroid.y);
    if !(rxy >= 1e-6) {
        return Err(Error::Domain(format!(
            "point ({}, {}, {}) lies on the long axis",
            centroid.x, centroid.y, centroid.z
        )));
    }
    let l = Vec3::z();
    let r = Vec3::new(centroid.x / rxy, centroid.y / rxy, 0.0);
    Ok(LocalDirections {
        radial: r,
        circumferential: l.cross(&r),
        longitudinal: l,
    })
}

/// `(Err, Ecc, Ell)`.
pub fn project_strain(e: &Mat3, d: &LocalDirections) -> [f64; 3] {
    let q = |v: &Vec3| v.dot(&(e * v));
    [q(&d.radial), q(&d.circumferential), q(&d.longitudinal)]
}

/// AHA-16 segment of a point: basal 1-6 and mid 7-12 in 60 degree sectors,
/// apical 13-16 in 90 degree sectors, counted counter-clockwise from
/// `theta0_deg`. Points on a boundary go to the lower id.
pub fn aha16_assign(centroid: &Vec3, z_base: f64, z_apex: f64, theta0_deg: f64) -> Result<u8> {
    if !(z_base > z_apex) {
        return Err(Error::Domain(format!("z_base {z_base} must exceed z_apex {z_apex}")));
    }
    let z = centroid.z;
    if z > z_base + AHA_Z_MARGIN || z < z_apex - AHA_Z_MARGIN || !z.is_finite() {
        return Err(Error::Domain(format!(
            "z = {z} outside the ventricle range [{z_apex}, {z_base}]"
        )));
    }
    let third = (z_base - z_apex) / 3.0;
    let mut theta = (centroid.y.atan2(centroid.x).to_degrees() - theta0_deg).rem_euclid(360.0);
    if theta >= 360.0 {
        theta -= 360.0;
    }
    let sector = |width: f64, count: u8| -> u8 {
        let k = (theta / width).ceil() as i64 - 1;
        k.clamp(0, count as i64 - 1) as u8
    };
    Ok(if z >= z_base - third {
        1 + sector(60.0, 6)
    } else if z >= z_apex + third {
        7 + sector(60.0, 6)
    } else {
        13 + sector(90.0, 4)
    })
}

/// Per-element strain over all frames.
#[derive(Debug, Clone)]
pub struct StrainField {
    /// `[frame][element]`, `NaN` for excluded elements.
    pub err: Vec<Vec<f64>>,
    pub ecc: Vec<Vec<f64>>,
    pub ell: Vec<Vec<f64>>,
    pub det_f: Vec<Vec<f64>>,
    /// AHA segment per element, 0 when excluded.
    pub segments: Vec<u8>,
    pub excluded: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCurve {
    pub segment: u8,
    pub elements: usize,
    pub volume: f64,
    pub err: Vec<f64>,
    pub ecc: Vec<f64>,
    pub ell: Vec<f64>,
    pub peak_err: f64,
    pub peak_ecc: f64,
    pub peak_ell: f64,
    pub peak_frame_err: usize,
    pub peak_frame_ecc: usize,
    pub peak_frame_ell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPeaks {
    pub err: f64,
    pub ecc: f64,
    pub ell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub frames: usize,
    /// Segments that received at least one element, in id order.
    pub segments: Vec<SegmentCurve>,
    pub global: GlobalPeaks,
    pub excluded_elements: usize,
    pub total_elements: usize,
}

impl SegmentReport {
    pub fn segment(&self, id: u8) -> Option<&SegmentCurve> {
        self.segments.iter().find(|s| s.segment == id)
    }
}

/// Per-element kinematics and the AHA report. `motion[t][node]` holds node
/// displacements (mm); frame 0 is the reference.
pub fn strain_curves(mesh: &LvMesh, motion: &[Vec<Vec3>], theta0_deg: f64) -> Result<(StrainField, SegmentReport)> {
    let ne = mesh.tets.len();
    if ne == 0 {
        return Err(Error::Mesh("mesh has no elements".into()));
    }
    if motion.is_empty() {
        return Err(Error::validation("motion has no frames"));
    }
    if let Some(t) = motion.iter().position(|f| f.len() != mesh.nodes.len()) {
        return Err(Error::validation(format!(
            "motion frame {t} covers {} of {} nodes",
            motion[t].len(),
            mesh.nodes.len()
        )));
    }
    let (z_apex, z_base) = mesh
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.z), hi.max(p.z))
        });

    let mut excluded = vec![false; ne];
    let mut segments = vec![0u8; ne];
    let mut dirs = Vec::with_capacity(ne);
    for e in 0..ne {
        let c = mesh.centroid(e);
        match local_directions(&c).and_then(|d| Ok((d, aha16_assign(&c, z_base, z_apex, theta0_deg)?))) {
            Ok((d, s)) => {
                dirs.push(Some(d));
                segments[e] = s;
            }
            Err(err) => {
                log::debug!("element {e} excluded: {err}");
                dirs.push(None);
                excluded[e] = true;
            }
        }
    }

    let per_frame: Vec<Result<Vec<([f64; 3], f64)>>> = motion
        .par_iter()
        .map(|disp| {
            (0..ne)
                .map(|e| {
                    let Some(d) = &dirs[e] else {
                        return Ok(([f64::NAN; 3], f64::NAN));
                    };
                    let tet = mesh.tets[e];
                    let r = tet.map(|i| mesh.nodes[i]);
                    let x = tet.map(|i| mesh.nodes[i] + disp[i]);
                    match deformation_gradient(e, &r, &x) {
                        Ok(f) => {
                            let p = project_strain(&green_lagrange(&f), d);
                            if p.iter().all(|v| v.is_finite()) {
                                Ok((p, f.determinant()))
                            } else {
                                Err(Error::Numeric(format!("element {e}: non-finite strain")))
                            }
                        }
                        Err(err @ Error::DegenerateElement { .. }) => {
                            log::debug!("{err}");
                            Ok(([f64::NAN; 3], f64::NAN))
                        }
                        Err(err) => Err(err),
                    }
                })
                .collect()
        })
        .collect();

    let mut field = StrainField {
        err: Vec::with_capacity(motion.len()),
        ecc: Vec::with_capacity(motion.len()),
        ell: Vec::with_capacity(motion.len()),
        det_f: Vec::with_capacity(motion.len()),
        segments,
        excluded,
    };
    for frame in per_frame {
        let frame = frame?;
        for (e, (p, _)) in frame.iter().enumerate() {
            if p[0].is_nan() && !field.excluded[e] {
                field.excluded[e] = true;
                field.segments[e] = 0;
            }
        }
        field.err.push(frame.iter().map(|x| x.0[0]).collect());
        field.ecc.push(frame.iter().map(|x| x.0[1]).collect());
        field.ell.push(frame.iter().map(|x| x.0[2]).collect());
        field.det_f.push(frame.iter().map(|x| x.1).collect());
    }
    let n_excluded = field.excluded.iter().filter(|x| **x).count();
    if n_excluded as f64 > MAX_EXCLUDED_FRACTION * ne as f64 {
        return Err(Error::Numeric(format!(
            "{n_excluded} of {ne} elements excluded (degenerate or on the long axis)"
        )));
    }
    for t in 0..motion.len() {
        for e in 0..ne {
            if field.excluded[e] {
                field.err[t][e] = f64::NAN;
                field.ecc[t][e] = f64::NAN;
                field.ell[t][e] = f64::NAN;
            }
        }
    }

    let volumes = mesh.volumes();
    let mut curves = Vec::new();
    for id in 1..=16u8 {
        let members: Vec<usize> = (0..ne).filter(|&e| field.segments[e] == id).collect();
        if members.is_empty() {
            continue;
        }
        let vol: f64 = members.iter().map(|&e| volumes[e]).sum();
        let mean = |comp: &Vec<Vec<f64>>| -> Vec<f64> {
            comp.iter()
                .map(|frame| members.iter().map(|&e| volumes[e] * frame[e]).sum::<f64>() / vol)
                .collect()
        };
        let (err, ecc, ell) = (mean(&field.err), mean(&field.ecc), mean(&field.ell));
        let (pf_err, peak_err) = extremum(&err, |a, b| a > b);
        let (pf_ecc, peak_ecc) = extremum(&ecc, |a, b| a < b);
        let (pf_ell, peak_ell) = extremum(&ell, |a, b| a < b);
        curves.push(SegmentCurve {
            segment: id,
            elements: members.len(),
            volume: vol,
            err,
            ecc,
            ell,
            peak_err,
            peak_ecc,
            peak_ell,
            peak_frame_err: pf_err,
            peak_frame_ecc: pf_ecc,
            peak_frame_ell: pf_ell,
        });
    }
    let k = curves.len().max(1) as f64;
    let global = GlobalPeaks {
        err: curves.iter().map(|c| c.peak_err).sum::<f64>() / k,
        ecc: curves.iter().map(|c| c.peak_ecc).sum::<f64>() / k,
        ell: curves.iter().map(|c| c.peak_ell).sum::<f64>() / k,
    };
    let report = SegmentReport {
        frames: motion.len(),
        segments: curves,
        global,
        excluded_elements: n_excluded,
        total_elements: ne,
    };
    Ok((field, report))
}

/// First frame attaining the extremum under `better`.
fn extremum(curve: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (0, curve[0]);
    for (t, &v) in curve.iter().enumerate().skip(1) {
        if better(v, best.1) {
            best = (t, v);
        }
    }
    best
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Long-format curves: `frame,segment,Err,Ecc,Ell`.
pub fn curves_csv(report: &SegmentReport) -> String {
    let mut s = String::from("frame,segment,Err,Ecc,Ell\n");
    for t in 0..report.frames {
        for c in &report.segments {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                t,
                c.segment,
                num(c.err[t]),
                num(c.ecc[t]),
                num(c.ell[t])
            ));
        }
    }
    s
}

pub fn peaks_csv(report: &SegmentReport) -> String {
    let mut s = String::from("segment,peak_Err,peak_Ecc,peak_Ell,peak_frame_Err,peak_frame_Ecc,peak_frame_Ell\n");
    for c in &report.segments {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.segment,
            num(c.peak_err),
            num(c.peak_ecc),
            num(c.peak_ell),
            c.peak_frame_err,
            c.peak_frame_ecc,
            c.peak_frame_ell
        ));
    }
    s
}
