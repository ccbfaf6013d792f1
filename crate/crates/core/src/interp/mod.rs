//! Scattered-data interpolation: piecewise-linear over a Delaunay
//! tetrahedralization of the samples, with nearest-sample (default) or
//! linear extension outside the hull.
//!
//! Sample positions stay fixed across frames while values change, so the
//! geometric part ([`ScatterGeometry`]) produces reusable [`Stencil`]s that
//! are applied to each frame's values.

pub mod delaunay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;
pub use delaunay::{Delaunay, Location};

pub(crate) fn signed_volume6(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolation {
    #[default]
    Nearest,
    /// Extends the linear function of the tet owning the nearest hull facet.
    Linear,
}

impl std::str::FromStr for Extrapolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "linear" => Ok(Self::Linear),
            other => Err(Error::validation(format!("unknown extrapolation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSource {
    #[serde(rename = "SAX")]
    Sax,
    #[serde(rename = "LAX")]
    Lax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredSamples {
    pub positions: Vec<Vec3>,
    pub values: Vec<f64>,
    pub source: SampleSource,
}

/// Linear combination of sample values reproducing the interpolant at one
/// query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
    pub extrapolated: bool,
}

impl Stencil {
    fn single(i: usize, extrapolated: bool) -> Self {
        Stencil {
            nodes: [i; 4],
            weights: [1.0, 0.0, 0.0, 0.0],
            extrapolated,
        }
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        if self.weights[1..] == [0.0; 3] {
            return values[self.nodes[0]];
        }
        self.nodes.iter().zip(&self.weights).map(|(&i, &w)| w * values[i]).sum()
    }
}

/// Queries closer than this fraction of the sample bounding-box diagonal to
/// the hull count as inside it.
pub const HULL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ScatterGeometry {
    positions: Vec<Vec3>,
    tri: Option<Delaunay>,
    hull: Vec<([usize; 3], usize)>,
    mode: Extrapolation,
    hull_tol: f64,
}

impl ScatterGeometry {
    pub fn new(positions: &[Vec3], mode: Extrapolation) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::validation("interpolant needs at least one sample"));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::validation(format!("sample {i} has a non-finite position")));
        }
        let tri = Delaunay::new(positions);
        let hull = tri.as_ref().map(|t| t.hull_facets()).unwrap_or_default();
        let (lo, hi) = positions
            .iter()
            .fold((positions[0], positions[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Ok(ScatterGeometry {
            positions: positions.to_vec(),
            tri,
            hull,
            mode,
            hull_tol: (HULL_TOLERANCE * (hi - lo).norm()).max(1e-12),
        })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// True when fewer than 4 non-coplanar samples exist; every query then
    /// falls back to the nearest sample.
    pub fn is_degenerate(&self) -> bool {
        self.tri.is_none()
    }

    pub fn triangulation(&self) -> Option<&Delaunay> {
        self.tri.as_ref()
    }

    /// Index of the closest sample (lowest index on ties).
    pub fn nearest(&self, q: &Vec3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Stencil at `q`, walking from `hint`; returns the tet to use as the
    /// next hint.
    pub fn stencil_from(&self, q: &Vec3, hint: usize) -> (Stencil, usize) {
        let Some(tri) = &self.tri else {
            let i = self.nearest(q);
            return (Stencil::single(i, self.positions[i] != *q), hint);
        };
        match tri.locate_from(q, hint) {
            Location::Inside(t) => {
                let nodes = tri.tet(t);
                let p = nodes.map(|i| self.positions[i]);
                if is_flat(&p) {
                    let face = (0..4)
                        .map(|k| {
                            let f = [nodes[(k + 1) % 4], nodes[(k + 2) % 4], nodes[(k + 3) % 4]];
                            let [a, b, c] = f.map(|i| self.positions[i]);
                            let d = (closest_point_on_triangle(q, &a, &b, &c) - q).norm_squared();
                            let area = (b - a).cross(&(c - a)).norm();
                            (d, -area, f)
                        })
                        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
                        .map(|x| x.2)
                        .expect("tet has faces");
                    return (self.facet_stencil(q, face, false), t);
                }
                let weights = tri.barycentric(t, q);
                if let Some(k) = weights.iter().position(|&w| w == 1.0) {
                    return (Stencil::single(nodes[k], false), t);
                }
                (
                    Stencil {
                        nodes,
                        weights,
                        extrapolated: false,
                    },
                    t,
                )
            }
            Location::Outside(t) => {
                let (dist, face, owner) = self.nearest_hull_facet(q);
                if dist <= self.hull_tol {
                    return (self.facet_stencil(q, face, false), t);
                }
                let s = match self.mode {
                    Extrapolation::Nearest => Stencil::single(self.nearest(q), true),
                    Extrapolation::Linear => {
                        let nodes = tri.tet(owner);
                        if is_flat(&nodes.map(|i| self.positions[i])) {
                            self.facet_stencil(q, face, true)
                        } else {
                            Stencil {
                                nodes,
                                weights: tri.barycentric(owner, q),
                                extrapolated: true,
                            }
                        }
                    }
                };
                (s, t)
            }
        }
    }

    pub fn stencil(&self, q: &Vec3) -> Stencil {
        self.stencil_from(q, usize::MAX).0
    }

    /// Stencils for a batch of queries, walking from each result to the next.
    pub fn stencils(&self, queries: &[Vec3]) -> Vec<Stencil> {
        let mut hint = usize::MAX;
        queries
            .iter()
            .map(|q| {
                let (s, h) = self.stencil_from(q, hint);
                hint = h;
                s
            })
            .collect()
    }

    /// Distance to the hull, the closest hull facet and its owning tet.
    fn nearest_hull_facet(&self, q: &Vec3) -> (f64, [usize; 3], usize) {
        let mut best = (f64::INFINITY, [0; 3], 0);
        for (face, owner) in &self.hull {
            let [a, b, c] = face.map(|i| self.positions[i]);
            let d = (closest_point_on_triangle(q, &a, &b, &c) - q).norm_squared();
            if d < best.0 {
                best = (d, *face, *owner);
            }
        }
        (best.0.sqrt(), best.1, best.2)
    }

    /// Linear interpolation on a triangle at the point closest to `q`.
    fn facet_stencil(&self, q: &Vec3, face: [usize; 3], extrapolated: bool) -> Stencil {
        let [a, b, c] = face.map(|i| self.positions[i]);
        let w = triangle_barycentric(&closest_point_on_triangle(q, &a, &b, &c), &a, &b, &c);
        Stencil {
            nodes: [face[0], face[1], face[2], face[2]],
            weights: [w[0], w[1], w[2], 0.0],
            extrapolated,
        }
    }
}

/// Tets whose volume is negligible against their longest edge carry no
/// usable barycentric coordinates.
fn is_flat(p: &[Vec3; 4]) -> bool {
    let mut l2: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            l2 = l2.max((p[i] - p[j]).norm_squared());
        }
    }
    signed_volume6(&p[0], &p[1], &p[2], &p[3]).abs() <= FLAT_TET_RATIO * l2 * l2.sqrt()
}

/// Tets with `6 V < FLAT_TET_RATIO * L^3` are treated as flat.
pub const FLAT_TET_RATIO: f64 = 1e-8;

/// Barycentric coordinates of `p` (assumed in the plane of `abc`), clamped
/// to the triangle and renormalised.
pub fn triangle_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    if !(den > 0.0) {
        // collinear or coincident corners: fall back to the closest corner
        let d = [a, b, c].map(|x| (p - x).norm_squared());
        let k = (0..3).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap_or(0);
        let mut w = [0.0; 3];
        w[k] = 1.0;
        return w;
    }
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    let mut out = [1.0 - v - w, v, w].map(|x| x.max(0.0));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// A scalar field over scattered samples.
#[derive(Debug, Clone)]
pub struct Interpolant {
    geometry: ScatterGeometry,
    values: Vec<f64>,
    source: SampleSource,
}

pub fn build_interpolant(samples: &ScatteredSamples, mode: Extrapolation) -> Result<Interpolant> {
    if samples.values.len() != samples.positions.len() {
        return Err(Error::validation(format!(
            "{} sample positions but {} values",
            samples.positions.len(),
            samples.values.len()
        )));
    }
    if samples.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite sample value"));
    }
    Ok(Interpolant {
        geometry: ScatterGeometry::new(&samples.positions, mode)?,
        values: samples.values.clone(),
        source: samples.source,
    })
}

impl Interpolant {
    pub fn geometry(&self) -> &ScatterGeometry {
        &self.geometry
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn is_degenerate(&self) -> bool {
        self.geometry.is_degenerate()
    }

    /// Value at `q` and whether it was extrapolated.
    pub fn query(&self, q: &Vec3) -> (f64, bool) {
        let s = self.geometry.stencil(q);
        (s.apply(&self.values), s.extrapolated)
    }

    pub fn eval(&self, q: &Vec3) -> f64 {
        self.query(q).0
    }
}
