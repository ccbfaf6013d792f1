use std::collections::HashMap;

use super::{ApexCap, ENDO_APEX_OFFSET, EPI_APEX_OFFSET};
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceRegion {
    Endo,
    Epi,
    BaseCap,
    ApexCap,
}

#[derive(Debug, Clone)]
pub struct TriSurface {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<SurfaceRegion>,
}

impl TriSurface {
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Enclosed volume, positive for an outward-oriented closed surface.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), (u32, u32)> {
        let mut edges: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let e = edges.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        edges
    }

    pub fn edge_count(&self) -> usize {
        self.edge_counts().len()
    }

    /// Every edge is shared by exactly two triangles that traverse it in
    /// opposite directions.
    pub fn is_watertight(&self) -> bool {
        self.edge_counts().values().all(|&(f, b)| f == 1 && b == 1)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }
}

/// Checks ring-stack preconditions shared by lofting and meshing and returns
/// `(levels, samples)`.
pub(crate) fn check_rings(endo: &[Vec<Vec3>], epi: &[Vec<Vec3>]) -> Result<(usize, usize)> {
    if endo.len() < 2 || epi.len() < 2 {
        return Err(Error::Mesh("at least 2 rings per surface are required".into()));
    }
    if endo.len() != epi.len() {
        return Err(Error::Mesh(format!(
            "{} endo rings but {} epi rings",
            endo.len(),
            epi.len()
        )));
    }
    let n = endo[0].len();
    if n < 3 {
        return Err(Error::Mesh("rings need at least 3 samples".into()));
    }
    for (k, r) in endo.iter().chain(epi.iter()).enumerate() {
        if r.len() != n {
            return Err(Error::Mesh(format!("ring {k} has {} samples, expected {n}", r.len())));
        }
        if crate::contour::signed_area_xy(r) <= 0.0 {
            return Err(Error::Mesh(format!("ring {k} does not run counter-clockwise about +Z")));
        }
    }
    for rings in [endo, epi] {
        for k in 1..rings.len() {
            if ring_centroid(&rings[k]).z >= ring_centroid(&rings[k - 1]).z {
                return Err(Error::Mesh(format!(
                    "ring {k} is not below ring {}; rings must be ordered base to apex",
                    k - 1
                )));
            }
        }
    }
    let endo_base: Vec<[f64; 2]> = endo[0].iter().map(|p| [p.x, p.y]).collect();
    let epi_base: Vec<[f64; 2]> = epi[0].iter().map(|p| [p.x, p.y]).collect();
    if let Some(j) = endo_base.iter().position(|p| !strictly_inside(*p, &epi_base)) {
        return Err(Error::Mesh(format!(
            "basal stitch self-intersects: endo sample {j} is not inside the epi ring"
        )));
    }
    Ok((endo.len(), n))
}

pub(crate) fn ring_centroid(ring: &[Vec3]) -> Vec3 {
    ring.iter().sum::<Vec3>() / ring.len() as f64
}

fn strictly_inside(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let on_segment =
            cross.abs() < 1e-12 && (p[0] - a[0]) * (p[0] - b[0]) <= 0.0 && (p[1] - a[1]) * (p[1] - b[1]) <= 0.0;
        if on_segment {
            return false;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Column diagonals of the quad strip between level `k` and `k + 1`: `true`
/// selects `(k, j)-(k+1, j+1)`, otherwise `(k, j+1)-(k+1, j)`. The shorter
/// diagonal by summed endo and epi length wins; ties keep the first.
pub(crate) fn column_diagonals(endo: &[Vec<Vec3>], epi: &[Vec<Vec3>]) -> Vec<Vec<bool>> {
    let n = endo[0].len();
    (0..endo.len() - 1)
        .map(|k| {
            (0..n)
                .map(|j| {
                    let j1 = (j + 1) % n;
                    let mut ac = 0.0;
                    let mut bd = 0.0;
                    for r in [endo, epi] {
                        ac += (r[k + 1][j1] - r[k][j]).norm();
                        bd += (r[k + 1][j] - r[k][j1]).norm();
                    }
                    ac <= bd * (1.0 + 1e-12)
                })
                .collect()
        })
        .collect()
}

/// Apex points for the endo and epi fans.
pub(crate) fn apex_points(endo: &[Vec<Vec3>], epi: &[Vec<Vec3>]) -> (Vec3, Vec3) {
    let tip = |rings: &[Vec<Vec3>], f: f64| {
        let last = ring_centroid(&rings[rings.len() - 1]);
        let prev = ring_centroid(&rings[rings.len() - 2]);
        last + f * (last - prev)
    };
    (tip(endo, ENDO_APEX_OFFSET), tip(epi, EPI_APEX_OFFSET))
}

/// Lofts the closed myocardial surface through base-to-apex ring stacks.
///
/// Vertices are laid out as all endo rings, then all epi rings, then the two
/// apex points when `cap` is [`ApexCap::Fan`].
pub fn loft_surface(endo: &[Vec<Vec3>], epi: &[Vec<Vec3>], cap: ApexCap) -> Result<TriSurface> {
    let (levels, n) = check_rings(endo, epi)?;
    let diag = column_diagonals(endo, epi);
    let en = |k: usize, j: usize| k * n + j % n;
    let ep = |k: usize, j: usize| (levels + k) * n + j % n;

    let mut vertices: Vec<Vec3> = endo.iter().flatten().copied().collect();
    vertices.extend(epi.iter().flatten().copied());
    let mut triangles = Vec::with_capacity(4 * n * levels);
    let mut regions = Vec::with_capacity(4 * n * levels);
    let mut push = |t: [usize; 3], r: SurfaceRegion| {
        triangles.push(t);
        regions.push(r);
    };

    for k in 0..levels - 1 {
        for j in 0..n {
            for (idx, region, outward_in) in [
                (&en as &dyn Fn(usize, usize) -> usize, SurfaceRegion::Endo, true),
                (&ep as &dyn Fn(usize, usize) -> usize, SurfaceRegion::Epi, false),
            ] {
                let (a, b, c, d) = (idx(k, j), idx(k, j + 1), idx(k + 1, j + 1), idx(k + 1, j));
                let pair = if diag[k][j] {
                    [[a, b, c], [a, c, d]]
                } else {
                    [[a, b, d], [b, c, d]]
                };
                for t in pair {
                    push(if outward_in { t } else { [t[0], t[2], t[1]] }, region);
                }
            }
        }
    }

    for j in 0..n {
        let (a, b, c, d) = (en(0, j), en(0, j + 1), ep(0, j + 1), ep(0, j));
        for t in shorter_split(&vertices, a, b, c, d) {
            push([t[0], t[2], t[1]], SurfaceRegion::BaseCap);
        }
    }

    let last = levels - 1;
    match cap {
        ApexCap::Fan => {
            let (endo_tip, epi_tip) = apex_points(endo, epi);
            let ti = vertices.len();
            vertices.push(endo_tip);
            vertices.push(epi_tip);
            for j in 0..n {
                push([en(last, j), en(last, j + 1), ti], SurfaceRegion::ApexCap);
                push([ep(last, j), ti + 1, ep(last, j + 1)], SurfaceRegion::ApexCap);
            }
        }
        ApexCap::Flat => {
            for j in 0..n {
                let (a, b, c, d) = (en(last, j), en(last, j + 1), ep(last, j + 1), ep(last, j));
                for t in shorter_split(&vertices, a, b, c, d) {
                    push(t, SurfaceRegion::ApexCap);
                }
            }
        }
    }

    Ok(TriSurface {
        vertices,
        triangles,
        regions,
    })
}

/// Splits quad `abcd` along its shorter diagonal, keeping the winding.
fn shorter_split(v: &[Vec3], a: usize, b: usize, c: usize, d: usize) -> [[usize; 3]; 2] {
    if (v[c] - v[a]).norm() <= (v[d] - v[b]).norm() * (1.0 + 1e-12) {
        [[a, b, c], [a, c, d]]
    } else {
        [[a, b, d], [b, c, d]]
    }
}
