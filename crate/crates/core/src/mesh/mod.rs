//! Myocardium meshes: lofted endo/epi surfaces, the structured transmural
//! tetrahedral mesh built from the same rings, and legacy VTK I/O.

mod quality;
mod surface;
mod tet;
pub mod vtk;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use quality::{mesh_quality, QualityReport};
pub use surface::{loft_surface, SurfaceRegion, TriSurface};
pub use tet::{split_prism, tetrahedralize};

/// Smallest admissible tetrahedron volume (mm³).
pub const MIN_TET_VOLUME: f64 = 1e-6;

/// How the apical end of the ring stack is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApexCap {
    /// Cone-shaped cap: each surface closes with a fan to its last ring
    /// centroid pushed apically (endo by a quarter, epi by half of the last
    /// inter-ring spacing).
    #[default]
    Fan,
    /// Open tube closed by a flat endo-to-epi strip, like the base.
    Flat,
}

impl std::str::FromStr for ApexCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan" => Ok(Self::Fan),
            "flat" => Ok(Self::Flat),
            other => Err(Error::validation(format!("unknown apex cap `{other}`"))),
        }
    }
}

pub(crate) const ENDO_APEX_OFFSET: f64 = 0.25;
pub(crate) const EPI_APEX_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRegion {
    EndoSurface,
    EpiSurface,
    Interior,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeTag {
    pub region: NodeRegion,
    /// Ring level (0 = basal); the apex nodes use `levels`.
    pub ring: Option<u32>,
    /// Transmural shell (0 = endo).
    pub layer: Option<u32>,
}

impl NodeTag {
    pub fn external() -> Self {
        NodeTag {
            region: NodeRegion::External,
            ring: None,
            layer: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LvMesh {
    pub nodes: Vec<Vec3>,
    /// Positively oriented tetrahedra.
    pub tets: Vec<[usize; 4]>,
    pub tags: Vec<NodeTag>,
    /// AHA segment per element, filled by the strain stage.
    pub segments: Option<Vec<u8>>,
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn tet_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

/// Outward faces of a positively oriented tet, by local vertex index.
pub(crate) const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

impl LvMesh {
    pub fn volume_of(&self, e: usize) -> f64 {
        let [a, b, c, d] = self.tets[e];
        tet_volume(&self.nodes[a], &self.nodes[b], &self.nodes[c], &self.nodes[d])
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.tets.len()).map(|e| self.volume_of(e)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes().iter().sum()
    }

    pub fn centroid(&self, e: usize) -> Vec3 {
        self.tets[e].iter().map(|&i| self.nodes[i]).sum::<Vec3>() / 4.0
    }

    /// Faces used by exactly one tet, outward oriented.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        let mut seen: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
        let mut order = Vec::new();
        for tet in &self.tets {
            for f in TET_FACES {
                let face = [tet[f[0]], tet[f[1]], tet[f[2]]];
                let mut key = face;
                key.sort_unstable();
                let entry = seen.entry(key).or_insert_with(|| {
                    order.push(key);
                    (0, face)
                });
                entry.0 += 1;
            }
        }
        order
            .into_iter()
            .filter_map(|k| {
                let (count, face) = seen[&k];
                (count == 1).then_some(face)
            })
            .collect()
    }

    /// Volume enclosed by the boundary surface (divergence theorem).
    pub fn boundary_enclosed_volume(&self) -> f64 {
        self.boundary_faces()
            .iter()
            .map(|f| {
                let (a, b, c) = (self.nodes[f[0]], self.nodes[f[1]], self.nodes[f[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Number of boundary edges of the boundary surface (0 when watertight).
    pub fn boundary_open_edges(&self) -> usize {
        let mut count: HashMap<(usize, usize), i32> = HashMap::new();
        for f in self.boundary_faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    /// Checks the mesh invariants: positive volumes, single component, no
    /// duplicate nodes.
    pub fn validate(&self) -> Result<()> {
        if self.tags.len() != self.nodes.len() {
            return Err(Error::Mesh("node tag count differs from node count".into()));
        }
        for (e, tet) in self.tets.iter().enumerate() {
            if tet.iter().any(|&i| i >= self.nodes.len()) {
                return Err(Error::Mesh(format!("tet {e} references a missing node")));
            }
            let v = self.volume_of(e);
            if !(v >= MIN_TET_VOLUME) {
                return Err(Error::Mesh(format!("tet {e} has volume {v:e} mm^3")));
            }
        }
        if let Some((a, b)) = find_duplicate_nodes(&self.nodes, 1e-9) {
            return Err(Error::Mesh(format!("nodes {a} and {b} coincide")));
        }
        if self.component_count() > 1 {
            return Err(Error::Mesh("mesh has more than one connected component".into()));
        }
        Ok(())
    }

    fn component_count(&self) -> usize {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; n];
        for tet in &self.tets {
            for &i in tet {
                used[i] = true;
            }
            let r0 = find(&mut parent, tet[0]);
            for &i in &tet[1..] {
                let r = find(&mut parent, i);
                parent[r] = r0;
            }
        }
        let mut roots: Vec<usize> = (0..n).filter(|&i| used[i]).map(|i| find(&mut parent, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len() + used.iter().filter(|u| !**u).count()
    }
}

fn find_duplicate_nodes(nodes: &[Vec3], tol: f64) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| nodes[a].x.total_cmp(&nodes[b].x));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if nodes[j].x - nodes[i].x > tol {
                break;
            }
            if (nodes[j] - nodes[i]).norm() < tol {
                return Some((i.min(j), i.max(j)));
            }
        }
    }
    None
}

/// Loads a tetrahedral mesh from a legacy VTK unstructured grid. Inverted
/// tets are re-oriented by a vertex swap; any other cell type is rejected.
pub fn load_external_mesh(path: &std::path::Path) -> Result<LvMesh> {
    let grid = vtk::read_unstructured_grid(path)?;
    if let Some((i, t)) = grid.cell_types.iter().enumerate().find(|(_, &t)| t != vtk::VTK_TETRA) {
        return Err(Error::UnsupportedCell(format!(
            "cell {i} has VTK type {t}; only tetrahedra (10) are supported"
        )));
    }
    let mut tets = Vec::with_capacity(grid.cells.len());
    for (i, c) in grid.cells.iter().enumerate() {
        if c.len() != 4 {
            return Err(Error::UnsupportedCell(format!("cell {i} has {} vertices", c.len())));
        }
        tets.push([c[0], c[1], c[2], c[3]]);
    }
    let mut mesh = LvMesh {
        tags: vec![NodeTag::external(); grid.points.len()],
        nodes: grid.points,
        tets,
        segments: None,
    };
    for e in 0..mesh.tets.len() {
        if mesh.volume_of(e) < 0.0 {
            mesh.tets[e].swap(2, 3);
            log::warn!("external mesh: tet {e} was inverted, vertices 2 and 3 swapped");
        }
    }
    mesh.validate()?;
    Ok(mesh)
}
