use serde::{Deserialize, Serialize};

use super::{LvMesh, TET_FACES};
use crate::Vec3;

/// Upper bin edges of the aspect-ratio histogram; the last bin is open.
pub const ASPECT_BINS: [f64; 4] = [2.0, 3.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub tets: usize,
    pub nodes: usize,
    pub min_volume: f64,
    pub mean_volume: f64,
    pub min_dihedral_deg: f64,
    pub max_dihedral_deg: f64,
    /// Counts for aspect ratio in `[1,2) [2,3) [3,5) [5,10) [10,inf)`; a
    /// regular tet has aspect ratio 1.
    pub aspect_histogram: [usize; 5],
}

/// Dihedral angles (degrees) at the six edges of a tet.
pub fn dihedral_angles(p: [Vec3; 4]) -> [f64; 6] {
    let normal = |f: [usize; 3]| (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).normalize();
    let n = TET_FACES.map(normal);
    // faces i and j (opposite vertices i and j) meet along the remaining edge
    let mut out = [0.0; 6];
    let mut k = 0;
    for i in 0..4 {
        for j in i + 1..4 {
            out[k] = (180.0 - n[i].dot(&n[j]).clamp(-1.0, 1.0).acos().to_degrees()).abs();
            k += 1;
        }
    }
    out
}

/// Longest edge over inradius, scaled so the regular tet scores 1.
pub fn aspect_ratio(p: [Vec3; 4]) -> f64 {
    let mut longest: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            longest = longest.max((p[j] - p[i]).norm());
        }
    }
    let vol = ((p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0).abs();
    let area: f64 = TET_FACES
        .iter()
        .map(|f| 0.5 * (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).norm())
        .sum();
    let inradius = 3.0 * vol / area;
    longest / (2.0 * 6f64.sqrt() * inradius)
}

pub fn mesh_quality(mesh: &LvMesh) -> QualityReport {
    let mut min_volume = f64::INFINITY;
    let mut sum = 0.0;
    let mut min_dihedral = f64::INFINITY;
    let mut max_dihedral: f64 = 0.0;
    let mut hist = [0usize; 5];
    for (e, tet) in mesh.tets.iter().enumerate() {
        let v = mesh.volume_of(e);
        min_volume = min_volume.min(v);
        sum += v;
        let p = tet.map(|i| mesh.nodes[i]);
        for a in dihedral_angles(p) {
            min_dihedral = min_dihedral.min(a);
            max_dihedral = max_dihedral.max(a);
        }
        let ar = aspect_ratio(p);
        let bin = ASPECT_BINS.iter().position(|&edge| ar < edge).unwrap_or(4);
        hist[bin] += 1;
    }
    QualityReport {
        tets: mesh.tets.len(),
        nodes: mesh.nodes.len(),
        min_volume,
        mean_volume: sum / mesh.tets.len().max(1) as f64,
        min_dihedral_deg: min_dihedral,
        max_dihedral_deg: max_dihedral,
        aspect_histogram: hist,
    }
}
