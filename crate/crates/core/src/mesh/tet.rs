use super::surface::{apex_points, check_rings, column_diagonals};
use super::{tet_volume, ApexCap, LvMesh, NodeRegion, NodeTag, MIN_TET_VOLUME};
use crate::error::{Error, Result};
use crate::Vec3;

/// Vertex relabelings of a prism `(0,1,2)` bottom / `(3,4,5)` top that move
/// vertex `m` to position 0. All of them preserve orientation.
const PRISM_ROTATIONS: [[usize; 6]; 6] = [
    [0, 1, 2, 3, 4, 5],
    [1, 2, 0, 4, 5, 3],
    [2, 0, 1, 5, 3, 4],
    [3, 5, 4, 0, 2, 1],
    [4, 3, 5, 1, 0, 2],
    [5, 4, 3, 2, 1, 0],
];

/// Splits a prism into three tets. Each quad face is cut along the diagonal
/// through its smallest global index, so neighbouring cells always agree.
/// The tets inherit the orientation of `(v0, v1, v2, v3)`.
pub fn split_prism(v: [usize; 6]) -> [[usize; 4]; 3] {
    let m = (0..6).min_by_key(|&i| v[i]).unwrap();
    let p = PRISM_ROTATIONS[m].map(|i| v[i]);
    if p[1].min(p[5]) < p[2].min(p[4]) {
        [
            [p[0], p[1], p[2], p[5]],
            [p[0], p[1], p[5], p[4]],
            [p[0], p[4], p[5], p[3]],
        ]
    } else {
        [
            [p[0], p[1], p[2], p[4]],
            [p[0], p[4], p[2], p[5]],
            [p[0], p[4], p[5], p[3]],
        ]
    }
}

/// Builds the transmural tetrahedral mesh between base-to-apex endo and epi
/// ring stacks (counter-clockwise about +Z).
///
/// Node `(level k, shell l, angle j)` sits at `lerp(endo[k][j], epi[k][j],
/// l / layers)` with index `(k * (layers + 1) + l) * n + j`; with a fan cap,
/// one apex node per shell follows.
pub fn tetrahedralize(endo: &[Vec<Vec3>], epi: &[Vec<Vec3>], layers: usize, cap: ApexCap) -> Result<LvMesh> {
    if layers == 0 {
        return Err(Error::validation("transmural layer count must be at least 1"));
    }
    let (levels, n) = check_rings(endo, epi)?;
    let diag = column_diagonals(endo, epi);
    let shells = layers + 1;
    let id = |k: usize, l: usize, j: usize| (k * shells + l) * n + j % n;

    let region = |l: usize| match l {
        0 => NodeRegion::EndoSurface,
        l if l == layers => NodeRegion::EpiSurface,
        _ => NodeRegion::Interior,
    };
    let mut nodes = Vec::with_capacity(levels * shells * n + shells);
    let mut tags = Vec::with_capacity(nodes.capacity());
    for k in 0..levels {
        for l in 0..shells {
            let s = l as f64 / layers as f64;
            for j in 0..n {
                nodes.push(endo[k][j] + (epi[k][j] - endo[k][j]) * s);
                tags.push(NodeTag {
                    region: region(l),
                    ring: Some(k as u32),
                    layer: Some(l as u32),
                });
            }
        }
    }
    let apex0 = nodes.len();
    if cap == ApexCap::Fan {
        let (a, b) = apex_points(endo, epi);
        for l in 0..shells {
            nodes.push(a + (b - a) * (l as f64 / layers as f64));
            tags.push(NodeTag {
                region: region(l),
                ring: Some(levels as u32),
                layer: Some(l as u32),
            });
        }
    }

    // (cell description, prism vertices: inner triangle then outer triangle)
    let mut prisms: Vec<((usize, usize, usize), [usize; 6])> = Vec::new();
    for k in 0..levels - 1 {
        for l in 0..layers {
            for j in 0..n {
                let tris = if diag[k][j] {
                    [
                        [(k, j), (k, j + 1), (k + 1, j + 1)],
                        [(k, j), (k + 1, j + 1), (k + 1, j)],
                    ]
                } else {
                    [
                        [(k, j), (k, j + 1), (k + 1, j)],
                        [(k, j + 1), (k + 1, j + 1), (k + 1, j)],
                    ]
                };
                for t in tris {
                    let inner = t.map(|(kk, jj)| id(kk, l, jj));
                    let outer = t.map(|(kk, jj)| id(kk, l + 1, jj));
                    prisms.push(((k, l, j), [inner[0], inner[1], inner[2], outer[0], outer[1], outer[2]]));
                }
            }
        }
    }
    if cap == ApexCap::Fan {
        let k = levels - 1;
        for l in 0..layers {
            for j in 0..n {
                prisms.push((
                    (k, l, j),
                    [
                        id(k, l, j),
                        id(k, l, j + 1),
                        apex0 + l,
                        id(k, l + 1, j),
                        id(k, l + 1, j + 1),
                        apex0 + l + 1,
                    ],
                ));
            }
        }
    }

    // Counter-clockwise rings stacked downwards give prisms of negative
    // handedness; every tet is flipped to positive orientation.
    let mut tets = Vec::with_capacity(3 * prisms.len());
    for ((k, l, j), prism) in prisms {
        for t in split_prism(prism) {
            let v = -tet_volume(&nodes[t[0]], &nodes[t[1]], &nodes[t[2]], &nodes[t[3]]);
            if !(v >= MIN_TET_VOLUME) {
                return Err(Error::Mesh(format!(
                    "cell (level {k}, layer {l}, angle {j}) produced a tet of volume {v:e} mm^3"
                )));
            }
            tets.push([t[0], t[1], t[3], t[2]]);
        }
    }

    Ok(LvMesh {
        nodes,
        tets,
        tags,
        segments: None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::surface::tests::annulus_rings;
    use super::super::{loft_surface, mesh_quality};
    use super::*;
    use std::collections::HashSet;
    use std::f64::consts::PI;

    #[test]
    fn hex_splits_into_six_tets_of_exact_volume() {
        // unit cube corners; two prisms sharing the diagonal face
        let c = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
        ];
        let mut tets = Vec::new();
        tets.extend(split_prism([0, 1, 2, 4, 5, 6]));
        tets.extend(split_prism([0, 2, 3, 4, 6, 7]));
        assert_eq!(tets.len(), 6);
        let total: f64 = tets
            .iter()
            .map(|t| tet_volume(&c[t[0]], &c[t[1]], &c[t[2]], &c[t[3]]))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        for t in &tets {
            assert!(tet_volume(&c[t[0]], &c[t[1]], &c[t[2]], &c[t[3]]) > 0.0);
        }
    }

    #[test]
    fn split_is_conforming_across_shared_quads() {
        // any face shared by two prisms is cut identically from both sides
        let a = split_prism([3, 7, 1, 10, 2, 8]);
        let b = split_prism([7, 1, 12, 2, 8, 0]);
        let faces = |ts: &[[usize; 4]]| -> HashSet<[usize; 3]> {
            ts.iter()
                .flat_map(|t| {
                    [
                        [t[0], t[1], t[2]],
                        [t[0], t[1], t[3]],
                        [t[0], t[2], t[3]],
                        [t[1], t[2], t[3]],
                    ]
                    .map(|mut f| {
                        f.sort_unstable();
                        f
                    })
                })
                .collect()
        };
        let quad: HashSet<usize> = [7, 1, 2, 8].into_iter().collect();
        let on_quad = |fs: HashSet<[usize; 3]>| -> HashSet<[usize; 3]> {
            fs.into_iter().filter(|f| f.iter().all(|v| quad.contains(v))).collect()
        };
        assert_eq!(on_quad(faces(&a)), on_quad(faces(&b)));
    }

    #[test]
    fn annulus_volume_and_convergence() {
        let (ri, ro, h) = (25.0, 35.0, 80.0);
        let exact = PI * (ro * ro - ri * ri) * h;
        let err = |n: usize| {
            let (endo, epi) = annulus_rings(ri, ro, h, n, 9);
            let m = tetrahedralize(&endo, &epi, 3, ApexCap::Flat).unwrap();
            ((m.total_volume() - exact) / exact).abs()
        };
        let (e64, e128) = (err(64), err(128));
        assert!((exact - 150_796.4).abs() < 0.1);
        assert!(e64 < 0.02, "{e64}");
        assert!(e128 < e64);
    }

    #[test]
    fn mesh_invariants_with_both_caps() {
        let (endo, epi) = annulus_rings(25.0, 35.0, 80.0, 32, 6);
        for cap in [ApexCap::Fan, ApexCap::Flat] {
            let m = tetrahedralize(&endo, &epi, 3, cap).unwrap();
            m.validate().unwrap();
            assert_eq!(m.boundary_open_edges(), 0);
            let total = m.total_volume();
            assert!(((m.boundary_enclosed_volume() - total) / total).abs() < 1e-9);
            let q = mesh_quality(&m);
            assert!(q.min_volume > 0.0);
            let floor = if cap == ApexCap::Flat { 5.0 } else { 2.0 };
            assert!(q.min_dihedral_deg > floor, "{cap:?}: {}", q.min_dihedral_deg);
        }
    }

    #[test]
    fn boundary_faces_lie_on_the_lofted_surface() {
        let (endo, epi) = annulus_rings(25.0, 35.0, 80.0, 24, 5);
        for cap in [ApexCap::Fan, ApexCap::Flat] {
            let m = tetrahedralize(&endo, &epi, 2, cap).unwrap();
            let s = loft_surface(&endo, &epi, cap).unwrap();
            let tris: Vec<[Vec3; 3]> = s.triangles.iter().map(|t| t.map(|i| s.vertices[i])).collect();
            for f in m.boundary_faces() {
                for p in f.map(|i| m.nodes[i]) {
                    let d = tris
                        .iter()
                        .map(|t| point_triangle_distance(&p, t))
                        .fold(f64::INFINITY, f64::min);
                    assert!(d < 1e-9, "{cap:?}: node {p:?} is {d} from the surface");
                }
            }
        }
    }

    fn point_triangle_distance(p: &Vec3, t: &[Vec3; 3]) -> f64 {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        let nn = n.normalize();
        let plane = (p - t[0]).dot(&nn);
        let q = p - nn * plane;
        let area = |a: &Vec3, b: &Vec3, c: &Vec3| (b - a).cross(&(c - a)).dot(&nn);
        let total = area(&t[0], &t[1], &t[2]);
        let l0 = area(&q, &t[1], &t[2]) / total;
        let l1 = area(&t[0], &q, &t[2]) / total;
        let l2 = 1.0 - l0 - l1;
        if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
            plane.abs()
        } else {
            f64::INFINITY
        }
    }

    #[test]
    fn zero_thickness_wall_is_a_meshing_error() {
        let (endo, _) = annulus_rings(25.0, 35.0, 80.0, 16, 3);
        let mut epi = endo.clone();
        for r in &mut epi {
            for p in r.iter_mut() {
                *p *= 1.0 + 1e-12;
                p.z /= 1.0 + 1e-12;
            }
        }
        let err = tetrahedralize(&endo, &epi, 1, ApexCap::Flat).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
