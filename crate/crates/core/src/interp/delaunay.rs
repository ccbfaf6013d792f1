//! Incremental 3D Delaunay tetrahedralization (Bowyer-Watson with an
//! infinite vertex) on exact orientation and in-sphere predicates.
//!
//! Every hull facet carries an infinite tet whose finite face is oriented so
//! that substituting a query point for the infinite vertex gives a positive
//! orientation exactly when the point lies beyond that facet.

use std::collections::HashMap;

use robust::Coord3D;

use crate::Vec3;

pub(crate) const INF: usize = usize::MAX;

fn c3(p: &Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Exact orientation, positive when `(a, b, c, d)` has positive volume.
pub(crate) fn orient(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    -robust::orient3d(c3(a), c3(b), c3(c), c3(d))
}

/// Exact in-sphere test for a positively oriented tet: positive when `e` is
/// strictly inside the circumsphere.
pub(crate) fn in_sphere(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3, e: &Vec3) -> f64 {
    -robust::insphere(c3(a), c3(b), c3(c), c3(d), c3(e))
}

fn collinear(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let o2 = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        robust::orient2d(
            robust::Coord { x: p[0], y: p[1] },
            robust::Coord { x: q[0], y: q[1] },
            robust::Coord { x: r[0], y: r[1] },
        )
    };
    o2([a.x, a.y], [b.x, b.y], [c.x, c.y]) == 0.0
        && o2([a.y, a.z], [b.y, b.z], [c.y, c.z]) == 0.0
        && o2([a.z, a.x], [b.z, b.x], [c.z, c.x]) == 0.0
}

#[derive(Debug, Clone)]
pub struct Delaunay {
    points: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    adj: Vec<[usize; 4]>,
    alive: Vec<bool>,
    free: Vec<usize>,
    /// Input index -> vertex actually present (duplicates map to the first).
    representative: Vec<usize>,
    mark: Vec<u32>,
    epoch: u32,
    rng: u64,
    last: usize,
}

/// Where a query point falls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    /// Inside (or on the boundary of) a finite tet.
    Inside(usize),
    /// Beyond the hull facet of this infinite tet.
    Outside(usize),
}

impl Delaunay {
    /// Triangulates the points; `None` when all of them are coplanar.
    pub fn new(points: &[Vec3]) -> Option<Self> {
        let p = points;
        let i0 = 0;
        let i1 = (1..p.len()).find(|&i| p[i] != p[i0])?;
        let i2 = (1..p.len()).find(|&i| !collinear(&p[i0], &p[i1], &p[i]))?;
        let i3 = (1..p.len()).find(|&i| orient(&p[i0], &p[i1], &p[i2], &p[i]) != 0.0)?;

        let mut d = Delaunay {
            points: points.to_vec(),
            tets: Vec::new(),
            adj: Vec::new(),
            alive: Vec::new(),
            free: Vec::new(),
            representative: (0..p.len()).collect(),
            mark: Vec::new(),
            epoch: 0,
            rng: 0x9E37_79B9_7F4A_7C15,
            last: 0,
        };
        let first = if orient(&p[i0], &p[i1], &p[i2], &p[i3]) > 0.0 {
            [i0, i1, i2, i3]
        } else {
            [i0, i1, i3, i2]
        };
        let mut initial = vec![first];
        for k in 0..4 {
            let mut t = first;
            t[k] = INF;
            t.swap((k + 1) % 4, (k + 2) % 4);
            initial.push(t);
        }
        for t in initial {
            d.tets.push(t);
            d.adj.push([INF; 4]);
            d.alive.push(true);
            d.mark.push(0);
        }
        let ids: Vec<usize> = (0..5).collect();
        d.link(&ids);

        for i in 0..p.len() {
            if i == i0 || i == i1 || i == i2 || i == i3 {
                continue;
            }
            d.insert(i);
        }
        Some(d)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The vertex standing in for input point `i` (differs only for exact
    /// duplicates).
    pub fn representative(&self, i: usize) -> usize {
        self.representative[i]
    }

    pub fn tet(&self, t: usize) -> [usize; 4] {
        self.tets[t]
    }

    pub fn neighbor(&self, t: usize, i: usize) -> usize {
        self.adj[t][i]
    }

    pub fn is_infinite(&self, t: usize) -> bool {
        self.tets[t].contains(&INF)
    }

    pub fn finite_tets(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        (0..self.tets.len())
            .filter(|&t| self.alive[t] && !self.is_infinite(t))
            .map(|t| self.tets[t])
    }

    /// Hull facets as `(finite face, finite tet owning it)`, the face oriented
    /// outward.
    pub fn hull_facets(&self) -> Vec<([usize; 3], usize)> {
        let mut out = Vec::new();
        for t in 0..self.tets.len() {
            if !self.alive[t] || !self.is_infinite(t) {
                continue;
            }
            let k = self.tets[t].iter().position(|&v| v == INF).unwrap();
            let tet = self.tets[t];
            let f: Vec<usize> = (0..4).filter(|&i| i != k).map(|i| tet[i]).collect();
            let face = if k % 2 == 1 {
                [f[0], f[1], f[2]]
            } else {
                [f[0], f[2], f[1]]
            };
            out.push((face, self.adj[t][k]));
        }
        out
    }

    fn vertex(&self, v: usize) -> &Vec3 {
        &self.points[v]
    }

    /// Orientation of tet `t` with slot `i` replaced by `p`.
    fn orient_with(&self, t: usize, i: usize, p: &Vec3) -> f64 {
        let v = self.tets[t];
        let q = |k: usize| if k == i { p } else { self.vertex(v[k]) };
        orient(q(0), q(1), q(2), q(3))
    }

    fn conflict(&self, t: usize, p: &Vec3) -> bool {
        let v = self.tets[t];
        match v.iter().position(|&x| x == INF) {
            None => {
                let [a, b, c, d] = v.map(|i| self.vertex(i));
                in_sphere(a, b, c, d, p) > 0.0
            }
            Some(k) => {
                let o = self.orient_with(t, k, p);
                if o != 0.0 {
                    return o > 0.0;
                }
                let n = self.adj[t][k];
                let [a, b, c, d] = self.tets[n].map(|i| self.vertex(i));
                in_sphere(a, b, c, d, p) > 0.0
            }
        }
    }

    /// Stochastic visibility walk from `start` (any tet index; stale hints
    /// fall back to the most recent insertion).
    pub fn locate_from(&self, p: &Vec3, start: usize) -> Location {
        let mut rng = 0x2545_F491_4F6C_DD1D ^ start as u64;
        self.walk(p, start, &mut rng)
    }

    fn walk(&self, p: &Vec3, start: usize, rng: &mut u64) -> Location {
        let mut t = if start < self.tets.len() && self.alive[start] {
            start
        } else {
            self.last
        };
        if !self.alive[t] {
            t = (0..self.tets.len()).find(|&i| self.alive[i]).unwrap();
        }
        if let Some(k) = self.tets[t].iter().position(|&x| x == INF) {
            t = self.adj[t][k];
        }
        let cap = 4 * self.tets.len() + 16;
        for _ in 0..cap {
            if self.is_infinite(t) {
                return Location::Outside(t);
            }
            *rng = rng
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            let off = (*rng >> 33) as usize % 4;
            let mut moved = false;
            for kk in 0..4 {
                let i = (off + kk) % 4;
                if self.orient_with(t, i, p) < 0.0 {
                    t = self.adj[t][i];
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Location::Inside(t);
            }
        }
        self.locate_brute(p)
    }

    fn locate_brute(&self, p: &Vec3) -> Location {
        for t in 0..self.tets.len() {
            if self.alive[t] && !self.is_infinite(t) && (0..4).all(|i| self.orient_with(t, i, p) >= 0.0) {
                return Location::Inside(t);
            }
        }
        for t in 0..self.tets.len() {
            if self.alive[t] && self.is_infinite(t) {
                let k = self.tets[t].iter().position(|&x| x == INF).unwrap();
                if self.orient_with(t, k, p) > 0.0 {
                    return Location::Outside(t);
                }
            }
        }
        unreachable!("point neither inside nor outside the triangulation")
    }

    pub fn locate(&self, p: &Vec3) -> Location {
        self.locate_from(p, self.last)
    }

    fn insert(&mut self, idx: usize) {
        let p = self.points[idx];
        let mut rng = self.rng;
        let located = self.walk(&p, self.last, &mut rng);
        self.rng = rng;
        let t0 = match located {
            Location::Inside(t) | Location::Outside(t) => t,
        };
        if !self.conflict(t0, &p) {
            // only an existing vertex escapes every circumsphere
            let dup = self.tets[t0]
                .iter()
                .copied()
                .filter(|&v| v != INF)
                .min_by(|&a, &b| (self.points[a] - p).norm().total_cmp(&(self.points[b] - p).norm()))
                .unwrap();
            self.representative[idx] = self.representative[dup];
            return;
        }

        self.epoch += 2;
        let (inside, outside) = (self.epoch, self.epoch + 1);
        let mut cavity = vec![t0];
        let mut stack = vec![t0];
        self.mark[t0] = inside;
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        while let Some(c) = stack.pop() {
            for i in 0..4 {
                let n = self.adj[c][i];
                if self.mark[n] == inside {
                    continue;
                }
                if self.mark[n] != outside && self.conflict(n, &p) {
                    self.mark[n] = inside;
                    cavity.push(n);
                    stack.push(n);
                } else {
                    self.mark[n] = outside;
                    boundary.push((c, i));
                }
            }
        }

        let mut created = Vec::with_capacity(boundary.len());
        let new_tets: Vec<([usize; 4], usize, usize, usize)> = boundary
            .iter()
            .map(|&(c, i)| {
                let mut t = self.tets[c];
                t[i] = idx;
                let outer = self.adj[c][i];
                let back = self.adj[outer].iter().position(|&x| x == c).unwrap();
                (t, i, outer, back)
            })
            .collect();
        for &c in &cavity {
            self.alive[c] = false;
            self.free.push(c);
        }
        for (t, i, outer, back) in new_tets {
            let id = self.alloc(t);
            self.adj[id][i] = outer;
            self.adj[outer][back] = id;
            created.push(id);
        }
        self.link_new(&created, idx);
        self.last = *created.iter().find(|&&t| !self.is_infinite(t)).unwrap_or(&created[0]);
    }

    fn alloc(&mut self, t: [usize; 4]) -> usize {
        if let Some(id) = self.free.pop() {
            self.tets[id] = t;
            self.adj[id] = [INF; 4];
            self.alive[id] = true;
            id
        } else {
            self.tets.push(t);
            self.adj.push([INF; 4]);
            self.alive.push(true);
            self.mark.push(0);
            self.tets.len() - 1
        }
    }

    /// Links all faces shared within `ids`.
    fn link(&mut self, ids: &[usize]) {
        let mut open: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
        for &t in ids {
            for i in 0..4 {
                let key = face_key(self.tets[t], i);
                if let Some((u, j)) = open.remove(&key) {
                    self.adj[t][i] = u;
                    self.adj[u][j] = t;
                } else {
                    open.insert(key, (t, i));
                }
            }
        }
    }

    /// Links the faces through the new vertex among freshly created tets.
    fn link_new(&mut self, ids: &[usize], v: usize) {
        let mut open: HashMap<[usize; 3], (usize, usize)> = HashMap::with_capacity(2 * ids.len());
        for &t in ids {
            for i in 0..4 {
                if self.tets[t][i] == v {
                    continue;
                }
                let key = face_key(self.tets[t], i);
                if let Some((u, j)) = open.remove(&key) {
                    self.adj[t][i] = u;
                    self.adj[u][j] = t;
                } else {
                    open.insert(key, (t, i));
                }
            }
        }
        debug_assert!(open.is_empty(), "cavity faces left unmatched");
    }

    /// Barycentric coordinates of `p` in finite tet `t` (may be negative).
    pub fn barycentric(&self, t: usize, p: &Vec3) -> [f64; 4] {
        let v = self.tets[t].map(|i| self.points[i]);
        let vol = super::signed_volume6(&v[0], &v[1], &v[2], &v[3]);
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            let mut w = v;
            w[i] = *p;
            *o = super::signed_volume6(&w[0], &w[1], &w[2], &w[3]) / vol;
        }
        out
    }
}

fn face_key(t: [usize; 4], skip: usize) -> [usize; 3] {
    let mut k = [0; 3];
    let mut n = 0;
    for (i, &v) in t.iter().enumerate() {
        if i != skip {
            k[n] = v;
            n += 1;
        }
    }
    k.sort_unstable();
    k
}
