//! Cubic B-spline free-form deformation on a uniform control lattice, the
//! SSD similarity and the bending-energy regulariser with their gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::Image2D;
use crate::error::{Error, Result};

/// Uniform cubic B-spline basis at local parameter `t` in `[0, 1)`.
pub fn bspline_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Control lattice over an image; node `(i, j)` sits at pixel
/// `((i - 1) * spacing[0], (j - 1) * spacing[1])`, so one ring of nodes lies
/// outside the image on every side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineGrid {
    pub spacing: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[d_row, d_col]` per node, in pixels.
    pub displacements: Vec<[f64; 2]>,
}

impl BSplineGrid {
    /// Zero lattice covering a `height x width` image.
    pub fn covering(height: usize, width: usize, spacing: [f64; 2]) -> Result<Self> {
        if !(spacing[0] > 0.0 && spacing[1] > 0.0) || !spacing.iter().all(|s| s.is_finite()) {
            return Err(Error::validation("control spacing must be positive"));
        }
        if height == 0 || width == 0 {
            return Err(Error::validation("lattice needs a non-empty image"));
        }
        let n = |len: usize, s: f64| ((len - 1) as f64 / s).floor() as usize + 4;
        let (rows, cols) = (n(height, spacing[0]), n(width, spacing[1]));
        Ok(BSplineGrid {
            spacing,
            rows,
            cols,
            displacements: vec![[0.0; 2]; rows * cols],
        })
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        self.displacements[i * self.cols + j]
    }

    pub fn node_mut(&mut self, i: usize, j: usize) -> &mut [f64; 2] {
        &mut self.displacements[i * self.cols + j]
    }

    pub fn max_displacement(&self) -> f64 {
        self.displacements.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max)
    }

    /// First contributing node and basis weights along one axis.
    fn axis(&self, x: f64, axis: usize) -> Option<(usize, [f64; 4])> {
        let n = if axis == 0 { self.rows } else { self.cols };
        let u = x / self.spacing[axis];
        if !(u >= 0.0) {
            return None;
        }
        let i = u.floor();
        let first = i as usize;
        if first + 3 >= n {
            return None;
        }
        Some((first, bspline_basis(u - i)))
    }

    /// The 16 contributing nodes `(i, j)` and weights at `x`.
    pub fn weights(&self, x: [f64; 2]) -> Result<(usize, usize, [[f64; 4]; 4])> {
        let (Some((i, wr)), Some((j, wc))) = (self.axis(x[0], 0), self.axis(x[1], 1)) else {
            return Err(Error::Domain(format!(
                "point ({}, {}) is outside the control lattice",
                x[0], x[1]
            )));
        };
        let mut w = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                w[a][b] = wr[a] * wc[b];
            }
        }
        Ok((i, j, w))
    }

    pub fn displacement_at(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let (i, j, w) = self.weights(x)?;
        let mut u = [0.0; 2];
        for a in 0..4 {
            for b in 0..4 {
                let d = self.node(i + a, j + b);
                u[0] += w[a][b] * d[0];
                u[1] += w[a][b] * d[1];
            }
        }
        Ok(u)
    }

    /// The same lattice at twice the image resolution.
    pub fn refined(&self) -> BSplineGrid {
        BSplineGrid {
            spacing: self.spacing.map(|s| 2.0 * s),
            rows: self.rows,
            cols: self.cols,
            displacements: self.displacements.iter().map(|d| [2.0 * d[0], 2.0 * d[1]]).collect(),
        }
    }

    /// The same lattice at half the image resolution.
    pub fn coarsened(&self) -> BSplineGrid {
        BSplineGrid {
            spacing: self.spacing.map(|s| 0.5 * s),
            rows: self.rows,
            cols: self.cols,
            displacements: self.displacements.iter().map(|d| [0.5 * d[0], 0.5 * d[1]]).collect(),
        }
    }
}

/// `T(x) = x + u(x)`.
pub fn evaluate_ffd(grid: &BSplineGrid, x: [f64; 2]) -> Result<[f64; 2]> {
    let u = grid.displacement_at(x)?;
    Ok([x[0] + u[0], x[1] + u[1]])
}

fn check_pair(fixed: &Image2D, moving: &Image2D) -> Result<()> {
    if !fixed.same_shape(moving) {
        return Err(Error::validation(format!(
            "image size mismatch: {}x{} vs {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }
    Ok(())
}

const ROW_CHUNK: usize = 8;

/// Mean squared difference and, when requested, its gradient with respect to
/// every control displacement.
pub fn ssd_with_gradient(
    fixed: &Image2D,
    moving: &Image2D,
    grid: &BSplineGrid,
    want_gradient: bool,
) -> Result<(f64, Vec<[f64; 2]>)> {
    check_pair(fixed, moving)?;
    let (h, w) = (fixed.height(), fixed.width());
    let rows: Vec<(usize, [f64; 4])> = (0..h)
        .map(|r| grid.axis(r as f64, 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Domain("control lattice does not cover the image rows".into()))?;
    let cols: Vec<(usize, [f64; 4])> = (0..w)
        .map(|c| grid.axis(c as f64, 1))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Domain("control lattice does not cover the image columns".into()))?;
    let nodes = grid.displacements.len();
    let partials: Vec<(f64, Vec<[f64; 2]>)> = (0..h)
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut cost = 0.0;
            let mut grad = if want_gradient {
                vec![[0.0; 2]; nodes]
            } else {
                Vec::new()
            };
            for &r in chunk {
                let (i, wr) = rows[r];
                for (c, &(j, wc)) in cols.iter().enumerate() {
                    let mut u = [0.0; 2];
                    for a in 0..4 {
                        for b in 0..4 {
                            let d = grid.node(i + a, j + b);
                            let k = wr[a] * wc[b];
                            u[0] += k * d[0];
                            u[1] += k * d[1];
                        }
                    }
                    let (v, g) = moving.sample_with_gradient([r as f64 + u[0], c as f64 + u[1]]);
                    let diff = v - fixed.get(r, c);
                    cost += diff * diff;
                    if want_gradient && (g[0] != 0.0 || g[1] != 0.0) {
                        let s = 2.0 * diff;
                        for a in 0..4 {
                            for b in 0..4 {
                                let k = s * wr[a] * wc[b];
                                let e = &mut grad[(i + a) * grid.cols + j + b];
                                e[0] += k * g[0];
                                e[1] += k * g[1];
                            }
                        }
                    }
                }
            }
            (cost, grad)
        })
        .collect();
    let m = (h * w) as f64;
    let mut cost = 0.0;
    let mut grad = if want_gradient {
        vec![[0.0; 2]; nodes]
    } else {
        Vec::new()
    };
    for (c, g) in partials {
        cost += c;
        for (acc, v) in grad.iter_mut().zip(g) {
            acc[0] += v[0];
            acc[1] += v[1];
        }
    }
    grad.iter_mut().for_each(|g| {
        g[0] /= m;
        g[1] /= m;
    });
    Ok((cost / m, grad))
}

/// `(1/M) sum (I_f(x) - I_m(T(x)))^2` over all pixels.
pub fn ssd(fixed: &Image2D, moving: &Image2D, grid: &BSplineGrid) -> Result<f64> {
    Ok(ssd_with_gradient(fixed, moving, grid, false)?.0)
}

/// Second-difference stencils at an interior node as `(weight, [(di, dj, c)])`.
fn bending_terms() -> [(f64, Vec<(isize, isize, f64)>); 3] {
    [
        (1.0, vec![(-1, 0, 1.0), (0, 0, -2.0), (1, 0, 1.0)]),
        (1.0, vec![(0, -1, 1.0), (0, 0, -2.0), (0, 1, 1.0)]),
        (2.0, vec![(1, 1, 0.25), (1, -1, -0.25), (-1, 1, -0.25), (-1, -1, 0.25)]),
    ]
}

/// Sum over interior nodes of squared second differences (rows, columns and
/// twice the mixed term) of both components, divided by the interior node
/// count. Also returns the gradient.
pub fn bending_energy_with_gradient(grid: &BSplineGrid) -> (f64, Vec<[f64; 2]>) {
    let mut grad = vec![[0.0; 2]; grid.displacements.len()];
    if grid.rows < 3 || grid.cols < 3 {
        return (0.0, grad);
    }
    let interior = ((grid.rows - 2) * (grid.cols - 2)) as f64;
    let terms = bending_terms();
    let mut e = 0.0;
    for i in 1..grid.rows - 1 {
        for j in 1..grid.cols - 1 {
            for (weight, stencil) in &terms {
                let at = |di: isize, dj: isize| (i as isize + di) as usize * grid.cols + (j as isize + dj) as usize;
                for comp in 0..2 {
                    let v: f64 = stencil
                        .iter()
                        .map(|&(di, dj, c)| c * grid.displacements[at(di, dj)][comp])
                        .sum();
                    e += weight * v * v;
                    for &(di, dj, c) in stencil {
                        grad[at(di, dj)][comp] += 2.0 * weight * v * c / interior;
                    }
                }
            }
        }
    }
    (e / interior, grad)
}

pub fn bending_energy(grid: &BSplineGrid) -> f64 {
    bending_energy_with_gradient(grid).0
}

/// `C = S + alpha R` and its gradient.
pub fn cost_with_gradient(
    fixed: &Image2D,
    moving: &Image2D,
    grid: &BSplineGrid,
    alpha: f64,
) -> Result<(f64, Vec<[f64; 2]>)> {
    let (s, mut g) = ssd_with_gradient(fixed, moving, grid, true)?;
    if alpha == 0.0 {
        return Ok((s, g));
    }
    let (r, gr) = bending_energy_with_gradient(grid);
    for (a, b) in g.iter_mut().zip(gr) {
        a[0] += alpha * b[0];
        a[1] += alpha * b[1];
    }
    Ok((s + alpha * r, g))
}

pub fn cost(fixed: &Image2D, moving: &Image2D, grid: &BSplineGrid, alpha: f64) -> Result<f64> {
    let s = ssd(fixed, moving, grid)?;
    Ok(if alpha == 0.0 {
        s
    } else {
        s + alpha * bending_energy(grid)
    })
}
