//! 2D non-rigid registration used to track contour points through an image
//! sequence: a cubic B-spline free-form deformation minimising
//! `SSD + alpha * bending energy` by coarse-to-fine gradient descent.

pub mod ffd;
pub mod image;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::study::{TrackedView, ViewKind};
pub use ffd::{
    bending_energy, bspline_basis, cost, cost_with_gradient, evaluate_ffd, ssd, ssd_with_gradient, BSplineGrid,
};
pub use image::{read_image_dir, Image2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationParams {
    pub alpha: f64,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Descent stops once the step (in pixels) falls below this.
    pub step_tolerance: f64,
    /// Initial largest control-point move per step, in pixels of the level.
    pub step_size: f64,
    /// Control-point spacing at full resolution, in pixels.
    pub control_spacing: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            alpha: 1e-3,
            pyramid_levels: 2,
            max_iterations: 300,
            step_tolerance: 1e-3,
            step_size: 0.5,
            control_spacing: 8.0,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::validation("alpha must be a finite value >= 0"));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::validation("pyramid_levels must be at least 1"));
        }
        if !(self.step_tolerance > 0.0 && self.step_size > 0.0 && self.control_spacing > 0.0) {
            return Err(Error::validation(
                "step_tolerance, step_size and control_spacing must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelReport {
    /// Image downsampling factor of the level.
    pub scale: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Registration {
    pub grid: BSplineGrid,
    pub levels: Vec<LevelReport>,
    pub cost: f64,
    pub zero_cost: f64,
}

fn finite(c: f64, iteration: usize) -> Result<f64> {
    if c.is_finite() {
        Ok(c)
    } else {
        Err(Error::Numeric(format!(
            "non-finite registration cost at iteration {iteration}"
        )))
    }
}

fn descend(
    fixed: &Image2D,
    moving: &Image2D,
    grid: &mut BSplineGrid,
    params: &RegistrationParams,
    scale: usize,
) -> Result<LevelReport> {
    let (c0, mut grad) = cost_with_gradient(fixed, moving, grid, params.alpha)?;
    let mut c = finite(c0, 0)?;
    let mut eta = params.step_size;
    let mut iterations = 0;
    'outer: for it in 1..=params.max_iterations {
        let gmax = grad.iter().flat_map(|g| g.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        loop {
            let mut trial = grid.clone();
            for (d, g) in trial.displacements.iter_mut().zip(&grad) {
                d[0] -= eta * g[0] / gmax;
                d[1] -= eta * g[1] / gmax;
            }
            let (ct, gt) = cost_with_gradient(fixed, moving, &trial, params.alpha)?;
            let ct = finite(ct, it)?;
            if ct < c {
                let gain = c - ct;
                *grid = trial;
                grad = gt;
                c = ct;
                iterations = it;
                eta *= 1.5;
                if gain <= 1e-12 * c.abs() {
                    break 'outer;
                }
                break;
            }
            eta *= 0.5;
            if eta < params.step_tolerance {
                break 'outer;
            }
        }
    }
    Ok(LevelReport {
        scale,
        cost_before: c0,
        cost_after: c,
        iterations,
    })
}

/// Both images divided by the intensity range of `fixed`.
fn normalized(fixed: &Image2D, moving: &Image2D) -> Result<(Image2D, Image2D)> {
    let (lo, hi) = fixed
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = if hi > lo { hi - lo } else { 1.0 };
    let scale = |im: &Image2D| {
        Image2D::new(
            im.width(),
            im.height(),
            im.data().iter().map(|v| (v - lo) / range).collect(),
        )
    };
    Ok((scale(fixed)?, scale(moving)?))
}

/// Registers `moving` onto `fixed`: the returned lattice maps fixed-image
/// pixels `x` to `T(x)` with `I_f(x) ~ I_m(T(x))`. Costs are reported on
/// intensities normalised by the fixed image's range.
pub fn register_pair(fixed: &Image2D, moving: &Image2D, params: &RegistrationParams) -> Result<Registration> {
    params.validate()?;
    fixed.check_registrable()?;
    if !fixed.same_shape(moving) {
        return Err(Error::validation("fixed and moving images differ in size"));
    }
    let (fixed, moving) = normalized(fixed, moving)?;
    let (fixed, moving) = (&fixed, &moving);
    let mut pyramid = vec![(fixed.clone(), moving.clone())];
    while pyramid.len() < params.pyramid_levels {
        let (f, m) = pyramid.last().expect("non-empty pyramid");
        let (fd, md) = (f.downsample(), m.downsample());
        if fd.check_registrable().is_err() {
            break;
        }
        pyramid.push((fd, md));
    }
    let full = BSplineGrid::covering(fixed.height(), fixed.width(), [params.control_spacing; 2])?;
    let zero_cost = cost(fixed, moving, &full, params.alpha)?;
    let mut grid = full.clone();
    for _ in 1..pyramid.len() {
        grid = grid.coarsened();
    }
    let mut levels = Vec::with_capacity(pyramid.len());
    for (l, (f, m)) in pyramid.iter().enumerate().rev() {
        levels.push(descend(f, m, &mut grid, params, 1 << l)?);
        if l > 0 {
            grid = grid.refined();
        }
    }
    let mut c = cost(fixed, moving, &grid, params.alpha)?;
    if c > zero_cost {
        grid = full;
        c = zero_cost;
    }
    Ok(Registration {
        grid,
        levels,
        cost: c,
        zero_cost,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedSequence {
    /// Seed positions at frame 0, `[row, col]` pixels.
    pub points: Vec<[f64; 2]>,
    /// `[frame][point]` accumulated displacement from frame 0, pixels.
    pub displacements: Vec<Vec<[f64; 2]>>,
    /// Points that left the image at some frame (their positions were
    /// clamped to the border).
    pub out_of_domain: Vec<bool>,
}

/// Centred three-frame moving average; the first and last frames are kept.
pub fn smooth_trajectories(displacements: &[Vec<[f64; 2]>]) -> Vec<Vec<[f64; 2]>> {
    let n = displacements.len();
    let mut out = displacements.to_vec();
    for t in 1..n.saturating_sub(1) {
        for (p, d) in out[t].iter_mut().enumerate() {
            for k in 0..2 {
                d[k] = (displacements[t - 1][p][k] + displacements[t][p][k] + displacements[t + 1][p][k]) / 3.0;
            }
        }
    }
    out
}

/// Registers consecutive frames and advects the seeds through each
/// transform.
pub fn track_sequence(
    images: &[Image2D],
    seeds: &[[f64; 2]],
    params: &RegistrationParams,
    smooth: bool,
) -> Result<TrackedSequence> {
    if images.len() < 2 {
        return Err(Error::validation("tracking needs at least 2 frames"));
    }
    if let Some(i) = images.iter().position(|im| !im.same_shape(&images[0])) {
        return Err(Error::validation(format!("frame {i} differs in size from frame 0")));
    }
    if let Some(i) = seeds.iter().position(|p| !images[0].contains(*p)) {
        return Err(Error::validation(format!("seed {i} lies outside frame 0")));
    }
    let grids: Vec<BSplineGrid> = (0..images.len() - 1)
        .into_par_iter()
        .map(|t| register_pair(&images[t], &images[t + 1], params).map(|r| r.grid))
        .collect::<Result<_>>()?;
    let mut pos = seeds.to_vec();
    let mut out_of_domain = vec![false; seeds.len()];
    let mut displacements = vec![vec![[0.0; 2]; seeds.len()]];
    for g in &grids {
        for (p, flag) in pos.iter_mut().zip(out_of_domain.iter_mut()) {
            let y = evaluate_ffd(g, *p)?;
            if !images[0].contains(y) {
                *flag = true;
            }
            *p = images[0].clamp_point(y);
        }
        displacements.push(pos.iter().zip(seeds).map(|(p, s)| [p[0] - s[0], p[1] - s[1]]).collect());
    }
    if smooth {
        displacements = smooth_trajectories(&displacements);
    }
    Ok(TrackedSequence {
        points: seeds.to_vec(),
        displacements,
        out_of_domain,
    })
}

/// Relative area change `(A_t - A_0) / A_0` of a view's endocardial contour
/// (closed through its end points for long-axis traces).
pub fn area_change_curve(view: &TrackedView) -> Vec<f64> {
    let g = &view.geometry;
    let n = view.contours.endo.len();
    let area = |t: usize| -> f64 {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let p = view.contours.endo[i];
                let d = view.displacements[t][i];
                [(p[0] + d[0]) * g.row_spacing, (p[1] + d[1]) * g.col_spacing]
            })
            .collect();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            .abs()
    };
    let a0 = area(0);
    (0..view.frames).map(|t| (area(t) - a0) / a0).collect()
}

/// Noise floor below which a curve has no usable extremum.
pub const PEAK_NOISE_FLOOR: f64 = 1e-9;

fn peak_frame(curve: &[f64], label: &str) -> Result<usize> {
    let (i, v) = curve.iter().enumerate().fold(
        (0, 0.0f64),
        |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) },
    );
    if !(v > PEAK_NOISE_FLOOR) {
        return Err(Error::Alignment(format!("{label}: contraction curve is flat")));
    }
    Ok(i)
}

/// Circular frame shifts moving every view's extremum onto the short-axis
/// extremum (from the mean short-axis curve). Short-axis views get 0.
pub fn align_peak_times(curves: &[(ViewKind, Vec<f64>)]) -> Result<Vec<i64>> {
    let sax: Vec<&Vec<f64>> = curves.iter().filter(|c| c.0 == ViewKind::Sax).map(|c| &c.1).collect();
    if sax.is_empty() {
        return Err(Error::Alignment("no short-axis curve to align to".into()));
    }
    let frames = sax[0].len();
    if curves.iter().any(|c| c.1.len() != frames) {
        return Err(Error::Alignment("curves differ in frame count".into()));
    }
    let mean: Vec<f64> = (0..frames)
        .map(|t| sax.iter().map(|c| c[t]).sum::<f64>() / sax.len() as f64)
        .collect();
    let reference = peak_frame(&mean, "SAX")? as i64;
    let n = frames as i64;
    curves
        .iter()
        .enumerate()
        .map(|(i, (kind, c))| {
            if *kind == ViewKind::Sax {
                return Ok(0);
            }
            let p = peak_frame(c, &format!("view {i} ({})", kind.label()))? as i64;
            let mut s = (reference - p).rem_euclid(n);
            if s > n / 2 {
                s -= n;
            }
            Ok(s)
        })
        .collect()
}

/// Rotates a view's frames so that new frame `t` is old frame `t - shift`,
/// re-expressing contours and displacements relative to the new frame 0.
pub fn circular_shift_view(view: &TrackedView, shift: i64) -> TrackedView {
    let n = view.frames as i64;
    let src = |t: usize| (t as i64 - shift).rem_euclid(n) as usize;
    let base = &view.displacements[src(0)];
    let mut out = view.clone();
    let pts: Vec<[f64; 2]> = view
        .contours
        .endo
        .iter()
        .chain(&view.contours.epi)
        .zip(base)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1]])
        .collect();
    let ne = view.contours.endo.len();
    out.contours.endo = pts[..ne].to_vec();
    out.contours.epi = pts[ne..].to_vec();
    out.displacements = (0..view.frames)
        .map(|t| {
            if t == 0 {
                return vec![[0.0; 2]; pts.len()];
            }
            view.displacements[src(t)]
                .iter()
                .zip(base)
                .map(|(d, b)| [d[0] - b[0], d[1] - b[1]])
                .collect()
        })
        .collect();
    out
}
