//! Interpolating cubic splines through ordered contour points.
//!
//! Closed contours (SAX rings) use periodic cubic splines, open curves (LAX
//! traces) natural cubic splines with zero second derivative at both ends.
//! Both are parameterised by cumulative chord length, or its square root
//! (centripetal) on request.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

const DUPLICATE_TOL: f64 = 1e-9;
const DEGENERATE_LENGTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    #[default]
    #[serde(rename = "chord")]
    ChordLength,
    Centripetal,
}

impl std::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chord" => Ok(Self::ChordLength),
            "centripetal" => Ok(Self::Centripetal),
            other => Err(Error::validation(format!("unknown parameterization `{other}`"))),
        }
    }
}

impl Parameterization {
    fn step(self, a: &Vec3, b: &Vec3) -> f64 {
        let d = (b - a).norm();
        match self {
            Parameterization::ChordLength => d,
            Parameterization::Centripetal => d.sqrt(),
        }
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm). `sub[0]` and
/// `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
}

/// Solves a cyclic tridiagonal system (corner entries `alpha` at
/// `[n-1][0]` and `beta` at `[0][n-1]`) with the Sherman-Morrison correction.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], alpha: f64, beta: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    debug_assert!(n >= 3);
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let mut x = rhs.to_vec();
    solve_tridiagonal(sub, &bb, sup, &mut x);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    solve_tridiagonal(sub, &bb, sup, &mut u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + u[0] + beta * u[n - 1] / gamma);
    for i in 0..n {
        x[i] -= fact * u[i];
    }
    x
}

/// Scalar interpolating cubic spline over strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
    /// Period for closed splines; the segment after the last knot wraps to
    /// the first.
    period: Option<f64>,
}

impl CubicSpline {
    /// Natural spline (zero second derivative at both ends).
    pub fn natural(knots: &[f64], values: &[f64]) -> Result<Self> {
        check_knots(knots, values, 2)?;
        let n = knots.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut sub = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut sup = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs);
            second[1..n - 1].copy_from_slice(&rhs);
        }
        Ok(CubicSpline {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
            period: None,
        })
    }

    /// Periodic spline; `period` must exceed the knot span.
    pub fn periodic(knots: &[f64], values: &[f64], period: f64) -> Result<Self> {
        check_knots(knots, values, 1)?;
        let n = knots.len();
        if !(period > knots[n - 1] - knots[0]) {
            return Err(Error::validation("periodic spline: period shorter than knot span"));
        }
        let h = |i: usize| -> f64 {
            if i + 1 < n {
                knots[i + 1] - knots[i]
            } else {
                knots[0] + period - knots[n - 1]
            }
        };
        let y = |i: usize| values[i % n];
        let second = match n {
            1 => vec![0.0],
            2 => {
                let (h0, h1) = (h(0), h(1));
                let d = 6.0 * (y(1) - y(0)) * (1.0 / h0 + 1.0 / h1);
                // [2(h0+h1)  h0+h1] [m0]   [ d]
                // [h0+h1  2(h0+h1)] [m1] = [-d]
                let s = h0 + h1;
                let det = 3.0 * s * s;
                vec![(2.0 * s * d + s * d) / det, (-2.0 * s * d - s * d) / det]
            }
            _ => {
                let mut sub = vec![0.0; n];
                let mut diag = vec![0.0; n];
                let mut sup = vec![0.0; n];
                let mut rhs = vec![0.0; n];
                for i in 0..n {
                    let hp = h((i + n - 1) % n);
                    let hi = h(i);
                    sub[i] = hp;
                    diag[i] = 2.0 * (hp + hi);
                    sup[i] = hi;
                    let prev = values[(i + n - 1) % n];
                    rhs[i] = 6.0 * ((y(i + 1) - y(i)) / hi - (y(i) - prev) / hp);
                }
                let alpha = sup[n - 1];
                let beta = sub[0];
                solve_cyclic(&sub, &diag, &sup, alpha, beta, &rhs)
            }
        };
        Ok(CubicSpline {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
            period: Some(period),
        })
    }

    fn segment(&self, t: f64) -> (usize, f64, f64, f64) {
        let n = self.knots.len();
        match self.period {
            Some(period) => {
                let t0 = self.knots[0];
                let mut u = (t - t0).rem_euclid(period) + t0;
                if u >= t0 + period {
                    u = t0;
                }
                let i = self.knots.partition_point(|&k| k <= u).saturating_sub(1);
                let (a, b) = if i + 1 < n {
                    (self.knots[i], self.knots[i + 1])
                } else {
                    (self.knots[i], t0 + period)
                };
                (i, a, b, u)
            }
            None => {
                let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(n - 2);
                (i, self.knots[i], self.knots[i + 1], t)
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.values[0];
        }
        let (i, a, b, u) = self.segment(t);
        let j = (i + 1) % n;
        let h = b - a;
        let (mi, mj) = (self.second[i], self.second[j]);
        let (yi, yj) = (self.values[i], self.values[j]);
        let ra = b - u;
        let rb = u - a;
        mi * ra * ra * ra / (6.0 * h)
            + mj * rb * rb * rb / (6.0 * h)
            + (yi / h - mi * h / 6.0) * ra
            + (yj / h - mj * h / 6.0) * rb
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return 0.0;
        }
        let (i, a, b, u) = self.segment(t);
        let j = (i + 1) % n;
        let h = b - a;
        let (mi, mj) = (self.second[i], self.second[j]);
        let ra = b - u;
        let rb = u - a;
        -mi * ra * ra / (2.0 * h) + mj * rb * rb / (2.0 * h) + (self.values[j] - self.values[i]) / h
            - (mj - mi) * h / 6.0
    }
}

fn check_knots(knots: &[f64], values: &[f64], min: usize) -> Result<()> {
    if knots.len() != values.len() {
        return Err(Error::validation("spline: knot/value length mismatch"));
    }
    if knots.len() < min {
        return Err(Error::validation(format!("spline: needs at least {min} knots")));
    }
    if knots.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::validation("spline: non-finite input"));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("spline: knots must be strictly increasing"));
    }
    Ok(())
}

/// Cumulative parameter values for `points`; for closed curves also returns
/// the period (parameter length of the closing segment included).
fn cumulative_params(points: &[Vec3], closed: bool, param: Parameterization) -> (Vec<f64>, f64) {
    let mut t = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    t.push(0.0);
    for w in points.windows(2) {
        acc += param.step(&w[0], &w[1]);
        t.push(acc);
    }
    if closed {
        acc += param.step(points.last().unwrap(), &points[0]);
    }
    (t, acc)
}

/// Parametric 3D spline curve.
#[derive(Debug, Clone)]
pub struct SplineCurve {
    axes: [CubicSpline; 3],
    params: Vec<f64>,
    length: f64,
    closed: bool,
}

impl SplineCurve {
    pub fn closed(points: &[Vec3], param: Parameterization) -> Result<Self> {
        check_points(points, true, 3)?;
        let (params, length) = cumulative_params(points, true, param);
        if length < DEGENERATE_LENGTH {
            return Err(Error::Geometry(
                "degenerate contour: total chord length < 1e-6 mm".into(),
            ));
        }
        let axis = |k: usize| -> Result<CubicSpline> {
            let v: Vec<f64> = points.iter().map(|p| p[k]).collect();
            CubicSpline::periodic(&params, &v, length)
        };
        Ok(SplineCurve {
            axes: [axis(0)?, axis(1)?, axis(2)?],
            params,
            length,
            closed: true,
        })
    }

    pub fn open(points: &[Vec3], param: Parameterization) -> Result<Self> {
        check_points(points, false, 2)?;
        let (params, length) = cumulative_params(points, false, param);
        if length < DEGENERATE_LENGTH {
            return Err(Error::Geometry("degenerate curve: total chord length < 1e-6 mm".into()));
        }
        let axis = |k: usize| -> Result<CubicSpline> {
            let v: Vec<f64> = points.iter().map(|p| p[k]).collect();
            CubicSpline::natural(&params, &v)
        };
        Ok(SplineCurve {
            axes: [axis(0)?, axis(1)?, axis(2)?],
            params,
            length,
            closed: false,
        })
    }

    /// Parameter values of the interpolated points.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Parameter length (period for closed curves).
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        Vec3::new(self.axes[0].eval(t), self.axes[1].eval(t), self.axes[2].eval(t))
    }

    pub fn tangent(&self, t: f64) -> Vec3 {
        Vec3::new(
            self.axes[0].derivative(t),
            self.axes[1].derivative(t),
            self.axes[2].derivative(t),
        )
    }

    /// `n` parameters at equal increments; closed curves start at 0 and
    /// exclude the period, open curves include both ends.
    pub fn uniform_params(&self, n: usize) -> Vec<f64> {
        if self.closed {
            (0..n).map(|k| self.length * k as f64 / n as f64).collect()
        } else {
            (0..n)
                .map(|k| {
                    if k + 1 == n {
                        self.length
                    } else {
                        self.length * k as f64 / (n - 1) as f64
                    }
                })
                .collect()
        }
    }
}

fn check_points(points: &[Vec3], closed: bool, min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::validation(format!(
            "contour needs at least {min} points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::validation("contour: non-finite point"));
    }
    let n = points.len();
    let pairs = if closed { n } else { n - 1 };
    for i in 0..pairs {
        if (points[(i + 1) % n] - points[i]).norm() < DUPLICATE_TOL {
            return Err(Error::Geometry(format!(
                "contour: consecutive duplicate points at index {i}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Roi {
    Endo,
    Epi,
}

/// Ordered contour in LV space together with the tracked displacements of
/// its points, indexed `[frame][point]`.
#[derive(Debug, Clone)]
pub struct ContourRing {
    pub points: Vec<Vec3>,
    pub closed: bool,
    pub roi: Roi,
    pub slice: i64,
    pub displacements: Vec<Vec<Vec3>>,
}

impl ContourRing {
    pub fn validate(&self) -> Result<()> {
        check_points(&self.points, self.closed, if self.closed { 3 } else { 2 })?;
        for (t, f) in self.displacements.iter().enumerate() {
            if f.len() != self.points.len() {
                return Err(Error::validation(format!(
                    "contour displacements[{t}]: expected {} points, got {}",
                    self.points.len(),
                    f.len()
                )));
            }
        }
        Ok(())
    }

    /// Signed area of the ring projected on the XY plane (positive when
    /// counter-clockwise seen from +Z).
    pub fn signed_area_xy(&self) -> f64 {
        signed_area_xy(&self.points)
    }

    /// Reverses the point order (and the displacement order with it).
    pub fn reversed(&self) -> ContourRing {
        let mut out = self.clone();
        out.points.reverse();
        for f in &mut out.displacements {
            f.reverse();
        }
        out
    }
}

pub fn signed_area_xy(points: &[Vec3]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

/// Up-sampled contour plus the parameters needed to transport data onto it.
#[derive(Debug, Clone)]
pub struct Resampling {
    pub curve: SplineCurve,
    pub sample_params: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl Resampling {
    pub fn source_params(&self) -> &[f64] {
        self.curve.params()
    }

    /// Rotates the sample order so that sample `k` becomes the first.
    pub fn roll(&mut self, k: usize) {
        self.sample_params.rotate_left(k);
        self.points.rotate_left(k);
    }
}

/// Periodic cubic spline through a closed ring sampled at `n` equal
/// parameter increments, starting at the ring's first point.
pub fn resample_closed(ring: &ContourRing, n: usize, param: Parameterization) -> Result<Resampling> {
    if !ring.closed {
        return Err(Error::validation("resample_closed: ring is not closed"));
    }
    if n < 3 {
        return Err(Error::validation("resample_closed: n must be >= 3"));
    }
    ring.validate()?;
    let curve = SplineCurve::closed(&ring.points, param)?;
    let sample_params = curve.uniform_params(n);
    let points = sample_params.iter().map(|&t| curve.eval(t)).collect();
    Ok(Resampling {
        curve,
        sample_params,
        points,
    })
}

/// Natural cubic spline through an open polyline sampled at `n` equal
/// parameter increments; end points are reproduced exactly.
pub fn resample_open(points: &[Vec3], n: usize, param: Parameterization) -> Result<Resampling> {
    if n < 2 {
        return Err(Error::validation("resample_open: n must be >= 2"));
    }
    let curve = SplineCurve::open(points, param)?;
    let sample_params = curve.uniform_params(n);
    let mut samples: Vec<Vec3> = sample_params.iter().map(|&t| curve.eval(t)).collect();
    samples[0] = points[0];
    samples[n - 1] = *points.last().unwrap();
    Ok(Resampling {
        curve,
        sample_params,
        points: samples,
    })
}

/// Transports per-frame displacements from the original contour points onto
/// the resampled points with per-axis splines over the same parameter.
pub fn carry_displacements(displacements: &[Vec<Vec3>], resampling: &Resampling) -> Result<Vec<Vec<Vec3>>> {
    let knots = resampling.source_params();
    let closed = resampling.curve.is_closed();
    let period = resampling.curve.length();
    displacements
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            if frame.len() != knots.len() {
                return Err(Error::validation(format!(
                    "carry_displacements: frame {t} has {} samples for {} contour points",
                    frame.len(),
                    knots.len()
                )));
            }
            if frame.iter().all(|d| *d == Vec3::zeros()) {
                return Ok(vec![Vec3::zeros(); resampling.sample_params.len()]);
            }
            let axis = |k: usize| -> Result<CubicSpline> {
                let v: Vec<f64> = frame.iter().map(|d| d[k]).collect();
                if closed {
                    CubicSpline::periodic(knots, &v, period)
                } else {
                    CubicSpline::natural(knots, &v)
                }
            };
            let splines = [axis(0)?, axis(1)?, axis(2)?];
            Ok(resampling
                .sample_params
                .iter()
                .map(|&s| Vec3::new(splines[0].eval(s), splines[1].eval(s), splines[2].eval(s)))
                .collect())
        })
        .collect()
}

/// Splits an open polyline wherever a gap exceeds `factor` times the median
/// point spacing. Returns index ranges of the pieces (each with >= 2 points).
pub fn split_at_gaps(points: &[Vec3], factor: f64) -> Vec<Range<usize>> {
    if points.len() < 2 {
        return Vec::new();
    }
    let gaps: Vec<f64> = points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut out = Vec::new();
    let mut start = 0;
    for (i, g) in gaps.iter().enumerate() {
        if *g > factor * median {
            if i + 1 - start >= 2 {
                out.push(start..i + 1);
            }
            start = i + 1;
        }
    }
    if points.len() - start >= 2 {
        out.push(start..points.len());
    }
    out
}
