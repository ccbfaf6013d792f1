//! Analytic deforming-annulus phantoms with finite-difference ground truth
//! strain, and synthesis of study bundles from them.

use std::f64::consts::PI;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::Image2D;
use crate::strain::{aha16_assign, green_lagrange, local_directions, project_strain};
use crate::study::{Contours, Study, TrackedView, ViewGeometry, ViewKind};
use crate::{Mat3, Vec3};

/// Central-difference step for the analytic strain oracle (mm).
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Longitudinal shortening with the volume-preserving coupling
    /// `Ri' = Ri / sqrt(lambda)`.
    Incompressible,
    /// Shortening plus cavity contraction: positive radial, negative
    /// circumferential and longitudinal strain.
    Contractile,
    /// Rotation about the long axis plus in-plane translation.
    Rigid,
    /// Pure 3D translation.
    Translate,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incompressible" => Ok(Self::Incompressible),
            "contractile" => Ok(Self::Contractile),
            "rigid" => Ok(Self::Rigid),
            "translate" => Ok(Self::Translate),
            other => Err(Error::validation(format!(
                "unknown preset `{other}` (incompressible, contractile, rigid, translate)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Incompressible => "incompressible",
            Preset::Contractile => "contractile",
            Preset::Rigid => "rigid",
            Preset::Translate => "translate",
        }
    }
}

/// Preset constants.
pub mod presets {
    pub const RI: f64 = 25.0;
    pub const RO: f64 = 35.0;
    pub const HEIGHT: f64 = 80.0;
    pub const CYCLE_FRAMES: usize = 20;
    pub const INCOMPRESSIBLE_LAMBDA: f64 = 0.85;
    pub const CONTRACTILE_LAMBDA: f64 = 0.90;
    pub const CONTRACTILE_RI_RATIO: f64 = 0.80;
    pub const RIGID_FRAMES: usize = 10;
    pub const RIGID_DEG_PER_FRAME: f64 = 10.0;
    pub const RIGID_MM_PER_FRAME: [f64; 3] = [3.0, 4.0, 0.0];
    pub const TRANSLATE_PEAK: [f64; 3] = [2.0, -1.0, -3.0];
}

/// Raised-cosine activation over one cycle: 0 at frame 0, 1 at `frames / 2`.
pub fn cycle_profile(t: usize, frames: usize) -> f64 {
    0.5 * (1.0 - (2.0 * PI * t as f64 / frames as f64).cos())
}

/// Optional replacements for preset constants. Absent fields keep the
/// preset value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    /// Peak longitudinal stretch (`incompressible`, `contractile`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_peak: Option<f64>,
    /// Peak `Ri' / Ri` (`contractile`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_ratio: Option<f64>,
    /// Peak torsion rate (rad/mm), applied with the cycle profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub torsion: Option<f64>,
}

impl PhantomOverrides {
    pub fn is_empty(&self) -> bool {
        *self == PhantomOverrides::default()
    }

    pub fn validate(&self, p: Preset) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("phantom overrides: {m}")));
        if let Some(f) = self.frames {
            if !(2..=1000).contains(&f) {
                return bad("frames must lie in 2..=1000");
            }
        }
        if let Some(l) = self.lambda_peak {
            if !matches!(p, Preset::Incompressible | Preset::Contractile) {
                return bad("lambda_peak applies to the incompressible and contractile presets only");
            }
            if !(0.5..=1.5).contains(&l) {
                return bad("lambda_peak must lie in [0.5, 1.5]");
            }
        }
        if let Some(r) = self.ri_ratio {
            if p != Preset::Contractile {
                return bad("ri_ratio applies to the contractile preset only");
            }
            if !(0.5..=1.3).contains(&r) {
                return bad("ri_ratio must lie in [0.5, 1.3]");
            }
        }
        if let Some(t) = self.torsion {
            if !(t.abs() <= 0.05) {
                return bad("torsion must lie in [-0.05, 0.05] rad/mm");
            }
        }
        Ok(())
    }
}

/// Thick-walled cylinder `Ri <= r <= Ro`, `0 <= z <= h` (apex at z = 0)
/// with per-frame motion parameters. The rigid part is applied after the
/// annulus map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusPhantom {
    pub ri: f64,
    pub ro: f64,
    pub h: f64,
    pub frames: usize,
    pub lambda_z: Vec<f64>,
    pub ri_prime: Vec<f64>,
    /// Torsion rate (rad/mm).
    pub tau: Vec<f64>,
    pub rotation_z_deg: Vec<f64>,
    pub translation: Vec<[f64; 3]>,
}

impl AnnulusPhantom {
    /// A phantom at rest for `frames` frames.
    pub fn at_rest(ri: f64, ro: f64, h: f64, frames: usize) -> Self {
        AnnulusPhantom {
            ri,
            ro,
            h,
            frames,
            lambda_z: vec![1.0; frames],
            ri_prime: vec![ri; frames],
            tau: vec![0.0; frames],
            rotation_z_deg: vec![0.0; frames],
            translation: vec![[0.0; 3]; frames],
        }
    }

    /// Pure longitudinal stretch `lambda(t) = 1 + (peak - 1) s(t)` with the
    /// volume-preserving inner radius.
    pub fn incompressible(lambda_peak: f64, frames: usize) -> Self {
        use presets::*;
        let mut ph = Self::at_rest(RI, RO, HEIGHT, frames);
        for t in 0..frames {
            let l = 1.0 + (lambda_peak - 1.0) * cycle_profile(t, frames);
            ph.lambda_z[t] = l;
            ph.ri_prime[t] = if t == 0 { RI } else { RI / l.sqrt() };
        }
        ph
    }

    pub fn preset(p: Preset) -> Self {
        Self::with_overrides(p, &PhantomOverrides::default()).expect("preset constants are valid")
    }

    /// A preset with some of its constants replaced.
    pub fn with_overrides(p: Preset, o: &PhantomOverrides) -> Result<Self> {
        use presets::*;
        o.validate(p)?;
        let frames = o.frames.unwrap_or(match p {
            Preset::Rigid => RIGID_FRAMES,
            _ => CYCLE_FRAMES,
        });
        let mut ph = match p {
            Preset::Incompressible => Self::incompressible(o.lambda_peak.unwrap_or(INCOMPRESSIBLE_LAMBDA), frames),
            Preset::Contractile => {
                let lambda = o.lambda_peak.unwrap_or(CONTRACTILE_LAMBDA);
                let ratio = o.ri_ratio.unwrap_or(CONTRACTILE_RI_RATIO);
                let mut ph = Self::at_rest(RI, RO, HEIGHT, frames);
                for t in 0..frames {
                    let s = cycle_profile(t, frames);
                    ph.lambda_z[t] = 1.0 + (lambda - 1.0) * s;
                    ph.ri_prime[t] = RI * (1.0 + (ratio - 1.0) * s);
                }
                ph
            }
            Preset::Rigid => {
                let mut ph = Self::at_rest(RI, RO, HEIGHT, frames);
                for t in 0..frames {
                    ph.rotation_z_deg[t] = RIGID_DEG_PER_FRAME * t as f64;
                    ph.translation[t] = RIGID_MM_PER_FRAME.map(|c| c * t as f64);
                }
                ph
            }
            Preset::Translate => {
                let mut ph = Self::at_rest(RI, RO, HEIGHT, frames);
                for t in 0..frames {
                    let s = cycle_profile(t, frames);
                    ph.translation[t] = TRANSLATE_PEAK.map(|c| c * s);
                }
                ph
            }
        };
        if let Some(tau) = o.torsion {
            for t in 0..frames {
                ph.tau[t] = tau * cycle_profile(t, frames);
            }
        }
        ph.validate()?;
        Ok(ph)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(format!("phantom: {m}")));
        if !(self.ri > 0.0 && self.ro > self.ri && self.h > 0.0) {
            return bad(format!(
                "need 0 < Ri < Ro and h > 0 (Ri={}, Ro={}, h={})",
                self.ri, self.ro, self.h
            ));
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        let n = self.frames;
        if self.lambda_z.len() != n
            || self.ri_prime.len() != n
            || self.tau.len() != n
            || self.rotation_z_deg.len() != n
            || self.translation.len() != n
        {
            return bad(format!("every per-frame parameter needs {n} entries"));
        }
        if self.lambda_z[0] != 1.0
            || self.ri_prime[0] != self.ri
            || self.tau[0] != 0.0
            || self.rotation_z_deg[0] != 0.0
            || self.translation[0] != [0.0; 3]
        {
            return bad("frame 0 must be the undeformed reference".into());
        }
        for t in 0..n {
            if !(self.lambda_z[t] > 0.0 && self.ri_prime[t] > 0.0) {
                return bad(format!("frame {t}: lambda_z and Ri' must be positive"));
            }
        }
        Ok(())
    }

    fn is_identity(&self, t: usize) -> bool {
        self.lambda_z[t] == 1.0
            && self.ri_prime[t] == self.ri
            && self.tau[t] == 0.0
            && self.rotation_z_deg[t] == 0.0
            && self.translation[t] == [0.0; 3]
    }

    fn annulus_map(&self, p: &Vec3, t: usize) -> Vec3 {
        let r = p.x.hypot(p.y);
        let theta = p.y.atan2(p.x);
        let l = self.lambda_z[t];
        let rp = (self.ri_prime[t].powi(2) + (r * r - self.ri * self.ri) / l).sqrt();
        let tp = theta + self.tau[t] * p.z;
        Vec3::new(rp * tp.cos(), rp * tp.sin(), l * p.z)
    }

    fn rigid(&self, p: &Vec3, t: usize) -> Vec3 {
        if self.rotation_z_deg[t] == 0.0 && self.translation[t] == [0.0; 3] {
            return *p;
        }
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), self.rotation_z_deg[t].to_radians());
        rot * p + Vec3::from(self.translation[t])
    }

    /// Deformed position of reference point `p` at frame `t`.
    pub fn motion_map(&self, p: &Vec3, t: usize) -> Result<Vec3> {
        if t >= self.frames {
            return Err(Error::Domain(format!("frame {t} outside 0..{}", self.frames)));
        }
        let r = p.x.hypot(p.y);
        let tol = 1e-9;
        if r < self.ri - tol || r > self.ro + tol || p.z < -tol || p.z > self.h + tol || !r.is_finite() {
            return Err(Error::Domain(format!(
                "point ({}, {}, {}) is outside the annulus",
                p.x, p.y, p.z
            )));
        }
        if self.is_identity(t) {
            return Ok(*p);
        }
        Ok(self.rigid(&self.annulus_map(p, t), t))
    }

    pub fn displacement(&self, p: &Vec3, t: usize) -> Result<Vec3> {
        if self.is_identity(t) {
            self.motion_map(p, t)?;
            return Ok(Vec3::zeros());
        }
        Ok(self.motion_map(p, t)? - p)
    }

    /// Green-Lagrange strain from central differences of [`Self::motion_map`].
    pub fn analytic_strain(&self, p: &Vec3, t: usize) -> Result<Mat3> {
        let h = FD_STEP;
        let r = p.x.hypot(p.y);
        let m = 2.0 * h;
        if r < self.ri + m || r > self.ro - m || p.z < m || p.z > self.h - m {
            return Err(Error::Domain(format!(
                "point ({}, {}, {}) is within {m} mm of the phantom boundary",
                p.x, p.y, p.z
            )));
        }
        let mut f = Mat3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let col = (self.motion_map(&(p + e), t)? - self.motion_map(&(p - e), t)?) / (2.0 * h);
            f.set_column(k, &col);
        }
        Ok(green_lagrange(&f))
    }

    /// Volume averages of the analytic `(Err, Ecc, Ell)` over each AHA
    /// segment of the wall between `z_apex` and `z_base`.
    pub fn segment_oracle(&self, t: usize, z_apex: f64, z_base: f64, theta0_deg: f64) -> Result<Vec<(u8, [f64; 3])>> {
        const GL: [(f64, f64); 4] = [
            (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
            (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        ];
        const THETA_SAMPLES: usize = 8;
        let third = (z_base - z_apex) / 3.0;
        let mut out = Vec::with_capacity(16);
        for id in 1u8..=16 {
            let (z_lo, sector0, width) = match id {
                1..=6 => (z_base - third, (id - 1) as f64, 60.0),
                7..=12 => (z_apex + third, (id - 7) as f64, 60.0),
                _ => (z_apex, (id - 13) as f64, 90.0),
            };
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for &(xr, wr) in &GL {
                let r = 0.5 * (self.ri + self.ro) + 0.5 * (self.ro - self.ri) * xr;
                for &(xz, wz) in &GL {
                    let z = z_lo + 0.5 * third * (1.0 + xz);
                    for k in 0..THETA_SAMPLES {
                        let deg = theta0_deg + width * (sector0 + (k as f64 + 0.5) / THETA_SAMPLES as f64);
                        let th = deg.to_radians();
                        let p = Vec3::new(r * th.cos(), r * th.sin(), z);
                        debug_assert_eq!(aha16_assign(&p, z_base, z_apex, theta0_deg).ok(), Some(id));
                        let e = self.analytic_strain(&p, t)?;
                        let proj = project_strain(&e, &local_directions(&p)?);
                        let w = wr * wz * r;
                        for c in 0..3 {
                            acc[c] += w * proj[c];
                        }
                        wsum += w;
                    }
                }
            }
            out.push((id, acc.map(|a| a / wsum)));
        }
        Ok(out)
    }

    /// `frame,segment,Err,Ecc,Ell` for every frame.
    pub fn oracle_csv(&self, z_apex: f64, z_base: f64, theta0_deg: f64) -> Result<String> {
        let mut s = String::from("frame,segment,Err,Ecc,Ell\n");
        for t in 0..self.frames {
            for (id, e) in self.segment_oracle(t, z_apex, z_base, theta0_deg)? {
                s.push_str(&format!("{t},{id},{},{},{}\n", e[0], e[1], e[2]));
            }
        }
        Ok(s)
    }
}

fn smoothstep(edge: f64, width: f64, x: f64) -> f64 {
    let t = ((x - edge) / width + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Material texture of the phantom at reference point `p`.
fn texture(ph: &AnnulusPhantom, p: &Vec3) -> f64 {
    let r = p.x.hypot(p.y);
    let pattern = 0.12 * (0.35 * p.x + 0.2 * p.y + 0.1 * p.z).sin() + 0.1 * (0.27 * p.y - 0.31 * p.x).cos();
    let wall = 0.45 + pattern;
    let background = 0.15 + 0.3 * pattern;
    let blood = 0.9;
    let inner = smoothstep(ph.ri, 1.5, r);
    let outer = smoothstep(ph.ro, 1.5, r);
    let v = blood + (wall - blood) * inner;
    v + (background - v) * outer
}

impl AnnulusPhantom {
    /// Reference position of the material found at `y` in frame `t`, or
    /// `None` inside the deformed cavity.
    pub fn inverse_map(&self, y: &Vec3, t: usize) -> Result<Option<Vec3>> {
        if t >= self.frames {
            return Err(Error::Domain(format!("frame {t} outside 0..{}", self.frames)));
        }
        if self.is_identity(t) {
            return Ok(Some(*y));
        }
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), self.rotation_z_deg[t].to_radians());
        let q = rot.inverse() * (y - Vec3::from(self.translation[t]));
        let z = q.z / self.lambda_z[t];
        let rp = q.x.hypot(q.y);
        let arg = self.ri * self.ri + self.lambda_z[t] * (rp * rp - self.ri_prime[t].powi(2));
        if arg < 0.0 {
            return Ok(None);
        }
        let r = arg.sqrt();
        let theta = q.y.atan2(q.x) - self.tau[t] * z;
        Ok(Some(Vec3::new(r * theta.cos(), r * theta.sin(), z)))
    }
}

/// Renders frame `t` of the phantom on the pixel grid of `geometry` with a
/// smooth material texture that moves with the tissue.
pub fn textured_annulus_image(ph: &AnnulusPhantom, geometry: &ViewGeometry, t: usize) -> Result<Image2D> {
    ph.validate()?;
    let (o, row, col) = (geometry.origin(), geometry.row_dir(), geometry.col_dir());
    let mut data = Vec::with_capacity(geometry.rows * geometry.cols);
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            let y = o + row * (r as f64 * geometry.row_spacing) + col * (c as f64 * geometry.col_spacing);
            let v = match ph.inverse_map(&y, t)? {
                None => 0.9,
                Some(p) if p.z < 0.0 || p.z > ph.h => 0.15,
                Some(p) => texture(ph, &p),
            };
            data.push(v);
        }
    }
    Image2D::new(geometry.cols, geometry.rows, data)
}

/// Sampling layout for [`sample_views`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewLayout {
    pub sax_slices: usize,
    /// Which long-axis planes to emit (`4CH` lies in y = 0, `2CH` in x = 0).
    pub lax_views: Vec<ViewKind>,
    pub sax_points: usize,
    /// Tracked points per wall on each long-axis contour.
    pub lax_points_per_wall: usize,
    pub pixel_spacing: f64,
    pub image_size: usize,
}

impl Default for ViewLayout {
    fn default() -> Self {
        ViewLayout {
            sax_slices: 9,
            lax_views: vec![ViewKind::FourChamber, ViewKind::TwoChamber],
            sax_points: 24,
            lax_points_per_wall: 17,
            pixel_spacing: 1.5,
            image_size: 128,
        }
    }
}

impl ViewLayout {
    /// Heights of the short-axis slices, basal first, centred in equal bands
    /// of the phantom height.
    pub fn sax_heights(&self, h: f64) -> Vec<f64> {
        let k = self.sax_slices as f64;
        (0..self.sax_slices).map(|i| h * (k - i as f64 - 0.5) / k).collect()
    }
}

/// Synthesizes a study bundle from a phantom: exact circular contours and
/// in-plane projected displacements in pixels.
pub fn sample_views(ph: &AnnulusPhantom, layout: &ViewLayout) -> Result<Study> {
    ph.validate()?;
    if layout.sax_slices < 2 || layout.sax_points < 3 || layout.lax_points_per_wall < 2 {
        return Err(Error::validation(
            "layout needs at least 2 SAX slices, 3 SAX points and 2 LAX points per wall",
        ));
    }
    if !(layout.pixel_spacing > 0.0) || layout.image_size < 8 {
        return Err(Error::validation(
            "layout pixel spacing must be positive and images at least 8 px",
        ));
    }
    let sp = layout.pixel_spacing;
    let half = layout.image_size as f64 * sp / 2.0;
    let mut views = Vec::new();

    let project = |g: &ViewGeometry, p: &Vec3| -> [f64; 2] {
        let d = p - g.origin();
        [d.dot(&g.row_dir()) / g.row_spacing, d.dot(&g.col_dir()) / g.col_spacing]
    };
    let track = |g: &ViewGeometry, pts: &[Vec3]| -> Result<Vec<Vec<[f64; 2]>>> {
        (0..ph.frames)
            .map(|t| {
                pts.iter()
                    .map(|p| {
                        let u = ph.displacement(p, t)?;
                        Ok([u.dot(&g.row_dir()) / g.row_spacing, u.dot(&g.col_dir()) / g.col_spacing])
                    })
                    .collect()
            })
            .collect()
    };

    for (k, z) in layout.sax_heights(ph.h).into_iter().enumerate() {
        let geometry = ViewGeometry {
            origin: [-half, -half, z],
            row_dir: [1.0, 0.0, 0.0],
            col_dir: [0.0, 1.0, 0.0],
            row_spacing: sp,
            col_spacing: sp,
            rows: layout.image_size,
            cols: layout.image_size,
        };
        let circle = |r: f64| -> Vec<Vec3> {
            (0..layout.sax_points)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / layout.sax_points as f64;
                    Vec3::new(r * a.cos(), r * a.sin(), z)
                })
                .collect()
        };
        let (endo, epi) = (circle(ph.ri), circle(ph.ro));
        let all: Vec<Vec3> = endo.iter().chain(&epi).copied().collect();
        views.push(TrackedView {
            kind: ViewKind::Sax,
            slice_index: k as i64,
            contours: Contours {
                endo: endo.iter().map(|p| project(&geometry, p)).collect(),
                epi: epi.iter().map(|p| project(&geometry, p)).collect(),
            },
            frames: ph.frames,
            displacements: track(&geometry, &all)?,
            geometry,
        });
    }

    for kind in &layout.lax_views {
        let (col_dir, origin) = match kind {
            ViewKind::FourChamber => ([1.0, 0.0, 0.0], [-half, 0.0, ph.h + 10.0]),
            ViewKind::TwoChamber => ([0.0, 1.0, 0.0], [0.0, -half, ph.h + 10.0]),
            ViewKind::Sax => return Err(Error::validation("lax_views may only list 4CH and 2CH")),
        };
        let geometry = ViewGeometry {
            origin,
            row_dir: [0.0, 0.0, -1.0],
            col_dir,
            row_spacing: sp,
            col_spacing: sp,
            rows: layout.image_size,
            cols: layout.image_size,
        };
        let axis = Vec3::from(col_dir);
        let m = layout.lax_points_per_wall;
        // one wall from base to apex, the opposite wall back up
        let wall = |r: f64| -> Vec<Vec3> {
            let down = (0..m).map(|i| -axis * r + Vec3::z() * (ph.h * (1.0 - i as f64 / (m - 1) as f64)));
            let up = (0..m).map(|i| axis * r + Vec3::z() * (ph.h * i as f64 / (m - 1) as f64));
            down.chain(up).collect()
        };
        let (endo, epi) = (wall(ph.ri), wall(ph.ro));
        let all: Vec<Vec3> = endo.iter().chain(&epi).copied().collect();
        views.push(TrackedView {
            kind: *kind,
            slice_index: 0,
            contours: Contours {
                endo: endo.iter().map(|p| project(&geometry, p)).collect(),
                epi: epi.iter().map(|p| project(&geometry, p)).collect(),
            },
            frames: ph.frames,
            displacements: track(&geometry, &all)?,
            geometry,
        });
    }
    let study = Study { views };
    study.validate()?;
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::{inplane_displacement_to_patient, pixel_to_patient};
    use rand::{Rng, SeedableRng};

    #[test]
    fn frame_zero_is_the_identity() {
        for p in [
            Preset::Incompressible,
            Preset::Contractile,
            Preset::Rigid,
            Preset::Translate,
        ] {
            let ph = AnnulusPhantom::preset(p);
            ph.validate().unwrap();
            let q = Vec3::new(20.0, 21.0, 40.0);
            assert_eq!(ph.motion_map(&q, 0).unwrap(), q);
            assert!(ph.analytic_strain(&q, 0).unwrap().norm() < 1e-9);
        }
    }

    #[test]
    fn volume_preserving_coupling() {
        let ph = AnnulusPhantom::incompressible(0.85, 20);
        assert!((ph.ri_prime[10] - 27.116).abs() < 1e-3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let (r, a, z) = (
                rng.gen_range(25.5..34.5),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(1.0..79.0),
            );
            let p = Vec3::new(r * a.cos(), r * a.sin(), z);
            let t = rng.gen_range(1..20);
            let e = ph.analytic_strain(&p, t).unwrap();
            let det = (e * 2.0 + Mat3::identity()).determinant().sqrt();
            assert!((det - 1.0).abs() < 1e-6, "det F = {det}");
        }
    }

    #[test]
    fn closed_form_strain_checks() {
        let ph = AnnulusPhantom::incompressible(0.85, 20);
        let p = Vec3::new(30.0, 0.0, 40.0);
        let e = ph.analytic_strain(&p, 10).unwrap();
        let d = local_directions(&p).unwrap();
        let [err, ecc, ell] = project_strain(&e, &d);
        assert!((ell - (0.85f64.powi(2) - 1.0) / 2.0).abs() < 1e-7);
        assert!((ecc - (1.0 / 0.85 - 1.0) / 2.0).abs() < 1e-7);
        // r' = r / sqrt(lambda) gives dr'/dr = 1 / sqrt(lambda) as well
        assert!((err - ecc).abs() < 1e-7);
    }

    #[test]
    fn contractile_signs_and_incompressibility() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        let p = Vec3::new(0.0, 30.0, 40.0);
        let e = ph.analytic_strain(&p, 10).unwrap();
        let [err, ecc, ell] = project_strain(&e, &local_directions(&p).unwrap());
        assert!(err > 0.25 && ecc < -0.1 && ell < -0.09, "{err} {ecc} {ell}");
        assert!(((e * 2.0 + Mat3::identity()).determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rigid_preset_is_strain_free() {
        let ph = AnnulusPhantom::preset(Preset::Rigid);
        let p = Vec3::new(-20.0, 22.0, 12.0);
        for t in 0..ph.frames {
            assert!(ph.analytic_strain(&p, t).unwrap().norm() < 1e-8);
        }
    }

    #[test]
    fn domain_errors() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        assert!(ph.motion_map(&Vec3::new(10.0, 0.0, 5.0), 3).is_err());
        assert!(ph.motion_map(&Vec3::new(30.0, 0.0, 81.0), 3).is_err());
        assert!(ph.analytic_strain(&Vec3::new(25.0, 0.0, 5.0), 3).is_err());
        assert!(ph.motion_map(&Vec3::new(30.0, 0.0, 5.0), 99).is_err());
    }

    #[test]
    fn sampled_views_reproduce_the_motion() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        let study = sample_views(&ph, &ViewLayout::default()).unwrap();
        assert_eq!(study.views.len(), 11);
        for v in &study.views {
            let pts: Vec<[f64; 2]> = v.contours.endo.iter().chain(&v.contours.epi).copied().collect();
            for t in [0, 7, 10] {
                for (p, d) in pts.iter().zip(&v.displacements[t]) {
                    let x = pixel_to_patient(&v.geometry, *p);
                    let u = ph.displacement(&x, t).unwrap();
                    let n = v.geometry.normal().normalize();
                    let inplane = u - n * u.dot(&n);
                    assert!((inplane_displacement_to_patient(&v.geometry, *d) - inplane).norm() < 1e-9);
                }
            }
        }
        assert!(study.views[0].displacements[0].iter().all(|d| *d == [0.0, 0.0]));
    }

    #[test]
    fn translate_preset_reports_the_projected_vector() {
        let ph = AnnulusPhantom::preset(Preset::Translate);
        let study = sample_views(&ph, &ViewLayout::default()).unwrap();
        for v in &study.views {
            let first = v.displacements[6][0];
            assert!(v.displacements[6]
                .iter()
                .all(|d| (d[0] - first[0]).abs() < 1e-12 && (d[1] - first[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        let a = sample_views(&ph, &ViewLayout::default()).unwrap().to_json();
        let b = sample_views(&ph, &ViewLayout::default()).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_map_undoes_the_motion() {
        for preset in [Preset::Contractile, Preset::Rigid, Preset::Translate] {
            let mut ph = AnnulusPhantom::preset(preset);
            ph.tau = (0..ph.frames).map(|t| 0.002 * t as f64).collect();
            let p = Vec3::new(-18.0, 23.0, 37.0);
            for t in 0..ph.frames {
                let back = ph.inverse_map(&ph.motion_map(&p, t).unwrap(), t).unwrap().unwrap();
                assert!((back - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rendered_frames_follow_the_tissue() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        let layout = ViewLayout::default();
        let study = sample_views(&ph, &layout).unwrap();
        let g = &study.views[4].geometry;
        let a = textured_annulus_image(&ph, g, 0).unwrap();
        let b = textured_annulus_image(&ph, g, 6).unwrap();
        assert_eq!((a.width(), a.height()), (128, 128));
        // a material point keeps its intensity
        let p = Vec3::new(30.0 * 0.6, 30.0 * 0.8, g.origin[2]);
        let q = ph.motion_map(&p, 6).unwrap();
        let px = |x: &Vec3| {
            let d = x - g.origin();
            [d.dot(&g.row_dir()) / g.row_spacing, d.dot(&g.col_dir()) / g.col_spacing]
        };
        assert!((a.sample(px(&p)) - texture(&ph, &p)).abs() < 0.02);
        // out-of-plane motion changes z; compare against the reference texture at the mapped point
        let back = ph.inverse_map(&Vec3::new(q.x, q.y, g.origin[2]), 6).unwrap().unwrap();
        assert!((b.sample(px(&q)) - texture(&ph, &back)).abs() < 0.02);
    }

    #[test]
    fn oracle_is_axisymmetric_for_the_annulus() {
        let ph = AnnulusPhantom::preset(Preset::Contractile);
        let seg = ph.segment_oracle(10, 4.0, 76.0, 0.0).unwrap();
        assert_eq!(seg.len(), 16);
        for (_, e) in &seg[1..] {
            for c in 0..3 {
                assert!((e[c] - seg[0].1[c]).abs() < 1e-6);
            }
        }
        let csv = ph.oracle_csv(4.0, 76.0, 0.0).unwrap();
        assert_eq!(csv.lines().count(), 1 + 16 * ph.frames);
    }

    #[test]
    fn empty_overrides_keep_the_preset() {
        for p in [
            Preset::Incompressible,
            Preset::Contractile,
            Preset::Rigid,
            Preset::Translate,
        ] {
            let ph = AnnulusPhantom::with_overrides(p, &PhantomOverrides::default()).unwrap();
            assert_eq!(ph, AnnulusPhantom::preset(p));
        }
        assert!(PhantomOverrides::default().is_empty());
        assert_eq!(serde_json::to_string(&PhantomOverrides::default()).unwrap(), "{}");
    }

    #[test]
    fn overrides_replace_preset_constants() {
        let o = PhantomOverrides {
            frames: Some(8),
            lambda_peak: Some(0.8),
            ri_ratio: Some(0.7),
            torsion: Some(0.01),
        };
        let ph = AnnulusPhantom::with_overrides(Preset::Contractile, &o).unwrap();
        assert_eq!(ph.frames, 8);
        assert!((ph.lambda_z[4] - 0.8).abs() < 1e-12);
        assert!((ph.ri_prime[4] - 0.7 * presets::RI).abs() < 1e-12);
        assert!((ph.tau[4] - 0.01).abs() < 1e-12);
        assert_eq!(ph.tau[0], 0.0);
        let q = Vec3::new(0.0, 30.0, 40.0);
        let e = ph.analytic_strain(&q, 4).unwrap();
        assert!(e.norm() > 0.0);
    }

    #[test]
    fn overrides_are_checked_against_the_preset() {
        let bad = [
            (
                Preset::Rigid,
                PhantomOverrides {
                    lambda_peak: Some(0.9),
                    ..Default::default()
                },
            ),
            (
                Preset::Incompressible,
                PhantomOverrides {
                    ri_ratio: Some(0.9),
                    ..Default::default()
                },
            ),
            (
                Preset::Contractile,
                PhantomOverrides {
                    lambda_peak: Some(2.0),
                    ..Default::default()
                },
            ),
            (
                Preset::Contractile,
                PhantomOverrides {
                    ri_ratio: Some(0.1),
                    ..Default::default()
                },
            ),
            (
                Preset::Translate,
                PhantomOverrides {
                    frames: Some(1),
                    ..Default::default()
                },
            ),
            (
                Preset::Translate,
                PhantomOverrides {
                    torsion: Some(f64::NAN),
                    ..Default::default()
                },
            ),
        ];
        for (p, o) in bad {
            let err = AnnulusPhantom::with_overrides(p, &o).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{o:?}");
        }
        let unknown = serde_json::from_str::<PhantomOverrides>(r#"{"height": 60}"#);
        assert!(unknown.is_err());
    }
}
