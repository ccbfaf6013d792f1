//! Grayscale images: bilinear sampling, pyramids and PGM / `.f32grid` I/O.
//!
//! Pixel coordinates are `[row, col]` with integer values at pixel centres.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_IMAGE_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    /// Row-major `height x width` image. Any positive size is accepted here;
    /// [`Image2D::check_registrable`] enforces the minimum for registration.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image must have at least one pixel"));
        }
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "image {width}x{height} needs {} intensities, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("image intensity {i} is not finite")));
        }
        Ok(Image2D { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn check_registrable(&self) -> Result<()> {
        if self.width < MIN_IMAGE_SIZE || self.height < MIN_IMAGE_SIZE {
            return Err(Error::validation(format!(
                "image {}x{} is smaller than {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (self.height - 1) as f64 && p[1] <= (self.width - 1) as f64
    }

    pub fn clamp_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(0.0, (self.height - 1) as f64),
            p[1].clamp(0.0, (self.width - 1) as f64),
        ]
    }

    /// Bilinear sample with nearest-edge clamping, and its gradient
    /// `[d/drow, d/dcol]` (zero along a clamped axis).
    pub fn sample_with_gradient(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (r, gr_on) = clamp_axis(p[0], self.height);
        let (c, gc_on) = clamp_axis(p[1], self.width);
        let r0 = (r.floor() as usize).min(self.height.saturating_sub(2));
        let c0 = (c.floor() as usize).min(self.width.saturating_sub(2));
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let (fr, fc) = (r - r0 as f64, c - c0 as f64);
        let (v00, v01, v10, v11) = (self.get(r0, c0), self.get(r0, c1), self.get(r1, c0), self.get(r1, c1));
        let top = v00 + fc * (v01 - v00);
        let bottom = v10 + fc * (v11 - v10);
        let value = top + fr * (bottom - top);
        let d_row = if gr_on && r1 != r0 { bottom - top } else { 0.0 };
        let d_col = if gc_on && c1 != c0 {
            (v01 - v00) + fr * ((v11 - v10) - (v01 - v00))
        } else {
            0.0
        };
        (value, [d_row, d_col])
    }

    pub fn sample(&self, p: [f64; 2]) -> f64 {
        self.sample_with_gradient(p).0
    }

    /// Halves both dimensions by 2x2 box averaging (odd trailing rows and
    /// columns are averaged with themselves).
    pub fn downsample(&self) -> Image2D {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let rows = [2 * r, (2 * r + 1).min(self.height - 1)];
                let cols = [2 * c, (2 * c + 1).min(self.width - 1)];
                let mut s = 0.0;
                for rr in rows {
                    for cc in cols {
                        s += self.get(rr, cc);
                    }
                }
                data.push(s / 4.0);
            }
        }
        Image2D {
            width: w,
            height: h,
            data,
        }
    }

    pub fn read(path: &Path) -> Result<Image2D> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => read_pgm(path),
            Some("f32grid") => read_f32grid(path),
            _ => Err(Error::validation(format!(
                "{}: unsupported image format (expected .pgm or .f32grid)",
                path.display()
            ))),
        }
    }
}

fn clamp_axis(x: f64, len: usize) -> (f64, bool) {
    let hi = (len - 1) as f64;
    if x < 0.0 {
        (0.0, false)
    } else if x > hi {
        (hi, false)
    } else {
        (x, true)
    }
}

fn malformed(path: &Path, msg: &str) -> Error {
    Error::validation(format!("{}: {msg}", path.display()))
}

/// Reads a binary (P5) or ASCII (P2) PGM. Intensities are returned as raw
/// gray levels.
pub fn read_pgm(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| malformed(path, "empty file"))?;
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(path, &format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(path, "maxval must be in 1..=65535"));
    }
    let n = width * height;
    let data: Vec<f64> = match magic.as_str() {
        "P2" => (0..n).map(|_| num("pixel").map(|v| v as f64)).collect::<Result<_>>()?,
        "P5" => {
            let start = pos + 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let body = bytes
                .get(start..start + n * bpp)
                .ok_or_else(|| malformed(path, "truncated pixel data"))?;
            if bpp == 1 {
                body.iter().map(|&b| b as f64).collect()
            } else {
                body.chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64)
                    .collect()
            }
        }
        _ => return Err(malformed(path, "not a P2/P5 PGM")),
    };
    Image2D::new(width, height, data).map_err(|e| malformed(path, &e.to_string()))
}

/// Writes a binary PGM, rescaling intensities linearly to 0..=255.
pub fn write_pgm(image: &Image2D, path: &Path) -> Result<()> {
    let (lo, hi) = image
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|v| ((v - lo) * scale).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `.f32grid`: ASCII `width height` line, then little-endian f32 row-major.
pub fn read_f32grid(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_f32grid(&bytes, path)
}

pub fn parse_f32grid(bytes: &[u8], path: &Path) -> Result<Image2D> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| malformed(path, "header is not ASCII"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| malformed(path, "header must be `width height`"))?;
    let [width, height] = dims[..] else {
        return Err(malformed(path, "header must be `width height`"));
    };
    let body = &bytes[nl + 1..];
    if body.len() != width * height * 4 {
        return Err(malformed(
            path,
            &format!("expected {} payload bytes, found {}", width * height * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Image2D::new(width, height, data).map_err(|e| malformed(path, &e.to_string()))
}

pub fn write_f32grid(image: &Image2D, path: &Path) -> Result<()> {
    let mut out = format!("{} {}\n", image.width, image.height).into_bytes();
    for v in &image.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads every `.pgm` / `.f32grid` in `dir`, ordered by file name.
pub fn read_image_dir(dir: &Path) -> Result<Vec<Image2D>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "f32grid")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "{}: no .pgm or .f32grid images",
            dir.display()
        )));
    }
    paths.iter().map(|p| Image2D::read(p)).collect()
}
