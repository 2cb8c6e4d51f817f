use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Row-major grayscale image; pixel `(x, y)` is sampled at its center.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Whether bilinear sampling at `p` stays inside the image.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Bilinear intensity; `None` outside the image.
    pub fn sample(&self, p: &Vector2<f64>) -> Option<f64> {
        self.sample_with_gradient(p).map(|(v, _)| v)
    }

    /// Bilinear intensity and its analytic gradient inside the enclosing cell.
    pub fn sample_with_gradient(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)> {
        if !self.contains(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let i00 = self.get(x0, y0) as f64;
        let i10 = self.get(x0 + 1, y0) as f64;
        let i01 = self.get(x0, y0 + 1) as f64;
        let i11 = self.get(x0 + 1, y0 + 1) as f64;
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        let v = top + fy * (bottom - top);
        let gx = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let gy = bottom - top;
        Some((v, Vector2::new(gx, gy)))
    }

    /// Binary 8-bit PGM (P5), intensities clamped to [0, 255].
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(pgm_error("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| pgm_error("bad header"))?);
        }
        if fields[0] != "P5" {
            return Err(pgm_error("only binary P5 images are supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| pgm_error("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(pgm_error("only 8-bit images are supported"));
        }
        pos += 1;
        let body = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| pgm_error("truncated data"))?;
        Ok(GrayImage {
            width,
            height,
            data: body.iter().map(|&b| b as f32).collect(),
        })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

fn pgm_error(msg: &str) -> Error {
    Error::Parse {
        line: 0,
        message: format!("pgm: {msg}"),
    }
}

/// Per-pixel z-depth in meters; non-positive or non-finite entries are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.data[y * self.width + x] = d;
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.data[y * self.width + x];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    /// Bilinear depth, only where all four neighbours are valid.
    pub fn sample(&self, p: &Vector2<f64>) -> Option<f64> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let x0 = p.x.floor() as usize;
        let y0 = p.y.floor() as usize;
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        if fx == 0.0 && fy == 0.0 {
            return self.get(x0, y0);
        }
        let d00 = self.get(x0, y0)?;
        let d10 = self.get(x0 + 1, y0)?;
        let d01 = self.get(x0, y0 + 1)?;
        let d11 = self.get(x0 + 1, y0 + 1)?;
        let top = d00 + fx * (d10 - d00);
        let bottom = d01 + fx * (d11 - d01);
        Some(top + fy * (bottom - top))
    }

    pub fn valid_fraction(&self) -> f64 {
        let n = self.data.iter().filter(|d| d.is_finite() && **d > 0.0).count();
        n as f64 / self.data.len().max(1) as f64
    }
}
