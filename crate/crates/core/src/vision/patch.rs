use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;

pub const PATCH_SIZE: usize = 21;
pub const PATCH_HALF: i64 = (PATCH_SIZE / 2) as i64;

/// Zero-mean, unit-variance intensity grid around a center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Vec<f64>,
    pub center: Vector2<f64>,
    pub image_id: usize,
}

fn normalize(values: &mut [f64]) -> Option<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 1e-6) {
        return None;
    }
    let sd = var.sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    Some(())
}

fn offsets() -> impl Iterator<Item = Vector2<f64>> {
    (-PATCH_HALF..=PATCH_HALF).flat_map(|y| (-PATCH_HALF..=PATCH_HALF).map(move |x| Vector2::new(x as f64, y as f64)))
}

impl Patch {
    /// Samples `image` at `center + A o` for the patch offsets `o`.
    /// `None` when the window leaves the image or is flat.
    pub fn sample(image: &GrayImage, center: &Vector2<f64>, affine: &Matrix2<f64>, image_id: usize) -> Option<Patch> {
        let mut data = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
        for o in offsets() {
            data.push(image.sample(&(center + affine * o))?);
        }
        normalize(&mut data)?;
        Some(Patch {
            data,
            center: *center,
            image_id,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Half width of the integer correlation search, pixels.
    pub search_radius: i64,
    pub max_iterations: usize,
    /// Mean squared difference of normalized patches above which a match is rejected.
    pub max_score: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            search_radius: 10,
            max_iterations: 20,
            max_score: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub delta: Vector2<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefineFailure {
    /// The search window leaves the source image.
    Clipped,
    /// The source window has no texture.
    Flat,
    Rejected {
        score: f64,
    },
}

/// Finds `delta` such that the source window at `u_s_prime + delta` best
/// matches the reference patch: an integer correlation search over
/// `+-search_radius` followed by sub-pixel Gauss-Newton on the normalized
/// intensity difference with bilinear interpolation.
pub fn refine_patch(
    reference: &Patch,
    source: &GrayImage,
    u_s_prime: &Vector2<f64>,
    cfg: &RefineConfig,
) -> Result<Refinement, RefineFailure> {
    let r = cfg.search_radius;
    let span = (2 * (r + PATCH_HALF) + 1) as usize;
    let reach = (r + PATCH_HALF) as f64;
    let corner = u_s_prime - Vector2::new(reach, reach);
    if !source.contains(&corner) || !source.contains(&(u_s_prime + Vector2::new(reach, reach))) {
        return Err(RefineFailure::Clipped);
    }
    let mut grid = vec![0.0; span * span];
    for y in 0..span {
        for x in 0..span {
            grid[y * span + x] = source
                .sample(&(corner + Vector2::new(x as f64, y as f64)))
                .ok_or(RefineFailure::Clipped)?;
        }
    }

    let n = (PATCH_SIZE * PATCH_SIZE) as f64;
    let mut best: Option<(f64, i64, i64)> = None;
    for sy in -r..=r {
        for sx in -r..=r {
            let (mut s, mut s2, mut sp) = (0.0, 0.0, 0.0);
            let mut k = 0;
            for oy in 0..PATCH_SIZE as i64 {
                let row = ((sy + r + oy) as usize) * span + (sx + r) as usize;
                for ox in 0..PATCH_SIZE {
                    let v = grid[row + ox];
                    s += v;
                    s2 += v * v;
                    sp += v * reference.data[k];
                    k += 1;
                }
            }
            let var = s2 / n - (s / n) * (s / n);
            if !(var > 1e-6) {
                continue;
            }
            // The reference patch has zero mean, so the source mean drops out.
            let ncc = sp / (n * var.sqrt());
            if best.is_none_or(|(b, _, _)| ncc > b) {
                best = Some((ncc, sx, sy));
            }
        }
    }
    let Some((_, sx, sy)) = best else {
        return Err(RefineFailure::Flat);
    };

    let mut delta = Vector2::new(sx as f64, sy as f64);
    let mut score = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let Some((values, grads)) = window(source, &(u_s_prime + delta)) else {
            return Err(RefineFailure::Clipped);
        };
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if !(var > 1e-6) {
            return Err(RefineFailure::Flat);
        }
        let sd = var.sqrt();
        let mut h = Matrix2::zeros();
        let mut g = Vector2::zeros();
        let mut cost = 0.0;
        for k in 0..values.len() {
            let e = (values[k] - mean) / sd - reference.data[k];
            let j = grads[k] / sd;
            h += j * j.transpose();
            g += j * e;
            cost += e * e;
        }
        score = cost / n;
        let Some(step) = h.try_inverse().map(|hi| -(hi * g)) else {
            break;
        };
        let step = if step.norm() > 1.0 { step / step.norm() } else { step };
        if (delta + step).amax() > r as f64 + 1.0 {
            break;
        }
        delta += step;
        if step.norm() < 1e-4 {
            break;
        }
    }
    if let Some((values, _)) = window(source, &(u_s_prime + delta)) {
        let mut v = values;
        if normalize(&mut v).is_some() {
            score = v
                .iter()
                .zip(&reference.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n;
        }
    }
    if !(score <= cfg.max_score) {
        return Err(RefineFailure::Rejected { score });
    }
    Ok(Refinement { delta, score })
}

fn window(image: &GrayImage, center: &Vector2<f64>) -> Option<(Vec<f64>, Vec<Vector2<f64>>)> {
    let mut values = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
    let mut grads = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
    for o in offsets() {
        let (v, g) = image.sample_with_gradient(&(center + o))?;
        values.push(v);
        grads.push(g);
    }
    Some((values, grads))
}
