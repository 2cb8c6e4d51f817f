use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::lie::Pose;

use super::camera::Camera;
use super::feature::{FeatureKind, FeatureMatch};
use super::image::{DepthMap, GrayImage};
use super::patch::{refine_patch, Patch, RefineConfig, PATCH_HALF};
use super::warp::{warp_affine, warp_with_depth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiDirectConfig {
    /// Edge of the selection grid cell, pixels; one feature per cell at most.
    pub cell: usize,
    /// Minimum smallest structure-tensor eigenvalue of a selected pixel.
    pub min_corner: f64,
    /// Pixel variance attached to refined matches, px^2.
    pub sigma_p: f64,
    pub refine: RefineConfig,
}

impl Default for SemiDirectConfig {
    fn default() -> Self {
        SemiDirectConfig {
            cell: 48,
            min_corner: 20.0,
            sigma_p: 0.25,
            refine: RefineConfig::default(),
        }
    }
}

fn corner_score(img: &GrayImage, x: usize, y: usize) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for yy in y - 2..=y + 2 {
        for xx in x - 2..=x + 2 {
            let gx = 0.5 * (img.get(xx + 1, yy) - img.get(xx - 1, yy)) as f64;
            let gy = 0.5 * (img.get(xx, yy + 1) - img.get(xx, yy - 1)) as f64;
            a += gx * gx;
            b += gx * gy;
            c += gy * gy;
        }
    }
    let (a, b, c) = (a / 25.0, b / 25.0, c / 25.0);
    0.5 * (a + c - ((a - c) * (a - c) + 4.0 * b * b).sqrt())
}

/// Picks at most one well-textured pixel with valid depth per grid cell,
/// keeping the patch and its search window inside the image.
pub fn select_semidirect(image: &GrayImage, depth: &DepthMap, cfg: &SemiDirectConfig) -> Vec<Vector2<f64>> {
    let margin = (PATCH_HALF + cfg.refine.search_radius + 2) as usize;
    let mut out = Vec::new();
    if image.width <= 2 * margin || image.height <= 2 * margin {
        return out;
    }
    let mut cy = margin;
    while cy < image.height - margin {
        let mut cx = margin;
        while cx < image.width - margin {
            let mut best: Option<(f64, usize, usize)> = None;
            for y in (cy..(cy + cfg.cell).min(image.height - margin)).step_by(2) {
                for x in (cx..(cx + cfg.cell).min(image.width - margin)).step_by(2) {
                    if depth.get(x, y).is_none() {
                        continue;
                    }
                    let s = corner_score(image, x, y);
                    if s >= cfg.min_corner && best.is_none_or(|(b, _, _)| s > b) {
                        best = Some((s, x, y));
                    }
                }
            }
            if let Some((_, x, y)) = best {
                out.push(Vector2::new(x as f64, y as f64));
            }
            cx += cfg.cell;
        }
        cy += cfg.cell;
    }
    out
}

/// Warps reference pixels into the source image with the current estimate,
/// refines each by patch alignment and returns the accepted correspondences.
#[allow(clippy::too_many_arguments)]
pub fn track_semidirect(
    points: &[Vector2<f64>],
    reference: &GrayImage,
    depth: &DepthMap,
    source: &GrayImage,
    cam: &Camera,
    source_from_reference: &Pose,
    cfg: &SemiDirectConfig,
    pair_index: usize,
) -> Vec<FeatureMatch> {
    let mut out = Vec::new();
    for u_r in points {
        let Some(d) = depth.sample(u_r) else { continue };
        let Some((u_s_prime, _)) = warp_with_depth(u_r, d, source_from_reference, cam) else {
            continue;
        };
        if !cam.contains(&u_s_prime, 0.0) {
            continue;
        }
        let affine = warp_affine(u_r, depth, source_from_reference, cam)
            .and_then(|a| a.try_inverse())
            .unwrap_or_else(Matrix2::identity);
        let Some(patch) = Patch::sample(reference, u_r, &affine, 1) else {
            continue;
        };
        if let Ok(r) = refine_patch(&patch, source, &u_s_prime, &cfg.refine) {
            out.push(FeatureMatch::from_pixels(
                cam,
                &(u_s_prime + r.delta),
                u_r,
                FeatureKind::SemiDirect,
                cfg.sigma_p,
                pair_index,
            ));
        }
    }
    out
}
