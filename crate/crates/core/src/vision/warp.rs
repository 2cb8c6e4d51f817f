use nalgebra::{Matrix2, Vector2, Vector3};

use crate::lie::Pose;

use super::camera::Camera;
use super::image::DepthMap;

/// Moves a reference pixel into the source image through the reference depth:
/// `pi(K (R p(u_r, D_r) + t))` with `(R, t)` mapping reference-camera points
/// to source-camera points. `None` without depth, behind the source camera or
/// outside the source image.
pub fn warp_feature(
    u_r: &Vector2<f64>,
    depth: &DepthMap,
    source_from_reference: &Pose,
    cam: &Camera,
) -> Option<Vector2<f64>> {
    let d = depth.sample(u_r)?;
    let (px, _) = warp_with_depth(u_r, d, source_from_reference, cam)?;
    cam.contains(&px, 0.0).then_some(px)
}

/// Warp of a pixel at a known reference depth; also returns the source depth.
pub fn warp_with_depth(
    u_r: &Vector2<f64>,
    depth: f64,
    source_from_reference: &Pose,
    cam: &Camera,
) -> Option<(Vector2<f64>, f64)> {
    let p: Vector3<f64> = source_from_reference.transform_point(&cam.back_project(u_r, depth));
    cam.project(&p).map(|px| (px, p.z))
}

/// Inverse projection from the source image back to the reference image.
pub fn inverse_warp(
    u_s: &Vector2<f64>,
    source_depth: f64,
    source_from_reference: &Pose,
    cam: &Camera,
) -> Option<Vector2<f64>> {
    warp_with_depth(u_s, source_depth, &source_from_reference.inverse(), cam).map(|(px, _)| px)
}

/// `d W / d u_r` by central differences over the depth map, one pixel apart.
pub fn warp_affine(
    u_r: &Vector2<f64>,
    depth: &DepthMap,
    source_from_reference: &Pose,
    cam: &Camera,
) -> Option<Matrix2<f64>> {
    let w = |p: Vector2<f64>| {
        let d = depth.sample(&p)?;
        warp_with_depth(&p, d, source_from_reference, cam).map(|(px, _)| px)
    };
    let dx = Vector2::new(1.0, 0.0);
    let dy = Vector2::new(0.0, 1.0);
    let cx = (w(u_r + dx)? - w(u_r - dx)?) / 2.0;
    let cy = (w(u_r + dy)? - w(u_r - dy)?) / 2.0;
    let a = Matrix2::from_columns(&[cx, cy]);
    (a.determinant().abs() > 1e-6).then_some(a)
}
