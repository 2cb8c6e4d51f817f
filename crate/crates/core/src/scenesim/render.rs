use nalgebra::{Vector2, Vector3};

use crate::lie::Pose;
use crate::vision::{Camera, DepthMap, GrayImage};

use super::scene::{texture, Scene};

/// Ray-casts the scene from a world-from-camera pose. Pixels that see nothing
/// get intensity 0 and no depth.
pub fn render_view(scene: &Scene, cam: &Camera, pose: &Pose) -> (GrayImage, DepthMap) {
    let mut image = GrayImage::new(cam.width, cam.height);
    let mut depth = DepthMap::new(cam.width, cam.height);
    let o = pose.translation;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam.normalized(&Vector2::new(x as f64, y as f64));
            let d = pose.rotate(&ray.normalize());
            let Some((t, i)) = scene.raycast(&o, &d) else { continue };
            let p = o + d * t;
            let q = &scene.quads[i];
            let z = t / ray.norm();
            let cos = q.normal().dot(&d).abs().max(0.05);
            let footprint = z / cam.fx / cos;
            image.set(x, y, texture(q.texture_seed, &q.local(&p), footprint) as f32);
            depth.set(x, y, z);
        }
    }
    (image, depth)
}

/// Camera-frame point of a landmark when it is in view and unoccluded.
pub fn landmark_pixel(scene: &Scene, cam: &Camera, pose: &Pose, landmark: &Vector3<f64>) -> Option<Vector2<f64>> {
    let local = pose.inverse().transform_point(landmark);
    let px = cam.project(&local)?;
    if !cam.contains(&px, 1.0) {
        return None;
    }
    let diff = landmark - pose.translation;
    let dist = diff.norm();
    let (t, _) = scene.raycast(&pose.translation, &(diff / dist))?;
    ((t - dist).abs() < 1e-6 * dist.max(1.0)).then_some(px)
}
