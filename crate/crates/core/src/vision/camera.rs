use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{Covariance6, Pose};
use crate::trajectory::Trajectory;

/// Pinhole camera rigidly mounted on the LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-LiDAR extrinsics.
    pub lidar_from_camera: Pose,
    /// Covariance of the left perturbation of the extrinsics.
    pub extrinsic_covariance: Covariance6,
    /// Mean of the camera-to-LiDAR time offset, seconds.
    pub time_offset_mean: f64,
    /// Variance of the time offset, s^2.
    pub time_offset_variance: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            fx: 480.0,
            fy: 480.0,
            cx: 479.5,
            cy: 269.5,
            width: 960,
            height: 540,
            lidar_from_camera: default_extrinsics(),
            extrinsic_covariance: Covariance6::zeros(),
            time_offset_mean: 0.0,
            time_offset_variance: 0.0,
        }
    }
}

/// Forward-looking camera (optical axis along LiDAR +x) with a small lever arm.
pub fn default_extrinsics() -> Pose {
    let r = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    Pose::new(r, Vector3::new(0.08, 0.0, 0.06))
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if !self.extrinsic_covariance.is_valid() {
            return Err(Error::InvalidArgument("extrinsic covariance is not PSD".into()));
        }
        if self.time_offset_variance < 0.0 {
            return Err(Error::InvalidArgument("negative time offset variance".into()));
        }
        Ok(())
    }

    /// Homogeneous normalized ray `(x, y, 1)` of a pixel.
    pub fn normalized(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn pixel(&self, ray: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * ray.x / ray.z + self.cx, self.fy * ray.y / ray.z + self.cy)
    }

    /// Pixel of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > 1e-6).then(|| self.pixel(p))
    }

    /// Whether a pixel lies at least `margin` pixels inside the image.
    pub fn contains(&self, pixel: &Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.width as f64 - 1.0 - margin
            && pixel.y <= self.height as f64 - 1.0 - margin
    }

    /// Camera-frame point at z-depth `depth` behind a pixel.
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        self.normalized(pixel) * depth
    }
}

/// World-from-camera pose at `tau + dtau`: `T_wL(tau + dtau) * T_LC`.
pub fn camera_pose(traj: &Trajectory, cam: &Camera, tau: f64, dtau: f64) -> Result<Pose> {
    Ok(traj.pose_at(tau + dtau)? * cam.lidar_from_camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp, log, Twist};

    fn spinning_trajectory(rate: f64) -> Trajectory {
        let knots = (0..=200)
            .map(|i| {
                let t = i as f64 * 0.05;
                let xi = Twist::new(Vector3::new(0.5 * t, 0.0, 0.0), Vector3::new(0.0, 0.0, rate * t));
                (t, exp(&xi).unwrap())
            })
            .collect();
        Trajectory::new(knots).unwrap()
    }

    #[test]
    fn projection_round_trip() {
        let cam = Camera::default();
        let px = Vector2::new(123.25, 400.5);
        let p = cam.back_project(&px, 3.7);
        assert!((p.z - 3.7).abs() < 1e-12);
        assert!((cam.project(&p).unwrap() - px).norm() < 1e-12);
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn default_camera_looks_along_lidar_x() {
        let cam = Camera::default();
        let axis = cam.lidar_from_camera.rotate(&Vector3::z());
        assert!((axis - Vector3::x()).norm() < 1e-15);
        assert!(cam.validate().is_ok());
    }

    #[test]
    fn zero_offset_identity_extrinsics_is_trajectory_pose() {
        let traj = spinning_trajectory(0.3);
        let cam = Camera {
            lidar_from_camera: Pose::identity(),
            ..Camera::default()
        };
        assert_eq!(camera_pose(&traj, &cam, 4.3, 0.0).unwrap(), traj.pose_at(4.3).unwrap());
    }

    #[test]
    fn static_segment_ignores_time_offset() {
        let p = exp(&Twist::from_slice(&[1.0, 2.0, 0.5, 0.1, 0.2, 0.3])).unwrap();
        let traj = Trajectory::new(vec![(0.0, p), (5.0, p), (10.0, p)]).unwrap();
        let cam = Camera::default();
        let a = camera_pose(&traj, &cam, 5.0, 0.0).unwrap();
        for d in [-0.2, -0.01, 0.03, 0.4] {
            assert_eq!(camera_pose(&traj, &cam, 5.0, d).unwrap(), a);
        }
    }

    #[test]
    fn time_offset_effect_scales_with_angular_rate() {
        let cam = Camera::default();
        let angle_change = |rate: f64| {
            let traj = spinning_trajectory(rate);
            let a = camera_pose(&traj, &cam, 5.0, 0.0).unwrap();
            let b = camera_pose(&traj, &cam, 5.0, 0.01).unwrap();
            log(&(a.inverse() * b)).unwrap().phi().norm()
        };
        let base = angle_change(0.5);
        assert!((base - 0.005).abs() < 1e-9);
        assert!((angle_change(1.0) / base - 2.0).abs() < 1e-6);
        assert!((angle_change(2.0) / base - 4.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_offset_is_an_error() {
        let traj = spinning_trajectory(0.3);
        assert!(camera_pose(&traj, &Camera::default(), 9.99, 0.02).is_err());
    }
}
