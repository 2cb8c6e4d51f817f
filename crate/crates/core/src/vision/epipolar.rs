use nalgebra::{Matrix3, Matrix6, RowVector3, Vector2, Vector3, Vector6};

use crate::error::Result;
use crate::lie::{self, hat, Covariance6, Pose, Twist};
use crate::trajectory::{PlacePair, Trajectory};

use super::camera::Camera;
use super::feature::FeatureMatch;

/// Step of the central differences taken in the camera time offset, seconds.
pub const TIME_STEP: f64 = 1e-4;

/// Baselines shorter than this leave the epipolar residual undefined.
pub const MIN_BASELINE: f64 = 1e-9;

/// Camera poses of one place pair relative to the LiDAR frames at `tau_s`
/// and `tau_r`, with the mean time offset and two offsets `+-TIME_STEP`
/// around it for the temporal derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCameras {
    pub fx: f64,
    pub fy: f64,
    /// LiDAR-from-camera extrinsics.
    pub extrinsics: Pose,
    pub extrinsic_covariance: Covariance6,
    pub time_offset_variance: f64,
    /// `T(tau_s)^-1 T(tau_s + mu + d)` for `d = 0, -h, +h`.
    pub source_motion: [Pose; 3],
    pub reference_motion: [Pose; 3],
}

impl PairCameras {
    pub fn new(traj: &Trajectory, cam: &Camera, pair: &PlacePair) -> Result<Self> {
        let motion = |tau: f64| -> Result<[Pose; 3]> {
            let mu = cam.time_offset_mean;
            Ok([
                traj.relative(tau, tau + mu)?,
                traj.relative(tau, tau + mu - TIME_STEP)?,
                traj.relative(tau, tau + mu + TIME_STEP)?,
            ])
        };
        Ok(PairCameras {
            fx: cam.fx,
            fy: cam.fy,
            extrinsics: cam.lidar_from_camera,
            extrinsic_covariance: cam.extrinsic_covariance,
            time_offset_variance: cam.time_offset_variance,
            source_motion: motion(pair.source_time)?,
            reference_motion: motion(pair.reference_time)?,
        })
    }

    /// Pair without platform motion: the cameras sit at the extrinsics.
    pub fn static_pair(cam: &Camera) -> Self {
        let id = [Pose::identity(); 3];
        PairCameras {
            fx: cam.fx,
            fy: cam.fy,
            extrinsics: cam.lidar_from_camera,
            extrinsic_covariance: cam.extrinsic_covariance,
            time_offset_variance: cam.time_offset_variance,
            source_motion: id,
            reference_motion: id,
        }
    }

    /// Source camera pose in the source LiDAR frame at `tau_s`.
    pub fn source_camera(&self) -> Pose {
        self.source_motion[0] * self.extrinsics
    }

    pub fn reference_camera(&self) -> Pose {
        self.reference_motion[0] * self.extrinsics
    }

    /// Source-camera-to-reference-camera transform for a LiDAR alignment.
    pub fn camera_relative(&self, alignment: &Pose) -> Pose {
        self.reference_camera().inverse() * *alignment * self.source_camera()
    }

    fn relative_with(&self, alignment: &Pose, s: usize, r: usize) -> Pose {
        (self.reference_motion[r] * self.extrinsics).inverse() * *alignment * (self.source_motion[s] * self.extrinsics)
    }
}

/// Epipolar residual with its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarRow {
    pub residual: f64,
    /// `d e / d xi` of the correction.
    pub jacobian: Vector6<f64>,
    /// Derivatives with respect to the source and reference pixels.
    pub source_pixel: Vector2<f64>,
    pub reference_pixel: Vector2<f64>,
    /// The camera baseline vanished; the residual carries no information.
    pub degenerate: bool,
}

struct Local {
    e: f64,
    /// `d e / d eps'` for a left perturbation of the camera relative pose.
    d_rel: Vector6<f64>,
    d_us: RowVector3<f64>,
    d_ur: RowVector3<f64>,
    degenerate: bool,
}

/// `e = u_r^T [t_hat]x R u_s` for the source-to-reference camera transform `rel`.
fn local(u_s: &Vector3<f64>, u_r: &Vector3<f64>, rel: &Pose) -> Local {
    let norm = rel.translation.norm();
    if !(norm >= MIN_BASELINE) {
        return Local {
            e: 0.0,
            d_rel: Vector6::zeros(),
            d_us: RowVector3::zeros(),
            d_ur: RowVector3::zeros(),
            degenerate: true,
        };
    }
    let t = rel.translation / norm;
    let a = rel.rotation * u_s;
    let ta = t.cross(&a);
    let e = u_r.dot(&ta);
    let axu = a.cross(u_r);
    let d_rho = axu.transpose() * (Matrix3::identity() - t * t.transpose()) / norm;
    let d_phi = -(axu.transpose() * hat(&t)) - u_r.cross(&t).transpose() * hat(&a);
    Local {
        e,
        d_rel: Vector6::new(d_rho[0], d_rho[1], d_rho[2], d_phi[0], d_phi[1], d_phi[2]),
        d_us: u_r.cross(&t).transpose() * rel.rotation,
        d_ur: ta.transpose(),
        degenerate: false,
    }
}

fn alignment(correction: &Twist, init: &Pose) -> Pose {
    lie::exp_unchecked(correction) * *init
}

/// Variance contributions of one epipolar residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceTerms {
    pub pixel: f64,
    pub temporal: f64,
    pub calibration: f64,
}

impl VarianceTerms {
    pub fn total(&self) -> f64 {
        self.pixel + self.temporal + self.calibration
    }
}

/// Everything the epipolar rows need that depends on the alignment but not
/// on the match, evaluated once per alignment.
#[derive(Debug, Clone)]
pub struct EpipolarFrame<'a> {
    cams: &'a PairCameras,
    rel: Pose,
    /// Camera relative poses with the source or reference time shifted by
    /// `-h` and `+h`: source-, source+, reference-, reference+.
    shifted: [Pose; 4],
    /// Maps `d e / d eps'` to the derivative along the correction.
    pose_map: Matrix6<f64>,
    calibration_map: Matrix6<f64>,
}

impl<'a> EpipolarFrame<'a> {
    /// Frame at the alignment `exp(correction) * init`.
    pub fn new(correction: &Twist, init: &Pose, cams: &'a PairCameras) -> Self {
        let align = alignment(correction, init);
        let rel = cams.camera_relative(&align);
        // eps' = Ad(X_r^-1) eps, and eps = J_l(xi) d for a change d of the correction.
        let mut pose_map = cams.reference_camera().inverse().adjoint();
        if correction.norm() > 0.0 {
            pose_map *= lie::left_jacobian(correction);
        }
        let calibration_map = (rel.adjoint() - Matrix6::identity()) * cams.extrinsics.inverse().adjoint();
        let shifted = [
            cams.relative_with(&align, 1, 0),
            cams.relative_with(&align, 2, 0),
            cams.relative_with(&align, 0, 1),
            cams.relative_with(&align, 0, 2),
        ];
        EpipolarFrame {
            cams,
            rel,
            shifted,
            pose_map,
            calibration_map,
        }
    }

    pub fn row(&self, m: &FeatureMatch) -> EpipolarRow {
        let l = local(&m.u_s, &m.u_r, &self.rel);
        EpipolarRow {
            residual: l.e,
            jacobian: (l.d_rel.transpose() * self.pose_map).transpose(),
            source_pixel: Vector2::new(l.d_us[0] / self.cams.fx, l.d_us[1] / self.cams.fy),
            reference_pixel: Vector2::new(l.d_ur[0] / self.cams.fx, l.d_ur[1] / self.cams.fy),
            degenerate: l.degenerate,
        }
    }

    pub fn calibration_jacobian(&self, m: &FeatureMatch) -> Vector6<f64> {
        let l = local(&m.u_s, &m.u_r, &self.rel);
        (l.d_rel.transpose() * self.calibration_map).transpose()
    }

    pub fn temporal_jacobians(&self, m: &FeatureMatch) -> (f64, f64) {
        let e = |k: usize| local(&m.u_s, &m.u_r, &self.shifted[k]).e;
        ((e(1) - e(0)) / (2.0 * TIME_STEP), (e(3) - e(2)) / (2.0 * TIME_STEP))
    }

    /// The calibration term keeps the factor 2 of the published propagation formula.
    pub fn variance_terms(&self, m: &FeatureMatch) -> VarianceTerms {
        let l = local(&m.u_s, &m.u_r, &self.rel);
        let (sx, sy) = (l.d_us[0] / self.cams.fx, l.d_us[1] / self.cams.fy);
        let (rx, ry) = (l.d_ur[0] / self.cams.fx, l.d_ur[1] / self.cams.fy);
        let pixel = m.sigma_p * (sx * sx + sy * sy + rx * rx + ry * ry);
        let temporal = if self.cams.time_offset_variance > 0.0 {
            let (j1, j2) = self.temporal_jacobians(m);
            self.cams.time_offset_variance * (j1 * j1 + j2 * j2)
        } else {
            0.0
        };
        let calibration = if self.cams.extrinsic_covariance.0.amax() > 0.0 {
            let jc = (l.d_rel.transpose() * self.calibration_map).transpose();
            2.0 * (jc.transpose() * self.cams.extrinsic_covariance.0 * jc)[0]
        } else {
            0.0
        };
        VarianceTerms {
            pixel,
            temporal,
            calibration,
        }
    }

    pub fn variance(&self, m: &FeatureMatch) -> f64 {
        self.variance_terms(m).total()
    }

    /// Squared residual over its propagated variance; zero for degenerate rows.
    pub fn normalized_square(&self, m: &FeatureMatch) -> f64 {
        let e = local(&m.u_s, &m.u_r, &self.rel);
        let var = self.variance(m);
        if e.degenerate || !(var > 0.0) {
            return 0.0;
        }
        e.e * e.e / var
    }
}

/// Epipolar residual of a match under the LiDAR alignment `exp(correction) * init`.
///
/// The translation is normalized to unit length, so the residual is blind to
/// baseline scale. A vanishing baseline yields a flagged zero row.
pub fn epipolar_residual(m: &FeatureMatch, correction: &Twist, init: &Pose, cams: &PairCameras) -> EpipolarRow {
    EpipolarFrame::new(correction, init, cams).row(m)
}

/// Derivative of the residual with respect to a left perturbation of the
/// LiDAR-camera extrinsics shared by both frames.
pub fn calibration_jacobian(m: &FeatureMatch, correction: &Twist, init: &Pose, cams: &PairCameras) -> Vector6<f64> {
    EpipolarFrame::new(correction, init, cams).calibration_jacobian(m)
}

/// Derivatives of the residual with respect to the source and reference
/// camera time offsets, by central differences.
pub fn temporal_jacobians(m: &FeatureMatch, correction: &Twist, init: &Pose, cams: &PairCameras) -> (f64, f64) {
    EpipolarFrame::new(correction, init, cams).temporal_jacobians(m)
}

/// Pixel, time-offset and extrinsic contributions to the residual variance.
pub fn variance_terms(m: &FeatureMatch, correction: &Twist, init: &Pose, cams: &PairCameras) -> VarianceTerms {
    EpipolarFrame::new(correction, init, cams).variance_terms(m)
}

pub fn propagate_covariance(m: &FeatureMatch, correction: &Twist, init: &Pose, cams: &PairCameras) -> f64 {
    variance_terms(m, correction, init, cams).total()
}

/// Squared residual over its propagated variance at the alignment `pose`.
pub fn normalized_square(m: &FeatureMatch, pose: &Pose, cams: &PairCameras) -> f64 {
    EpipolarFrame::new(&Twist::zero(), pose, cams).normalized_square(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp;
    use crate::vision::feature::FeatureKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn random_twist(rng: &mut ChaCha8Rng, t: f64, r: f64) -> Twist {
        Twist::new(random_vec(rng, t), random_vec(rng, r))
    }

    fn moving_trajectory() -> Trajectory {
        let knots = (0..=400)
            .map(|i| {
                let t = i as f64 * 0.1;
                let xi = Twist::new(
                    Vector3::new(0.8 * t, 0.3 * (0.2 * t).sin(), 0.05 * t),
                    Vector3::new(0.02 * t, -0.01 * t, 0.3 * (0.1 * t).sin()),
                );
                (t, exp(&xi).unwrap())
            })
            .collect();
        Trajectory::new(knots).unwrap()
    }

    fn camera() -> Camera {
        Camera {
            extrinsic_covariance: Covariance6::from_diagonal(&[1e-4, 1e-4, 1e-4, 1e-5, 1e-5, 1e-5]),
            time_offset_mean: 0.02,
            time_offset_variance: 1e-4,
            ..Camera::default()
        }
    }

    /// A random match that is exact under `truth` for a point in front of both cameras.
    fn exact_match(rng: &mut ChaCha8Rng, cams: &PairCameras, truth: &Pose) -> FeatureMatch {
        let rel = cams.camera_relative(truth);
        loop {
            let p_s = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(2.0..8.0),
            );
            let p_r = rel.transform_point(&p_s);
            if p_r.z > 0.5 {
                return FeatureMatch {
                    u_s: p_s / p_s.z,
                    u_r: p_r / p_r.z,
                    kind: FeatureKind::Indirect,
                    sigma_p: 1.0,
                    pair_index: 0,
                };
            }
        }
    }

    fn setup(rng: &mut ChaCha8Rng) -> (PairCameras, Pose) {
        let traj = moving_trajectory();
        let pair = PlacePair::new(25.0, 8.0, 0).unwrap();
        let cams = PairCameras::new(&traj, &camera(), &pair).unwrap();
        let truth = exp(&Twist::new(
            Vector3::new(0.6, -0.4, 0.1) + random_vec(rng, 0.3),
            random_vec(rng, 0.2),
        ))
        .unwrap();
        (cams, truth)
    }

    fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1e-3)
    }

    #[test]
    fn true_correspondence_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (cams, truth) = setup(&mut rng);
            let m = exact_match(&mut rng, &cams, &truth);
            let row = epipolar_residual(&m, &Twist::zero(), &truth, &cams);
            assert!(row.residual.abs() < 1e-12);
            assert!(!row.degenerate);
        }
    }

    #[test]
    fn residual_is_blind_to_depth_along_epipolar_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cams, truth) = setup(&mut rng);
        let rel = cams.camera_relative(&truth);
        let p_s = Vector3::new(0.3, -0.2, 4.0);
        let u_s = p_s / p_s.z;
        for depth in [1.0, 2.5, 9.0, 30.0] {
            let p_r = rel.transform_point(&(u_s * depth));
            let m = FeatureMatch {
                u_s,
                u_r: p_r / p_r.z,
                kind: FeatureKind::Indirect,
                sigma_p: 1.0,
                pair_index: 0,
            };
            assert!(epipolar_residual(&m, &Twist::zero(), &truth, &cams).residual.abs() < 1e-12);
        }
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (cams, truth) = setup(&mut rng);
            let mut m = exact_match(&mut rng, &cams, &truth);
            m.u_s += Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0);
            let xi = random_twist(&mut rng, 0.2, 0.1);
            let row = epipolar_residual(&m, &xi, &truth, &cams);
            let scale = row.jacobian.amax();
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let ep = epipolar_residual(&m, &Twist(xi.0 + d), &truth, &cams).residual;
                let em = epipolar_residual(&m, &Twist(xi.0 - d), &truth, &cams).residual;
                worst = worst.max(rel_err((ep - em) / (2.0 * h), row.jacobian[k], scale));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn pixel_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (cams, truth) = setup(&mut rng);
            let m = exact_match(&mut rng, &cams, &truth);
            let row = epipolar_residual(&m, &Twist::zero(), &truth, &cams);
            let scale = row.source_pixel.amax().max(row.reference_pixel.amax());
            for k in 0..2 {
                let f = if k == 0 { cams.fx } else { cams.fy };
                let mut d = Vector3::zeros();
                d[k] = h / f;
                let eval = |mm: FeatureMatch| epipolar_residual(&mm, &Twist::zero(), &truth, &cams).residual;
                let fd_s = (eval(FeatureMatch { u_s: m.u_s + d, ..m }) - eval(FeatureMatch { u_s: m.u_s - d, ..m }))
                    / (2.0 * h);
                let fd_r = (eval(FeatureMatch { u_r: m.u_r + d, ..m }) - eval(FeatureMatch { u_r: m.u_r - d, ..m }))
                    / (2.0 * h);
                worst = worst.max(rel_err(fd_s, row.source_pixel[k], scale)).max(rel_err(
                    fd_r,
                    row.reference_pixel[k],
                    scale,
                ));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn calibration_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (cams, truth) = setup(&mut rng);
            let m = exact_match(&mut rng, &cams, &truth);
            let jc = calibration_jacobian(&m, &Twist::zero(), &truth, &cams);
            let scale = jc.amax();
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let eval = |dd: Vector6<f64>| {
                    let c = PairCameras {
                        extrinsics: exp(&Twist(dd)).unwrap() * cams.extrinsics,
                        ..cams.clone()
                    };
                    epipolar_residual(&m, &Twist::zero(), &truth, &c).residual
                };
                worst = worst.max(rel_err((eval(d) - eval(-d)) / (2.0 * h), jc[k], scale));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn residual_is_invariant_to_baseline_scale() {
        // Without normalization the residual would scale with the baseline;
        // with it, rescaling the baseline leaves the residual unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cam = Camera {
            lidar_from_camera: Pose::identity(),
            ..Camera::default()
        };
        let cams = PairCameras::static_pair(&cam);
        let m = FeatureMatch {
            u_s: Vector3::new(0.1, 0.2, 1.0),
            u_r: Vector3::new(0.15, 0.18, 1.0),
            kind: FeatureKind::Indirect,
            sigma_p: 1.0,
            pair_index: 0,
        };
        let base = exp(&random_twist(&mut rng, 1.0, 0.1)).unwrap();
        let scaled = |s: f64| Pose::new(base.rotation, base.translation * s);
        let e1 = epipolar_residual(&m, &Twist::zero(), &scaled(1.0), &cams).residual;
        for s in [0.1, 3.0, 50.0] {
            let e = epipolar_residual(&m, &Twist::zero(), &scaled(s), &cams).residual;
            assert!((e - e1).abs() < 1e-12);
        }
        // The normalized residual is the raw epipolar product divided by |t|.
        let rel = cams.camera_relative(&base);
        let raw = m.u_r.dot(&(hat(&rel.translation) * rel.rotation * m.u_s));
        assert!((raw / rel.translation.norm() - e1).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_is_flagged() {
        let cam = Camera {
            lidar_from_camera: Pose::identity(),
            ..Camera::default()
        };
        let cams = PairCameras::static_pair(&cam);
        let m = FeatureMatch {
            u_s: Vector3::new(0.1, 0.2, 1.0),
            u_r: Vector3::new(0.15, 0.18, 1.0),
            kind: FeatureKind::Indirect,
            sigma_p: 1.0,
            pair_index: 0,
        };
        let pure_rotation = exp(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.1, 0.0))).unwrap();
        let row = epipolar_residual(&m, &Twist::zero(), &pure_rotation, &cams);
        assert!(row.degenerate);
        assert_eq!(row.residual, 0.0);
        assert_eq!(normalized_square(&m, &pure_rotation, &cams), 0.0);
    }

    #[test]
    fn variance_term_isolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (cams, truth) = setup(&mut rng);
        let m = exact_match(&mut rng, &cams, &truth);
        let quiet = PairCameras {
            time_offset_variance: 0.0,
            extrinsic_covariance: Covariance6::zeros(),
            ..cams.clone()
        };
        let row = epipolar_residual(&m, &Twist::zero(), &truth, &quiet);
        let expected = m.sigma_p * (row.source_pixel.norm_squared() + row.reference_pixel.norm_squared());
        assert_eq!(propagate_covariance(&m, &Twist::zero(), &truth, &quiet), expected);
        assert!(expected > 0.0);
        let full = variance_terms(&m, &Twist::zero(), &truth, &cams);
        assert!(full.temporal > 0.0 && full.calibration > 0.0);
        assert!((full.pixel - expected).abs() < 1e-15);
    }

    #[test]
    fn static_platform_has_no_temporal_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = exp(&random_twist(&mut rng, 2.0, 0.5)).unwrap();
        let q = exp(&random_twist(&mut rng, 2.0, 0.5)).unwrap();
        let traj = Trajectory::new(vec![(0.0, p), (10.0, p), (10.5, q), (30.0, q)]).unwrap();
        let cams = PairCameras::new(&traj, &camera(), &PlacePair::new(20.0, 5.0, 0).unwrap()).unwrap();
        let truth = exp(&Twist::new(Vector3::new(0.5, 0.2, 0.0), Vector3::new(0.0, 0.0, 0.1))).unwrap();
        let m = exact_match(&mut rng, &cams, &truth);
        assert_eq!(temporal_jacobians(&m, &Twist::zero(), &truth, &cams), (0.0, 0.0));
        assert_eq!(variance_terms(&m, &Twist::zero(), &truth, &cams).temporal, 0.0);
    }

    #[test]
    fn temporal_variance_grows_with_angular_rate() {
        let spin = |rate: f64| {
            let knots = (0..=400)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    (
                        t,
                        exp(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, rate * t))).unwrap(),
                    )
                })
                .collect();
            Trajectory::new(knots).unwrap()
        };
        let cam = camera();
        let pair = PlacePair::new(25.0, 8.0, 0).unwrap();
        let m = FeatureMatch {
            u_s: Vector3::new(0.1, -0.05, 1.0),
            u_r: Vector3::new(0.12, -0.04, 1.0),
            kind: FeatureKind::Indirect,
            sigma_p: 1.0,
            pair_index: 0,
        };
        let truth = exp(&Twist::new(Vector3::new(0.5, 0.4, 0.1), Vector3::new(0.0, 0.0, 0.05))).unwrap();
        let temporal = |rate: f64| {
            let cams = PairCameras::new(&spin(rate), &cam, &pair).unwrap();
            variance_terms(&m, &Twist::zero(), &truth, &cams).temporal
        };
        let base = temporal(0.05);
        assert!(base > 0.0);
        assert!(temporal(0.1) >= 2.0 * base);
    }
}
