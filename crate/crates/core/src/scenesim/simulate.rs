use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{extract_cloud, ExtractionConfig, PointCloud};
use crate::lie::{self, so3_exp, Pose, Twist};
use crate::trajectory::{PlacePair, Trajectory};
use crate::vision::{save_features, Camera, DepthMap, FeatureKind, FeatureMatch, GrayImage};

use super::noise::NoiseSpec;
use super::render::{landmark_pixel, render_view};
use super::scene::{build_scene, PathSpec, Scene, SceneKind};

/// End of the mapping pass, seconds.
pub const MAPPING_END: f64 = 45.0;
/// Start of the revisit pass, seconds.
pub const REVISIT_START: f64 = 60.0;
const TRAJECTORY_END: f64 = 105.0;
const KNOT_SPACING: f64 = 0.05;
/// Reference time of the first place and spacing between places, seconds.
const FIRST_PLACE: f64 = 6.0;
const PLACE_SPACING: f64 = 3.0;
const SOURCE_LEAD: f64 = 0.4;
pub const MAX_PAIRS: usize = 10;

/// Surface sampling density of the LiDAR channel, points per m^2.
const CLOUD_DENSITY: f64 = 400.0;
/// Scan times around a place, relative to it, nearest first.
const SCAN_OFFSETS: [f64; 5] = [0.0, -2.0, 2.0, -4.0, 4.0];
const SCAN_RANGE: f64 = 12.0;

/// Deliberately wrong place pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopOptions {
    /// Pair indices whose reference data comes from the wrong place.
    pub false_pairs: Vec<usize>,
    /// Displacement `(rho, phi)` of the wrong place from the claimed one.
    pub spoof: [f64; 6],
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions {
            false_pairs: Vec::new(),
            spoof: [1.0, -0.4, 0.0, 0.0, 0.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    /// True alignment at the first place pair.
    pub first_alignment: Pose,
    pub pair_alignments: Vec<Pose>,
    pub trajectory: Trajectory,
    pub false_pairs: Vec<bool>,
    /// True LiDAR-from-camera extrinsics.
    pub extrinsics: Pose,
    /// Left error of the first initial guess: `init_0 = error * truth_0`.
    pub initial_error: Pose,
}

/// Reference and source renders of one pair.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub source: GrayImage,
    pub reference: GrayImage,
    /// Depth rendered at the reference camera the pipeline believes in.
    pub depth: DepthMap,
}

/// Everything the sensors report at one place pair.
#[derive(Debug, Clone)]
pub struct PairMeasurements {
    pub pair: PlacePair,
    /// Clouds in their own LiDAR frames.
    pub source_cloud: PointCloud,
    pub reference_cloud: PointCloud,
    /// Indirect matches before any outlier filtering.
    pub features: Vec<FeatureMatch>,
    /// Which matches were replaced by wrong pairs.
    pub mismatched: Vec<bool>,
    pub images: Option<RenderedPair>,
}

/// One simulated loop closure. Per-pair measurements are generated on demand
/// from per-pair random streams, so omitting a pair leaves the others unchanged.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scene: Scene,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Camera model as known to the estimator.
    pub camera: Camera,
    /// Drifted trajectory the estimator works with.
    pub trajectory: Trajectory,
    pub pairs: Vec<PlacePair>,
    pub truth: GroundTruthRecord,
    spoof: Pose,
    drift: Drift,
    samples: Vec<(Vector3<f64>, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct Drift {
    start: Pose,
    rate: Twist,
    origin: f64,
}

impl Drift {
    fn at(&self, t: f64) -> Pose {
        if t <= MAPPING_END {
            return Pose::identity();
        }
        if t < REVISIT_START {
            let a = (t - MAPPING_END) / (REVISIT_START - MAPPING_END);
            let s = a * a * (3.0 - 2.0 * a);
            let end = self.at(REVISIT_START);
            return lie::exp_unchecked(&lie::log(&end).unwrap_or(Twist::zero()).scaled(s));
        }
        self.start * lie::exp_unchecked(&self.rate.scaled(t - self.origin))
    }
}

fn path_pose(path: &PathSpec, t: f64) -> Pose {
    let yaw0 = path.heading.y.atan2(path.heading.x);
    let lateral = Vector3::z().cross(&path.heading);
    let (s, offset, yaw, pitch, roll, side, up) = if t < REVISIT_START {
        let s = t.min(MAPPING_END);
        (
            s,
            Vector3::zeros(),
            0.06 * (0.25 * s).sin(),
            0.02 * (0.4 * s).sin(),
            0.015 * (0.35 * s).sin(),
            0.08 * (0.3 * s).sin(),
            0.03 * (0.5 * s).sin(),
        )
    } else {
        let s = t - REVISIT_START;
        (
            s,
            path.revisit_offset,
            0.08 + 0.05 * (0.22 * s + 0.5).sin(),
            0.015 * (0.31 * s + 1.0).sin(),
            0.02 * (0.29 * s + 2.0).sin(),
            0.06 * (0.27 * s + 1.0).sin(),
            0.02 * (0.45 * s + 0.3).sin(),
        )
    };
    let p = path.start + offset + path.heading * (path.speed * s) + lateral * side + Vector3::z() * up;
    let r = Rotation3::from_euler_angles(roll, pitch, yaw0 + yaw);
    Pose::new(*r.matrix(), p)
}

fn true_trajectory(path: &PathSpec) -> Result<Trajectory> {
    let n = (TRAJECTORY_END / KNOT_SPACING).round() as usize;
    let mut knots = Vec::with_capacity(n + 1);
    let bridge_a = path_pose(path, MAPPING_END);
    let bridge_b = path_pose(path, REVISIT_START);
    for k in 0..=n {
        let t = k as f64 * KNOT_SPACING;
        let pose = if t > MAPPING_END && t < REVISIT_START {
            let a = (t - MAPPING_END) / (REVISIT_START - MAPPING_END);
            lie::interpolate(&bridge_a, &bridge_b, a * a * (3.0 - 2.0 * a))?
        } else {
            path_pose(path, t)
        };
        knots.push((t, pose));
    }
    Trajectory::new(knots)
}

fn gaussian_pose(rng: &mut ChaCha8Rng, sigma_rot: f64, sigma_trans: f64) -> Pose {
    let mut v = || -> f64 { StandardNormal.sample(rng) };
    let phi = Vector3::new(v(), v(), v()) * sigma_rot;
    let t = Vector3::new(v(), v(), v()) * sigma_trans;
    Pose::new(so3_exp(&phi), t)
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut *rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn stream(seed: u64, pair: usize, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + pair as u64 * 16 + channel);
    rng
}

/// Sets up a two-pass loop through `scene` with `n_pairs` matched places.
pub fn simulate_loop(
    scene: &Scene,
    noise: &NoiseSpec,
    n_pairs: usize,
    seed: u64,
    options: &LoopOptions,
) -> Result<Simulation> {
    noise.validate()?;
    if n_pairs == 0 || n_pairs > MAX_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "n_pairs must lie in 1..={MAX_PAIRS} (got {n_pairs})"
        )));
    }
    if let Some(&bad) = options.false_pairs.iter().find(|&&i| i >= n_pairs) {
        return Err(Error::InvalidArgument(format!("false pair {bad} outside 0..{n_pairs}")));
    }
    let truth_traj = true_trajectory(&scene.path)?;
    let pairs = (0..n_pairs)
        .map(|k| {
            let tr = FIRST_PLACE + PLACE_SPACING * k as f64;
            PlacePair::new(REVISIT_START + tr + SOURCE_LEAD, tr, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let pair_alignments = pairs
        .iter()
        .map(|p| truth_traj.initial_alignment(p))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sr, st) = noise.init_sigmas();
    let error = gaussian_pose(&mut rng, sr, st);
    let anchor = truth_traj.pose_at(pairs[0].reference_time)?;
    let drift = Drift {
        start: anchor * error * anchor.inverse(),
        rate: Twist::new(
            unit(&mut rng) * noise.drift_rate_translation,
            unit(&mut rng) * noise.drift_rate_rotation,
        ),
        origin: pairs[0].source_time,
    };
    let ext_error = gaussian_pose(
        &mut rng,
        noise.extrinsic_rotation_sigma,
        noise.extrinsic_translation_sigma,
    );

    let knots = truth_traj
        .knots()
        .map(|(t, p)| (t, (drift.at(t) * *p).reorthonormalized()))
        .collect();
    let trajectory = Trajectory::with_frame(knots, "map->lidar")?;

    let camera = Camera {
        extrinsic_covariance: noise.extrinsic_covariance(),
        time_offset_mean: noise.time_offset_mean,
        time_offset_variance: noise.time_offset_sigma.powi(2),
        ..Camera::default()
    };
    let extrinsics = ext_error * camera.lidar_from_camera;
    let mut false_pairs = vec![false; n_pairs];
    for &i in &options.false_pairs {
        false_pairs[i] = true;
    }
    let samples = scene.surface_samples(CLOUD_DENSITY, SCAN_RANGE, scene.path.speed * MAPPING_END);
    Ok(Simulation {
        scene: scene.clone(),
        noise: noise.clone(),
        seed,
        camera,
        trajectory,
        pairs,
        truth: GroundTruthRecord {
            first_alignment: pair_alignments[0],
            pair_alignments,
            trajectory: truth_traj,
            false_pairs,
            extrinsics,
            initial_error: error,
        },
        spoof: lie::exp(&Twist::from_slice(&options.spoof))?,
        drift,
        samples,
    })
}

/// Where a scan was taken from and how its points land in the map.
struct ScanSource<'a> {
    /// True sensor pose at time `t`.
    sensor: &'a dyn Fn(f64) -> Result<Pose>,
    /// Map-from-world correction at time `t`.
    map_from_world: &'a dyn Fn(f64) -> Pose,
}

impl Simulation {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Odometry-based initial guess for pair `i`.
    pub fn initial_alignment(&self, i: usize) -> Result<Pose> {
        self.trajectory.initial_alignment(&self.pairs[i])
    }

    fn spoof_for(&self, i: usize) -> Pose {
        if self.truth.false_pairs[i] {
            self.spoof
        } else {
            Pose::identity()
        }
    }

    fn scan(&self, tau: f64, src: &ScanSource, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
        let center = (src.sensor)(tau)?.translation;
        let origins = SCAN_OFFSETS
            .iter()
            .map(|dt| {
                Ok((
                    tau + dt,
                    (src.sensor)(tau + dt)?.translation,
                    (src.map_from_world)(tau + dt),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = Normal::new(0.0, self.noise.point_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut points = Vec::new();
        let mut times = Vec::new();
        let reach = ExtractionConfig::default().radius + 0.5;
        for (p, q) in &self.samples {
            if (p - center).norm() > reach {
                continue;
            }
            let Some((t, o, map)) = origins
                .iter()
                .find(|(_, o, _)| (p - o).norm() <= SCAN_RANGE && self.scene.visible(o, p, *q))
            else {
                continue;
            };
            let ray = (p - o).normalize();
            let noisy = p + ray * noise.sample(rng);
            points.push(map.transform_point(&noisy));
            times.push(*t);
        }
        let world = PointCloud::with_times(points, times, "map")?;
        extract_cloud(&world, &self.trajectory, tau, &ExtractionConfig::default())
    }

    /// True world poses of the source and reference cameras of pair `i`.
    pub fn true_cameras(&self, i: usize) -> Result<(Pose, Pose)> {
        let pair = &self.pairs[i];
        let mut rng = stream(self.seed, i, 0);
        let n = Normal::new(0.0, self.noise.time_offset_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mu = self.noise.time_offset_mean;
        let (ds, dr) = (n.sample(&mut rng), n.sample(&mut rng));
        let truth = &self.truth.trajectory;
        let x = self.truth.extrinsics;
        Ok((
            truth.pose_at(pair.source_time + mu + ds)? * x,
            truth.pose_at(pair.reference_time + mu + dr)? * self.spoof_for(i) * x,
        ))
    }

    /// Generates the measurements of pair `i`; images are rendered on request.
    pub fn measure(&self, i: usize, with_images: bool) -> Result<PairMeasurements> {
        if i >= self.pairs.len() {
            return Err(Error::InvalidArgument(format!(
                "pair {i} outside 0..{}",
                self.pairs.len()
            )));
        }
        let pair = self.pairs[i];
        let truth = &self.truth.trajectory;
        let drift = self.drift;

        let mut rng = stream(self.seed, i, 1);
        let source_sensor = |t: f64| truth.pose_at(t);
        let source_map = move |t: f64| drift.at(t);
        let source_cloud = self.scan(
            pair.source_time,
            &ScanSource {
                sensor: &source_sensor,
                map_from_world: &source_map,
            },
            &mut rng,
        )?;

        let spoof = self.spoof_for(i);
        let claimed = truth.pose_at(pair.reference_time)?;
        // Data seen from the wrong place but filed under the claimed one.
        let relabel = claimed * spoof.inverse() * claimed.inverse();
        let reference_sensor = |t: f64| Ok(truth.pose_at(t)? * spoof);
        let reference_map = move |t: f64| drift.at(t) * relabel;
        let mut rng = stream(self.seed, i, 2);
        let reference_cloud = self.scan(
            pair.reference_time,
            &ScanSource {
                sensor: &reference_sensor,
                map_from_world: &reference_map,
            },
            &mut rng,
        )?;

        let (cs, cr) = self.true_cameras(i)?;
        let (features, mismatched) = self.features(i, &cs, &cr)?;

        let images = if with_images {
            let (source, _) = render_view(&self.scene, &self.camera, &cs);
            let (reference, _) = render_view(&self.scene, &self.camera, &cr);
            let believed = self
                .trajectory
                .pose_at(pair.reference_time + self.camera.time_offset_mean)?
                * self.camera.lidar_from_camera;
            let (_, mut depth) = render_view(
                &self.scene,
                &self.camera,
                &(drift.at(pair.reference_time).inverse() * believed),
            );
            if self.noise.depth_sigma > 0.0 {
                let n = Normal::new(0.0, self.noise.depth_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let mut rng = stream(self.seed, i, 4);
                for d in depth.data.iter_mut().filter(|d| d.is_finite() && **d > 0.0) {
                    *d = (*d + n.sample(&mut rng)).max(1e-3);
                }
            }
            Some(RenderedPair {
                source,
                reference,
                depth,
            })
        } else {
            None
        };
        Ok(PairMeasurements {
            pair,
            source_cloud,
            reference_cloud,
            features,
            mismatched,
            images,
        })
    }

    fn features(&self, i: usize, cs: &Pose, cr: &Pose) -> Result<(Vec<FeatureMatch>, Vec<bool>)> {
        let mut rng = stream(self.seed, i, 3);
        let n = Normal::new(0.0, self.noise.sigma_p.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let cam = &self.camera;
        let mut seen = Vec::new();
        for l in &self.scene.landmarks {
            if let (Some(ps), Some(pr)) = (
                landmark_pixel(&self.scene, cam, cs, l),
                landmark_pixel(&self.scene, cam, cr, l),
            ) {
                seen.push((ps, pr));
            }
        }
        let sigma_p = self.noise.solver_sigma_p();
        let mut out = Vec::with_capacity(seen.len());
        let mut flags = Vec::with_capacity(seen.len());
        for k in 0..seen.len() {
            let (ps, mut pr) = seen[k];
            let wrong = seen.len() > 1 && rng.random::<f64>() < self.noise.mismatch_rate;
            if wrong {
                let mut j = rng.random_range(0..seen.len() - 1);
                if j >= k {
                    j += 1;
                }
                pr = seen[j].1;
            }
            let ps = ps + Vector2::new(n.sample(&mut rng), n.sample(&mut rng));
            let pr = pr + Vector2::new(n.sample(&mut rng), n.sample(&mut rng));
            out.push(FeatureMatch::from_pixels(
                cam,
                &ps,
                &pr,
                FeatureKind::Indirect,
                sigma_p,
                i,
            ));
            flags.push(wrong);
        }
        Ok((out, flags))
    }

    /// Writes the trajectory, true trajectory and each pair's clouds,
    /// matches and (optionally) images into `dir`.
    pub fn export(&self, dir: &Path, with_images: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
        self.trajectory.save(&dir.join("trajectory.txt"))?;
        self.truth.trajectory.save(&dir.join("trajectory_truth.txt"))?;
        for i in 0..self.pairs.len() {
            let m = self.measure(i, with_images)?;
            m.source_cloud.save(&dir.join(format!("pair{i}_source.xyz")))?;
            m.reference_cloud.save(&dir.join(format!("pair{i}_reference.xyz")))?;
            save_features(&self.camera, &m.features, &dir.join(format!("pair{i}_features.txt")))?;
            if let Some(img) = m.images {
                img.source.save_pgm(&dir.join(format!("pair{i}_source.pgm")))?;
                img.reference.save_pgm(&dir.join(format!("pair{i}_reference.pgm")))?;
            }
        }
        Ok(())
    }
}

/// Structured-text scenario: which world, how noisy, how many places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene: SceneKind,
    pub scene_seed: u64,
    pub n_pairs: usize,
    pub noise: NoiseSpec,
    pub options: LoopOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scene: SceneKind::Room,
            scene_seed: 1,
            n_pairs: 6,
            noise: NoiseSpec::default(),
            options: LoopOptions::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn simulate(&self, seed: u64) -> Result<Simulation> {
        simulate_loop(
            &build_scene(self.scene, self.scene_seed),
            &self.noise,
            self.n_pairs,
            seed,
            &self.options,
        )
    }
}
