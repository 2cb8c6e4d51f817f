use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;

use super::cloud::PointCloud;

/// Planar summary of the points falling in one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surfel {
    pub centroid: Vector3<f64>,
    /// Unit normal, oriented towards the sensor origin.
    pub normal: Vector3<f64>,
    /// `(l2 - l1) / l3` of the sorted scatter eigenvalues, in (0, 1].
    pub weight: f64,
    /// Voxel edge length of the resolution level, meters.
    pub level: f64,
    pub count: usize,
}

impl Surfel {
    pub fn transformed(&self, pose: &Pose) -> Surfel {
        Surfel {
            centroid: pose.transform_point(&self.centroid),
            normal: pose.rotate(&self.normal),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfelConfig {
    /// Voxel edge lengths, one per resolution level.
    pub levels: Vec<f64>,
    pub min_points: usize,
    /// Voxels whose points stray further than this from the fitted plane are
    /// dropped. `None` keeps every populated voxel.
    pub max_thickness: Option<f64>,
}

impl Default for SurfelConfig {
    fn default() -> Self {
        SurfelConfig {
            levels: vec![0.3, 0.8, 1.5],
            min_points: 5,
            max_thickness: Some(0.05),
        }
    }
}

impl SurfelConfig {
    /// Thickness gate for a sensor with the given range noise.
    pub fn for_range_noise(sigma: f64) -> Self {
        SurfelConfig {
            max_thickness: Some((5.0 * sigma).max(1e-6)),
            ..Default::default()
        }
    }
}

struct VoxelAccumulator<'a> {
    indices: &'a [u32],
    sum: Vector3<f64>,
}

pub(crate) fn voxel_key(p: &Vector3<f64>, size: f64) -> (i64, i64, i64) {
    // Truncation plus correction; same as `floor` for finite input, without the libm call.
    let cell = |v: f64| {
        let q = v / size;
        let i = q as i64;
        if (i as f64) > q {
            i - 1
        } else {
            i
        }
    };
    (cell(p.x), cell(p.y), cell(p.z))
}

/// Fits one surfel per sufficiently populated voxel at every resolution level.
pub fn build_surfels(cloud: &PointCloud, cfg: &SurfelConfig) -> Result<Vec<Surfel>> {
    if cloud.is_empty() {
        return Err(Error::InsufficientGeometry("empty cloud".into()));
    }
    if cfg.levels.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("voxel sizes must be positive".into()));
    }
    let mut out = Vec::new();
    for &size in &cfg.levels {
        // Dense voxel ids, then points bucketed by id in index order.
        let mut ids: HashMap<(i64, i64, i64), u32> = HashMap::default();
        let mut keys = Vec::new();
        let mut sums: Vec<Vector3<f64>> = Vec::new();
        let mut offsets: Vec<usize> = Vec::new();
        let voxel_of: Vec<u32> = cloud
            .points
            .iter()
            .map(|p| {
                let key = voxel_key(p, size);
                let id = *ids.entry(key).or_insert_with(|| {
                    keys.push(key);
                    sums.push(Vector3::zeros());
                    offsets.push(0);
                    keys.len() as u32 - 1
                });
                sums[id as usize] += p;
                offsets[id as usize] += 1;
                id
            })
            .collect();
        let counts = offsets.clone();
        let mut next = 0;
        for o in offsets.iter_mut() {
            (*o, next) = (next, next + *o);
        }
        let mut members = vec![0u32; voxel_of.len()];
        let mut fill = offsets.clone();
        for (i, &v) in voxel_of.iter().enumerate() {
            members[fill[v as usize]] = i as u32;
            fill[v as usize] += 1;
        }
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_unstable_by_key(|&v| keys[v]);
        for v in order {
            if counts[v] < cfg.min_points {
                continue;
            }
            let acc = VoxelAccumulator {
                indices: &members[offsets[v]..offsets[v] + counts[v]],
                sum: sums[v],
            };
            if let Some(s) = fit_surfel(cloud, &acc, size, cfg) {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientGeometry(
            "every voxel is underpopulated or non-planar".into(),
        ));
    }
    Ok(out)
}

fn fit_surfel(cloud: &PointCloud, acc: &VoxelAccumulator, size: f64, cfg: &SurfelConfig) -> Option<Surfel> {
    let n = acc.indices.len() as f64;
    let centroid = acc.sum / n;
    let mut scatter = Matrix3::zeros();
    for &i in acc.indices {
        let d = cloud.points[i as usize] - centroid;
        scatter += d * d.transpose();
    }
    scatter /= n;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2, l3) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    if !(l3 > 0.0) {
        return None;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    normal.normalize_mut();
    if normal.dot(&centroid) > 0.0 {
        normal = -normal;
    }
    if let Some(max_t) = cfg.max_thickness {
        let thick = acc
            .indices
            .iter()
            .map(|&i| normal.dot(&(cloud.points[i as usize] - centroid)).abs())
            .fold(0.0, f64::max);
        if thick > max_t {
            return None;
        }
    }
    let weight = ((l2 - l1) / l3).clamp(1e-9, 1.0);
    Some(Surfel {
        centroid,
        normal,
        weight,
        level: size,
        count: acc.indices.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_plane_gives_axis_normals() {
        let pts: Vec<_> = (0..100)
            .map(|i| Vector3::new(0.015 + 0.03 * (i % 10) as f64, 0.015 + 0.03 * (i / 10) as f64, 2.0))
            .collect();
        let cfg = SurfelConfig {
            levels: vec![0.3],
            ..Default::default()
        };
        let surfels = build_surfels(&PointCloud::new(pts, "l"), &cfg).unwrap();
        assert_eq!(surfels.len(), 1);
        let s = surfels[0];
        assert!((s.normal.z.abs() - 1.0).abs() < 1e-6);
        // Oriented towards the origin, which lies below the plane.
        assert!(s.normal.z < 0.0);
        assert!((s.weight - 1.0).abs() < 1e-9, "weight {}", s.weight);
        assert_eq!(s.count, 100);
    }

    #[test]
    fn isotropic_blob_has_low_planarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.03).unwrap();
        let center = Vector3::new(0.75, 0.75, 0.75);
        let pts: Vec<_> = (0..2000)
            .map(|_| {
                center
                    + Vector3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    )
            })
            .collect();
        let cfg = SurfelConfig {
            levels: vec![1.5],
            max_thickness: None,
            ..Default::default()
        };
        let surfels = build_surfels(&PointCloud::new(pts.clone(), "l"), &cfg).unwrap();
        assert_eq!(surfels.len(), 1);
        // Independent check of the eigenvalue-ratio weight.
        let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let cov = pts
            .iter()
            .map(|p| (p - mean) * (p - mean).transpose())
            .sum::<Matrix3<f64>>()
            / pts.len() as f64;
        let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let expected = (ev[1] - ev[0]) / ev[2];
        assert!((surfels[0].weight - expected).abs() < 1e-9);
        assert!(surfels[0].weight < 0.15);
    }

    #[test]
    fn voxel_key_agrees_with_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let p = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-1.0..1.0),
            );
            let size = rng.random_range(0.05..2.0);
            let f = |v: f64| (v / size).floor() as i64;
            assert_eq!(voxel_key(&p, size), (f(p.x), f(p.y), f(p.z)));
        }
        assert_eq!(voxel_key(&Vector3::new(-0.6, -0.3, 0.6), 0.3), (-2, -1, 2));
    }

    #[test]
    fn underpopulated_voxels_are_dropped() {
        let pts = vec![Vector3::new(0.1, 0.1, 0.1); 4];
        assert!(matches!(
            build_surfels(&PointCloud::new(pts, "l"), &SurfelConfig::default()),
            Err(Error::InsufficientGeometry(_))
        ));
    }

    fn l_shaped_wall() -> Vec<Vector3<f64>> {
        // Faces x = 2.1 (y in [-3, 2.1]) and y = 2.1 (x in [-3, 2.1]), 3 m tall.
        let mut pts = Vec::new();
        let step = 0.05;
        let n = (5.1 / step) as usize;
        for i in 0..n {
            for k in 0..60 {
                let a = -3.0 + i as f64 * step;
                let z = -1.0 + k as f64 * step;
                pts.push(Vector3::new(2.1, a, z));
                pts.push(Vector3::new(a, 2.1, z));
            }
        }
        pts
    }

    #[test]
    fn coarse_level_bridges_corner_fine_level_separates() {
        let cloud = PointCloud::new(l_shaped_wall(), "l");
        let cfg = SurfelConfig {
            levels: vec![0.3, 1.5],
            max_thickness: None,
            ..Default::default()
        };
        let surfels = build_surfels(&cloud, &cfg).unwrap();
        let axis_aligned = |s: &Surfel| s.normal.x.abs() > 1.0 - 1e-9 || s.normal.y.abs() > 1.0 - 1e-9;
        let fine: Vec<_> = surfels.iter().filter(|s| s.level == 0.3).collect();
        let coarse: Vec<_> = surfels.iter().filter(|s| s.level == 1.5).collect();
        assert!(fine.iter().all(|s| axis_aligned(s)));
        let bridging = coarse.iter().filter(|s| !axis_aligned(s)).count();
        assert!(bridging >= 1);
        // The thickness gate removes exactly the voxels that straddle both faces.
        let gated = build_surfels(
            &cloud,
            &SurfelConfig {
                levels: vec![0.3, 1.5],
                max_thickness: Some(1e-6),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(gated.iter().all(axis_aligned));
        assert_eq!(gated.len(), surfels.len() - bridging);
    }

    #[test]
    fn surfel_order_is_deterministic() {
        let cloud = PointCloud::new(l_shaped_wall(), "l");
        let a = build_surfels(&cloud, &SurfelConfig::default()).unwrap();
        let b = build_surfels(&cloud, &SurfelConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
