use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;
use crate::trajectory::Trajectory;

/// Points in one frame, optionally time-stamped per point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub times: Option<Vec<f64>>,
    pub frame: String,
}

/// Temporal and spatial selection applied when cutting a local cloud out of the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Half width of the time window, seconds.
    pub half_window: f64,
    /// Radius around the sensor position, meters.
    pub radius: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            half_window: 5.0,
            radius: 10.0,
        }
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: &str) -> Self {
        PointCloud {
            points,
            times: None,
            frame: frame.to_string(),
        }
    }

    pub fn with_times(points: Vec<Vector3<f64>>, times: Vec<f64>, frame: &str) -> Result<Self> {
        if points.len() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} timestamps",
                points.len(),
                times.len()
            )));
        }
        Ok(PointCloud {
            points,
            times: Some(times),
            frame: frame.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose, frame: &str) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            times: self.times.clone(),
            frame: frame.to_string(),
        }
    }

    /// Text form: one `x y z [t]` line per point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.points.iter().enumerate() {
            match &self.times {
                Some(t) => writeln!(out, "{} {} {} {}", p.x, p.y, p.z, t[i]),
                None => writeln!(out, "{} {} {}", p.x, p.y, p.z),
            }
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str, frame: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut times = Vec::new();
        let mut timed: Option<bool> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            let has_time = match vals.len() {
                3 => false,
                4 => true,
                k => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("expected 3 or 4 fields, found {k}"),
                    })
                }
            };
            if *timed.get_or_insert(has_time) != has_time {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "mixed timestamped and untimestamped points".into(),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "non-finite coordinate".into(),
                });
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
            if has_time {
                times.push(vals[3]);
            }
        }
        Ok(PointCloud {
            points,
            times: timed.unwrap_or(false).then_some(times),
            frame: frame.to_string(),
        })
    }

    pub fn load(path: &Path, frame: &str) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, frame)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Cuts the points observed around `tau` out of a world-frame map and
/// expresses them in the LiDAR frame at `tau`.
pub fn extract_cloud(world: &PointCloud, traj: &Trajectory, tau: f64, cfg: &ExtractionConfig) -> Result<PointCloud> {
    for t in [tau - cfg.half_window, tau + cfg.half_window] {
        if !traj.contains(t) {
            return Err(Error::OutOfRange {
                value: t,
                min: traj.start_time(),
                max: traj.end_time(),
            });
        }
    }
    let sensor = traj.pose_at(tau)?;
    let to_local = sensor.inverse();
    let r2 = cfg.radius * cfg.radius;
    let mut points = Vec::new();
    let mut times = world.times.as_ref().map(|_| Vec::new());
    for (i, p) in world.points.iter().enumerate() {
        if let Some(ts) = &world.times {
            if (ts[i] - tau).abs() > cfg.half_window {
                continue;
            }
        }
        if (p - sensor.translation).norm_squared() > r2 {
            continue;
        }
        points.push(to_local.transform_point(p));
        if let (Some(out), Some(ts)) = (times.as_mut(), &world.times) {
            out.push(ts[i]);
        }
    }
    if points.is_empty() {
        return Err(Error::InsufficientGeometry(format!(
            "no map points within {} m / {} s of t={tau}",
            cfg.radius, cfg.half_window
        )));
    }
    Ok(PointCloud {
        points,
        times,
        frame: format!("lidar@{tau}"),
    })
}
