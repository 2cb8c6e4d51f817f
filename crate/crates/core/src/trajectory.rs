//! Continuous-time trajectory with linear on-manifold interpolation, and the
//! relative transforms used to move alignments between place pairs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{self, Pose};

/// Minimum temporal separation between source and reference of a place pair.
pub const MIN_PAIR_SEPARATION: f64 = 10.0;

/// Time-stamped control poses of the world-to-LiDAR trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    poses: Vec<Pose>,
    frame: String,
}

/// One place-recognition result: source and reference timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacePair {
    pub source_time: f64,
    pub reference_time: f64,
    pub index: usize,
}

impl PlacePair {
    pub fn new(source_time: f64, reference_time: f64, index: usize) -> Result<Self> {
        let pair = PlacePair {
            source_time,
            reference_time,
            index,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_time.is_finite() && self.reference_time.is_finite()) {
            return Err(Error::InvalidArgument("non-finite place pair time".into()));
        }
        if (self.source_time - self.reference_time).abs() <= MIN_PAIR_SEPARATION {
            return Err(Error::InvalidArgument(format!(
                "place pair {} separated by {:.3} s, need more than {MIN_PAIR_SEPARATION} s",
                self.index,
                (self.source_time - self.reference_time).abs()
            )));
        }
        Ok(())
    }
}

impl Trajectory {
    pub fn new(knots: Vec<(f64, Pose)>) -> Result<Self> {
        Self::with_frame(knots, "world->lidar")
    }

    pub fn with_frame(knots: Vec<(f64, Pose)>, frame: &str) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument(format!(
                    "knot times must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if knots.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite knot".into()));
        }
        let (times, poses) = knots.into_iter().unzip();
        Ok(Trajectory {
            times,
            poses,
            frame: frame.to_string(),
        })
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, &Pose)> {
        self.times.iter().copied().zip(self.poses.iter())
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.start_time() && tau <= self.end_time()
    }

    /// Pose at `tau`, interpolated between the bracketing knots.
    pub fn pose_at(&self, tau: f64) -> Result<Pose> {
        if !self.contains(tau) {
            return Err(Error::OutOfRange {
                value: tau,
                min: self.start_time(),
                max: self.end_time(),
            });
        }
        // First knot strictly after tau.
        let upper = self.times.partition_point(|&t| t <= tau);
        if upper == 0 {
            return Ok(self.poses[0]);
        }
        let k = upper - 1;
        if self.times[k] == tau || k + 1 == self.times.len() {
            return Ok(self.poses[k]);
        }
        let alpha = (tau - self.times[k]) / (self.times[k + 1] - self.times[k]);
        lie::interpolate(&self.poses[k], &self.poses[k + 1], alpha)
    }

    /// `T(tau_r)^-1 T(tau_s)`: source LiDAR frame expressed in the reference one.
    pub fn initial_alignment(&self, pair: &PlacePair) -> Result<Pose> {
        self.relative(pair.reference_time, pair.source_time)
    }

    /// `T(from)^-1 T(to)`.
    pub fn relative(&self, from: f64, to: f64) -> Result<Pose> {
        if from == to {
            self.pose_at(from)?;
            return Ok(Pose::identity());
        }
        Ok(self.pose_at(from)?.inverse() * self.pose_at(to)?)
    }

    /// Moves an alignment estimated at `current` into the frames of `first`.
    pub fn transport_to_first(&self, pair_alignment: &Pose, first: &PlacePair, current: &PlacePair) -> Result<Pose> {
        let (left, right) = self.transport_factors(first, current)?;
        Ok(left * *pair_alignment * right)
    }

    /// Inverse of [`Trajectory::transport_to_first`].
    pub fn transport_from_first(&self, first_alignment: &Pose, first: &PlacePair, current: &PlacePair) -> Result<Pose> {
        let (left, right) = self.transport_factors(first, current)?;
        Ok(left.inverse() * *first_alignment * right.inverse())
    }

    /// Linear map taking a left perturbation of the pair alignment to a left
    /// perturbation of the transported alignment.
    pub fn transport_adjoint(&self, first: &PlacePair, current: &PlacePair) -> Result<Matrix6<f64>> {
        Ok(self.transport_factors(first, current)?.0.adjoint())
    }

    fn transport_factors(&self, first: &PlacePair, current: &PlacePair) -> Result<(Pose, Pose)> {
        let left = self.relative(first.reference_time, current.reference_time)?;
        let right = self.relative(current.source_time, first.source_time)?;
        Ok((left, right))
    }

    /// Text form: one `timestamp tx ty tz qw qx qy qz` line per knot.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, p) in self.knots() {
            let q = p.quaternion();
            let tr = p.translation;
            writeln!(out, "{t} {} {} {} {} {} {} {}", tr.x, tr.y, tr.z, q.w, q.i, q.j, q.k).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 8 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 8 fields, found {}", vals.len()),
                });
            }
            let q = Quaternion::new(vals[4], vals[5], vals[6], vals[7]);
            if q.norm() < 1e-12 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "zero quaternion".into(),
                });
            }
            let pose = Pose::from_quaternion(
                &UnitQuaternion::from_quaternion(q),
                Vector3::new(vals[1], vals[2], vals[3]),
            );
            knots.push((vals[0], pose));
        }
        Trajectory::new(knots)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
