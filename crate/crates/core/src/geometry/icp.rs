use rustc_hash::FxHashMap as HashMap;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::lie::{self, Pose, Twist};
use crate::residual::ResidualRows;

use super::surfel::{voxel_key, Surfel};

/// Matched source/reference surfels at the same resolution level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfelMatch {
    pub source: Surfel,
    pub reference: Surfel,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Scale of the normal coordinates in the joint nearest-neighbour metric.
    pub normal_scale: f64,
    /// Centroid gate as a multiple of the voxel size.
    pub gate_factor: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            normal_scale: 1.0,
            gate_factor: 2.0,
        }
    }
}

/// Grid cell edge in units of the surfel level.
const CELL_SCALE: f64 = 2.0;

/// Surfel indices by centroid cell, tagged with the surfel level.
type Grid = (f64, HashMap<(i64, i64, i64), Vec<u32>>);

/// Reference surfels hashed by centroid cell, one grid per level.
#[derive(Debug, Clone)]
pub struct SurfelMap {
    surfels: Vec<Surfel>,
    grids: Vec<Grid>,
}

impl SurfelMap {
    pub fn new(surfels: Vec<Surfel>) -> Self {
        let mut grids: Vec<Grid> = Vec::new();
        for (i, s) in surfels.iter().enumerate() {
            let slot = match grids.iter().position(|(lvl, _)| *lvl == s.level) {
                Some(k) => k,
                None => {
                    grids.push((s.level, HashMap::default()));
                    grids.len() - 1
                }
            };
            grids[slot]
                .1
                .entry(voxel_key(&s.centroid, s.level * CELL_SCALE))
                .or_default()
                .push(i as u32);
        }
        SurfelMap { surfels, grids }
    }

    pub fn surfels(&self) -> &[Surfel] {
        &self.surfels
    }

    fn nearest(&self, query: &Surfel, cfg: &MatchConfig) -> Option<usize> {
        let (_, grid) = self.grids.iter().find(|(lvl, _)| *lvl == query.level)?;
        let gate = cfg.gate_factor * query.level;
        let cell = query.level * CELL_SCALE;
        let lo = voxel_key(&query.centroid.add_scalar(-gate), cell);
        let hi = voxel_key(&query.centroid.add_scalar(gate), cell);
        let lambda2 = cfg.normal_scale * cfg.normal_scale;
        let mut best: Option<(f64, usize)> = None;
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    let Some(cell) = grid.get(&(x, y, z)) else {
                        continue;
                    };
                    for &j in cell {
                        let r = &self.surfels[j as usize];
                        let dc = (r.centroid - query.centroid).norm_squared();
                        if dc >= gate * gate {
                            continue;
                        }
                        let d = dc + lambda2 * (r.normal - query.normal).norm_squared();
                        let j = j as usize;
                        match best {
                            Some((bd, bj)) if bd < d || (bd == d && bj < j) => {}
                            _ => best = Some((d, j)),
                        }
                    }
                }
            }
        }
        best.map(|(_, j)| j)
    }
}

/// Nearest neighbour in centroid-plus-normal space for every source surfel
/// moved by `guess`. An empty result signals no overlap.
pub fn match_surfels(source: &[Surfel], reference: &SurfelMap, guess: &Pose, cfg: &MatchConfig) -> Vec<SurfelMatch> {
    source
        .iter()
        .filter_map(|s| {
            let moved = s.transformed(guess);
            reference.nearest(&moved, cfg).map(|j| SurfelMatch {
                source: *s,
                reference: reference.surfels[j],
                weight: 1.0,
            })
        })
        .collect()
}

/// Point-to-plane rows `n^T (p_r - (R p_s + t))` with `(R, t) = exp(correction) * init`.
///
/// Information per row is the reference planarity times the match weight.
pub fn icp_residuals(matches: &[SurfelMatch], correction: &Twist, init: &Pose) -> ResidualRows {
    let pose = lie::exp_unchecked(correction) * *init;
    let jl = (correction.norm() > 0.0).then(|| lie::left_jacobian(correction));
    let mut rows = ResidualRows::with_capacity(matches.len());
    for m in matches {
        let n = m.reference.normal;
        let q = pose.transform_point(&m.source.centroid);
        let e = n.dot(&(m.reference.centroid - q));
        let nq: Vector3<f64> = n.cross(&q);
        let mut j = Vector6::new(-n.x, -n.y, -n.z, nq.x, nq.y, nq.z);
        if let Some(jl) = &jl {
            j = jl.transpose() * j;
        }
        rows.push(e, j, m.reference.weight * m.weight);
    }
    rows
}
