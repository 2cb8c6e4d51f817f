//! Joint photogeometric Gauss-Newton over surfel and epipolar rows.

use nalgebra::{Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{icp_residuals, match_surfels, MatchConfig, Surfel, SurfelMap, SurfelMatch};
use crate::lie::{self, condition_number, Covariance6, Pose, Twist};
use crate::residual::ResidualRows;
use crate::trajectory::PlacePair;
use crate::vision::{
    track_semidirect, Camera, DepthMap, EpipolarFrame, FeatureKind, FeatureMatch, GrayImage, PairCameras,
    SemiDirectConfig,
};

/// Consistency factor turning a median absolute deviation into a standard deviation.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Scales from the median weighted squared residual at the first iteration.
    FrozenMedian,
    /// Unit scales.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Degrees of freedom of the t-distribution weights.
    pub nu: f64,
    pub normalization: Normalization,
    pub use_geometry: bool,
    pub use_photometry: bool,
    /// Re-track semi-direct features every this many iterations.
    pub semidirect_cadence: usize,
    /// Semi-direct tracking only starts once the last step is below this norm.
    pub semidirect_gate: f64,
    pub max_halvings: usize,
    pub max_condition: f64,
    pub min_surfel_matches: usize,
    pub min_feature_matches: usize,
    pub matching: MatchConfig,
    pub semidirect: SemiDirectConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 40,
            step_tolerance: 1e-8,
            nu: 5.0,
            normalization: Normalization::FrozenMedian,
            use_geometry: true,
            use_photometry: true,
            semidirect_cadence: 3,
            semidirect_gate: 0.1,
            max_halvings: 5,
            max_condition: 1e12,
            min_surfel_matches: 10,
            min_feature_matches: 8,
            matching: MatchConfig::default(),
            semidirect: SemiDirectConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        if !(self.step_tolerance > 0.0) || !(self.nu > 0.0) || !(self.semidirect_gate > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if !self.use_geometry && !self.use_photometry {
            return Err(Error::InvalidArgument("at least one modality must be enabled".into()));
        }
        Ok(())
    }
}

/// Images needed to track semi-direct features for one pair.
#[derive(Debug, Clone)]
pub struct PairImages {
    pub source: GrayImage,
    pub reference: GrayImage,
    /// Depth rendered at the reference camera.
    pub depth: DepthMap,
    /// Reference pixels selected for tracking.
    pub points: Vec<Vector2<f64>>,
}

/// Everything measured at one place pair.
#[derive(Debug, Clone)]
pub struct PairData {
    pub pair: PlacePair,
    pub source_surfels: Vec<Surfel>,
    pub reference_map: SurfelMap,
    /// Indirect matches that survived the essential-matrix filter.
    pub features: Vec<FeatureMatch>,
    pub cameras: PairCameras,
    pub images: Option<PairImages>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentEstimate {
    pub pose: Pose,
    pub covariance: Covariance6,
    pub geometric_cost: f64,
    pub photometric_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub surfel_matches: usize,
    /// Photometric matches used in the last iteration, both kinds.
    pub features: Vec<FeatureMatch>,
    pub alpha: f64,
    pub beta: f64,
}

/// One JSON-lines diagnostic record per solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub pair_index: usize,
    pub iterations: usize,
    pub geometric_cost: f64,
    pub photometric_cost: f64,
    pub surfel_matches: usize,
    pub indirect_features: usize,
    pub semidirect_features: usize,
    pub covariance_eigenvalues: Vec<f64>,
    pub converged: bool,
}

impl AlignmentEstimate {
    pub fn record(&self, pair_index: usize) -> SolveRecord {
        let semi = self
            .features
            .iter()
            .filter(|m| m.kind == FeatureKind::SemiDirect)
            .count();
        let mut eig: Vec<f64> = self.covariance.eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        SolveRecord {
            pair_index,
            iterations: self.iterations,
            geometric_cost: self.geometric_cost,
            photometric_cost: self.photometric_cost,
            surfel_matches: self.surfel_matches,
            indirect_features: self.features.len() - semi,
            semidirect_features: semi,
            covariance_eigenvalues: eig,
            converged: self.converged,
        }
    }
}

/// t-distribution weight `(nu + 1) / (nu + r^2 / s^2)` for a residual `r` at scale `s`.
pub fn mestimator_weight(r: f64, scale: f64, nu: f64) -> f64 {
    let z = r / scale;
    (nu + 1.0) / (nu + z * z)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len();
    let (lower, mid, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        *mid
    } else {
        0.5 * (lower.iter().copied().fold(f64::NEG_INFINITY, f64::max) + *mid)
    }
}

fn modality_scale(rows: &ResidualRows) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let sq: Vec<f64> = rows
        .residuals
        .iter()
        .zip(&rows.information)
        .map(|(e, w)| w * e * e)
        .collect();
    let mut m = median(sq.clone());
    if !(m > 0.0) {
        m = sq.iter().sum::<f64>() / n;
    }
    if !(m > 0.0) {
        return 1.0 / n;
    }
    1.0 / (n * m)
}

/// `(alpha, beta)` giving each modality unit total weight at a typical row;
/// an empty modality gets scale zero.
pub fn normalize_scales(geometric: &ResidualRows, photometric: &ResidualRows) -> (f64, f64) {
    (modality_scale(geometric), modality_scale(photometric))
}

/// Robust weights from the t-distribution at a MAD scale of the whitened residuals.
fn robust_weights(rows: &ResidualRows, nu: f64) -> Vec<f64> {
    let z: Vec<f64> = rows
        .residuals
        .iter()
        .zip(&rows.information)
        .map(|(e, w)| e * w.sqrt())
        .collect();
    let mad = median(z.iter().map(|v| v.abs()).collect());
    let scale = (MAD_SCALE * mad).max(1e-300);
    z.iter().map(|&r| mestimator_weight(r, scale, nu)).collect()
}

/// Step of the central differences taken through the residual variance.
const VARIANCE_STEP: f64 = 1e-6;

/// Whitened epipolar rows `e / sqrt(var)` with unit information.
///
/// The propagated variance depends on the alignment, so its derivative enters
/// the row Jacobian; without it Gauss-Newton drifts towards poses that merely
/// shrink the residuals' own variance.
fn photometric_rows(
    features: &[FeatureMatch],
    correction: &Twist,
    pose: &Pose,
    cams: &PairCameras,
    with_jacobian: bool,
) -> ResidualRows {
    let mut rows = ResidualRows::with_capacity(features.len());
    let frame = EpipolarFrame::new(correction, pose, cams);
    let probes: Vec<(EpipolarFrame, EpipolarFrame)> = if with_jacobian {
        (0..6)
            .map(|k| {
                let mut plus = correction.0;
                plus[k] += VARIANCE_STEP;
                let mut minus = correction.0;
                minus[k] -= VARIANCE_STEP;
                (
                    EpipolarFrame::new(&Twist(plus), pose, cams),
                    EpipolarFrame::new(&Twist(minus), pose, cams),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    for m in features {
        let row = frame.row(m);
        if row.degenerate {
            continue;
        }
        let var = frame.variance(m);
        if !(var > 0.0) {
            continue;
        }
        let sd = var.sqrt();
        if !with_jacobian {
            rows.push(row.residual / sd, Vector6::zeros(), 1.0);
            continue;
        }
        let mut d_sd = Vector6::zeros();
        for (k, (p, q)) in probes.iter().enumerate() {
            let (vp, vm) = (p.variance(m), q.variance(m));
            d_sd[k] = (vp.max(0.0).sqrt() - vm.max(0.0).sqrt()) / (2.0 * VARIANCE_STEP);
        }
        let jacobian = (row.jacobian * sd - d_sd * row.residual) / var;
        rows.push(row.residual / sd, jacobian, 1.0);
    }
    rows
}

/// Geometric rows stacked above the epipolar rows at `exp(correction) * pose`.
pub fn stacked_rows(
    matches: &[SurfelMatch],
    features: &[FeatureMatch],
    correction: &Twist,
    pose: &Pose,
    cams: &PairCameras,
) -> ResidualRows {
    let mut rows = icp_residuals(matches, correction, pose);
    let photo = photometric_rows(features, correction, pose, cams, true);
    rows.residuals.extend(photo.residuals);
    rows.jacobians.extend(photo.jacobians);
    rows.information.extend(photo.information);
    rows
}

fn weighted_cost(rows: &ResidualRows, scale: f64, robust: &[f64]) -> f64 {
    rows.residuals
        .iter()
        .zip(&rows.information)
        .zip(robust)
        .fold(0.0, |acc, ((e, w), r)| acc + scale * w * r * e * e)
}

struct Linearization {
    geo: ResidualRows,
    photo: ResidualRows,
    geo_w: Vec<f64>,
    photo_w: Vec<f64>,
}

/// Estimates `exp(xi) * init` aligning the source to the reference scan.
pub fn solve_alignment(data: &PairData, init: &Pose, cfg: &SolverConfig, cam: &Camera) -> Result<AlignmentEstimate> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(Error::InvalidArgument("non-finite initial alignment".into()));
    }
    let mut pose = *init;
    let mut matches: Vec<SurfelMatch> = if cfg.use_geometry {
        match_surfels(&data.source_surfels, &data.reference_map, &pose, &cfg.matching)
    } else {
        Vec::new()
    };
    let indirect: Vec<FeatureMatch> = if cfg.use_photometry {
        data.features.clone()
    } else {
        Vec::new()
    };
    if matches.len() < cfg.min_surfel_matches && indirect.len() < cfg.min_feature_matches {
        return Err(Error::InsufficientConstraints {
            surfel_matches: matches.len(),
            feature_matches: indirect.len(),
        });
    }
    let mut features = indirect.clone();
    let mut scales: Option<(f64, f64)> = None;
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let zero = Twist::zero();

    let linearize = |matches: &[SurfelMatch], features: &[FeatureMatch], pose: &Pose| {
        let geo = icp_residuals(matches, &zero, pose);
        let photo = photometric_rows(features, &zero, pose, &data.cameras, true);
        let geo_w = robust_weights(&geo, cfg.nu);
        let photo_w = robust_weights(&photo, cfg.nu);
        Linearization {
            geo,
            photo,
            geo_w,
            photo_w,
        }
    };

    for it in 0..cfg.max_iterations {
        iterations = it + 1;
        if it > 0 && cfg.use_geometry {
            matches = match_surfels(&data.source_surfels, &data.reference_map, &pose, &cfg.matching);
        }
        if cfg.use_photometry && it % cfg.semidirect_cadence.max(1) == 0 && last_step < cfg.semidirect_gate {
            if let Some(img) = &data.images {
                let rel = data.cameras.camera_relative(&pose).inverse();
                let semidirect = track_semidirect(
                    &img.points,
                    &img.reference,
                    &img.depth,
                    &img.source,
                    cam,
                    &rel,
                    &cfg.semidirect,
                    data.pair.index,
                );
                features = indirect.iter().chain(&semidirect).copied().collect();
            }
        }
        let lin = linearize(&matches, &features, &pose);
        let (alpha, beta) = *scales.get_or_insert_with(|| match cfg.normalization {
            Normalization::FrozenMedian => normalize_scales(&lin.geo, &lin.photo),
            Normalization::None => (
                if lin.geo.is_empty() { 0.0 } else { 1.0 },
                if lin.photo.is_empty() { 0.0 } else { 1.0 },
            ),
        });
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        lin.geo.accumulate(alpha, Some(&lin.geo_w), &mut h, &mut g);
        lin.photo.accumulate(beta, Some(&lin.photo_w), &mut h, &mut g);
        let cond = condition_number(&h);
        if !(cond <= cfg.max_condition) {
            return Err(Error::DegenerateAlignment { condition: cond });
        }
        let Some(h_inv) = h.try_inverse() else {
            return Err(Error::DegenerateAlignment {
                condition: f64::INFINITY,
            });
        };
        let full = -(h_inv * g);
        let cost0 = weighted_cost(&lin.geo, alpha, &lin.geo_w) + weighted_cost(&lin.photo, beta, &lin.photo_w);
        let mut step = full;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let xi = Twist(step);
            let geo = icp_residuals(&matches, &xi, &pose);
            let photo = photometric_rows(&features, &xi, &pose, &data.cameras, false);
            let cost = if photo.len() == lin.photo.len() {
                weighted_cost(&geo, alpha, &lin.geo_w) + weighted_cost(&photo, beta, &lin.photo_w)
            } else {
                f64::INFINITY
            };
            if cost <= cost0 {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent along the Gauss-Newton direction: a numerical minimum.
            converged = full.norm() < cfg.semidirect_gate;
            break;
        }
        pose = (lie::exp_unchecked(&Twist(step)) * pose).reorthonormalized();
        last_step = step.norm();
        if last_step < cfg.step_tolerance {
            converged = true;
            break;
        }
    }

    if cfg.use_geometry {
        matches = match_surfels(&data.source_surfels, &data.reference_map, &pose, &cfg.matching);
    }
    let lin = linearize(&matches, &features, &pose);
    let (alpha, beta) = scales.unwrap_or((1.0, 1.0));
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    lin.geo.accumulate(alpha, Some(&lin.geo_w), &mut h, &mut g);
    lin.photo.accumulate(beta, Some(&lin.photo_w), &mut h, &mut g);
    let cond = condition_number(&h);
    let h_inv = match h.try_inverse() {
        Some(hi) if cond <= cfg.max_condition => hi,
        _ => return Err(Error::DegenerateAlignment { condition: cond }),
    };
    let geometric_cost = weighted_cost(&lin.geo, alpha, &lin.geo_w);
    let photometric_cost = weighted_cost(&lin.photo, beta, &lin.photo_w);
    let n = (lin.geo.len() + lin.photo.len()).max(1) as f64;
    let sigma2 = ((geometric_cost + photometric_cost) / n).max(1e-24);
    Ok(AlignmentEstimate {
        pose,
        covariance: Covariance6::symmetrized(h_inv * sigma2),
        geometric_cost,
        photometric_cost,
        iterations,
        converged,
        surfel_matches: matches.len(),
        features,
        alpha,
        beta,
    })
}
