//! Sequential on-manifold fusion and chi-square visual-evidence gating.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::lie::{self, Covariance6, Pose, Twist};
use crate::trajectory::{PlacePair, Trajectory};
use crate::vision::{EpipolarFrame, FeatureMatch, PairCameras};

pub const MAX_FUSE_ITERATIONS: usize = 20;
pub const FUSE_TOLERANCE: f64 = 1e-10;
/// `chi2_{1, 0.95}`.
pub const CHI2_1_95: f64 = 3.841_458_820_694_124;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStatus {
    Collecting,
    Accepted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedAlignment {
    pub pose: Pose,
    pub covariance: Covariance6,
    pub count: usize,
    pub status: FusionStatus,
}

impl FusedAlignment {
    pub fn seed(pose: Pose, covariance: Covariance6) -> Self {
        FusedAlignment {
            pose,
            covariance,
            count: 1,
            status: FusionStatus::Collecting,
        }
    }

    pub fn eigen_sum(&self) -> f64 {
        self.covariance.trace_eigen_sum()
    }
}

/// Gauss-Newton fusion of Gaussian pose estimates `(T_k, Sigma_k)` given as
/// left perturbations, starting from `start`. Returns the fused pose and the
/// inverse of the final normal matrix.
pub fn fuse_poses(estimates: &[(Pose, Covariance6)], start: &Pose) -> Result<(Pose, Covariance6)> {
    let infos: Vec<Matrix6<f64>> = estimates.iter().map(|(_, c)| c.inverse()).collect::<Result<_>>()?;
    let mut t = *start;
    let mut a = Matrix6::zeros();
    for _ in 0..MAX_FUSE_ITERATIONS {
        a = Matrix6::zeros();
        let mut b = Vector6::zeros();
        for ((pose, _), info) in estimates.iter().zip(&infos) {
            let xi = lie::log(&(*pose * t.inverse()))?;
            let g = lie::inv_left_jacobian(&xi.scaled(-1.0))?;
            a += g.transpose() * info * g;
            b += g.transpose() * info * xi.0;
        }
        let Some(a_inv) = a.try_inverse() else {
            return Err(Error::NonInvertibleCovariance {
                condition: f64::INFINITY,
            });
        };
        let step = a_inv * b;
        t = (lie::exp_unchecked(&Twist(step)) * t).reorthonormalized();
        if step.norm() < FUSE_TOLERANCE {
            break;
        }
    }
    let cov = Covariance6::symmetrized(a.try_inverse().ok_or(Error::NonInvertibleCovariance {
        condition: f64::INFINITY,
    })?);
    Ok((t, cov))
}

/// Fuses a new estimate, already transported to the first place, into the current one.
pub fn fuse(current: &FusedAlignment, pose: &Pose, covariance: &Covariance6) -> Result<FusedAlignment> {
    let (t, cov) = fuse_poses(
        &[(current.pose, current.covariance), (*pose, *covariance)],
        &current.pose,
    )?;
    Ok(FusedAlignment {
        pose: t,
        covariance: cov,
        count: current.count + 1,
        status: current.status,
    })
}

/// True once the eigenvalue sum of the fused covariance drops below `theta_th`.
pub fn should_terminate(f: &FusedAlignment, theta_th: f64) -> bool {
    f.eigen_sum() < theta_th
}

pub fn chi2_quantile_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    ChiSquared::new(dof as f64)
        .map(|d| d.inverse_cdf(0.95))
        .unwrap_or(f64::INFINITY)
}

/// Evidence gathered at one accepted place pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceEvidence {
    pub pair: PlacePair,
    pub cameras: PairCameras,
    pub matches: Vec<FeatureMatch>,
}

/// Inlier epipolar constraints of the fused place pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvidencePool {
    pub places: Vec<PlaceEvidence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub statistic: f64,
    pub threshold: f64,
    pub dof: usize,
    /// Fraction of stored matches individually within `chi2_{1, 0.95}`.
    pub inlier_rate: f64,
    pub inlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceUpdate {
    /// Inlier fraction of the pool, new matches included, before eviction.
    pub inlier_rate: f64,
    pub evicted: usize,
    pub retained: usize,
}

impl EvidencePool {
    pub fn len(&self) -> usize {
        self.places.iter().map(|p| p.matches.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized squared residuals of every stored match for an alignment
    /// hypothesis at the first place, moved back to each place.
    pub fn normalized_squares(&self, first_alignment: &Pose, traj: &Trajectory, first: &PlacePair) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for place in &self.places {
            let local = traj.transport_from_first(first_alignment, first, &place.pair)?;
            let frame = EpipolarFrame::new(&Twist::zero(), &local, &place.cameras);
            out.extend(place.matches.iter().map(|m| frame.normalized_square(m)));
        }
        Ok(out)
    }
}

/// Chi-square test of a candidate first-place alignment against the pool.
/// An empty pool accepts.
pub fn validate_candidate(
    pool: &EvidencePool,
    candidate: &Pose,
    traj: &Trajectory,
    first: &PlacePair,
) -> Result<Validation> {
    let sq = pool.normalized_squares(candidate, traj, first)?;
    let dof = sq.len();
    let statistic: f64 = sq.iter().sum();
    let threshold = chi2_quantile_95(dof);
    let inliers = sq.iter().filter(|&&v| v < CHI2_1_95).count();
    Ok(Validation {
        statistic,
        threshold,
        dof,
        inlier_rate: if dof == 0 { 1.0 } else { inliers as f64 / dof as f64 },
        inlier: dof == 0 || statistic < threshold,
    })
}

/// Matches of an estimate that are individually consistent with it.
pub fn inlier_matches(matches: &[FeatureMatch], pose: &Pose, cameras: &PairCameras) -> Vec<FeatureMatch> {
    let frame = EpipolarFrame::new(&Twist::zero(), pose, cameras);
    matches
        .iter()
        .filter(|m| frame.normalized_square(m) < CHI2_1_95)
        .copied()
        .collect()
}

/// Adds the inliers of an accepted estimate, then re-tests every stored match
/// at the fused alignment and evicts the individually inconsistent ones.
pub fn update_evidence(
    pool: &mut EvidencePool,
    new: Option<PlaceEvidence>,
    fused: &Pose,
    traj: &Trajectory,
    first: &PlacePair,
) -> Result<EvidenceUpdate> {
    if let Some(p) = new {
        pool.places.push(p);
    }
    let mut total = 0;
    let mut kept = 0;
    for place in &mut pool.places {
        let local = traj.transport_from_first(fused, first, &place.pair)?;
        let before = place.matches.len();
        let frame = EpipolarFrame::new(&Twist::zero(), &local, &place.cameras);
        place.matches.retain(|m| frame.normalized_square(m) < CHI2_1_95);
        total += before;
        kept += place.matches.len();
    }
    pool.places.retain(|p| !p.matches.is_empty());
    Ok(EvidenceUpdate {
        inlier_rate: if total == 0 { 1.0 } else { kept as f64 / total as f64 },
        evicted: total - kept,
        retained: kept,
    })
}

/// Estimate of one place pair, ready for the sequential session.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub pair: PlacePair,
    /// Alignment at the pair's own place.
    pub pose: Pose,
    pub covariance: Covariance6,
    pub cameras: PairCameras,
    pub matches: Vec<FeatureMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// Started a new fused alignment.
    Seed,
    Accepted,
    Rejected,
    /// Mutual rejection at bootstrap: both estimates dropped.
    Discarded,
    /// The estimate could not be fused numerically.
    Failed,
}

/// One JSON-lines record of the fusion trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionStep {
    pub step: usize,
    pub pair_index: usize,
    /// Candidate alignment at the first place as a twist `(rho, phi)`.
    pub candidate: [f64; 6],
    pub statistic: f64,
    /// Chi-square bound; absent when no evidence was tested.
    pub threshold: Option<f64>,
    pub dof: usize,
    pub decision: Decision,
    /// Eigenvalue sum of the fused covariance; absent while nothing is fused.
    pub eigen_sum: Option<f64>,
    pub inlier_rate: f64,
    pub fusion_count: usize,
    pub status: FusionStatus,
    /// Translation and rotation error of the fused alignment, when ground truth is known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_r: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Eigenvalue-sum threshold of the fused covariance.
    pub theta_th: f64,
    /// Cap on the number of consumed place pairs.
    pub max_pairs: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            theta_th: 6.0 * 0.02 * 0.02,
            max_pairs: 10,
        }
    }
}

/// Sequential fusion state machine over the place pairs of one loop.
#[derive(Debug, Clone)]
pub struct FusionSession<'a> {
    traj: &'a Trajectory,
    cfg: SessionConfig,
    first: Option<PlacePair>,
    fused: Option<FusedAlignment>,
    pool: EvidencePool,
    /// Bootstrap estimate awaiting confirmation by a second one.
    seed: Option<Candidate>,
    consumed: usize,
    pub log: Vec<FusionStep>,
}

impl<'a> FusionSession<'a> {
    pub fn new(traj: &'a Trajectory, cfg: SessionConfig) -> Self {
        FusionSession {
            traj,
            cfg,
            first: None,
            fused: None,
            pool: EvidencePool::default(),
            seed: None,
            consumed: 0,
            log: Vec::new(),
        }
    }

    pub fn fused(&self) -> Option<&FusedAlignment> {
        self.fused.as_ref()
    }

    pub fn first(&self) -> Option<&PlacePair> {
        self.first.as_ref()
    }

    pub fn pool(&self) -> &EvidencePool {
        &self.pool
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn status(&self) -> FusionStatus {
        self.fused.as_ref().map_or(FusionStatus::Collecting, |f| f.status)
    }

    /// Whether the session still takes candidates.
    pub fn is_open(&self) -> bool {
        self.status() == FusionStatus::Collecting
    }

    /// Records that a pair produced no usable estimate.
    pub fn skip(&mut self) {
        self.consumed += 1;
        self.check_cap();
    }

    fn check_cap(&mut self) {
        if self.consumed >= self.cfg.max_pairs {
            if let Some(f) = &mut self.fused {
                if f.status == FusionStatus::Collecting {
                    f.status = FusionStatus::Aborted;
                }
            }
        }
    }

    fn push_log(&mut self, pair_index: usize, candidate: &Pose, v: Option<Validation>, decision: Decision) {
        let twist = lie::log(candidate)
            .map(|t| t.0)
            .unwrap_or_else(|_| Vector6::repeat(f64::NAN));
        let (eigen_sum, count, status) = match &self.fused {
            Some(f) => (Some(f.eigen_sum()), f.count, f.status),
            None => (None, 0, FusionStatus::Collecting),
        };
        self.log.push(FusionStep {
            step: self.log.len(),
            pair_index,
            candidate: [twist[0], twist[1], twist[2], twist[3], twist[4], twist[5]],
            statistic: v.map_or(0.0, |v| v.statistic),
            threshold: v.map(|v| v.threshold).filter(|t| t.is_finite()),
            dof: v.map_or(0, |v| v.dof),
            decision,
            eigen_sum,
            inlier_rate: v.map_or(1.0, |v| v.inlier_rate),
            fusion_count: count,
            status,
            error_t: None,
            error_r: None,
        });
    }

    fn restart_with(&mut self, c: &Candidate) {
        let inliers = inlier_matches(&c.matches, &c.pose, &c.cameras);
        self.first = Some(c.pair);
        self.fused = Some(FusedAlignment::seed(c.pose, c.covariance));
        self.pool = EvidencePool {
            places: vec![PlaceEvidence {
                pair: c.pair,
                cameras: c.cameras.clone(),
                matches: inliers,
            }],
        };
        self.pool.places.retain(|p| !p.matches.is_empty());
        self.seed = Some(c.clone());
    }

    /// Consumes one pair estimate and returns the decision taken.
    pub fn offer(&mut self, c: Candidate) -> Result<Decision> {
        if !self.is_open() {
            return Err(Error::InvalidArgument("fusion session is closed".into()));
        }
        self.consumed += 1;
        let Some(first) = self.first else {
            self.restart_with(&c);
            self.push_log(c.pair.index, &c.pose, None, Decision::Seed);
            self.finish_step();
            return Ok(Decision::Seed);
        };
        let traj = self.traj;
        let moved = traj.transport_to_first(&c.pose, &first, &c.pair)?;
        let cov = c.covariance.transformed(&traj.transport_adjoint(&first, &c.pair)?);
        let v = validate_candidate(&self.pool, &moved, traj, &first)?;
        if !v.inlier {
            if let Some(seed) = self.seed.take() {
                // Bootstrap: test the seed against the newcomer's evidence as well.
                let own = EvidencePool {
                    places: vec![PlaceEvidence {
                        pair: c.pair,
                        cameras: c.cameras.clone(),
                        matches: inlier_matches(&c.matches, &c.pose, &c.cameras),
                    }],
                };
                let seed_moved = traj.transport_to_first(&seed.pose, &first, &seed.pair)?;
                let back = validate_candidate(&own, &seed_moved, traj, &first)?;
                if !back.inlier {
                    self.first = None;
                    self.fused = None;
                    self.pool = EvidencePool::default();
                    self.push_log(c.pair.index, &moved, Some(v), Decision::Discarded);
                    self.finish_step();
                    return Ok(Decision::Discarded);
                }
                self.seed = Some(seed);
            }
            self.push_log(c.pair.index, &moved, Some(v), Decision::Rejected);
            self.finish_step();
            return Ok(Decision::Rejected);
        }
        let current = self.fused.clone().expect("fused alignment exists once seeded");
        let fused = match fuse(&current, &moved, &cov) {
            Ok(f) => f,
            Err(_) => {
                self.push_log(c.pair.index, &moved, Some(v), Decision::Failed);
                self.finish_step();
                return Ok(Decision::Failed);
            }
        };
        let inliers = inlier_matches(&c.matches, &c.pose, &c.cameras);
        let mut pool = self.pool.clone();
        let new_place = (!inliers.is_empty()).then(|| PlaceEvidence {
            pair: c.pair,
            cameras: c.cameras.clone(),
            matches: inliers,
        });
        update_evidence(&mut pool, new_place, &fused.pose, traj, &first)?;
        self.pool = pool;
        self.fused = Some(fused);
        self.seed = None;
        if let Some(f) = &mut self.fused {
            if should_terminate(f, self.cfg.theta_th) {
                f.status = FusionStatus::Accepted;
            }
        }
        self.push_log(c.pair.index, &moved, Some(v), Decision::Accepted);
        self.finish_step();
        Ok(Decision::Accepted)
    }

    fn finish_step(&mut self) {
        self.check_cap();
        if let (Some(last), Some(f)) = (self.log.last_mut(), &self.fused) {
            last.status = f.status;
        }
    }
}
