//! End-to-end loop-closure localization over a simulated loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{Candidate, FusionSession, FusionStatus, FusionStep, SessionConfig};
use crate::geometry::{build_surfels, SurfelConfig, SurfelMap};
use crate::lie::Pose;
use crate::scenesim::Simulation;
use crate::solver::{solve_alignment, AlignmentEstimate, PairData, PairImages, SolveRecord, SolverConfig};
use crate::vision::{ransac_essential, select_semidirect, FeatureMatch, PairCameras, RansacConfig, SemiDirectConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "geo-only")]
    GeoOnly,
    #[serde(rename = "visual+icp")]
    VisualIcp,
    #[serde(rename = "photogeoseq")]
    PhotogeoSeq,
    #[serde(rename = "photogeoseq+")]
    PhotogeoSeqPlus,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::GeoOnly,
        Method::VisualIcp,
        Method::PhotogeoSeq,
        Method::PhotogeoSeqPlus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GeoOnly => "geo-only",
            Method::VisualIcp => "visual+icp",
            Method::PhotogeoSeq => "photogeoseq",
            Method::PhotogeoSeqPlus => "photogeoseq+",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn sequential(&self) -> bool {
        matches!(self, Method::PhotogeoSeq | Method::PhotogeoSeqPlus)
    }

    pub fn uses_photometry(&self) -> bool {
        *self != Method::GeoOnly
    }

    pub fn uses_images(&self) -> bool {
        *self == Method::PhotogeoSeqPlus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub session: SessionConfig,
    pub ransac: RansacConfig,
    /// Surfel extraction; derived from the range noise when absent.
    pub surfels: Option<SurfelConfig>,
    pub semidirect: SemiDirectConfig,
    /// Translation and rotation error bounds of a successful trial, m and rad.
    pub success_translation: f64,
    pub success_rotation: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverConfig::default(),
            session: SessionConfig::default(),
            ransac: RansacConfig::default(),
            surfels: None,
            semidirect: SemiDirectConfig::default(),
            success_translation: 0.5,
            success_rotation: 0.1,
        }
    }
}

/// Translation-difference norm and rotation angle between two alignments.
pub fn alignment_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let et = (estimate.translation - truth.translation).norm();
    let er = (truth.inverse() * *estimate).angle();
    (et, er)
}

/// Builds the solver input of pair `i`: surfels, filtered indirect matches
/// and, for the semi-direct variant, images with selected pixels.
pub fn prepare_pair(sim: &Simulation, i: usize, method: Method, cfg: &PipelineConfig) -> Result<PairData> {
    let m = sim.measure(i, method.uses_images())?;
    let surfel_cfg = cfg
        .surfels
        .clone()
        .unwrap_or_else(|| SurfelConfig::for_range_noise(sim.noise.point_sigma));
    let source_surfels = build_surfels(&m.source_cloud, &surfel_cfg)?;
    let reference_map = SurfelMap::new(build_surfels(&m.reference_cloud, &surfel_cfg)?);
    let features: Vec<FeatureMatch> = if method.uses_photometry() {
        let ransac = RansacConfig {
            seed: cfg.ransac.seed ^ sim.seed.rotate_left(17) ^ i as u64,
            ..cfg.ransac
        };
        let keep = ransac_essential(&m.features, sim.camera.fx, &ransac);
        m.features
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(f, _)| *f)
            .collect()
    } else {
        Vec::new()
    };
    let images = m.images.map(|img| {
        let points = select_semidirect(&img.reference, &img.depth, &cfg.semidirect);
        PairImages {
            source: img.source,
            reference: img.reference,
            depth: img.depth,
            points,
        }
    });
    Ok(PairData {
        pair: m.pair,
        source_surfels,
        reference_map,
        features,
        cameras: PairCameras::new(&sim.trajectory, &sim.camera, &m.pair)?,
        images,
    })
}

fn solver_config(method: Method, cfg: &PipelineConfig) -> SolverConfig {
    let mut s = cfg.solver.clone();
    s.use_photometry = method.uses_photometry();
    s.use_geometry = true;
    s.semidirect = cfg.semidirect;
    s
}

/// Solves pair `i` from `init`.
pub fn solve_pair(
    sim: &Simulation,
    i: usize,
    init: &Pose,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<(PairData, AlignmentEstimate)> {
    let data = prepare_pair(sim, i, method, cfg)?;
    let mut solver = solver_config(method, cfg);
    if data.images.is_none() {
        solver.semidirect_cadence = usize::MAX;
    }
    let est = solve_alignment(&data, init, &solver, &sim.camera)?;
    Ok((data, est))
}

/// Outcome of one method on one simulated loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub method: Method,
    pub seed: u64,
    /// Pair whose alignment is reported.
    pub first_pair: Option<usize>,
    /// Estimated alignment at that pair as `(rho, phi)`.
    pub estimate: Option<[f64; 6]>,
    /// Translation and rotation error; absent when nothing was estimated.
    pub error_t: Option<f64>,
    pub error_r: Option<f64>,
    pub success: bool,
    /// Number of place pairs consumed.
    pub fusion_length: usize,
    pub status: Option<FusionStatus>,
    /// Wall-clock seconds spent in solves; only recorded when asked for.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time: Option<f64>,
    pub solves: Vec<SolveRecord>,
    pub fusion: Vec<FusionStep>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<String>,
    #[serde(skip)]
    pub pose: Option<Pose>,
}

impl TrialOutcome {
    fn new(method: Method, seed: u64) -> Self {
        TrialOutcome {
            method,
            seed,
            first_pair: None,
            estimate: None,
            error_t: None,
            error_r: None,
            success: false,
            fusion_length: 0,
            status: None,
            solve_time: None,
            solves: Vec::new(),
            fusion: Vec::new(),
            failures: Vec::new(),
            pose: None,
        }
    }

    fn finish(&mut self, sim: &Simulation, index: usize, pose: Pose, cfg: &PipelineConfig) {
        let truth = sim.truth.pair_alignments[index];
        let (et, er) = alignment_error(&pose, &truth);
        self.first_pair = Some(index);
        self.estimate = crate::lie::log(&pose).ok().map(|t| {
            let v = t.0;
            [v[0], v[1], v[2], v[3], v[4], v[5]]
        });
        self.error_t = Some(et);
        self.error_r = Some(er);
        self.success = et < cfg.success_translation && er < cfg.success_rotation;
        self.pose = Some(pose);
    }
}

/// Runs `method` on the simulated loop. Pairs flagged in `skip` are never offered.
pub fn run_trial(sim: &Simulation, method: Method, cfg: &PipelineConfig, skip: &[usize], timed: bool) -> TrialOutcome {
    let mut out = TrialOutcome::new(method, sim.seed);
    let mut elapsed = 0.0;
    if !method.sequential() {
        let Some(i) = (0..sim.len()).find(|i| !skip.contains(i)) else {
            return out;
        };
        out.fusion_length = 1;
        let start = Instant::now();
        let result = sim
            .initial_alignment(i)
            .and_then(|init| solve_pair(sim, i, &init, method, cfg));
        elapsed += start.elapsed().as_secs_f64();
        match result {
            Ok((_, est)) => {
                out.solves.push(est.record(i));
                out.finish(sim, i, est.pose, cfg);
            }
            Err(e) => out.failures.push(format!("pair {i}: {e}")),
        }
        out.solve_time = timed.then_some(elapsed);
        return out;
    }

    let mut session = FusionSession::new(&sim.trajectory, cfg.session);
    for i in 0..sim.len() {
        if skip.contains(&i) {
            continue;
        }
        if !session.is_open() {
            break;
        }
        let pair = sim.pairs[i];
        // Once an alignment is held, later places start from it.
        let init = match (session.fused(), session.first()) {
            (Some(f), Some(first)) => sim.trajectory.transport_from_first(&f.pose, first, &pair),
            _ => sim.initial_alignment(i),
        };
        let start = Instant::now();
        let result = init.and_then(|init| solve_pair(sim, i, &init, method, cfg));
        elapsed += start.elapsed().as_secs_f64();
        let (data, est) = match result {
            Ok(r) => r,
            Err(e) => {
                out.failures.push(format!("pair {i}: {e}"));
                session.skip();
                continue;
            }
        };
        out.solves.push(est.record(i));
        let candidate = Candidate {
            pair,
            pose: est.pose,
            covariance: est.covariance,
            cameras: data.cameras,
            matches: est.features,
        };
        if let Err(e) = session.offer(candidate) {
            out.failures.push(format!("pair {i}: {e}"));
        }
        if let (Some(f), Some(first)) = (session.fused(), session.first()) {
            let (et, er) = alignment_error(&f.pose, &sim.truth.pair_alignments[first.index]);
            if let Some(step) = session.log.last_mut() {
                step.error_t = Some(et);
                step.error_r = Some(er);
            }
        }
    }
    out.fusion_length = session.consumed();
    out.status = Some(session.status());
    if let (Some(f), Some(first)) = (session.fused(), session.first()) {
        let (pose, index) = (f.pose, first.index);
        out.finish(sim, index, pose, cfg);
    }
    out.fusion = session.log;
    out.solve_time = timed.then_some(elapsed);
    out
}
