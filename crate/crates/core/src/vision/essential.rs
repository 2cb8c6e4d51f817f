use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::feature::FeatureMatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Sampson distance threshold, pixels.
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold_px: 1.5,
            max_iterations: 500,
            confidence: 0.999,
            seed: 0,
        }
    }
}

/// Linear eight-point estimate of `E` with `u_r^T E u_s = 0`, projected onto
/// the essential manifold (two equal singular values, one zero).
pub fn eight_point(matches: &[&FeatureMatch]) -> Option<Matrix3<f64>> {
    if matches.len() < 8 {
        return None;
    }
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for m in matches {
        let (s, r) = (m.u_s, m.u_r);
        let row = SVector::<f64, 9>::from_column_slice(&[
            r.x * s.x,
            r.x * s.y,
            r.x * s.z,
            r.y * s.x,
            r.y * s.y,
            r.y * s.z,
            r.z * s.x,
            r.z * s.y,
            r.z * s.z,
        ]);
        ata += row * row.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k);
    let e = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let s = 0.5 * (svd.singular_values[0] + svd.singular_values[1]);
    let mut sorted = [0usize, 1, 2];
    sorted.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut d = Vector3::zeros();
    d[sorted[0]] = s;
    d[sorted[1]] = s;
    let e = u * Matrix3::from_diagonal(&d) * vt;
    (e.norm() > 0.0 && e.iter().all(|x| x.is_finite())).then_some(e)
}

/// Sampson distance in normalized image units.
pub fn sampson_distance(e: &Matrix3<f64>, m: &FeatureMatch) -> f64 {
    let es = e * m.u_s;
    let etr = e.transpose() * m.u_r;
    let num = m.u_r.dot(&es);
    let den = es.x * es.x + es.y * es.y + etr.x * etr.x + etr.y * etr.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// Inlier mask of an essential-matrix RANSAC over the matches.
/// `focal` converts the pixel threshold into normalized units.
pub fn ransac_essential(matches: &[FeatureMatch], focal: f64, cfg: &RansacConfig) -> Vec<bool> {
    let n = matches.len();
    if n < 8 {
        return vec![false; n];
    }
    let thr = cfg.threshold_px / focal;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mask_of = |e: &Matrix3<f64>| -> Vec<bool> { matches.iter().map(|m| sampson_distance(e, m) < thr).collect() };
    let mut best: Vec<bool> = vec![false; n];
    let mut best_count = 0;
    let mut iterations = cfg.max_iterations;
    let mut it = 0;
    while it < iterations {
        it += 1;
        let idx = sample(&mut rng, n, 8);
        let subset: Vec<&FeatureMatch> = idx.iter().map(|i| &matches[i]).collect();
        let Some(e) = eight_point(&subset) else {
            continue;
        };
        let mask = mask_of(&e);
        let count = mask.iter().filter(|&&b| b).count();
        if count > best_count {
            best_count = count;
            best = mask;
            let w = count as f64 / n as f64;
            let p_fail = 1.0 - w.powi(8);
            if p_fail <= 0.0 {
                break;
            }
            let needed = ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil();
            if needed.is_finite() && needed >= 0.0 {
                iterations = iterations.min(needed as usize);
            }
        }
    }
    // Refit on the consensus set.
    if best_count >= 8 {
        let inliers: Vec<&FeatureMatch> = matches.iter().zip(&best).filter(|(_, &b)| b).map(|(m, _)| m).collect();
        if let Some(e) = eight_point(&inliers) {
            let refit = mask_of(&e);
            if refit.iter().filter(|&&b| b).count() >= best_count {
                best = refit;
            }
        }
    }
    best
}
