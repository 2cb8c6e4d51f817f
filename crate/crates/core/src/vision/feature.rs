use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::camera::Camera;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Indirect,
    SemiDirect,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Indirect => "indirect",
            FeatureKind::SemiDirect => "semi-direct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "indirect" => Some(FeatureKind::Indirect),
            "semi-direct" => Some(FeatureKind::SemiDirect),
            _ => None,
        }
    }
}

/// A 2D-2D correspondence between the source and reference images of one place pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    /// Normalized homogeneous ray in the source camera, `z = 1`.
    pub u_s: Vector3<f64>,
    /// Normalized homogeneous ray in the reference camera, `z = 1`.
    pub u_r: Vector3<f64>,
    pub kind: FeatureKind,
    /// Pixel noise variance, px^2.
    pub sigma_p: f64,
    pub pair_index: usize,
}

impl FeatureMatch {
    pub fn from_pixels(
        cam: &Camera,
        source: &Vector2<f64>,
        reference: &Vector2<f64>,
        kind: FeatureKind,
        sigma_p: f64,
        pair_index: usize,
    ) -> Self {
        FeatureMatch {
            u_s: cam.normalized(source),
            u_r: cam.normalized(reference),
            kind,
            sigma_p,
            pair_index,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.u_s.z == 1.0
            && self.u_r.z == 1.0
            && self.u_s.iter().chain(self.u_r.iter()).all(|v| v.is_finite())
            && self.sigma_p.is_finite()
            && self.sigma_p >= 0.0
    }
}

/// Text dump with one `pair_index kind u_s_x u_s_y u_r_x u_r_y sigma_p` line
/// per match, coordinates in pixels.
pub fn features_to_text(cam: &Camera, matches: &[FeatureMatch]) -> String {
    let mut out = String::from("# pair_index kind u_s_x u_s_y u_r_x u_r_y sigma_p\n");
    for m in matches {
        let s = cam.pixel(&m.u_s);
        let r = cam.pixel(&m.u_r);
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            m.pair_index,
            m.kind.as_str(),
            s.x,
            s.y,
            r.x,
            r.y,
            m.sigma_p
        )
        .unwrap();
    }
    out
}

pub fn features_from_text(cam: &Camera, text: &str) -> Result<Vec<FeatureMatch>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: n + 1, message };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let pair_index = f[0].parse::<usize>().map_err(|e| err(e.to_string()))?;
        let kind = FeatureKind::parse(f[1]).ok_or_else(|| err(format!("unknown kind '{}'", f[1])))?;
        let v: Vec<f64> = f[2..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(e.to_string()))?;
        if v.iter().any(|x| !x.is_finite()) || v[4] < 0.0 {
            return Err(err("non-finite coordinate or negative variance".into()));
        }
        out.push(FeatureMatch::from_pixels(
            cam,
            &Vector2::new(v[0], v[1]),
            &Vector2::new(v[2], v[3]),
            kind,
            v[4],
            pair_index,
        ));
    }
    Ok(out)
}

pub fn load_features(cam: &Camera, path: &Path) -> Result<Vec<FeatureMatch>> {
    features_from_text(cam, &std::fs::read_to_string(path)?)
}

pub fn save_features(cam: &Camera, matches: &[FeatureMatch], path: &Path) -> Result<()> {
    std::fs::write(path, features_to_text(cam, matches))?;
    Ok(())
}
