use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Covariance6;

/// Initial-guess difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Easy,
    Medium,
    Hard,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Easy, Regime::Medium, Regime::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Easy => "easy",
            Regime::Medium => "medium",
            Regime::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Tabulated `(sigma_theta, sigma_t)` in the table's own units.
    pub fn table_sigmas(&self) -> (f64, f64) {
        match self {
            Regime::Easy => (0.1, 0.5),
            Regime::Medium => (1.0, 5.0),
            Regime::Hard => (10.0, 50.0),
        }
    }
}

/// How the tabulated regime numbers are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeUnits {
    /// Rotation in degrees, translation in decimeters.
    #[default]
    DegreesDecimeters,
    /// Rotation in radians, translation in meters.
    RadiansMeters,
    /// Rotation in degrees, translation in centimeters.
    DegreesCentimeters,
}

/// Measurement and initial-guess noise of one simulated loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// LiDAR range noise, meters.
    pub point_sigma: f64,
    /// Pixel noise variance per coordinate, px^2.
    pub sigma_p: f64,
    /// Pixel variance handed to the solver; defaults to `sigma_p`.
    pub assumed_sigma_p: Option<f64>,
    /// Mean camera-to-LiDAR time offset, seconds.
    pub time_offset_mean: f64,
    /// Standard deviation of the per-frame time offset, seconds.
    pub time_offset_sigma: f64,
    /// Extrinsic perturbation standard deviations, meters and radians.
    pub extrinsic_translation_sigma: f64,
    pub extrinsic_rotation_sigma: f64,
    /// Fraction of indirect matches replaced by wrong pairs.
    pub mismatch_rate: f64,
    /// Reference depth noise, meters.
    pub depth_sigma: f64,
    /// Drift accumulated inside the revisit pass, m/s and rad/s.
    pub drift_rate_translation: f64,
    pub drift_rate_rotation: f64,
    pub regime: Regime,
    pub units: RegimeUnits,
    /// Explicit initial-guess sigmas `[rotation rad, translation m]`, replacing the regime.
    pub init_sigmas: Option<[f64; 2]>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            point_sigma: 0.01,
            sigma_p: 1.0,
            assumed_sigma_p: None,
            time_offset_mean: 0.0,
            time_offset_sigma: 0.002,
            extrinsic_translation_sigma: 0.002,
            extrinsic_rotation_sigma: 0.001,
            mismatch_rate: 0.1,
            depth_sigma: 0.0,
            drift_rate_translation: 0.0,
            drift_rate_rotation: 0.0,
            regime: Regime::Easy,
            units: RegimeUnits::default(),
            init_sigmas: None,
        }
    }
}

/// Pixel variance the solver uses when the channel is noise-free.
const NOMINAL_SIGMA_P: f64 = 1.0;

impl NoiseSpec {
    /// Every measurement exact; only the initial guess is perturbed.
    pub fn zero(regime: Regime) -> Self {
        NoiseSpec {
            point_sigma: 0.0,
            sigma_p: 0.0,
            assumed_sigma_p: None,
            time_offset_mean: 0.0,
            time_offset_sigma: 0.0,
            extrinsic_translation_sigma: 0.0,
            extrinsic_rotation_sigma: 0.0,
            mismatch_rate: 0.0,
            depth_sigma: 0.0,
            drift_rate_translation: 0.0,
            drift_rate_rotation: 0.0,
            regime,
            units: RegimeUnits::default(),
            init_sigmas: None,
        }
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    /// Initial-guess standard deviations `(rotation rad, translation m)` per axis.
    pub fn init_sigmas(&self) -> (f64, f64) {
        if let Some([r, t]) = self.init_sigmas {
            return (r, t);
        }
        let (th, t) = self.regime.table_sigmas();
        match self.units {
            RegimeUnits::DegreesDecimeters => (th.to_radians(), t * 0.1),
            RegimeUnits::RadiansMeters => (th, t),
            RegimeUnits::DegreesCentimeters => (th.to_radians(), t * 0.01),
        }
    }

    pub fn solver_sigma_p(&self) -> f64 {
        let s = self.assumed_sigma_p.unwrap_or(self.sigma_p);
        if s > 0.0 {
            s
        } else {
            NOMINAL_SIGMA_P
        }
    }

    pub fn extrinsic_covariance(&self) -> Covariance6 {
        let a = self.extrinsic_translation_sigma.powi(2);
        let b = self.extrinsic_rotation_sigma.powi(2);
        Covariance6::from_diagonal(&[a, a, a, b, b, b])
    }

    /// Every field is checked; all violations are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let fields = [
            ("point_sigma", self.point_sigma),
            ("sigma_p", self.sigma_p),
            ("time_offset_sigma", self.time_offset_sigma),
            ("extrinsic_translation_sigma", self.extrinsic_translation_sigma),
            ("extrinsic_rotation_sigma", self.extrinsic_rotation_sigma),
            ("depth_sigma", self.depth_sigma),
            ("drift_rate_translation", self.drift_rate_translation),
            ("drift_rate_rotation", self.drift_rate_rotation),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be a non-negative number (got {v})"));
            }
        }
        if !self.time_offset_mean.is_finite() {
            bad.push("time_offset_mean must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.mismatch_rate) {
            bad.push(format!("mismatch_rate must lie in [0, 1] (got {})", self.mismatch_rate));
        }
        if let Some(s) = self.assumed_sigma_p {
            if !(s > 0.0 && s.is_finite()) {
                bad.push(format!("assumed_sigma_p must be positive (got {s})"));
            }
        }
        if let Some(v) = self.init_sigmas {
            if !v.iter().all(|x| *x >= 0.0 && x.is_finite()) {
                bad.push(format!("init_sigmas must be non-negative (got {v:?})"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }
}
