use std::path::{Path, PathBuf};

use photogeo_core::pipeline::{Method, PipelineConfig};
use photogeo_core::scenesim::{Regime, ScenarioConfig, MAX_PAIRS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One regime-by-method sweep, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Scenario file, relative to the experiment file. The default scenario when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub regimes: Vec<Regime>,
    pub out: PathBuf,
    pub seed_base: u64,
    /// Record wall-clock solve times. Off by default so outputs stay reproducible.
    pub record_time: bool,
    /// Write one fusion trace per sequential trial.
    pub traces: bool,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: None,
            methods: Method::ALL.to_vec(),
            trials: 50,
            regimes: Regime::ALL.to_vec(),
            out: PathBuf::from("results"),
            seed_base: 0,
            record_time: false,
            traces: false,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// An experiment with its scenario loaded and every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSpec {
    #[serde(flatten)]
    pub experiment: ExperimentSpec,
    #[serde(rename = "resolved_scenario")]
    pub scenario: ScenarioConfig,
}

impl ResolvedSpec {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved spec serializes")
    }
}

const KEYS: [&str; 9] = [
    "scenario",
    "methods",
    "trials",
    "regimes",
    "out",
    "seed_base",
    "record_time",
    "traces",
    "pipeline",
];

fn valid_methods() -> String {
    Method::ALL.map(|m| m.as_str()).join(", ")
}

fn valid_regimes() -> String {
    Regime::ALL.map(|r| r.as_str()).join(", ")
}

fn parse_error_line(text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].lines().count().max(1);
            format!("line {line}: {}", err.message())
        }
        None => err.message().to_string(),
    }
}

/// Reads and checks an experiment file. Every problem found is reported,
/// not just the first.
pub fn validate_config(path: &Path) -> Result<ResolvedSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(vec![format!("{}: {}", path.display(), parse_error_line(&text, &e))]))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut spec = ExperimentSpec::default();
    let mut diags = Vec::new();

    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            diags.push(format!("unknown field `{key}` (expected one of: {})", KEYS.join(", ")));
        }
    }

    if let Some(v) = table.get("methods") {
        match v.as_array() {
            Some(items) => {
                let mut methods = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    match item.as_str().and_then(Method::parse) {
                        Some(m) => methods.push(m),
                        None => diags.push(format!(
                            "methods[{i}]: unknown method {item} (valid: {})",
                            valid_methods()
                        )),
                    }
                }
                if items.is_empty() {
                    diags.push(format!("methods must not be empty (valid: {})", valid_methods()));
                }
                spec.methods = methods;
            }
            None => diags.push(format!(
                "methods must be an array of strings (valid: {})",
                valid_methods()
            )),
        }
    }

    if let Some(v) = table.get("regimes") {
        match v.as_array() {
            Some(items) => {
                let mut regimes = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    match item.as_str().and_then(Regime::parse) {
                        Some(r) => regimes.push(r),
                        None => diags.push(format!(
                            "regimes[{i}]: unknown regime {item} (valid: {})",
                            valid_regimes()
                        )),
                    }
                }
                if items.is_empty() {
                    diags.push(format!("regimes must not be empty (valid: {})", valid_regimes()));
                }
                spec.regimes = regimes;
            }
            None => diags.push(format!(
                "regimes must be an array of strings (valid: {})",
                valid_regimes()
            )),
        }
    }

    if let Some(v) = table.get("trials") {
        match v.as_integer() {
            Some(n) if n >= 1 => spec.trials = n as usize,
            Some(n) => diags.push(format!("trials must be at least 1 (got {n})")),
            None => diags.push(format!("trials must be an integer (got {v})")),
        }
    }

    if let Some(v) = table.get("seed_base") {
        match v.as_integer() {
            Some(n) if n >= 0 => spec.seed_base = n as u64,
            _ => diags.push(format!("seed_base must be a non-negative integer (got {v})")),
        }
    }

    if let Some(v) = table.get("out") {
        match v.as_str() {
            Some(s) if !s.is_empty() => spec.out = PathBuf::from(s),
            _ => diags.push(format!("out must be a non-empty path (got {v})")),
        }
    }

    for (key, slot) in [("record_time", &mut spec.record_time), ("traces", &mut spec.traces)] {
        if let Some(v) = table.get(key) {
            match v.as_bool() {
                Some(b) => *slot = b,
                None => diags.push(format!("{key} must be true or false (got {v})")),
            }
        }
    }

    if let Some(v) = table.get("pipeline") {
        match v.clone().try_into::<PipelineConfig>() {
            Ok(p) => {
                if let Err(e) = p.solver.validate() {
                    diags.push(format!("pipeline.solver: {e}"));
                }
                if !(p.success_translation > 0.0 && p.success_rotation > 0.0) {
                    diags.push("pipeline: success bounds must be positive".into());
                }
                spec.pipeline = p;
            }
            Err(e) => diags.push(format!("pipeline: {}", e.message())),
        }
    }

    let mut scenario = ScenarioConfig::default();
    if let Some(v) = table.get("scenario") {
        match v.as_str() {
            Some(s) => {
                spec.scenario = Some(PathBuf::from(s));
                let file = base.join(s);
                match std::fs::read_to_string(&file) {
                    Ok(text) => match toml::from_str::<ScenarioConfig>(&text) {
                        Ok(sc) => scenario = sc,
                        Err(e) => diags.push(format!("scenario {}: {}", file.display(), parse_error_line(&text, &e))),
                    },
                    Err(e) => diags.push(format!("scenario: cannot read {}: {e}", file.display())),
                }
            }
            None => diags.push(format!("scenario must be a path (got {v})")),
        }
    }
    if let Err(e) = scenario.noise.validate() {
        diags.push(format!("scenario.noise: {e}"));
    }
    if scenario.n_pairs == 0 || scenario.n_pairs > MAX_PAIRS {
        diags.push(format!(
            "scenario.n_pairs must lie in 1..={MAX_PAIRS} (got {})",
            scenario.n_pairs
        ));
    }
    if let Some(&bad) = scenario.options.false_pairs.iter().find(|&&i| i >= scenario.n_pairs) {
        diags.push(format!(
            "scenario.options.false_pairs: pair {bad} outside 0..{}",
            scenario.n_pairs
        ));
    }

    if diags.is_empty() {
        Ok(ResolvedSpec {
            experiment: spec,
            scenario,
        })
    } else {
        Err(CliError::Config(diags))
    }
}
