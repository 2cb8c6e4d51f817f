use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use photogeo_core::pipeline::{run_trial, Method, TrialOutcome};
use photogeo_core::scenesim::{Regime, SceneKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::spec::ResolvedSpec;

pub const CSV_HEADER: [&str; 8] = [
    "method",
    "regime",
    "trials",
    "success_rate",
    "et_rmse_m",
    "er_rmse_rad",
    "mean_time_s",
    "mean_in",
];

/// Command-line overrides of the experiment file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

/// One JSON-lines record: a method on one simulated loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub regime: Regime,
    pub trial: usize,
    pub scene: SceneKind,
    #[serde(flatten)]
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub regime: Regime,
    pub trials: usize,
    pub success_rate: f64,
    /// Over successful trials only; NaN when none succeeded.
    pub et_rmse_m: f64,
    pub er_rmse_rad: f64,
    /// NaN unless times were recorded.
    pub mean_time_s: f64,
    /// Mean number of place pairs consumed.
    pub mean_in: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, method: Method, regime: Regime) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.regime == regime)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                r.regime.as_str().to_string(),
                r.trials.to_string(),
                r.success_rate.to_string(),
                r.et_rmse_m.to_string(),
                r.er_rmse_rad.to_string(),
                r.mean_time_s.to_string(),
                r.mean_in.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

fn rmse(v: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in v {
        sum += x * x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Aggregates trial records into one row per (method, regime), in the given order.
pub fn aggregate(records: &[TrialRecord], methods: &[Method], regimes: &[Regime]) -> ResultTable {
    let mut rows = Vec::new();
    for &method in methods {
        for &regime in regimes {
            let cell: Vec<&TrialOutcome> = records
                .iter()
                .filter(|r| r.regime == regime && r.outcome.method == method)
                .map(|r| &r.outcome)
                .collect();
            let n = cell.len();
            if n == 0 {
                continue;
            }
            let ok: Vec<&&TrialOutcome> = cell.iter().filter(|o| o.success).collect();
            let times: Option<Vec<f64>> = cell.iter().map(|o| o.solve_time).collect();
            rows.push(ResultRow {
                method,
                regime,
                trials: n,
                success_rate: ok.len() as f64 / n as f64,
                et_rmse_m: rmse(ok.iter().filter_map(|o| o.error_t)),
                er_rmse_rad: rmse(ok.iter().filter_map(|o| o.error_r)),
                mean_time_s: times.map_or(f64::NAN, |t| t.iter().sum::<f64>() / n as f64),
                mean_in: cell.iter().map(|o| o.fusion_length as f64).sum::<f64>() / n as f64,
            });
        }
    }
    ResultTable { rows }
}

/// Output locations of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub records: Vec<TrialRecord>,
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub jsonl: PathBuf,
}

/// Runs every trial of the experiment and writes `results.csv`, `trials.jsonl`,
/// `resolved.toml` and, when asked for, one fusion trace per sequential trial.
///
/// Trials run in parallel, but results are collected in (regime, trial,
/// method) order, so the outputs do not depend on the thread count.
pub fn run_experiment(spec: &ResolvedSpec, opts: &RunOptions) -> Result<RunOutput, CliError> {
    let exp = &spec.experiment;
    let dir = opts.out.clone().unwrap_or_else(|| exp.out.clone());
    let seed_base = opts.seed.unwrap_or(exp.seed_base);
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;

    let tasks: Vec<(Regime, usize)> = exp
        .regimes
        .iter()
        .flat_map(|&r| (0..exp.trials).map(move |t| (r, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<Result<Vec<TrialRecord>, CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(regime, trial)| {
                let mut scenario = spec.scenario.clone();
                scenario.noise.regime = regime;
                let sim = scenario.simulate(seed_base + trial as u64)?;
                Ok(exp
                    .methods
                    .iter()
                    .map(|&m| TrialRecord {
                        regime,
                        trial,
                        scene: scenario.scene,
                        outcome: run_trial(&sim, m, &exp.pipeline, &[], exp.record_time),
                    })
                    .collect())
            })
            .collect()
    });
    let mut records = Vec::with_capacity(tasks.len() * exp.methods.len());
    for r in results {
        records.extend(r?);
    }

    let table = aggregate(&records, &exp.methods, &exp.regimes);
    let csv_path = dir.join("results.csv");
    fs::write(&csv_path, table.to_csv())?;
    let jsonl_path = dir.join("trials.jsonl");
    write_jsonl(&jsonl_path, &records)?;
    let resolved = ResolvedSpec {
        experiment: crate::spec::ExperimentSpec {
            seed_base,
            out: dir.clone(),
            ..exp.clone()
        },
        scenario: spec.scenario.clone(),
    };
    fs::write(dir.join("resolved.toml"), resolved.to_toml())?;
    if exp.traces {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for r in records.iter().filter(|r| r.outcome.method.sequential()) {
            let name = format!(
                "{}_{}_{}.jsonl",
                r.outcome.method.as_str().replace('+', "plus"),
                r.regime.as_str(),
                r.outcome.seed
            );
            write_jsonl(&traces.join(name), &r.outcome.fusion)?;
        }
    }
    Ok(RunOutput {
        table,
        records,
        dir,
        csv: csv_path,
        jsonl: jsonl_path,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads JSON-lines records; the error names the offending line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
