//! Experiment runner and report generator: regime-by-method sweeps written as
//! CSV and JSON lines, and SVG plots of sequential fusion traces.

mod error;
mod plot;
mod run;
mod spec;

pub use error::CliError;
pub use plot::{convergence_svg, evidence_svg, plot_trace};
pub use run::{
    aggregate, read_jsonl, run_experiment, write_jsonl, ResultRow, ResultTable, RunOptions, RunOutput, TrialRecord,
    CSV_HEADER,
};
pub use spec::{validate_config, ExperimentSpec, ResolvedSpec};
