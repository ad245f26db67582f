//! Experiment orchestration: configs and presets, attack rosters, the
//! round loop, metrics and report files.

mod config;
mod metrics;
mod report;
mod roster;
mod run;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub use config::{
    DataSource, DatasetConfig, ExperimentConfig, ModelConfig, Preset, RosterConfig, SeedConfig,
};
pub use metrics::{
    classification_metrics, detection_ratio, ClassMetrics, ClientDetection, DetectionSummary,
    KindDetection, Ratio,
};
pub use report::{
    confusion_csv, emit_reports, metrics_csv, summary_json, verdicts_csv, CONFUSION_FILE,
    METRICS_FILE, SUMMARY_FILE, VERDICTS_FILE,
};
pub use roster::{build_exp_series, ExpSeries, RoleCounts};
pub use run::{build_clients, load_data, run_experiment, RoundReport, RunOutput, Summary};

use crate::baselines::{AggregatorError, AggregatorKind};
use crate::clients::ClientError;
use crate::data::DataError;
use crate::defense::DefenseError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("series index {0} outside 1..=6")]
    BadIndex(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        source: Box<HarnessError>,
    },
}

/// One row of a comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub aggregator: AggregatorKind,
    pub summary: Summary,
}

/// Runs `cfg` once per aggregator, writing each run's reports under
/// `out_dir/<aggregator>/` and a joint `comparison.csv` in `out_dir`.
pub fn compare(
    cfg: &ExperimentConfig,
    kinds: &[AggregatorKind],
    out_dir: Option<&Path>,
) -> Result<Vec<CompareRow>, HarnessError> {
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut c = cfg.clone();
        c.aggregator = kind;
        let output = run_experiment(&c)?;
        if let Some(dir) = out_dir {
            emit_reports(&output, &dir.join(kind.name()))?;
        }
        rows.push(CompareRow {
            aggregator: kind,
            summary: output.summary,
        });
    }
    if let Some(dir) = out_dir {
        let path = dir.join("comparison.csv");
        std::fs::write(&path, comparison_csv(&rows)).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[CompareRow]) -> String {
    let mut out =
        String::from("aggregator,final_accuracy,source_recall,target_precision,detection_ratio\n");
    for r in rows {
        let s = &r.summary;
        let det = s
            .detection
            .as_ref()
            .and_then(|d| d.overall)
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{det}",
            r.aggregator, s.final_accuracy, s.final_source_recall, s.final_target_precision
        )
        .unwrap();
    }
    out
}
