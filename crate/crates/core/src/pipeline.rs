//! End-to-end analysis of one sample stream.
//!
//! Stages run in order and the first failure aborts the run, naming its
//! stage. All outputs are rendered to strings so that identical inputs give
//! byte-identical files.

use std::fmt;

use crate::conjunction::{
    build_windows, detect, detections_to_csv, fit_ols, pair_events, report, room_features,
    Direction, DEFAULT_COARSE_S, DEFAULT_K1, DEFAULT_K2,
};
use crate::ingest::{normalize, EventKind, SensorSample};
use crate::timeprob::{
    build_tables, classify, suggest_threshold, tables_to_csv, verdicts_to_csv, BuildingClock,
    ThresholdPolicy, DEFAULT_PBAR,
};
use crate::topology::TopologyGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Stats,
    Anomalies,
    Pair,
    Calibrate,
    Windows,
    Detect,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::Anomalies => "anomalies",
            Stage::Pair => "pair",
            Stage::Calibrate => "calibrate",
            Stage::Windows => "windows",
            Stage::Detect => "detect",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage `{stage}` failed: {cause}")]
pub struct PipelineError {
    pub stage: Stage,
    pub cause: String,
}

impl PipelineError {
    pub fn new(stage: Stage, cause: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            cause: cause.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pbar: ThresholdPolicy,
    pub coarse_s: f64,
    pub k1: f64,
    pub k2: f64,
    pub direction: Direction,
    pub clock: BuildingClock,
    /// Rooms with fewer room events are left out of the per-room report rows.
    pub min_room_events: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pbar: ThresholdPolicy::Fixed(DEFAULT_PBAR),
            coarse_s: DEFAULT_COARSE_S,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            direction: Direction::LightOffToElevator,
            clock: BuildingClock::utc(),
            min_room_events: 0,
        }
    }
}

/// Rendered output files, keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutputs {
    pub stats_csv: String,
    pub anomalies_csv: String,
    pub model_json: String,
    pub verdicts_csv: String,
    pub report_csv: String,
}

impl PipelineOutputs {
    pub fn files(&self) -> [(&'static str, &str); 5] {
        [
            ("stats.csv", &self.stats_csv),
            ("anomalies.csv", &self.anomalies_csv),
            ("model.json", &self.model_json),
            ("verdicts.csv", &self.verdicts_csv),
            ("report.csv", &self.report_csv),
        ]
    }
}

const LIGHT_KINDS: [EventKind; 2] = [EventKind::LightOn, EventKind::LightOff];

pub fn run_pipeline(
    g: &TopologyGraph,
    samples: &[SensorSample],
    cfg: &PipelineConfig,
) -> Result<PipelineOutputs, PipelineError> {
    let stream = normalize(samples, g).map_err(|e| PipelineError::new(Stage::Ingest, e))?;

    let tables = build_tables(&stream, &LIGHT_KINDS, cfg.clock);
    let stats_csv = tables_to_csv(&tables);

    let mut verdicts = Vec::new();
    for table in &tables {
        let threshold = suggest_threshold(table, cfg.pbar)
            .map_err(|e| PipelineError::new(Stage::Anomalies, e))?;
        for event in stream
            .records
            .iter()
            .filter(|r| r.kind == table.kind && r.element == table.element)
        {
            verdicts.push(
                classify(event, table, threshold)
                    .map_err(|e| PipelineError::new(Stage::Anomalies, e))?,
            );
        }
    }
    verdicts
        .sort_by(|a, b| (a.event.time, &a.event.element).cmp(&(b.event.time, &b.event.element)));
    let anomalies_csv = verdicts_to_csv(&verdicts);

    let samples = pair_events(&stream, g, cfg.direction, cfg.coarse_s)
        .map_err(|e| PipelineError::new(Stage::Pair, e))?;
    let model = fit_ols(&samples).map_err(|e| PipelineError::new(Stage::Calibrate, e))?;
    let features = room_features(g).map_err(|e| PipelineError::new(Stage::Windows, e))?;
    let windows = build_windows(&model, &features, cfg.k1, cfg.k2)
        .map_err(|e| PipelineError::new(Stage::Windows, e))?;
    let detections = detect(&stream, g, &windows, cfg.coarse_s)
        .map_err(|e| PipelineError::new(Stage::Detect, e))?;
    let summary = report(&detections, &stream, cfg.direction, cfg.min_room_events);

    Ok(PipelineOutputs {
        stats_csv,
        anomalies_csv,
        model_json: model.to_json(),
        verdicts_csv: detections_to_csv(&detections),
        report_csv: summary.to_csv(),
    })
}
