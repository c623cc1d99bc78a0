//! Python bindings: topology queries, ingestion, hourly tables, interval
//! calibration, the simulator and the end-to-end pipeline.

use std::collections::BTreeMap;

use buildkg_core::conjunction::{self, ConjunctionReport, Direction};
use buildkg_core::ingest::{self, EventKind};
use buildkg_core::pipeline::{self, PipelineConfig};
use buildkg_core::query;
use buildkg_core::sample::sample_building;
use buildkg_core::simulator::{self, SimConfig};
use buildkg_core::timeprob::{self, BuildingClock, ThresholdPolicy};
use buildkg_core::topology::{self, TopologyGraph};
use buildkg_core::Ucode;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn direction(s: &str) -> PyResult<Direction> {
    s.parse().map_err(value_err)
}

/// A typed building graph.
#[pyclass(name = "Topology", module = "buildkg", frozen)]
pub struct PyTopology {
    graph: TopologyGraph,
}

#[pymethods]
impl PyTopology {
    /// Parses a JSON topology document.
    #[new]
    fn new(document: &str) -> PyResult<Self> {
        let graph = topology::load_topology(document).map_err(value_err)?;
        Ok(PyTopology { graph })
    }

    /// The bundled five-storey sample building.
    #[staticmethod]
    fn sample() -> Self {
        PyTopology {
            graph: sample_building(),
        }
    }

    fn __len__(&self) -> usize {
        self.graph.len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.graph.to_document()).map_err(value_err)
    }

    /// Hop distance between two spaces, or None when unreachable.
    fn hops(&self, a: &str, b: &str) -> PyResult<Option<u32>> {
        self.graph.hops(a, b).map_err(value_err)
    }

    fn hops_to_elevator(&self, space: &str) -> PyResult<Option<u32>> {
        self.graph.hops_to_elevator(space).map_err(value_err)
    }

    fn floor_value(&self, space: &str) -> PyResult<i32> {
        self.graph.floor_value(space).map_err(value_err)
    }

    #[pyo3(signature = (space, element_type=None))]
    fn elements_in_space(&self, space: &str, element_type: Option<&str>) -> PyResult<Vec<String>> {
        let found = self
            .graph
            .elements_in_space(space, element_type)
            .map_err(value_err)?;
        Ok(found.into_iter().map(|e| e.ucode.to_string()).collect())
    }

    fn storeys_served_by(&self, zone: &str) -> PyResult<Vec<String>> {
        let found = self.graph.storeys_served_by(zone).map_err(value_err)?;
        Ok(found.into_iter().map(|e| e.ucode.to_string()).collect())
    }

    /// Runs a query; returns (columns, rows) with every term as a string.
    fn query(&self, text: &str) -> PyResult<(Vec<String>, Vec<Vec<String>>)> {
        let ast = query::parse_query(text).map_err(value_err)?;
        let table = query::execute(&ast, &self.graph).map_err(value_err)?;
        let rows = table
            .rows
            .iter()
            .map(|r| r.iter().map(|t| t.value().to_owned()).collect())
            .collect();
        Ok((table.columns.clone(), rows))
    }

    /// Same as `query` but rendered as CSV.
    fn query_csv(&self, text: &str) -> PyResult<String> {
        let ast = query::parse_query(text).map_err(value_err)?;
        Ok(query::execute(&ast, &self.graph)
            .map_err(value_err)?
            .to_csv())
    }
}

/// Normalized semantic events.
#[pyclass(name = "EventStream", module = "buildkg", frozen)]
pub struct PyEventStream {
    stream: ingest::EventStream,
}

#[pymethods]
impl PyEventStream {
    fn __len__(&self) -> usize {
        self.stream.len()
    }

    /// Number of events of a kind such as "LightOn" or "ElevatorArriving".
    fn count(&self, kind: &str) -> PyResult<usize> {
        let kind: EventKind = kind.parse().map_err(value_err)?;
        Ok(self.stream.count(kind))
    }

    fn to_csv(&self) -> String {
        self.stream.to_csv()
    }

    /// Hourly probability table of one element's events.
    #[pyo3(signature = (element, kind, utc_offset_s=0))]
    fn hourly_table(
        &self,
        element: &str,
        kind: &str,
        utc_offset_s: i32,
    ) -> PyResult<PyHourlyTable> {
        let kind: EventKind = kind.parse().map_err(value_err)?;
        let clock = BuildingClock::with_offset(utc_offset_s).map_err(value_err)?;
        let table = timeprob::build_table(&Ucode::new(element), kind, &self.stream.records, clock);
        Ok(PyHourlyTable { table })
    }
}

/// Normalizes JSON-lines sensor samples against a topology.
#[pyfunction]
#[pyo3(name = "ingest")]
fn normalize_samples(topology: &PyTopology, jsonl: &str) -> PyResult<PyEventStream> {
    let samples = ingest::parse_samples(jsonl).map_err(value_err)?;
    let stream = ingest::normalize(&samples, &topology.graph).map_err(value_err)?;
    Ok(PyEventStream { stream })
}

/// 24-bin empirical distribution of an event's hour of day.
#[pyclass(name = "HourlyTable", module = "buildkg", frozen)]
pub struct PyHourlyTable {
    table: timeprob::HourlyProbTable,
}

#[pymethods]
impl PyHourlyTable {
    #[getter]
    fn bins(&self) -> Vec<f64> {
        self.table.bins.to_vec()
    }

    #[getter]
    fn count(&self) -> usize {
        self.table.count
    }

    #[getter]
    fn median_hour(&self) -> f64 {
        self.table.median_hour
    }

    #[getter]
    fn std_hour(&self) -> f64 {
        self.table.std_hour
    }

    /// Threshold under a policy string: `0.1`, `fixed:0.1` or `mass:0.05`.
    fn threshold(&self, policy: &str) -> PyResult<f64> {
        let policy: ThresholdPolicy = policy.parse().map_err(value_err)?;
        timeprob::suggest_threshold(&self.table, policy).map_err(value_err)
    }

    /// True when an event at `hour` falls in a bin below the threshold.
    fn is_abnormal(&self, hour: f64, threshold: f64) -> bool {
        self.table.bins[(hour.rem_euclid(24.0) as usize).min(23)] < threshold
    }
}

/// Fitted interval regression Δt = alpha + beta1·hops + beta2·floor.
#[pyclass(name = "OlsModel", module = "buildkg", frozen)]
pub struct PyOlsModel {
    model: conjunction::OlsModel,
}

#[pymethods]
impl PyOlsModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = conjunction::OlsModel::from_json(text).map_err(value_err)?;
        Ok(PyOlsModel { model })
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.model.direction.as_str()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.model.alpha
    }

    #[getter]
    fn beta1(&self) -> f64 {
        self.model.beta1
    }

    #[getter]
    fn beta2(&self) -> f64 {
        self.model.beta2
    }

    #[getter]
    fn n(&self) -> usize {
        self.model.n
    }

    #[getter]
    fn per_space_sigma(&self) -> BTreeMap<String, f64> {
        self.model
            .residual_std_per_space
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }

    fn predict(&self, hops: u32, floor: i32) -> f64 {
        self.model.predict(hops, floor)
    }

    fn to_json(&self) -> String {
        self.model.to_json()
    }

    /// Acceptance windows per room as {space: (min, max)}; rooms without a
    /// residual estimate are omitted.
    #[pyo3(signature = (topology, k1=1.0, k2=2.0))]
    fn windows(
        &self,
        topology: &PyTopology,
        k1: f64,
        k2: f64,
    ) -> PyResult<BTreeMap<String, (f64, f64)>> {
        let features = conjunction::room_features(&topology.graph).map_err(value_err)?;
        let set = conjunction::build_windows(&self.model, &features, k1, k2).map_err(value_err)?;
        Ok(set
            .windows
            .iter()
            .filter_map(|(k, w)| w.as_ref().map(|w| (k.to_string(), (w.min, w.max))))
            .collect())
    }
}

/// Pairs events in one direction and fits the interval regression.
#[pyfunction]
#[pyo3(signature = (topology, stream, direction="lightoff-elevator", coarse_s=300.0))]
fn calibrate(
    topology: &PyTopology,
    stream: &PyEventStream,
    direction: &str,
    coarse_s: f64,
) -> PyResult<PyOlsModel> {
    let pairs = conjunction::pair_events(
        &stream.stream,
        &topology.graph,
        self::direction(direction)?,
        coarse_s,
    )
    .map_err(value_err)?;
    let model = conjunction::fit_ols(&pairs).map_err(value_err)?;
    Ok(PyOlsModel { model })
}

/// Window bounds (min, max) for a predicted interval and spread.
#[pyfunction]
#[pyo3(signature = (mu, sigma, k1=1.0, k2=2.0))]
fn window(mu: f64, sigma: f64, k1: f64, k2: f64) -> (f64, f64) {
    let w = conjunction::Window::new(
        Ucode::new("_"),
        Direction::LightOffToElevator,
        mu,
        sigma,
        k1,
        k2,
    );
    (w.min, w.max)
}

/// Share of a room's trigger events followed by a conjunctive elevator event.
#[pyfunction]
fn conditional_probability(count_room: usize, count_conj: usize) -> f64 {
    ConjunctionReport::new("_", count_room, count_conj).probability
}

/// Synthetic trace with planted conjunctions.
#[pyclass(name = "TraceBundle", module = "buildkg", frozen)]
pub struct PyTraceBundle {
    bundle: simulator::TraceBundle,
}

#[pymethods]
impl PyTraceBundle {
    fn __len__(&self) -> usize {
        self.bundle.samples.len()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.bundle.seed
    }

    #[getter]
    fn planted(&self) -> usize {
        self.bundle.truth.len()
    }

    fn samples_jsonl(&self) -> String {
        self.bundle.samples_jsonl()
    }

    fn truth_csv(&self) -> String {
        self.bundle.truth_csv()
    }
}

/// Runs the simulator. `config` is a JSON config; the keyword overrides apply
/// on top of it (or of the defaults).
#[pyfunction]
#[pyo3(signature = (topology, config=None, days=None, seed=None, noise_std=None, noise_free=false))]
fn simulate(
    topology: &PyTopology,
    config: Option<&str>,
    days: Option<u32>,
    seed: Option<u64>,
    noise_std: Option<f64>,
    noise_free: bool,
) -> PyResult<PyTraceBundle> {
    let mut cfg = match (config, noise_free) {
        (Some(text), _) => SimConfig::from_json(text).map_err(value_err)?,
        (None, true) => SimConfig::noise_free(),
        (None, false) => SimConfig::default(),
    };
    if let Some(d) = days {
        cfg.days = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = noise_std {
        cfg = cfg.with_noise(n);
    }
    let bundle = simulator::simulate(&topology.graph, &cfg).map_err(value_err)?;
    Ok(PyTraceBundle { bundle })
}

/// Precision and recall of a verdicts CSV against a truth CSV.
#[pyfunction]
#[pyo3(signature = (truth_csv, verdicts_csv, direction=None))]
fn score(truth_csv: &str, verdicts_csv: &str, direction: Option<&str>) -> PyResult<(f64, f64)> {
    let mut truth = simulator::truth_from_csv(truth_csv).map_err(value_err)?;
    if let Some(d) = direction {
        let d = self::direction(d)?;
        truth.retain(|t| t.direction == d);
    }
    let detections = conjunction::detections_from_csv(verdicts_csv).map_err(value_err)?;
    let s = simulator::score_detector(&truth, &detections);
    Ok((s.precision, s.recall))
}

/// Runs every stage; returns {file name: contents}.
#[pyfunction]
#[pyo3(signature = (topology, jsonl, pbar="0.1", coarse_s=300.0, k1=1.0, k2=2.0, direction="lightoff-elevator"))]
fn run_pipeline(
    topology: &PyTopology,
    jsonl: &str,
    pbar: &str,
    coarse_s: f64,
    k1: f64,
    k2: f64,
    direction: &str,
) -> PyResult<BTreeMap<&'static str, String>> {
    let samples = ingest::parse_samples(jsonl).map_err(value_err)?;
    let cfg = PipelineConfig {
        pbar: pbar.parse().map_err(value_err)?,
        coarse_s,
        k1,
        k2,
        direction: self::direction(direction)?,
        ..PipelineConfig::default()
    };
    let out = pipeline::run_pipeline(&topology.graph, &samples, &cfg).map_err(value_err)?;
    Ok(out
        .files()
        .into_iter()
        .map(|(k, v)| (k, v.to_owned()))
        .collect())
}

/// Status payload for a ucode as a JSON string, like the HTTP endpoint.
#[pyfunction]
#[pyo3(signature = (topology, jsonl, ucode, from_time=None, to_time=None))]
fn status(
    topology: &PyTopology,
    jsonl: &str,
    ucode: &str,
    from_time: Option<&str>,
    to_time: Option<&str>,
) -> PyResult<String> {
    let samples = ingest::parse_samples(jsonl).map_err(value_err)?;
    let store = ingest::StatusStore::new(topology.graph.clone(), samples).map_err(value_err)?;
    match store.serve_get(ucode, from_time, to_time) {
        Ok(payload) => serde_json::to_string(&payload).map_err(value_err),
        Err(e) if e.status_code() == 404 => Err(PyKeyError::new_err(e.to_string())),
        Err(e) => Err(value_err(e)),
    }
}

#[pymodule]
fn buildkg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyEventStream>()?;
    m.add_class::<PyHourlyTable>()?;
    m.add_class::<PyOlsModel>()?;
    m.add_class::<PyTraceBundle>()?;
    m.add_function(wrap_pyfunction!(normalize_samples, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(window, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_probability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(status, m)?)?;
    Ok(())
}
