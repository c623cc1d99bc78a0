//! Event conjunction between room lights and the elevator.
//!
//! Candidate pairs are formed from the event stream ([`pair_events`]) and
//! kept only if the interval is within a coarse bound. The expected interval
//! of a room is calibrated by ordinary least squares on two topology
//! features ([`fit_ols`]):
//!
//! ```text
//! Δt = α + β1·hops + β2·floor
//! ```
//!
//! where `hops` counts `adjacentZone` steps from the room to the elevator
//! hall of its storey and `floor` is the storey's floor value. Each room gets
//! an acceptance window `[μ − K1·σ, μ + K2·σ]` around its predicted interval
//! ([`build_windows`]); a pair is conjunctive when its interval falls inside
//! ([`detect`]). [`report`] turns verdicts into per-room conditional
//! probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp, EventKind, EventRecord, EventStream};
use crate::topology::{EntityKind, TopologyError, TopologyGraph, Ucode, LIGHT};

/// Upper bound on candidate intervals, in seconds.
pub const DEFAULT_COARSE_S: f64 = 300.0;
pub const DEFAULT_K1: f64 = 1.0;
pub const DEFAULT_K2: f64 = 2.0;

/// Slack on window bounds absorbing rounding in the regression arithmetic.
/// Far below the one-second resolution of event timestamps.
pub const WINDOW_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjunctionError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("space `{0}` has no adjacentZone path to its elevator hall")]
    Unreachable(String),
    #[error("need at least 3 interval samples, got {0}")]
    InsufficientSamples(usize),
    #[error("design matrix is rank deficient: hops and floor values do not vary independently")]
    RankDeficient,
    #[error("interval samples mix directions")]
    MixedDirections,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed verdict file: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, ConjunctionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    LightOffToElevator,
    ElevatorToLightOn,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::LightOffToElevator, Direction::ElevatorToLightOn];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LightOffToElevator => "LightOffToElevator",
            Direction::ElevatorToLightOn => "ElevatorToLightOn",
        }
    }

    /// The room-side event of the pair.
    pub fn room_event(self) -> EventKind {
        match self {
            Direction::LightOffToElevator => EventKind::LightOff,
            Direction::ElevatorToLightOn => EventKind::LightOn,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "LightOffToElevator" | "lightoff-elevator" => Ok(Direction::LightOffToElevator),
            "ElevatorToLightOn" | "elevator-lighton" => Ok(Direction::ElevatorToLightOn),
            _ => Err(format!(
                "unknown direction `{s}` (expected lightoff-elevator or elevator-lighton)"
            )),
        }
    }
}

/// Regression features of one room.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SpaceFeatures {
    pub space: Ucode,
    pub hops: u32,
    pub floor: i32,
}

pub fn space_features(g: &TopologyGraph, space: &Ucode) -> Result<SpaceFeatures> {
    let floor = g.floor_value(space.as_str())?;
    let hops = g
        .hops_to_elevator(space.as_str())?
        .ok_or_else(|| ConjunctionError::Unreachable(space.to_string()))?;
    Ok(SpaceFeatures {
        space: space.clone(),
        hops,
        floor,
    })
}

/// Features of every space holding a light, in ucode order.
pub fn room_features(g: &TopologyGraph) -> Result<Vec<SpaceFeatures>> {
    g.entities()
        .filter(|e| e.kind == EntityKind::Space)
        .filter(|e| {
            g.elements_in_space(e.ucode.as_str(), Some(LIGHT))
                .is_ok_and(|v| !v.is_empty())
        })
        .map(|e| space_features(g, &e.ucode))
        .collect()
}

/// A candidate pair of room and elevator events.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSample {
    pub space: Ucode,
    pub direction: Direction,
    /// Seconds from the first event to the second.
    pub delta_t: f64,
    pub hops: u32,
    pub floor_value: i32,
    /// Time of the first event of the pair.
    pub time: DateTime<Utc>,
    /// Time of the second event of the pair.
    pub paired_time: DateTime<Utc>,
}

impl IntervalSample {
    /// Time of the room-side event.
    pub fn room_event_time(&self) -> DateTime<Utc> {
        match self.direction {
            Direction::LightOffToElevator => self.time,
            Direction::ElevatorToLightOn => self.paired_time,
        }
    }
}

fn seconds_between(a: &DateTime<Utc>, b: &DateTime<Utc>) -> f64 {
    (*b - *a).num_milliseconds() as f64 / 1000.0
}

struct FeatureCache<'g> {
    g: &'g TopologyGraph,
    cache: BTreeMap<Ucode, SpaceFeatures>,
}

impl<'g> FeatureCache<'g> {
    fn get(&mut self, space: &Ucode) -> Result<&SpaceFeatures> {
        if !self.cache.contains_key(space) {
            let f = space_features(self.g, space)?;
            self.cache.insert(space.clone(), f);
        }
        Ok(&self.cache[space])
    }
}

/// Forms candidate pairs within `coarse_s` seconds.
///
/// * `LightOffToElevator`: each light-off pairs with the first not yet
///   claimed elevator arrival at the room's floor strictly after it.
/// * `ElevatorToLightOn`: each arrival at floor `f` pairs with the first
///   subsequent light-on of every room on `f`. One arrival may serve several
///   rooms.
pub fn pair_events(
    stream: &EventStream,
    g: &TopologyGraph,
    direction: Direction,
    coarse_s: f64,
) -> Result<Vec<IntervalSample>> {
    if !(coarse_s.is_finite() && coarse_s > 0.0) {
        return Err(ConjunctionError::InvalidParameter(format!(
            "coarse bound must be positive, got {coarse_s}"
        )));
    }
    let mut records: Vec<&EventRecord> = stream.records.iter().collect();
    records.sort_by_key(|r| r.time);
    let mut features = FeatureCache {
        g,
        cache: BTreeMap::new(),
    };
    let mut out = Vec::new();

    let sample =
        |f: &SpaceFeatures, first: &DateTime<Utc>, second: &DateTime<Utc>| IntervalSample {
            space: f.space.clone(),
            direction,
            delta_t: seconds_between(first, second),
            hops: f.hops,
            floor_value: f.floor,
            time: *first,
            paired_time: *second,
        };

    match direction {
        Direction::LightOffToElevator => {
            let mut arrivals: BTreeMap<i32, Vec<(DateTime<Utc>, bool)>> = BTreeMap::new();
            for r in records
                .iter()
                .filter(|r| r.kind == EventKind::ElevatorArriving)
            {
                let floor = r.floor.expect("elevator events carry a floor");
                arrivals.entry(floor).or_default().push((r.time, false));
            }
            for r in records.iter().filter(|r| r.kind == EventKind::LightOff) {
                let f = features.get(&r.space)?;
                let Some(list) = arrivals.get_mut(&f.floor) else {
                    continue;
                };
                let start = list.partition_point(|(t, _)| *t <= r.time);
                let candidate = list[start..]
                    .iter_mut()
                    .take_while(|(t, _)| seconds_between(&r.time, t) <= coarse_s)
                    .find(|(_, claimed)| !claimed);
                if let Some((t, claimed)) = candidate {
                    *claimed = true;
                    out.push(sample(f, &r.time, t));
                }
            }
        }
        Direction::ElevatorToLightOn => {
            let mut light_ons: BTreeMap<&Ucode, Vec<DateTime<Utc>>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.kind == EventKind::LightOn) {
                light_ons.entry(&r.space).or_default().push(r.time);
            }
            let mut rooms_by_floor: BTreeMap<i32, Vec<(SpaceFeatures, &Vec<DateTime<Utc>>)>> =
                BTreeMap::new();
            for (space, times) in &light_ons {
                let f = features.get(space)?.clone();
                rooms_by_floor.entry(f.floor).or_default().push((f, times));
            }
            for r in records
                .iter()
                .filter(|r| r.kind == EventKind::ElevatorArriving)
            {
                let floor = r.floor.expect("elevator events carry a floor");
                for (f, times) in rooms_by_floor.get(&floor).into_iter().flatten() {
                    let next = times.partition_point(|t| *t <= r.time);
                    if let Some(t) = times.get(next) {
                        if seconds_between(&r.time, t) <= coarse_s {
                            out.push(sample(f, &r.time, t));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fitted interval regression of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub direction: Direction,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub n: usize,
    /// Root mean square of each room's residuals around the fitted line.
    #[serde(rename = "per_space_sigma")]
    pub residual_std_per_space: BTreeMap<Ucode, f64>,
}

impl OlsModel {
    pub fn predict(&self, hops: u32, floor: i32) -> f64 {
        self.alpha + self.beta1 * f64::from(hops) + self.beta2 * f64::from(floor)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models always serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Least-squares fit of `Δt = α + β1·hops + β2·floor`.
///
/// Solved through the centred normal equations, which reduce to a 2×2
/// system for the slopes; the intercept follows from the means.
pub fn fit_ols(samples: &[IntervalSample]) -> Result<OlsModel> {
    let n = samples.len();
    if n < 3 {
        return Err(ConjunctionError::InsufficientSamples(n));
    }
    let direction = samples[0].direction;
    if samples.iter().any(|s| s.direction != direction) {
        return Err(ConjunctionError::MixedDirections);
    }
    let nf = n as f64;
    let x1 = |s: &IntervalSample| f64::from(s.hops);
    let x2 = |s: &IntervalSample| f64::from(s.floor_value);
    let m1 = samples.iter().map(x1).sum::<f64>() / nf;
    let m2 = samples.iter().map(x2).sum::<f64>() / nf;
    let my = samples.iter().map(|s| s.delta_t).sum::<f64>() / nf;
    let (mut s11, mut s22, mut s12, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let (d1, d2, dy) = (x1(s) - m1, x2(s) - m2, s.delta_t - my);
        s11 += d1 * d1;
        s22 += d2 * d2;
        s12 += d1 * d2;
        s1y += d1 * dy;
        s2y += d2 * dy;
    }
    let det = s11 * s22 - s12 * s12;
    if !(det > 1e-10 * s11 * s22) {
        return Err(ConjunctionError::RankDeficient);
    }
    let beta1 = (s22 * s1y - s12 * s2y) / det;
    let beta2 = (s11 * s2y - s12 * s1y) / det;
    let alpha = my - beta1 * m1 - beta2 * m2;

    let mut sq: BTreeMap<&Ucode, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let r = s.delta_t - (alpha + beta1 * x1(s) + beta2 * x2(s));
        let e = sq.entry(&s.space).or_default();
        e.0 += r * r;
        e.1 += 1;
    }
    let residual_std_per_space = sq
        .into_iter()
        .map(|(space, (ss, k))| (space.clone(), (ss / k as f64).sqrt()))
        .collect();
    Ok(OlsModel {
        direction,
        alpha,
        beta1,
        beta2,
        n,
        residual_std_per_space,
    })
}

/// Acceptance window for one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub space: Ucode,
    pub direction: Direction,
    pub mu: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Window {
    /// `[max(0, μ − k1·σ), μ + k2·σ]`.
    pub fn new(space: Ucode, direction: Direction, mu: f64, sigma: f64, k1: f64, k2: f64) -> Self {
        Window {
            space,
            direction,
            mu,
            sigma,
            min: (mu - k1 * sigma).max(0.0),
            max: mu + k2 * sigma,
            k1,
            k2,
        }
    }

    /// Closed-interval membership.
    pub fn contains(&self, delta_t: f64) -> bool {
        delta_t >= self.min - WINDOW_EPSILON && delta_t <= self.max + WINDOW_EPSILON
    }
}

/// Windows of every room; `None` marks a room without training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub direction: Direction,
    pub k1: f64,
    pub k2: f64,
    pub windows: BTreeMap<Ucode, Option<Window>>,
}

impl WindowSet {
    pub fn get(&self, space: &Ucode) -> Option<&Window> {
        self.windows.get(space).and_then(Option::as_ref)
    }
}

pub fn build_windows(
    model: &OlsModel,
    spaces: &[SpaceFeatures],
    k1: f64,
    k2: f64,
) -> Result<WindowSet> {
    for (name, k) in [("k1", k1), ("k2", k2)] {
        if !(k.is_finite() && k >= 0.0) {
            return Err(ConjunctionError::InvalidParameter(format!(
                "{name} must be finite and non-negative, got {k}"
            )));
        }
    }
    let windows = spaces
        .iter()
        .map(|f| {
            let w = model.residual_std_per_space.get(&f.space).map(|&sigma| {
                Window::new(
                    f.space.clone(),
                    model.direction,
                    model.predict(f.hops, f.floor),
                    sigma,
                    k1,
                    k2,
                )
            });
            (f.space.clone(), w)
        })
        .collect();
    Ok(WindowSet {
        direction: model.direction,
        k1,
        k2,
        windows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotRelatedReason {
    OutsideWindow,
    NoWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Conjunctive,
    NotRelated(NotRelatedReason),
}

impl Verdict {
    pub fn is_conjunctive(self) -> bool {
        self == Verdict::Conjunctive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub sample: IntervalSample,
    pub verdict: Verdict,
}

/// Pairs events of the windows' direction and judges each pair.
pub fn detect(
    stream: &EventStream,
    g: &TopologyGraph,
    windows: &WindowSet,
    coarse_s: f64,
) -> Result<Vec<Detection>> {
    Ok(pair_events(stream, g, windows.direction, coarse_s)?
        .into_iter()
        .map(|sample| {
            let verdict = match windows.get(&sample.space) {
                Some(w) if w.contains(sample.delta_t) => Verdict::Conjunctive,
                Some(_) => Verdict::NotRelated(NotRelatedReason::OutsideWindow),
                None => Verdict::NotRelated(NotRelatedReason::NoWindow),
            };
            Detection { sample, verdict }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    space: String,
    direction: String,
    first_time: String,
    second_time: String,
    delta_t: f64,
    hops: u32,
    floor: i32,
    verdict: String,
    reason: String,
}

pub fn detections_to_csv(detections: &[Detection]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in detections {
        let (verdict, reason) = match d.verdict {
            Verdict::Conjunctive => ("Conjunctive", ""),
            Verdict::NotRelated(NotRelatedReason::OutsideWindow) => {
                ("NotRelated", "outside_window")
            }
            Verdict::NotRelated(NotRelatedReason::NoWindow) => ("NotRelated", "no_window"),
        };
        w.serialize(DetectionRow {
            space: d.sample.space.to_string(),
            direction: d.sample.direction.to_string(),
            first_time: format_timestamp(&d.sample.time),
            second_time: format_timestamp(&d.sample.paired_time),
            delta_t: d.sample.delta_t,
            hops: d.sample.hops,
            floor: d.sample.floor_value,
            verdict: verdict.into(),
            reason: reason.into(),
        })
        .expect("in-memory write");
    }
    if detections.is_empty() {
        w.write_record([
            "space",
            "direction",
            "first_time",
            "second_time",
            "delta_t",
            "hops",
            "floor",
            "verdict",
            "reason",
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn detections_from_csv(text: &str) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<DetectionRow>().enumerate() {
        let bad = |m: String| ConjunctionError::Csv(format!("row {}: {m}", i + 1));
        let row = row.map_err(|e| bad(e.to_string()))?;
        let verdict = match (row.verdict.as_str(), row.reason.as_str()) {
            ("Conjunctive", _) => Verdict::Conjunctive,
            ("NotRelated", "no_window") => Verdict::NotRelated(NotRelatedReason::NoWindow),
            ("NotRelated", _) => Verdict::NotRelated(NotRelatedReason::OutsideWindow),
            (v, _) => return Err(bad(format!("unknown verdict `{v}`"))),
        };
        out.push(Detection {
            sample: IntervalSample {
                space: Ucode::new(row.space),
                direction: row.direction.parse().map_err(bad)?,
                delta_t: row.delta_t,
                hops: row.hops,
                floor_value: row.floor,
                time: parse_timestamp(&row.first_time).map_err(bad)?,
                paired_time: parse_timestamp(&row.second_time).map_err(bad)?,
            },
            verdict,
        });
    }
    Ok(out)
}

/// Conditional conjunction probability of one room.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjunctionReport {
    pub space: String,
    pub count_room_events: usize,
    pub count_conjunctions: usize,
    pub probability: f64,
}

impl ConjunctionReport {
    pub fn new(
        space: impl Into<String>,
        count_room_events: usize,
        count_conjunctions: usize,
    ) -> Self {
        let probability = if count_room_events == 0 {
            0.0
        } else {
            count_conjunctions as f64 / count_room_events as f64
        };
        ConjunctionReport {
            space: space.into(),
            count_room_events,
            count_conjunctions,
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjunctionSummary {
    pub direction: Direction,
    /// Rooms with at least the requested number of room events.
    pub rows: Vec<ConjunctionReport>,
    /// Totals over every room, listed or not.
    pub total: ConjunctionReport,
}

impl ConjunctionSummary {
    /// CSV `space,count_room,count_conj,probability`, totals row first.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["space", "count_room", "count_conj", "probability"])
            .expect("in-memory write");
        for r in std::iter::once(&self.total).chain(&self.rows) {
            w.write_record([
                r.space.clone(),
                r.count_room_events.to_string(),
                r.count_conjunctions.to_string(),
                format!("{:.3}", r.probability),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Label of the totals row.
pub const TOTAL_ROW: &str = "Count";

/// Per-room counts of room events and of room events judged conjunctive.
pub fn report(
    detections: &[Detection],
    stream: &EventStream,
    direction: Direction,
    min_room_events: usize,
) -> ConjunctionSummary {
    let room_kind = direction.room_event();
    let mut room_events: BTreeMap<&Ucode, usize> = BTreeMap::new();
    for r in stream.records.iter().filter(|r| r.kind == room_kind) {
        *room_events.entry(&r.space).or_default() += 1;
    }
    let mut conjunctive: BTreeMap<&Ucode, BTreeSet<DateTime<Utc>>> = BTreeMap::new();
    for d in detections
        .iter()
        .filter(|d| d.sample.direction == direction && d.verdict.is_conjunctive())
    {
        conjunctive
            .entry(&d.sample.space)
            .or_default()
            .insert(d.sample.room_event_time());
    }
    let mut rows = Vec::new();
    let (mut total_room, mut total_conj) = (0, 0);
    for (space, &n_room) in &room_events {
        let n_conj = conjunctive.get(space).map_or(0, BTreeSet::len).min(n_room);
        total_room += n_room;
        total_conj += n_conj;
        if n_room >= min_room_events {
            rows.push(ConjunctionReport::new(space.as_str(), n_room, n_conj));
        }
    }
    ConjunctionSummary {
        direction,
        rows,
        total: ConjunctionReport::new(TOTAL_ROW, total_room, total_conj),
    }
}
