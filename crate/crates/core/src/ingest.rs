//! Sensor payload ingestion.
//!
//! Samples arrive as JSON Lines in the unified API shape
//! `{"ucode": .., "name": .., "data": {"instance": .., "time": ..}}`.
//! [`normalize`] turns them into semantic [`EventRecord`]s:
//!
//! * light elements emit `LightOn`/`LightOff` on state transitions only; the
//!   first sample of each light sets its baseline;
//! * elevator zones carry a token instance, `arrive:<floor>`,
//!   `landing:<floor>` or `car:<floor>`.
//!
//! Elevator events are attributed to the elevator hall of the floor named in
//! the token. Samples from other element types are ignored.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{TopologyError, TopologyGraph, Ucode, ELEVATOR, LIGHT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{} malformed sample line(s); first: {}", .0.len(), .0[0])]
    Malformed(Vec<LineError>),
    #[error("sample ucode `{0}` is not in the topology")]
    UnknownUcode(String),
    #[error("cannot decode instance {instance} of `{ucode}`: {reason}")]
    UndecodableInstance {
        ucode: String,
        instance: String,
        reason: String,
    },
    #[error("light `{0}` is not held by any space")]
    Unplaced(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Raw sensed value: a number or a short token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Instance {
    Int(i64),
    Float(f64),
    Token(String),
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instance::Int(i) => write!(f, "{i}"),
            Instance::Float(x) => write!(f, "{x}"),
            Instance::Token(t) => write!(f, "\"{t}\""),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSample {
    pub ucode: Ucode,
    pub name: String,
    pub instance: Instance,
    pub time: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct WireData {
    instance: Instance,
    time: String,
}

#[derive(Serialize, Deserialize)]
struct WireSample {
    ucode: String,
    name: String,
    data: WireData,
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC, timestamps
/// without an offset are taken as UTC, sub-second digits are dropped.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let t = DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").map(|n| n.and_utc()))
        .map_err(|_| format!("malformed timestamp `{s}`"))?;
    Ok(t.with_nanosecond(0).expect("zero nanoseconds is valid"))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

impl SensorSample {
    pub fn new(
        ucode: impl Into<Ucode>,
        name: impl Into<String>,
        instance: Instance,
        time: DateTime<Utc>,
    ) -> Self {
        SensorSample {
            ucode: ucode.into(),
            name: name.into(),
            instance,
            time,
        }
    }

    /// One JSON Lines record, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&WireSample {
            ucode: self.ucode.to_string(),
            name: self.name.clone(),
            data: WireData {
                instance: self.instance.clone(),
                time: format_timestamp(&self.time),
            },
        })
        .expect("samples always serialize")
    }
}

/// Parses JSON Lines text. Blank lines are skipped; every malformed line is
/// reported with its 1-based line number.
pub fn parse_samples(lines: &str) -> Result<Vec<SensorSample>, IngestError> {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in lines.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<WireSample>(line)
            .map_err(|e| e.to_string())
            .and_then(|w| {
                if w.ucode.is_empty() {
                    return Err("empty ucode".to_owned());
                }
                Ok(SensorSample {
                    ucode: Ucode::new(w.ucode),
                    name: w.name,
                    instance: w.data.instance,
                    time: parse_timestamp(&w.data.time)?,
                })
            });
        match parsed {
            Ok(s) => samples.push(s),
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(IngestError::Malformed(errors))
    }
}

pub fn samples_to_jsonl(samples: &[SensorSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    LightOn,
    LightOff,
    ElevatorArriving,
    LandingCall,
    CarCall,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::LightOn => "LightOn",
            EventKind::LightOff => "LightOff",
            EventKind::ElevatorArriving => "ElevatorArriving",
            EventKind::LandingCall => "LandingCall",
            EventKind::CarCall => "CarCall",
        }
    }

    pub fn is_elevator(self) -> bool {
        matches!(
            self,
            EventKind::ElevatorArriving | EventKind::LandingCall | EventKind::CarCall
        )
    }

    fn token(self) -> Option<&'static str> {
        match self {
            EventKind::ElevatorArriving => Some("arrive"),
            EventKind::LandingCall => Some("landing"),
            EventKind::CarCall => Some("car"),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            EventKind::LightOn,
            EventKind::LightOff,
            EventKind::ElevatorArriving,
            EventKind::LandingCall,
            EventKind::CarCall,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub element: Ucode,
    pub space: Ucode,
    pub kind: EventKind,
    /// Floor named by elevator events; `None` for light events.
    pub floor: Option<i32>,
    pub time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub records: Vec<EventRecord>,
    pub origin: String,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// CSV with columns `element,space,kind,floor,time`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["element", "space", "kind", "floor", "time"])
            .expect("in-memory write");
        for r in &self.records {
            let floor = r.floor.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([
                r.element.as_str(),
                r.space.as_str(),
                r.kind.as_str(),
                floor.as_str(),
                format_timestamp(&r.time).as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn decode_light(s: &SensorSample) -> Result<bool, IngestError> {
    let on = match &s.instance {
        Instance::Int(0) => Some(false),
        Instance::Int(1) => Some(true),
        Instance::Float(x) if *x == 0.0 => Some(false),
        Instance::Float(x) if *x == 1.0 => Some(true),
        Instance::Token(t) => match t.trim().to_ascii_lowercase().as_str() {
            "on" | "1" => Some(true),
            "off" | "0" => Some(false),
            _ => None,
        },
        _ => None,
    };
    on.ok_or_else(|| IngestError::UndecodableInstance {
        ucode: s.ucode.to_string(),
        instance: s.instance.to_string(),
        reason: "light state must be 0/1 or on/off".into(),
    })
}

/// Decodes an elevator token such as `arrive:3`.
pub fn decode_elevator(instance: &Instance) -> Result<(EventKind, i32), String> {
    let Instance::Token(t) = instance else {
        return Err("elevator instance must be a token".into());
    };
    let (kind, floor) = t
        .trim()
        .split_once(':')
        .ok_or_else(|| format!("`{t}` is not of the form <kind>:<floor>"))?;
    let kind = match kind {
        "arrive" => EventKind::ElevatorArriving,
        "landing" => EventKind::LandingCall,
        "car" => EventKind::CarCall,
        other => return Err(format!("unknown elevator event `{other}`")),
    };
    let floor = floor.parse().map_err(|_| format!("bad floor `{floor}`"))?;
    Ok((kind, floor))
}

pub fn encode_elevator(kind: EventKind, floor: i32) -> Instance {
    let token = kind.token().expect("elevator kinds have tokens");
    Instance::Token(format!("{token}:{floor}"))
}

/// Sorts samples by time (stable), then maps them onto semantic events.
pub fn normalize(samples: &[SensorSample], g: &TopologyGraph) -> Result<EventStream, IngestError> {
    let mut order: Vec<&SensorSample> = samples.iter().collect();
    order.sort_by_key(|s| s.time);

    let mut light_state: BTreeMap<&str, bool> = BTreeMap::new();
    let mut records = Vec::new();
    for s in order {
        let entity = g
            .entity(s.ucode.as_str())
            .ok_or_else(|| IngestError::UnknownUcode(s.ucode.to_string()))?;
        if entity.is_type(LIGHT) {
            let on = decode_light(s)?;
            let space = g
                .space_of(s.ucode.as_str())
                .ok_or_else(|| IngestError::Unplaced(s.ucode.to_string()))?;
            let previous = light_state.insert(entity.ucode.as_str(), on);
            if previous.is_some_and(|p| p != on) {
                records.push(EventRecord {
                    element: entity.ucode.clone(),
                    space: space.ucode.clone(),
                    kind: if on {
                        EventKind::LightOn
                    } else {
                        EventKind::LightOff
                    },
                    floor: None,
                    time: s.time,
                });
            }
        } else if entity.is_type(ELEVATOR) {
            let (kind, floor) = decode_elevator(&s.instance).map_err(|reason| {
                IngestError::UndecodableInstance {
                    ucode: s.ucode.to_string(),
                    instance: s.instance.to_string(),
                    reason,
                }
            })?;
            let hall = g.elevator_hall_on_floor(floor)?;
            records.push(EventRecord {
                element: entity.ucode.clone(),
                space: hall.ucode.clone(),
                kind,
                floor: Some(floor),
                time: s.time,
            });
        }
    }
    Ok(EventStream {
        records,
        origin: format!("{} samples", samples.len()),
    })
}

/// Encodes events back into samples that normalize to the same events. A
/// baseline sample with the opposite state precedes each light's first event.
pub fn to_samples(stream: &EventStream, g: &TopologyGraph) -> Vec<SensorSample> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(stream.records.len());
    let name_of = |u: &Ucode| {
        g.entity(u.as_str())
            .map(|e| e.name.clone())
            .unwrap_or_default()
    };
    for r in &stream.records {
        let instance = match r.kind {
            EventKind::LightOn | EventKind::LightOff => {
                let on = r.kind == EventKind::LightOn;
                if seen.insert(r.element.clone(), ()).is_none() {
                    out.push(SensorSample::new(
                        r.element.clone(),
                        name_of(&r.element),
                        Instance::Int(i64::from(!on)),
                        r.time,
                    ));
                }
                Instance::Int(i64::from(on))
            }
            kind => encode_elevator(kind, r.floor.expect("elevator events carry a floor")),
        };
        out.push(SensorSample::new(
            r.element.clone(),
            name_of(&r.element),
            instance,
            r.time,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// GET-style status retrieval

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServeError {
    #[error("unknown ucode `{0}`")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ServeError {
    pub fn status_code(&self) -> u16 {
        match self {
            ServeError::NotFound(_) => 404,
            ServeError::BadRequest(_) => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub instance: Instance,
    pub time: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub ucode: String,
    pub name: String,
    pub data: Vec<DataPoint>,
}

/// Read-only store behind the status endpoint.
#[derive(Debug, Clone)]
pub struct StatusStore {
    graph: TopologyGraph,
    history: BTreeMap<Ucode, Vec<SensorSample>>,
    events: EventStream,
}

impl StatusStore {
    pub fn new(graph: TopologyGraph, samples: Vec<SensorSample>) -> Result<Self, IngestError> {
        let events = normalize(&samples, &graph)?;
        let mut history: BTreeMap<Ucode, Vec<SensorSample>> = BTreeMap::new();
        for s in samples {
            history.entry(s.ucode.clone()).or_default().push(s);
        }
        for h in history.values_mut() {
            h.sort_by_key(|s| s.time);
        }
        Ok(StatusStore {
            graph,
            history,
            events,
        })
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn events(&self) -> &EventStream {
        &self.events
    }

    /// Status history of one ucode, optionally restricted to `[from, to]`.
    pub fn serve_get(
        &self,
        ucode: &str,
        from: Option<&str>,
        to: Option<&str>,
    ) -> Result<StatusPayload, ServeError> {
        let bound = |s: Option<&str>| {
            s.map(parse_timestamp)
                .transpose()
                .map_err(ServeError::BadRequest)
        };
        let (from, to) = (bound(from)?, bound(to)?);
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(ServeError::BadRequest("`from` is after `to`".into()));
            }
        }
        let history = self.history.get(ucode);
        let name = match (self.graph.entity(ucode), history.and_then(|h| h.last())) {
            (Some(e), _) => e.name.clone(),
            (None, Some(s)) => s.name.clone(),
            (None, None) => return Err(ServeError::NotFound(ucode.to_owned())),
        };
        let data = history
            .into_iter()
            .flatten()
            .filter(|s| from.is_none_or(|f| s.time >= f) && to.is_none_or(|t| s.time <= t))
            .map(|s| DataPoint {
                instance: s.instance.clone(),
                time: format_timestamp(&s.time),
            })
            .collect();
        Ok(StatusPayload {
            ucode: ucode.to_owned(),
            name,
            data,
        })
    }
}
