//! Synthetic occupant traces with planted ground truth.
//!
//! Each occupant arrives at and leaves their home room once a day and makes
//! a few excursions in between. A trip that uses the elevator emits light
//! and elevator samples whose intervals are known exactly; these intervals
//! are recorded as truth tuples. Unrelated background elevator trips add
//! realistic clutter.
//!
//! Elevator mechanics are deliberately simple: the car answers a landing
//! call `pickup_wait_s` seconds after the call is placed, and travel takes
//! `door_s + travel_per_floor_s × storeys` seconds. With the default zero
//! pickup wait, a planted interval is exactly the walking time between the
//! room and the elevator hall.
//!
//! All defaults below are illustrative choices, not measurements.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjunction::{Detection, Direction};
use crate::ingest::{
    encode_elevator, format_timestamp, parse_timestamp, EventKind, Instance, SensorSample,
};
use crate::topology::{EntityKind, TopologyError, TopologyGraph, Ucode, ELEVATOR, LIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed truth file: {0}")]
    Truth(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Staff,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupantProfile {
    pub id: String,
    pub home_space: Ucode,
    pub role: Role,
    /// Hours of day.
    pub arrive_mean: f64,
    pub arrive_std: f64,
    pub leave_mean: f64,
    pub leave_std: f64,
    /// Probability that a trip uses the elevator.
    pub elevator_affinity: f64,
    #[serde(default = "default_walk")]
    pub walk_seconds_per_hop: f64,
    /// Standard deviation of walking-time noise, seconds.
    #[serde(default)]
    pub noise_std: f64,
}

fn default_walk() -> f64 {
    13.0
}

impl OccupantProfile {
    pub fn staff(id: &str, home: &str) -> Self {
        OccupantProfile {
            id: id.into(),
            home_space: home.into(),
            role: Role::Staff,
            arrive_mean: 9.0,
            arrive_std: 0.25,
            leave_mean: 17.0,
            leave_std: 0.25,
            elevator_affinity: 0.9,
            walk_seconds_per_hop: default_walk(),
            noise_std: 10.0,
        }
    }

    pub fn student(id: &str, home: &str) -> Self {
        OccupantProfile {
            id: id.into(),
            home_space: home.into(),
            role: Role::Student,
            arrive_mean: 10.5,
            arrive_std: 1.5,
            leave_mean: 19.0,
            leave_std: 2.0,
            elevator_affinity: 0.8,
            walk_seconds_per_hop: default_walk(),
            noise_std: 10.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Config(format!("occupant `{}`: {m}", self.id)));
        let finite = [
            self.arrive_mean,
            self.arrive_std,
            self.leave_mean,
            self.leave_std,
            self.elevator_affinity,
            self.walk_seconds_per_hop,
            self.noise_std,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.arrive_std < 0.0 || self.leave_std < 0.0 || self.noise_std < 0.0 {
            return bad("standard deviations must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.elevator_affinity) {
            return bad("elevator_affinity must lie in [0, 1]");
        }
        if self.walk_seconds_per_hop <= 0.0 {
            return bad("walk_seconds_per_hop must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElevatorTiming {
    #[serde(default)]
    pub pickup_wait_s: f64,
    #[serde(default = "default_door")]
    pub door_s: f64,
    #[serde(default = "default_travel")]
    pub travel_per_floor_s: f64,
}

fn default_door() -> f64 {
    6.0
}

fn default_travel() -> f64 {
    4.0
}

impl Default for ElevatorTiming {
    fn default() -> Self {
        ElevatorTiming {
            pickup_wait_s: 0.0,
            door_s: default_door(),
            travel_per_floor_s: default_travel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Path of the topology document; the bundled sample building when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building: Option<String>,
    pub start_date: NaiveDate,
    pub days: u32,
    pub seed: u64,
    /// Floor value of the street entrance. Occupants of this floor walk.
    pub entrance_floor: i32,
    /// Mean number of mid-day excursions per occupant-day.
    pub excursions_per_day: f64,
    /// Mean number of unrelated elevator trips per day.
    pub background_trips_per_day: f64,
    #[serde(default)]
    pub elevator: ElevatorTiming,
    pub profiles: Vec<OccupantProfile>,
}

impl Default for SimConfig {
    /// Six occupants in the bundled sample building over 78 days.
    fn default() -> Self {
        SimConfig {
            building: None,
            start_date: NaiveDate::from_ymd_opt(2023, 5, 1).expect("valid date"),
            days: 78,
            seed: 7,
            entrance_floor: crate::sample::ENTRANCE_FLOOR,
            excursions_per_day: 2.5,
            background_trips_per_day: 24.0,
            elevator: ElevatorTiming::default(),
            profiles: vec![
                OccupantProfile::staff("s1", "A302"),
                OccupantProfile::student("u1", "A305"),
                OccupantProfile::staff("s2", "B204"),
                OccupantProfile::student("u2", "A202"),
                OccupantProfile::staff("s3", "SB102"),
                OccupantProfile::student("u3", "A101"),
            ],
        }
    }
}

impl SimConfig {
    /// One always-elevator occupant per non-entrance floor, no walking noise
    /// and no background traffic: every candidate pair is a planted one.
    pub fn noise_free() -> Self {
        let occupant = |id: &str, home: &str| OccupantProfile {
            elevator_affinity: 1.0,
            noise_std: 0.0,
            ..OccupantProfile::staff(id, home)
        };
        SimConfig {
            background_trips_per_day: 0.0,
            profiles: vec![
                occupant("b2", "SB201"),
                occupant("b1", "SB102"),
                occupant("f2", "B204"),
                occupant("f3", "A305"),
            ],
            ..SimConfig::default()
        }
    }

    /// The default config with every occupant's walking noise replaced.
    pub fn with_noise(mut self, noise_std: f64) -> Self {
        for p in &mut self.profiles {
            p.noise_std = noise_std;
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    fn validate(&self) -> Result<()> {
        if self.days < 1 {
            return Err(SimError::Config("days must be at least 1".into()));
        }
        for (name, x) in [
            ("excursions_per_day", self.excursions_per_day),
            ("background_trips_per_day", self.background_trips_per_day),
            ("pickup_wait_s", self.elevator.pickup_wait_s),
            ("door_s", self.elevator.door_s),
            ("travel_per_floor_s", self.elevator.travel_per_floor_s),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(SimError::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        let mut homes = std::collections::BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !homes.insert(&p.home_space) {
                return Err(SimError::Config(format!(
                    "home space `{}` is shared by two occupants",
                    p.home_space
                )));
            }
        }
        Ok(())
    }
}

/// One planted conjunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTuple {
    pub space: Ucode,
    pub direction: Direction,
    pub t_i: DateTime<Utc>,
    pub t_j: DateTime<Utc>,
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub samples: Vec<SensorSample>,
    pub truth: Vec<TruthTuple>,
    pub seed: u64,
}

impl TraceBundle {
    pub fn samples_jsonl(&self) -> String {
        crate::ingest::samples_to_jsonl(&self.samples)
    }

    /// CSV `space,direction,t_i,t_j,delta_t`.
    pub fn truth_csv(&self) -> String {
        truth_to_csv(&self.truth)
    }
}

pub fn truth_to_csv(truth: &[TruthTuple]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["space", "direction", "t_i", "t_j", "delta_t"])
        .expect("in-memory write");
    for t in truth {
        w.write_record([
            t.space.to_string(),
            t.direction.to_string(),
            format_timestamp(&t.t_i),
            format_timestamp(&t.t_j),
            t.delta_t.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn truth_from_csv(text: &str) -> Result<Vec<TruthTuple>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let bad = |m: String| SimError::Truth(format!("row {}: {m}", i + 1));
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", row.len())));
        }
        out.push(TruthTuple {
            space: Ucode::new(&row[0]),
            direction: row[1].parse().map_err(bad)?,
            t_i: parse_timestamp(&row[2]).map_err(bad)?,
            t_j: parse_timestamp(&row[3]).map_err(bad)?,
            delta_t: row[4]
                .parse()
                .map_err(|_| bad(format!("bad delta_t `{}`", &row[4])))?,
        });
    }
    Ok(out)
}

struct Room<'a> {
    profile: &'a OccupantProfile,
    light: Ucode,
    light_name: String,
    floor: i32,
    hops: u32,
}

struct Trace {
    /// Samples tagged with a sequence number so equal timestamps keep
    /// generation order after sorting.
    samples: Vec<(i64, usize, SensorSample)>,
    truth: Vec<TruthTuple>,
}

impl Trace {
    fn push(&mut self, t: i64, s: SensorSample) {
        let seq = self.samples.len();
        self.samples.push((t, seq, s));
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    g: &'a TopologyGraph,
    elevator: Ucode,
    elevator_name: String,
    epoch: DateTime<Utc>,
    rng: ChaCha8Rng,
    trace: Trace,
}

const DAY: i64 = 86_400;

impl Sim<'_> {
    fn at(&self, t: i64) -> DateTime<Utc> {
        self.epoch + Duration::seconds(t)
    }

    fn elevator_sample(&mut self, t: i64, kind: EventKind, floor: i32) {
        let s = SensorSample::new(
            self.elevator.clone(),
            self.elevator_name.clone(),
            encode_elevator(kind, floor),
            self.at(t),
        );
        self.trace.push(t, s);
    }

    fn light_sample(&mut self, room: &Room, t: i64, on: bool) {
        let s = SensorSample::new(
            room.light.clone(),
            room.light_name.clone(),
            Instance::Int(i64::from(on)),
            self.at(t),
        );
        self.trace.push(t, s);
    }

    fn ride_seconds(&self, from: i32, to: i32) -> Result<i64> {
        let storeys = self.g.floor_distance(from, to)?;
        Ok(
            (self.cfg.elevator.door_s + self.cfg.elevator.travel_per_floor_s * f64::from(storeys))
                .round() as i64,
        )
    }

    /// Gaussian draw clipped to `[0, 24)` hours.
    fn hour(&mut self, mean: f64, std: f64) -> f64 {
        let h = if std > 0.0 {
            Normal::new(mean, std)
                .expect("validated std")
                .sample(&mut self.rng)
        } else {
            mean
        };
        h.clamp(0.0, 24.0 - 1.0 / 3600.0)
    }

    /// Walking time in whole seconds: `hops × w` plus noise clipped at ±3σ,
    /// never below one second.
    fn walk(&mut self, room: &Room) -> i64 {
        let p = room.profile;
        let base = f64::from(room.hops) * p.walk_seconds_per_hop;
        let noise = if p.noise_std > 0.0 {
            let z: f64 = Normal::new(0.0, p.noise_std)
                .expect("validated std")
                .sample(&mut self.rng);
            z.clamp(-3.0 * p.noise_std, 3.0 * p.noise_std)
        } else {
            0.0
        };
        ((base + noise).round() as i64).max(1)
    }

    fn count(&mut self, mean: f64) -> u32 {
        if mean > 0.0 {
            Poisson::new(mean)
                .expect("validated mean")
                .sample(&mut self.rng) as u32
        } else {
            0
        }
    }

    fn uses_elevator(&mut self, room: &Room) -> bool {
        room.floor != self.cfg.entrance_floor
            && self.rng.random::<f64>() < room.profile.elevator_affinity
    }

    /// Occupant leaves the room at `t`.
    fn depart(&mut self, room: &Room, t: i64) -> Result<()> {
        self.light_sample(room, t, false);
        if !self.uses_elevator(room) {
            return Ok(());
        }
        let call = t + self.walk(room);
        let pickup = call + self.cfg.elevator.pickup_wait_s.round() as i64;
        let ride = self.ride_seconds(room.floor, self.cfg.entrance_floor)?;
        self.elevator_sample(call, EventKind::LandingCall, room.floor);
        self.elevator_sample(pickup, EventKind::ElevatorArriving, room.floor);
        self.elevator_sample(pickup, EventKind::CarCall, self.cfg.entrance_floor);
        self.elevator_sample(
            pickup + ride,
            EventKind::ElevatorArriving,
            self.cfg.entrance_floor,
        );
        self.trace.truth.push(TruthTuple {
            space: room.profile.home_space.clone(),
            direction: Direction::LightOffToElevator,
            t_i: self.at(t),
            t_j: self.at(pickup),
            delta_t: (pickup - t) as f64,
        });
        Ok(())
    }

    /// Occupant enters the building (or returns) at `t` and reaches the room.
    fn arrive(&mut self, room: &Room, t: i64) -> Result<()> {
        if !self.uses_elevator(room) {
            self.light_sample(room, t, true);
            return Ok(());
        }
        let entrance = self.cfg.entrance_floor;
        let pickup = t + self.cfg.elevator.pickup_wait_s.round() as i64;
        let arrival = pickup + self.ride_seconds(entrance, room.floor)?;
        let on = arrival + self.walk(room);
        self.elevator_sample(t, EventKind::LandingCall, entrance);
        self.elevator_sample(pickup, EventKind::ElevatorArriving, entrance);
        self.elevator_sample(pickup, EventKind::CarCall, room.floor);
        self.elevator_sample(arrival, EventKind::ElevatorArriving, room.floor);
        self.light_sample(room, on, true);
        self.trace.truth.push(TruthTuple {
            space: room.profile.home_space.clone(),
            direction: Direction::ElevatorToLightOn,
            t_i: self.at(arrival),
            t_j: self.at(on),
            delta_t: (on - arrival) as f64,
        });
        Ok(())
    }

    fn occupant_day(&mut self, room: &Room, day: i64) -> Result<()> {
        let p = room.profile;
        let arrive_h = self.hour(p.arrive_mean, p.arrive_std);
        let leave_h = self.hour(p.leave_mean, p.leave_std);
        let start = day * DAY + (arrive_h * 3600.0).round() as i64;
        // at least an hour in the room
        let end = (day * DAY + (leave_h * 3600.0).round() as i64).max(start + 3600);

        // Excursions last 15 to 60 minutes and keep 20 minutes clear of one
        // another and of the day's arrival and departure.
        let gap = 20 * 60;
        let n = self.count(self.cfg.excursions_per_day);
        let mut outings: Vec<(i64, i64)> = (0..n)
            .filter_map(|_| {
                let len = self.rng.random_range(15 * 60..=60 * 60);
                let lo = start + gap;
                let hi = end - gap - len;
                (lo < hi).then(|| {
                    let s = self.rng.random_range(lo..hi);
                    (s, s + len)
                })
            })
            .collect();
        outings.sort_unstable();
        let mut kept: Vec<(i64, i64)> = Vec::new();
        for o in outings {
            if kept.last().is_none_or(|last| o.0 >= last.1 + gap) {
                kept.push(o);
            }
        }

        self.arrive(room, start)?;
        for (out, back) in kept {
            self.depart(room, out)?;
            self.arrive(room, back)?;
        }
        self.depart(room, end)
    }

    fn background_day(&mut self, day: i64, floors: &[i32]) -> Result<()> {
        if floors.len() < 2 {
            return Ok(());
        }
        for _ in 0..self.count(self.cfg.background_trips_per_day) {
            let t = day * DAY + self.rng.random_range(7 * 3600..21 * 3600);
            let from = floors[self.rng.random_range(0..floors.len())];
            let mut to = floors[self.rng.random_range(0..floors.len() - 1)];
            if to == from {
                to = floors[floors.len() - 1];
            }
            let pickup = t + self.cfg.elevator.pickup_wait_s.round() as i64;
            let ride = self.ride_seconds(from, to)?;
            self.elevator_sample(t, EventKind::LandingCall, from);
            self.elevator_sample(pickup, EventKind::ElevatorArriving, from);
            self.elevator_sample(pickup, EventKind::CarCall, to);
            self.elevator_sample(pickup + ride, EventKind::ElevatorArriving, to);
        }
        Ok(())
    }
}

/// Generates a trace. Identical `(g, cfg)` give identical output.
pub fn simulate(g: &TopologyGraph, cfg: &SimConfig) -> Result<TraceBundle> {
    cfg.validate()?;
    let elevator = g
        .entities()
        .find(|e| e.kind == EntityKind::Zone && e.is_type(ELEVATOR))
        .ok_or_else(|| SimError::Config("building has no elevator zone".into()))?;
    let floors: Vec<i32> = g
        .storeys_served_by(elevator.ucode.as_str())?
        .iter()
        .filter_map(|s| s.floor_value)
        .collect();
    if !floors.contains(&cfg.entrance_floor) {
        return Err(SimError::Config(format!(
            "the elevator does not serve entrance floor {}",
            cfg.entrance_floor
        )));
    }

    let mut rooms = Vec::new();
    for p in &cfg.profiles {
        let home = p.home_space.as_str();
        match g.entity(home) {
            Some(e) if e.kind == EntityKind::Space => {}
            _ => {
                return Err(SimError::Config(format!(
                    "occupant `{}`: home space `{home}` is not a space",
                    p.id
                )))
            }
        }
        let light = g
            .elements_in_space(home, Some(LIGHT))?
            .first()
            .map(|e| (e.ucode.clone(), e.name.clone()))
            .ok_or_else(|| SimError::Config(format!("home space `{home}` has no light")))?;
        let floor = g.floor_value(home)?;
        if floor != cfg.entrance_floor && !floors.contains(&floor) {
            return Err(SimError::Config(format!(
                "the elevator does not serve floor {floor} of `{home}`"
            )));
        }
        let hops = if floor == cfg.entrance_floor {
            0
        } else {
            g.hops_to_elevator(home)?.ok_or_else(|| {
                SimError::Config(format!(
                    "home space `{home}` cannot reach the elevator hall"
                ))
            })?
        };
        rooms.push(Room {
            profile: p,
            light: light.0,
            light_name: light.1,
            floor,
            hops,
        });
    }

    let mut sim = Sim {
        cfg,
        g,
        elevator: elevator.ucode.clone(),
        elevator_name: elevator.name.clone(),
        epoch: cfg
            .start_date
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        trace: Trace {
            samples: Vec::new(),
            truth: Vec::new(),
        },
    };
    // every light starts switched off
    for room in &rooms {
        sim.light_sample(room, 0, false);
    }
    for day in 0..i64::from(cfg.days) {
        for room in &rooms {
            sim.occupant_day(room, day)?;
        }
        sim.background_day(day, &floors)?;
    }

    let Trace {
        mut samples,
        mut truth,
    } = sim.trace;
    samples.sort_by_key(|(t, seq, _)| (*t, *seq));
    truth.sort_by(|a, b| (a.t_i, &a.space, a.direction).cmp(&(b.t_i, &b.space, b.direction)));
    Ok(TraceBundle {
        samples: samples.into_iter().map(|(_, _, s)| s).collect(),
        truth,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub planted: usize,
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision {:.4} ({}/{}), recall {:.4} ({}/{})",
            self.precision,
            self.true_positives,
            self.predicted,
            self.recall,
            self.true_positives,
            self.planted
        )
    }
}

/// Precision and recall of conjunctive detections against planted truth.
///
/// A detection matches an unclaimed truth tuple with the same space and
/// direction whose first-event time is within one second. Precision of an
/// empty prediction set is 1; recall against empty truth is 1.
pub fn score_detector(truth: &[TruthTuple], detections: &[Detection]) -> Score {
    let mut pool: BTreeMap<(&Ucode, Direction), Vec<(DateTime<Utc>, bool)>> = BTreeMap::new();
    for t in truth {
        pool.entry((&t.space, t.direction))
            .or_default()
            .push((t.t_i, false));
    }
    for v in pool.values_mut() {
        v.sort();
    }
    let predicted: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.verdict.is_conjunctive())
        .collect();
    let mut tp = 0;
    for d in &predicted {
        let Some(list) = pool.get_mut(&(&d.sample.space, d.sample.direction)) else {
            continue;
        };
        let lo = d.sample.time - Duration::seconds(1);
        let hi = d.sample.time + Duration::seconds(1);
        let start = list.partition_point(|(t, _)| *t < lo);
        if let Some(slot) = list[start..]
            .iter_mut()
            .take_while(|(t, _)| *t <= hi)
            .find(|(_, used)| !used)
        {
            slot.1 = true;
            tp += 1;
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Score {
        precision: ratio(tp, predicted.len()),
        recall: ratio(tp, truth.len()),
        true_positives: tp,
        predicted: predicted.len(),
        planted: truth.len(),
    }
}
