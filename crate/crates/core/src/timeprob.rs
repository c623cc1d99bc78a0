//! Hourly occurrence-probability tables and timestamp anomaly rules.
//!
//! Event timestamps are reduced to their hour of day in building time and
//! counted into 24 one-hour bins. A bin's share of all events is the
//! probability of the event happening in that hour; an event falling in a
//! bin whose probability is below the threshold `p̄` is abnormal.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, EventKind, EventRecord, EventStream};
use crate::topology::Ucode;

pub const HOURS: usize = 24;

/// Threshold used when none is configured.
pub const DEFAULT_PBAR: f64 = 0.1;

/// Kernel bandwidth used when none is configured, in hours.
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeProbError {
    #[error("density estimation needs at least one event")]
    EmptyInput,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("table holds {table} events, cannot classify a {event} event")]
    KindMismatch { table: EventKind, event: EventKind },
    #[error("table is empty")]
    EmptyTable,
    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),
    #[error("UTC offset of {0} seconds is out of range")]
    InvalidOffset(i32),
}

/// Fixed offset between UTC and building wall-clock time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingClock {
    offset_seconds: i32,
}

impl BuildingClock {
    pub fn utc() -> Self {
        BuildingClock::default()
    }

    pub fn with_offset(offset_seconds: i32) -> Result<Self, TimeProbError> {
        if offset_seconds.abs() >= 86_400 {
            return Err(TimeProbError::InvalidOffset(offset_seconds));
        }
        Ok(BuildingClock { offset_seconds })
    }

    /// Hour of day in `[0, 24)`, with minutes and seconds as a fraction.
    pub fn fractional_hour(&self, t: &DateTime<Utc>) -> f64 {
        let secs = (i64::from(t.num_seconds_from_midnight()) + i64::from(self.offset_seconds))
            .rem_euclid(86_400);
        secs as f64 / 3600.0
    }
}

fn bin_of(hour: f64) -> usize {
    (hour.rem_euclid(HOURS as f64).floor() as usize).min(HOURS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyProbTable {
    pub element: Ucode,
    pub kind: EventKind,
    pub bins: [f64; HOURS],
    pub count: usize,
    /// Lower-middle fractional hour; 0 when the table is empty.
    pub median_hour: f64,
    /// Population standard deviation of fractional hours.
    pub std_hour: f64,
    pub clock: BuildingClock,
}

impl HourlyProbTable {
    /// Builds a table from fractional hours of day.
    pub fn from_hours(
        element: Ucode,
        kind: EventKind,
        hours: &[f64],
        clock: BuildingClock,
    ) -> Self {
        let mut counts = [0usize; HOURS];
        for &h in hours {
            counts[bin_of(h)] += 1;
        }
        let n = hours.len();
        let mut bins = [0.0; HOURS];
        if n > 0 {
            for (b, c) in bins.iter_mut().zip(counts) {
                *b = c as f64 / n as f64;
            }
        }
        let mut sorted: Vec<f64> = hours.iter().map(|h| h.rem_euclid(HOURS as f64)).collect();
        sorted.sort_by(f64::total_cmp);
        let (median_hour, std_hour) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = sorted.iter().sum::<f64>() / n as f64;
            let var = sorted.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n as f64;
            (sorted[(n - 1) / 2], var.sqrt())
        };
        HourlyProbTable {
            element,
            kind,
            bins,
            count: n,
            median_hour,
            std_hour,
            clock,
        }
    }

    /// Probability of the bin containing `t`.
    pub fn probability_at(&self, t: &DateTime<Utc>) -> f64 {
        self.bins[bin_of(self.clock.fractional_hour(t))]
    }
}

/// Builds the table of one element and event kind; other records are ignored.
pub fn build_table(
    element: &Ucode,
    kind: EventKind,
    events: &[EventRecord],
    clock: BuildingClock,
) -> HourlyProbTable {
    let hours: Vec<f64> = events
        .iter()
        .filter(|r| r.kind == kind && &r.element == element)
        .map(|r| clock.fractional_hour(&r.time))
        .collect();
    HourlyProbTable::from_hours(element.clone(), kind, &hours, clock)
}

/// One table per (element, kind) pair present in the stream, restricted to
/// `kinds`, ordered by element then kind.
pub fn build_tables(
    stream: &EventStream,
    kinds: &[EventKind],
    clock: BuildingClock,
) -> Vec<HourlyProbTable> {
    let keys: BTreeSet<(&Ucode, EventKind)> = stream
        .records
        .iter()
        .filter(|r| kinds.contains(&r.kind))
        .map(|r| (&r.element, r.kind))
        .collect();
    keys.into_iter()
        .map(|(e, k)| build_table(e, k, &stream.records, clock))
        .collect()
}

/// Stats CSV: element, kind, 24 hourly bins, median, std, count.
pub fn tables_to_csv(tables: &[HourlyProbTable]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["element".to_owned(), "kind".to_owned()];
    header.extend((0..HOURS).map(|h| format!("h{h:02}")));
    header.extend(["median".to_owned(), "std".to_owned(), "count".to_owned()]);
    w.write_record(&header).expect("in-memory write");
    for t in tables {
        let mut row = vec![t.element.to_string(), t.kind.to_string()];
        row.extend(t.bins.iter().map(|b| format!("{b:.4}")));
        row.push(format!("{:.4}", t.median_hour));
        row.push(format!("{:.4}", t.std_hour));
        row.push(t.count.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DensityMethod {
    Histogram24,
    /// Gaussian kernels wrapped around the 24-hour circle.
    GaussianKde {
        bandwidth: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub method: DensityMethod,
    hours: Vec<f64>,
    bins: [f64; HOURS],
}

impl DensityEstimate {
    pub fn bandwidth(&self) -> Option<f64> {
        match self.method {
            DensityMethod::GaussianKde { bandwidth } => Some(bandwidth),
            DensityMethod::Histogram24 => None,
        }
    }

    /// Density per hour at a fractional hour of day.
    pub fn evaluate(&self, hour: f64) -> f64 {
        match self.method {
            DensityMethod::Histogram24 => self.bins[bin_of(hour)],
            DensityMethod::GaussianKde { bandwidth } => {
                let x = hour.rem_euclid(HOURS as f64);
                let wraps = (6.0 * bandwidth / HOURS as f64).ceil() as i32 + 1;
                let norm = 1.0 / (bandwidth * (2.0 * PI).sqrt() * self.hours.len() as f64);
                let mut sum = 0.0;
                for &xi in &self.hours {
                    for k in -wraps..=wraps {
                        let z = (x - xi + f64::from(k) * HOURS as f64) / bandwidth;
                        sum += (-0.5 * z * z).exp();
                    }
                }
                sum * norm
            }
        }
    }
}

/// Estimates the time-of-day density of a set of fractional hours.
pub fn estimate_density(
    hours: &[f64],
    method: DensityMethod,
) -> Result<DensityEstimate, TimeProbError> {
    if let DensityMethod::GaussianKde { bandwidth } = method {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(TimeProbError::InvalidBandwidth(bandwidth));
        }
        if hours.is_empty() {
            return Err(TimeProbError::EmptyInput);
        }
    }
    let table = HourlyProbTable::from_hours(
        Ucode::new("_"),
        EventKind::LightOn,
        hours,
        BuildingClock::utc(),
    );
    Ok(DensityEstimate {
        method,
        hours: hours.iter().map(|h| h.rem_euclid(HOURS as f64)).collect(),
        bins: table.bins,
    })
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`, falling
/// back to [`DEFAULT_BANDWIDTH`] when the spread is zero.
pub fn silverman_bandwidth(hours: &[f64]) -> f64 {
    let n = hours.len();
    if n < 2 {
        return DEFAULT_BANDWIDTH;
    }
    let mut s = hours.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (s.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let q = |p: f64| s[((n - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread > 0.0 {
        0.9 * spread * (n as f64).powf(-0.2)
    } else {
        DEFAULT_BANDWIDTH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Normal,
    Abnormal,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Normal => "Normal",
            Status::Abnormal => "Abnormal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyVerdict {
    pub event: EventRecord,
    pub probability: f64,
    pub threshold: f64,
    pub status: Status,
}

/// Abnormal iff the probability of the event's hour is strictly below
/// `threshold`.
pub fn classify(
    event: &EventRecord,
    table: &HourlyProbTable,
    threshold: f64,
) -> Result<AnomalyVerdict, TimeProbError> {
    if event.kind != table.kind {
        return Err(TimeProbError::KindMismatch {
            table: table.kind,
            event: event.kind,
        });
    }
    let probability = table.probability_at(&event.time);
    let status = if probability < threshold {
        Status::Abnormal
    } else {
        Status::Normal
    };
    Ok(AnomalyVerdict {
        event: event.clone(),
        probability,
        threshold,
        status,
    })
}

pub fn verdicts_to_csv(verdicts: &[AnomalyVerdict]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "element",
        "space",
        "kind",
        "time",
        "probability",
        "threshold",
        "status",
    ])
    .expect("in-memory write");
    for v in verdicts {
        w.write_record([
            v.event.element.to_string(),
            v.event.space.to_string(),
            v.event.kind.to_string(),
            format_timestamp(&v.event.time),
            format!("{:.4}", v.probability),
            format!("{:.4}", v.threshold),
            v.status.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// How `p̄` is chosen for a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Largest threshold whose flagged bins hold at most this much
    /// probability mass.
    Mass(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed(DEFAULT_PBAR)
    }
}

impl FromStr for ThresholdPolicy {
    type Err = TimeProbError;

    /// `0.1` or `fixed:0.1` for a fixed threshold, `mass:0.05` for a mass
    /// budget.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TimeProbError::InvalidPolicy(s.to_owned());
        let (tag, value) = s.split_once(':').unwrap_or(("fixed", s));
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let policy = match tag.trim() {
            "fixed" => ThresholdPolicy::Fixed(value),
            "mass" => ThresholdPolicy::Mass(value),
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Fixed(x) => write!(f, "fixed:{x}"),
            ThresholdPolicy::Mass(q) => write!(f, "mass:{q}"),
        }
    }
}

impl ThresholdPolicy {
    fn validate(&self) -> Result<(), TimeProbError> {
        match *self {
            ThresholdPolicy::Fixed(x) if !(x.is_finite() && x >= 0.0) => {
                Err(TimeProbError::InvalidPolicy(format!(
                    "fixed threshold {x} must be finite and non-negative"
                )))
            }
            ThresholdPolicy::Mass(q) if !(0.0..1.0).contains(&q) => Err(
                TimeProbError::InvalidPolicy(format!("mass budget {q} must lie in [0, 1)")),
            ),
            _ => Ok(()),
        }
    }
}

/// Picks `p̄` for a table according to `policy`.
///
/// For `Mass(q)` the result is the largest `p̄` such that the bins with a
/// probability below `p̄` hold at most `q` of the mass. That value is always
/// one of the bin probabilities.
pub fn suggest_threshold(
    table: &HourlyProbTable,
    policy: ThresholdPolicy,
) -> Result<f64, TimeProbError> {
    policy.validate()?;
    if table.count == 0 {
        return Err(TimeProbError::EmptyTable);
    }
    let q = match policy {
        ThresholdPolicy::Fixed(x) => return Ok(x),
        ThresholdPolicy::Mass(q) => q,
    };
    let mut values = table.bins.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    // mass strictly below values[i] is the cumulative mass of values[..i]
    let mut below = 0.0;
    let mut best = values[0];
    for &v in &values {
        if below > q + 1e-12 {
            break;
        }
        best = v;
        let n_eq = table.bins.iter().filter(|&&b| b == v).count();
        below += v * n_eq as f64;
    }
    Ok(best)
}
