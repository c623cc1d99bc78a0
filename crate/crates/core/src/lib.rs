//! Time-probability knowledge extraction for instrumented buildings.
//!
//! The crate models a building as a typed topology graph ([`topology`]),
//! answers SPARQL-style queries over it ([`query`]), turns raw sensor samples
//! into semantic events ([`ingest`]), builds hourly occurrence tables for
//! anomaly detection ([`timeprob`]), and detects conjunctions between room
//! and elevator events using a hop/floor regression ([`conjunction`]).
//! [`simulator`] generates synthetic traces with planted ground truth and
//! [`pipeline`] chains the stages the way the command-line tool runs them.

pub mod conjunction;
pub mod ingest;
pub mod pipeline;
pub mod query;
pub mod sample;
pub mod simulator;
pub mod timeprob;
pub mod topology;

pub use conjunction::{Direction, OlsModel, Window};
pub use ingest::{EventKind, EventRecord, EventStream, SensorSample};
pub use query::{execute, parse_query, QueryAst, ResultTable};
pub use timeprob::{HourlyProbTable, ThresholdPolicy};
pub use topology::{load_topology, Entity, EntityKind, TopologyGraph, Ucode};
