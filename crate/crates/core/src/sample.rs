//! The bundled desk-scale sample building.
//!
//! Five storeys (B2F, B1F, 1F, 2F, 3F) served by one elevator zone. Every
//! storey has an elevator hall, a three-segment corridor and two rooms; each
//! room holds a light and a smart lock. Ucodes double as IRI local names
//! under the `daiwa_bot` namespace.

use crate::topology::{load_topology, TopologyGraph};

pub const SAMPLE_BUILDING_JSON: &str = include_str!("../data/sample_building.json");

/// Floor where people enter and leave the building.
pub const ENTRANCE_FLOOR: i32 = 1;

pub fn sample_building() -> TopologyGraph {
    load_topology(SAMPLE_BUILDING_JSON).expect("bundled sample building is valid")
}

/// Rooms of the sample building, i.e. spaces holding a light.
pub const SAMPLE_ROOMS: [&str; 10] = [
    "SB201", "SB202", "SB101", "SB102", "A101", "A102", "B204", "A202", "A302", "A305",
];
