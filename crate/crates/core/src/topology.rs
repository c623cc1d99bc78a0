//! Typed building topology.
//!
//! A [`TopologyGraph`] holds the building's entities (site, building,
//! storeys, spaces, elements and zones) and the relations between them.
//! Containment (`hasBuilding`, `hasStorey`, `hasSpace`, `hasElement`) forms a
//! forest, `adjacentZone` links neighbouring spaces and is undirected, and
//! `intersectsZone` ties a zone such as an elevator shaft to the storeys it
//! serves.
//!
//! The graph is validated once at construction and is immutable afterwards.
//! It can also be viewed as a stream of RDF-style triples, see
//! [`TopologyGraph::as_triples`], which is what the query engine runs on.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix used for BOT classes and properties.
pub const BOT_PREFIX: &str = "bot";
/// The `rdf:type` predicate, written `a` in queries.
pub const RDF_TYPE: &str = "rdf:type";
/// Namespace prefix used when a document does not declare one.
pub const DEFAULT_NAMESPACE: &str = "bldg";

/// `element_type` tag of light fixtures.
pub const LIGHT: &str = "Light";
/// `element_type` tag of an elevator zone.
pub const ELEVATOR: &str = "Elevator";
/// `element_type` tag of a hall call panel. The space holding it is the
/// elevator hall of its storey.
pub const LANDING_BUTTON: &str = "LandingButton";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology document error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid namespace prefix `{0}`")]
    InvalidNamespace(String),
    #[error("invalid entity `{ucode}`: {reason}")]
    InvalidEntity { ucode: String, reason: String },
    #[error("duplicate ucode `{0}`")]
    DuplicateUcode(String),
    #[error("relation #{index} references undeclared ucode `{ucode}`")]
    DanglingReference { index: usize, ucode: String },
    #[error("relation `{relation}` violates type constraints: {reason}")]
    TypeViolation { relation: String, reason: String },
    #[error("`{child}` is contained by both `{first}` and `{second}`")]
    MultipleContainers {
        child: String,
        first: String,
        second: String,
    },
    #[error("storey floor values {0:?} are not distinct and contiguous (0 excluded)")]
    FloorValues(Vec<i32>),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("`{ucode}` is a {actual}, expected a {expected}")]
    WrongKind {
        ucode: String,
        expected: EntityKind,
        actual: EntityKind,
    },
    #[error("space `{0}` has no parent storey")]
    NoParentStorey(String),
    #[error("no storey has floor value {0}")]
    UnknownFloor(i32),
    #[error("storey `{0}` has no elevator hall (no space holds a {LANDING_BUTTON} element)")]
    NoElevatorHall(String),
    #[error("storey `{storey}` has several elevator halls: {halls:?}")]
    AmbiguousElevatorHall { storey: String, halls: Vec<String> },
    #[error("malformed triple stream: {0}")]
    Triples(String),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

/// Unique identifier of a physical or logical object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ucode(String);

impl Ucode {
    pub fn new(value: impl Into<String>) -> Self {
        Ucode(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Ucode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for Ucode {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Ucode {
    fn from(s: &str) -> Self {
        Ucode(s.to_owned())
    }
}

impl From<String> for Ucode {
    fn from(s: String) -> Self {
        Ucode(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Site,
    Building,
    Storey,
    Space,
    Element,
    Zone,
}

impl EntityKind {
    pub const ALL: [EntityKind; 6] = [
        EntityKind::Site,
        EntityKind::Building,
        EntityKind::Storey,
        EntityKind::Space,
        EntityKind::Element,
        EntityKind::Zone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Site => "Site",
            EntityKind::Building => "Building",
            EntityKind::Storey => "Storey",
            EntityKind::Space => "Space",
            EntityKind::Element => "Element",
            EntityKind::Zone => "Zone",
        }
    }

    fn class_iri(self) -> String {
        format!("{BOT_PREFIX}:{}", self.as_str())
    }

    fn from_class_iri(iri: &str) -> Option<Self> {
        let local = iri.strip_prefix(BOT_PREFIX)?.strip_prefix(':')?;
        EntityKind::ALL.into_iter().find(|k| k.as_str() == local)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub ucode: Ucode,
    pub kind: EntityKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_value: Option<i32>,
}

impl Entity {
    fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(TopologyError::InvalidEntity {
                ucode: self.ucode.0.clone(),
                reason: reason.to_owned(),
            })
        };
        if self.ucode.0.is_empty() {
            return fail("ucode must not be empty");
        }
        if self.ucode.0.chars().any(|c| c.is_whitespace() || c == '"') {
            return fail("ucode must not contain whitespace or quotes");
        }
        let typed = matches!(self.kind, EntityKind::Element | EntityKind::Zone);
        match (&self.element_type, typed) {
            (Some(_), false) => return fail("element_type is only valid on Element or Zone"),
            (None, true) => return fail("Element and Zone entities need an element_type"),
            (Some(t), true) if t.is_empty() => return fail("element_type must not be empty"),
            _ => {}
        }
        match (self.floor_value, self.kind == EntityKind::Storey) {
            (Some(_), false) => fail("floor_value is only valid on a Storey"),
            (None, true) => fail("a Storey needs a floor_value"),
            (Some(0), true) => fail("floor value 0 is not used"),
            _ => Ok(()),
        }
    }

    pub fn is_type(&self, element_type: &str) -> bool {
        self.element_type.as_deref() == Some(element_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Predicate {
    HasBuilding,
    HasStorey,
    HasSpace,
    HasElement,
    AdjacentZone,
    IntersectsZone,
}

impl Predicate {
    pub const ALL: [Predicate; 6] = [
        Predicate::HasBuilding,
        Predicate::HasStorey,
        Predicate::HasSpace,
        Predicate::HasElement,
        Predicate::AdjacentZone,
        Predicate::IntersectsZone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::HasBuilding => "hasBuilding",
            Predicate::HasStorey => "hasStorey",
            Predicate::HasSpace => "hasSpace",
            Predicate::HasElement => "hasElement",
            Predicate::AdjacentZone => "adjacentZone",
            Predicate::IntersectsZone => "intersectsZone",
        }
    }

    pub fn iri(self) -> String {
        format!("{BOT_PREFIX}:{}", self.as_str())
    }

    fn from_iri(iri: &str) -> Option<Self> {
        let local = iri.strip_prefix(BOT_PREFIX)?.strip_prefix(':')?;
        Predicate::ALL.into_iter().find(|p| p.as_str() == local)
    }

    /// Expected (subject, object) kinds of containment predicates.
    fn containment(self) -> Option<(EntityKind, EntityKind)> {
        match self {
            Predicate::HasBuilding => Some((EntityKind::Site, EntityKind::Building)),
            Predicate::HasStorey => Some((EntityKind::Building, EntityKind::Storey)),
            Predicate::HasSpace => Some((EntityKind::Storey, EntityKind::Space)),
            Predicate::HasElement => Some((EntityKind::Space, EntityKind::Element)),
            _ => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    #[serde(rename = "s")]
    pub subject: Ucode,
    #[serde(rename = "p")]
    pub predicate: Predicate,
    #[serde(rename = "o")]
    pub object: Ucode,
}

impl Relation {
    pub fn new(subject: impl Into<Ucode>, predicate: Predicate, object: impl Into<Ucode>) -> Self {
        Relation {
            subject: subject.into(),
            predicate,
            object: object.into(),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

/// On-disk topology document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

/// A term of the triple view: a prefixed name or a plain string literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Iri(String),
    Literal(String),
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Self {
        Term::Iri(s.into())
    }

    pub fn literal(s: impl Into<String>) -> Self {
        Term::Literal(s.into())
    }

    /// The bare lexical value, without literal quotes.
    pub fn value(&self) -> &str {
        match self {
            Term::Iri(s) | Term::Literal(s) => s,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(s) => f.write_str(s),
            Term::Literal(s) => write!(f, "\"{s}\""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Triple {
            subject,
            predicate,
            object,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyGraph {
    namespace: String,
    entities: BTreeMap<Ucode, Entity>,
    relations: Vec<Relation>,
    // derived indexes
    container: BTreeMap<Ucode, Ucode>,
    contents: BTreeMap<Ucode, BTreeSet<Ucode>>,
    adjacency: BTreeMap<Ucode, BTreeSet<Ucode>>,
    served: BTreeMap<Ucode, BTreeSet<Ucode>>,
    floors: Vec<(i32, Ucode)>,
}

/// Parses and validates a JSON topology document.
pub fn load_topology(document: &str) -> Result<TopologyGraph> {
    let doc: TopologyDocument =
        serde_json::from_str(document).map_err(|e| TopologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    TopologyGraph::from_document(doc)
}

fn valid_namespace(ns: &str) -> bool {
    let mut chars = ns.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && ns != BOT_PREFIX
        && ns != "rdf"
}

impl TopologyGraph {
    pub fn empty() -> Self {
        TopologyGraph::new(DEFAULT_NAMESPACE, Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn from_document(doc: TopologyDocument) -> Result<Self> {
        let ns = doc
            .namespace
            .unwrap_or_else(|| DEFAULT_NAMESPACE.to_owned());
        TopologyGraph::new(&ns, doc.entities, doc.relations)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            namespace: Some(self.namespace.clone()),
            entities: self.entities.values().cloned().collect(),
            relations: self.relations.clone(),
        }
    }

    /// Validates entities and relations and builds the lookup indexes.
    ///
    /// `intersectsZone` declared storey→zone is flipped to zone→storey and
    /// `adjacentZone` pairs are stored once, smaller ucode first.
    pub fn new(namespace: &str, entities: Vec<Entity>, relations: Vec<Relation>) -> Result<Self> {
        if !valid_namespace(namespace) {
            return Err(TopologyError::InvalidNamespace(namespace.to_owned()));
        }
        let mut by_id = BTreeMap::new();
        for entity in entities {
            entity.validate()?;
            if by_id.contains_key(&entity.ucode) {
                return Err(TopologyError::DuplicateUcode(entity.ucode.0));
            }
            by_id.insert(entity.ucode.clone(), entity);
        }

        let mut floors: Vec<(i32, Ucode)> = by_id
            .values()
            .filter_map(|e| e.floor_value.map(|f| (f, e.ucode.clone())))
            .collect();
        floors.sort();
        let contiguous = floors.windows(2).all(|w| {
            let (a, b) = (w[0].0, w[1].0);
            b == a + 1 || (a == -1 && b == 1)
        });
        if !contiguous {
            return Err(TopologyError::FloorValues(
                floors.iter().map(|(f, _)| *f).collect(),
            ));
        }

        let mut graph = TopologyGraph {
            namespace: namespace.to_owned(),
            entities: by_id,
            relations: Vec::new(),
            container: BTreeMap::new(),
            contents: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            served: BTreeMap::new(),
            floors,
        };
        let mut seen_adjacent = BTreeSet::new();
        for (index, relation) in relations.into_iter().enumerate() {
            if let Some(r) = graph.admit(index, relation, &mut seen_adjacent)? {
                graph.relations.push(r);
            }
        }
        Ok(graph)
    }

    fn admit(
        &mut self,
        index: usize,
        relation: Relation,
        seen_adjacent: &mut BTreeSet<(Ucode, Ucode)>,
    ) -> Result<Option<Relation>> {
        let kind_of = |u: &Ucode| {
            self.entities
                .get(u)
                .map(|e| e.kind)
                .ok_or_else(|| TopologyError::DanglingReference {
                    index,
                    ucode: u.0.clone(),
                })
        };
        let s_kind = kind_of(&relation.subject)?;
        let o_kind = kind_of(&relation.object)?;
        let violation = |reason: String| TopologyError::TypeViolation {
            relation: relation.to_string(),
            reason,
        };

        if let Some((want_s, want_o)) = relation.predicate.containment() {
            if s_kind != want_s || o_kind != want_o {
                return Err(violation(format!(
                    "{} links {want_s} to {want_o}, got {s_kind} to {o_kind}",
                    relation.predicate
                )));
            }
            match self.container.get(&relation.object) {
                Some(existing) if *existing != relation.subject => {
                    return Err(TopologyError::MultipleContainers {
                        child: relation.object.0.clone(),
                        first: existing.0.clone(),
                        second: relation.subject.0.clone(),
                    });
                }
                _ => {}
            }
            self.container
                .insert(relation.object.clone(), relation.subject.clone());
            self.contents
                .entry(relation.subject.clone())
                .or_default()
                .insert(relation.object.clone());
            return Ok(Some(relation));
        }

        match relation.predicate {
            Predicate::AdjacentZone => {
                if s_kind != EntityKind::Space || o_kind != EntityKind::Space {
                    return Err(violation(format!(
                        "adjacentZone links two spaces, got {s_kind} and {o_kind}"
                    )));
                }
                if relation.subject == relation.object {
                    return Err(violation("a space cannot be adjacent to itself".into()));
                }
                let (a, b) = if relation.subject < relation.object {
                    (relation.subject, relation.object)
                } else {
                    (relation.object, relation.subject)
                };
                if !seen_adjacent.insert((a.clone(), b.clone())) {
                    return Ok(None);
                }
                self.adjacency
                    .entry(a.clone())
                    .or_default()
                    .insert(b.clone());
                self.adjacency
                    .entry(b.clone())
                    .or_default()
                    .insert(a.clone());
                Ok(Some(Relation::new(a, Predicate::AdjacentZone, b)))
            }
            Predicate::IntersectsZone => {
                let (zone, storey) = match (s_kind, o_kind) {
                    (EntityKind::Zone, EntityKind::Storey) => (relation.subject, relation.object),
                    (EntityKind::Storey, EntityKind::Zone) => (relation.object, relation.subject),
                    _ => {
                        return Err(violation(format!(
                            "intersectsZone links a Zone and a Storey, got {s_kind} and {o_kind}"
                        )))
                    }
                };
                self.served
                    .entry(zone.clone())
                    .or_default()
                    .insert(storey.clone());
                Ok(Some(Relation::new(zone, Predicate::IntersectsZone, storey)))
            }
            _ => unreachable!("containment handled above"),
        }
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, ucode: &str) -> Option<&Entity> {
        self.entities.get(ucode)
    }

    pub fn count_kind(&self, kind: EntityKind) -> usize {
        self.entities.values().filter(|e| e.kind == kind).count()
    }

    fn require(&self, ucode: &str, kind: EntityKind) -> Result<&Entity> {
        let e = self
            .entities
            .get(ucode)
            .ok_or_else(|| TopologyError::UnknownEntity(ucode.to_owned()))?;
        if e.kind != kind {
            return Err(TopologyError::WrongKind {
                ucode: ucode.to_owned(),
                expected: kind,
                actual: e.kind,
            });
        }
        Ok(e)
    }

    /// The entity directly containing `ucode`, if any.
    pub fn container_of(&self, ucode: &str) -> Option<&Entity> {
        self.container.get(ucode).and_then(|c| self.entities.get(c))
    }

    /// Shortest-path length between two spaces over `adjacentZone` edges.
    ///
    /// Returns `Ok(None)` when the spaces are in different components.
    pub fn hops(&self, a: &str, b: &str) -> Result<Option<u32>> {
        let start = self.require(a, EntityKind::Space)?;
        self.require(b, EntityKind::Space)?;
        if a == b {
            return Ok(Some(0));
        }
        let mut dist: BTreeMap<&str, u32> = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start.ucode.as_str(), 0);
        queue.push_back(start.ucode.as_str());
        while let Some(node) = queue.pop_front() {
            let d = dist[node];
            for next in self.adjacency.get(node).into_iter().flatten() {
                let next = next.as_str();
                if dist.contains_key(next) {
                    continue;
                }
                if next == b {
                    return Ok(Some(d + 1));
                }
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
        Ok(None)
    }

    pub fn storey_of(&self, space: &str) -> Result<&Entity> {
        self.require(space, EntityKind::Space)?;
        match self.container_of(space) {
            Some(parent) if parent.kind == EntityKind::Storey => Ok(parent),
            _ => Err(TopologyError::NoParentStorey(space.to_owned())),
        }
    }

    /// Floor value of the storey containing `space`.
    pub fn floor_value(&self, space: &str) -> Result<i32> {
        let storey = self.storey_of(space)?;
        Ok(storey
            .floor_value
            .expect("storeys always carry a floor value"))
    }

    /// Elements held by `space`, optionally restricted to one element type,
    /// in ucode order.
    pub fn elements_in_space(
        &self,
        space: &str,
        type_filter: Option<&str>,
    ) -> Result<Vec<&Entity>> {
        self.require(space, EntityKind::Space)?;
        Ok(self
            .contents
            .get(space)
            .into_iter()
            .flatten()
            .filter_map(|u| self.entities.get(u))
            .filter(|e| e.kind == EntityKind::Element)
            .filter(|e| type_filter.is_none_or(|t| e.is_type(t)))
            .collect())
    }

    /// Storeys a zone intersects, lowest floor first.
    pub fn storeys_served_by(&self, zone: &str) -> Result<Vec<&Entity>> {
        self.require(zone, EntityKind::Zone)?;
        let mut storeys: Vec<&Entity> = self
            .served
            .get(zone)
            .into_iter()
            .flatten()
            .filter_map(|u| self.entities.get(u))
            .collect();
        storeys.sort_by_key(|s| s.floor_value);
        Ok(storeys)
    }

    /// Storeys ordered by floor value.
    pub fn storeys(&self) -> Vec<&Entity> {
        self.floors
            .iter()
            .filter_map(|(_, u)| self.entities.get(u))
            .collect()
    }

    pub fn storey_by_floor(&self, floor: i32) -> Result<&Entity> {
        self.floors
            .iter()
            .find(|(f, _)| *f == floor)
            .and_then(|(_, u)| self.entities.get(u))
            .ok_or(TopologyError::UnknownFloor(floor))
    }

    /// Number of storeys travelled between two floor values. Floor 0 does
    /// not exist, so -1 and 1 are one storey apart.
    pub fn floor_distance(&self, a: i32, b: i32) -> Result<u32> {
        let pos = |f: i32| {
            self.floors
                .iter()
                .position(|(v, _)| *v == f)
                .ok_or(TopologyError::UnknownFloor(f))
        };
        Ok(pos(a)?.abs_diff(pos(b)?) as u32)
    }

    /// Spaces contained by `storey`, in ucode order.
    pub fn spaces_on(&self, storey: &str) -> Result<Vec<&Entity>> {
        self.require(storey, EntityKind::Storey)?;
        Ok(self
            .contents
            .get(storey)
            .into_iter()
            .flatten()
            .filter_map(|u| self.entities.get(u))
            .filter(|e| e.kind == EntityKind::Space)
            .collect())
    }

    /// The elevator hall of a storey: the one space holding a
    /// [`LANDING_BUTTON`] element.
    pub fn elevator_hall(&self, storey: &str) -> Result<&Entity> {
        let halls: Vec<&Entity> = self
            .spaces_on(storey)?
            .into_iter()
            .filter(|s| {
                self.elements_in_space(s.ucode.as_str(), Some(LANDING_BUTTON))
                    .map(|v| !v.is_empty())
                    .unwrap_or(false)
            })
            .collect();
        match halls.as_slice() {
            [hall] => Ok(hall),
            [] => Err(TopologyError::NoElevatorHall(storey.to_owned())),
            many => Err(TopologyError::AmbiguousElevatorHall {
                storey: storey.to_owned(),
                halls: many.iter().map(|h| h.ucode.0.clone()).collect(),
            }),
        }
    }

    pub fn elevator_hall_on_floor(&self, floor: i32) -> Result<&Entity> {
        let storey = self.storey_by_floor(floor)?;
        self.elevator_hall(storey.ucode.as_str())
    }

    /// Hops from a space to the elevator hall of its own storey.
    pub fn hops_to_elevator(&self, space: &str) -> Result<Option<u32>> {
        let storey = self.storey_of(space)?;
        let hall = self.elevator_hall(storey.ucode.as_str())?;
        self.hops(space, hall.ucode.as_str())
    }

    /// The space directly holding an element.
    pub fn space_of(&self, element: &str) -> Option<&Entity> {
        self.container_of(element)
            .filter(|c| c.kind == EntityKind::Space)
    }

    pub fn iri_of(&self, ucode: &Ucode) -> String {
        format!("{}:{}", self.namespace, ucode)
    }

    fn attr(&self, name: &str) -> String {
        format!("{}:{name}", self.namespace)
    }

    /// Triple view of the graph.
    ///
    /// Each entity contributes `rdf:type`, `ucode` and `name` triples plus
    /// `element_type` / `floor_value` when set. Each relation contributes one
    /// triple. Entities come first in ucode order, relations follow in
    /// declaration order.
    pub fn as_triples(&self) -> Vec<Triple> {
        let (p_ucode, p_name) = (self.attr("ucode"), self.attr("name"));
        let (p_type, p_floor) = (self.attr("element_type"), self.attr("floor_value"));
        let mut out = Vec::with_capacity(self.entities.len() * 4 + self.relations.len());
        for e in self.entities.values() {
            let s = Term::Iri(self.iri_of(&e.ucode));
            out.push(Triple::new(
                s.clone(),
                Term::iri(RDF_TYPE),
                Term::Iri(e.kind.class_iri()),
            ));
            out.push(Triple::new(
                s.clone(),
                Term::iri(&p_ucode),
                Term::literal(e.ucode.as_str()),
            ));
            out.push(Triple::new(
                s.clone(),
                Term::iri(&p_name),
                Term::literal(&e.name),
            ));
            if let Some(t) = &e.element_type {
                out.push(Triple::new(s.clone(), Term::iri(&p_type), Term::literal(t)));
            }
            if let Some(f) = e.floor_value {
                out.push(Triple::new(
                    s,
                    Term::iri(&p_floor),
                    Term::literal(f.to_string()),
                ));
            }
        }
        for r in &self.relations {
            out.push(Triple::new(
                Term::Iri(self.iri_of(&r.subject)),
                Term::Iri(r.predicate.iri()),
                Term::Iri(self.iri_of(&r.object)),
            ));
        }
        out
    }

    /// Rebuilds a graph from the triple view produced by [`as_triples`].
    ///
    /// [`as_triples`]: TopologyGraph::as_triples
    pub fn from_triples<'a>(
        namespace: &str,
        triples: impl IntoIterator<Item = &'a Triple>,
    ) -> Result<Self> {
        #[derive(Default)]
        struct Partial {
            kind: Option<EntityKind>,
            ucode: Option<String>,
            name: Option<String>,
            element_type: Option<String>,
            floor_value: Option<i32>,
        }
        let bad = |t: &Triple, why: &str| {
            TopologyError::Triples(format!("{why}: {} {} {}", t.subject, t.predicate, t.object))
        };
        let attr = |n: &str| format!("{namespace}:{n}");
        let (p_ucode, p_name) = (attr("ucode"), attr("name"));
        let (p_type, p_floor) = (attr("element_type"), attr("floor_value"));

        let mut partial: BTreeMap<String, Partial> = BTreeMap::new();
        let mut rels: Vec<(String, Predicate, String)> = Vec::new();
        for t in triples {
            let Term::Iri(subject) = &t.subject else {
                return Err(bad(t, "literal subject"));
            };
            let Term::Iri(pred) = &t.predicate else {
                return Err(bad(t, "literal predicate"));
            };
            if let Some(p) = Predicate::from_iri(pred) {
                let Term::Iri(object) = &t.object else {
                    return Err(bad(t, "relation object must be an IRI"));
                };
                rels.push((subject.clone(), p, object.clone()));
                continue;
            }
            let entry = partial.entry(subject.clone()).or_default();
            match (pred.as_str(), &t.object) {
                (RDF_TYPE, Term::Iri(class)) => {
                    entry.kind = Some(
                        EntityKind::from_class_iri(class).ok_or_else(|| bad(t, "unknown class"))?,
                    )
                }
                (p, Term::Literal(v)) if p == p_ucode => entry.ucode = Some(v.clone()),
                (p, Term::Literal(v)) if p == p_name => entry.name = Some(v.clone()),
                (p, Term::Literal(v)) if p == p_type => entry.element_type = Some(v.clone()),
                (p, Term::Literal(v)) if p == p_floor => {
                    entry.floor_value = Some(
                        v.parse()
                            .map_err(|_| bad(t, "floor value is not an integer"))?,
                    )
                }
                _ => return Err(bad(t, "unrecognised triple")),
            }
        }

        let mut iri_to_ucode = BTreeMap::new();
        let mut entities = Vec::with_capacity(partial.len());
        for (iri, p) in partial {
            let (Some(kind), Some(ucode), Some(name)) = (p.kind, p.ucode, p.name) else {
                return Err(TopologyError::Triples(format!(
                    "incomplete description of {iri}"
                )));
            };
            iri_to_ucode.insert(iri, ucode.clone());
            entities.push(Entity {
                ucode: Ucode(ucode),
                kind,
                name,
                element_type: p.element_type,
                floor_value: p.floor_value,
            });
        }
        let resolve = |iri: &str| {
            iri_to_ucode.get(iri).cloned().map(Ucode).ok_or_else(|| {
                TopologyError::Triples(format!("relation endpoint {iri} has no description"))
            })
        };
        let relations = rels
            .iter()
            .map(|(s, p, o)| Ok(Relation::new(resolve(s)?, *p, resolve(o)?)))
            .collect::<Result<Vec<_>>>()?;
        TopologyGraph::new(namespace, entities, relations)
    }
}
