//! Oracles and fixtures shared by the integration tests. Every oracle here is
//! written independently of the library code it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use buildkg::conjunction::{Direction, IntervalSample};
use buildkg::ingest::{EventKind, EventRecord, Instance, SensorSample};
use buildkg::query::{PatternTerm, QueryAst};
use buildkg::topology::{Entity, EntityKind, Predicate, Relation, Term, TopologyGraph, Triple};
use buildkg::Ucode;
use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;

/// Lights of the rooms on the storey the elevator reaches as `Level1`.
pub const ELEVATOR_LIGHTS_QUERY: &str = r#"SELECT ?level ?space ?ele ?ucode   WHERE { {
    daiwa_bot:Elevator bot:intersectsZone ?level.
    daiwa_bot:Elevator daiwa_bot:ucode ?ele_ucode.
    ?level bot:hasSpace ?space.
    ?space bot:hasElement ?ele.
    ?ele daiwa_bot:element_type "Light".
    ?ele daiwa_bot:ucode ?ucode .
    FILTER (?level = daiwa_bot:Level1) }  }   "#;

// ---------------------------------------------------------------------------
// Graph fixtures

fn entity(ucode: &str, kind: EntityKind, element_type: Option<&str>, floor: Option<i32>) -> Entity {
    Entity {
        ucode: ucode.into(),
        kind,
        name: format!("{ucode} name"),
        element_type: element_type.map(str::to_owned),
        floor_value: floor,
    }
}

/// Floor values for `n` storeys: basements first, no floor zero.
pub fn floor_values(n: usize, basements: usize) -> Vec<i32> {
    (0..n)
        .map(|i| {
            let i = i as i32 - basements as i32;
            if i < 0 {
                i
            } else {
                i + 1
            }
        })
        .collect()
}

/// A building with `spaces_per_storey[i]` spaces on storey `i`, an elevator
/// zone serving every storey, a landing button in the first space of each
/// storey, and `elements_per_space` lights in every other space. `edges`
/// index spaces globally and become adjacentZone relations.
pub fn build_graph(
    spaces_per_storey: &[usize],
    edges: &[(usize, usize)],
    elements_per_space: usize,
) -> TopologyGraph {
    let floors = floor_values(spaces_per_storey.len(), spaces_per_storey.len() / 3);
    let mut entities = vec![
        entity("Site", EntityKind::Site, None, None),
        entity("Bldg", EntityKind::Building, None, None),
        entity("Lift", EntityKind::Zone, Some("Elevator"), None),
    ];
    let mut relations = vec![Relation::new("Site", Predicate::HasBuilding, "Bldg")];
    let mut spaces = Vec::new();
    for (i, (&n, &floor)) in spaces_per_storey.iter().zip(&floors).enumerate() {
        let storey = format!("L{i}");
        entities.push(entity(&storey, EntityKind::Storey, None, Some(floor)));
        relations.push(Relation::new("Bldg", Predicate::HasStorey, storey.as_str()));
        relations.push(Relation::new(
            "Lift",
            Predicate::IntersectsZone,
            storey.as_str(),
        ));
        for j in 0..n {
            let space = format!("S{i}_{j}");
            entities.push(entity(&space, EntityKind::Space, None, None));
            relations.push(Relation::new(
                storey.as_str(),
                Predicate::HasSpace,
                space.as_str(),
            ));
            if j == 0 {
                let b = format!("{space}_btn");
                entities.push(entity(&b, EntityKind::Element, Some("LandingButton"), None));
                relations.push(Relation::new(
                    space.as_str(),
                    Predicate::HasElement,
                    b.as_str(),
                ));
            } else {
                for k in 0..elements_per_space {
                    let e = format!("{space}_e{k}");
                    entities.push(entity(&e, EntityKind::Element, Some("Light"), None));
                    relations.push(Relation::new(
                        space.as_str(),
                        Predicate::HasElement,
                        e.as_str(),
                    ));
                }
            }
            spaces.push(space);
        }
    }
    for &(a, b) in edges {
        if a != b {
            relations.push(Relation::new(
                spaces[a].as_str(),
                Predicate::AdjacentZone,
                spaces[b].as_str(),
            ));
        }
    }
    TopologyGraph::new("bldg", entities, relations).expect("fixture is valid")
}

/// Ucodes of the spaces of a [`build_graph`] building, in global order.
pub fn space_names(spaces_per_storey: &[usize]) -> Vec<String> {
    spaces_per_storey
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..n).map(move |j| format!("S{i}_{j}")))
        .collect()
}

/// A building with 831 entities of which 43 are spaces.
pub fn large_building() -> TopologyGraph {
    // 1 site + 1 building + 5 storeys + 1 zone + 43 spaces + 780 elements
    let per_storey = [9, 8, 9, 9, 8];
    let mut g = build_graph(&per_storey, &[], 0);
    let mut doc = g.to_document();
    let names = space_names(&per_storey);
    let non_halls: Vec<&String> = names.iter().filter(|s| !s.ends_with("_0")).collect();
    // 5 landing buttons exist already; spread 775 more elements
    for k in 0..775 {
        let space = non_halls[k % non_halls.len()];
        let e = format!("{space}_x{k}");
        let kind = if k % 3 == 0 { "Light" } else { "SmartLock" };
        doc.entities
            .push(entity(&e, EntityKind::Element, Some(kind), None));
        doc.relations.push(Relation::new(
            space.as_str(),
            Predicate::HasElement,
            e.as_str(),
        ));
    }
    for w in names.windows(2) {
        if w[0].split('_').next() == w[1].split('_').next() {
            doc.relations.push(Relation::new(
                w[0].as_str(),
                Predicate::AdjacentZone,
                w[1].as_str(),
            ));
        }
    }
    g = TopologyGraph::from_document(doc).expect("fixture is valid");
    g
}

/// All-pairs shortest adjacentZone distances by Floyd–Warshall over the raw
/// relation list.
pub fn floyd_warshall(g: &TopologyGraph) -> BTreeMap<(String, String), u32> {
    let spaces: Vec<String> = g
        .entities()
        .filter(|e| e.kind == EntityKind::Space)
        .map(|e| e.ucode.to_string())
        .collect();
    let idx: HashMap<&str, usize> = spaces
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let n = spaces.len();
    const INF: u32 = u32::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for r in g.relations() {
        if r.predicate == Predicate::AdjacentZone {
            let (a, b) = (idx[r.subject.as_str()], idx[r.object.as_str()]);
            d[a][b] = d[a][b].min(1);
            d[b][a] = d[b][a].min(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if d[i][j] < INF {
                out.insert((spaces[i].clone(), spaces[j].clone()), d[i][j]);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Query oracles

/// Exhaustive enumeration over every assignment of the query's variables to
/// terms occurring in `triples`. Constants are compared as written.
pub fn exhaustive_query(ast: &QueryAst, triples: &[Triple]) -> BTreeSet<Vec<Term>> {
    let set: HashSet<&Triple> = triples.iter().collect();
    let domain: Vec<Term> = triples
        .iter()
        .flat_map(|t| [t.subject.clone(), t.predicate.clone(), t.object.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut vars: Vec<String> = Vec::new();
    for p in &ast.patterns {
        for t in [&p.subject, &p.predicate, &p.object] {
            if let PatternTerm::Var(v) = t {
                if !vars.contains(v) {
                    vars.push(v.clone());
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    if domain.is_empty() {
        return out;
    }
    let mut counter = vec![0usize; vars.len()];
    loop {
        let value = |pt: &PatternTerm| match pt {
            PatternTerm::Const(c) => c.clone(),
            PatternTerm::Var(v) => {
                domain[counter[vars.iter().position(|x| x == v).unwrap()]].clone()
            }
        };
        let ok = ast.patterns.iter().all(|p| {
            set.contains(&Triple::new(
                value(&p.subject),
                value(&p.predicate),
                value(&p.object),
            ))
        }) && ast
            .filters
            .iter()
            .all(|f| value(&PatternTerm::Var(f.var.clone())) == f.value);
        if ok {
            out.insert(
                ast.select_vars
                    .iter()
                    .map(|v| value(&PatternTerm::Var(v.clone())))
                    .collect(),
            );
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == vars.len() {
                return out;
            }
            counter[i] += 1;
            if counter[i] < domain.len() {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

/// Join oracle for larger graphs: the match set of each pattern is computed
/// on its own, then combined depth-first, most selective pattern first.
pub fn join_oracle(ast: &QueryAst, triples: &[Triple]) -> BTreeSet<Vec<Term>> {
    type Row = HashMap<String, Term>;
    let matches_of = |p: &buildkg::query::TriplePattern| -> Vec<Row> {
        triples
            .iter()
            .filter_map(|t| {
                let mut row = Row::new();
                for (pt, v) in [
                    (&p.subject, &t.subject),
                    (&p.predicate, &t.predicate),
                    (&p.object, &t.object),
                ] {
                    match pt {
                        PatternTerm::Const(c) if c != v => return None,
                        PatternTerm::Const(_) => {}
                        PatternTerm::Var(name) => {
                            if row.get(name).is_some_and(|b| b != v) {
                                return None;
                            }
                            row.insert(name.clone(), v.clone());
                        }
                    }
                }
                Some(row)
            })
            .collect()
    };
    let mut sets: Vec<Vec<Row>> = ast.patterns.iter().map(matches_of).collect();
    sets.sort_by_key(Vec::len);

    fn go(sets: &[Vec<Row>], row: &HashMap<String, Term>, out: &mut Vec<HashMap<String, Term>>) {
        let Some((first, rest)) = sets.split_first() else {
            out.push(row.clone());
            return;
        };
        for m in first {
            if m.iter().all(|(k, v)| row.get(k).is_none_or(|b| b == v)) {
                let mut merged = row.clone();
                merged.extend(m.iter().map(|(k, v)| (k.clone(), v.clone())));
                go(rest, &merged, out);
            }
        }
    }
    let mut rows = Vec::new();
    go(&sets, &HashMap::new(), &mut rows);
    rows.into_iter()
        .filter(|r| ast.filters.iter().all(|f| r[&f.var] == f.value))
        .map(|r| ast.select_vars.iter().map(|v| r[v].clone()).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Regression oracle

/// Solves the raw 3×3 normal equations `XᵀX b = Xᵀy` of `y = a + b1·x1 +
/// b2·x2` by Gaussian elimination with partial pivoting.
pub fn normal_equations(x1: &[f64], x2: &[f64], y: &[f64]) -> [f64; 3] {
    let rows: Vec<[f64; 3]> = x1.iter().zip(x2).map(|(&a, &b)| [1.0, a, b]).collect();
    let mut m = [[0.0f64; 4]; 3];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += r[i] * r[j];
            }
            m[i][3] += r[i] * yi;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
}

// ---------------------------------------------------------------------------
// Event fixtures

pub fn day0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 5, 1, 0, 0, 0).unwrap()
}

pub fn light_event(element: &str, kind: EventKind, t: DateTime<Utc>) -> EventRecord {
    EventRecord {
        element: Ucode::new(element),
        space: Ucode::new(element.trim_end_matches("_light")),
        kind,
        floor: None,
        time: t,
    }
}

/// Hours and counts of a staff room's light-on times: 98 events, one per day.
pub const STAFF_LIGHT_ON_COUNTS: [(u32, usize); 11] = [
    (4, 1),
    (5, 3),
    (6, 7),
    (7, 12),
    (8, 16),
    (9, 18),
    (10, 17),
    (11, 12),
    (12, 7),
    (13, 4),
    (14, 1),
];

pub fn staff_light_on_events() -> Vec<EventRecord> {
    let mut out = Vec::new();
    let mut day = 0;
    for (hour, count) in STAFF_LIGHT_ON_COUNTS {
        for _ in 0..count {
            let t = day0() + Duration::days(day) + Duration::hours(i64::from(hour));
            out.push(light_event("A302_light", EventKind::LightOn, t));
            day += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random queries over a small vocabulary

const NODES: [&str; 5] = ["bldg:n0", "bldg:n1", "bldg:n2", "bldg:n3", "bldg:n4"];
const PREDS: [&str; 3] = ["bot:p0", "bot:p1", "bot:p2"];
const LITS: [&str; 2] = ["l0", "l1"];
const VARS: [&str; 3] = ["x", "y", "z"];

pub fn triples_strategy() -> impl Strategy<Value = Vec<Triple>> {
    let obj = prop_oneof![
        (0..NODES.len()).prop_map(|i| Term::iri(NODES[i])),
        (0..LITS.len()).prop_map(|i| Term::literal(LITS[i])),
    ];
    prop::collection::vec((0..NODES.len(), 0..PREDS.len(), obj), 1..25).prop_map(|v| {
        v.into_iter()
            .map(|(s, p, o)| Triple::new(Term::iri(NODES[s]), Term::iri(PREDS[p]), o))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct RandomQuery {
    pub patterns: Vec<[String; 3]>,
    pub filters: Vec<(String, String)>,
    pub select: Vec<String>,
}

impl RandomQuery {
    pub fn render(&self, order: &[usize], filter_first: bool) -> String {
        let pats: Vec<String> = order
            .iter()
            .map(|&i| self.patterns[i].join(" ") + " .")
            .collect();
        let filts: Vec<String> = self
            .filters
            .iter()
            .map(|(v, c)| format!("FILTER (?{v} = {c})"))
            .collect();
        let body = if filter_first {
            format!("{} {}", filts.join(" "), pats.join(" "))
        } else {
            format!("{} {}", pats.join(" "), filts.join(" "))
        };
        let sel: Vec<String> = self.select.iter().map(|v| format!("?{v}")).collect();
        format!("SELECT {} WHERE {{ {body} }}", sel.join(" "))
    }
}

fn term_strategy(position: usize) -> BoxedStrategy<String> {
    let var = (0..VARS.len()).prop_map(|i| format!("?{}", VARS[i]));
    match position {
        0 => prop_oneof![var, (0..NODES.len()).prop_map(|i| NODES[i].to_owned())].boxed(),
        1 => prop_oneof![1 => var, 3 => (0..PREDS.len()).prop_map(|i| PREDS[i].to_owned())].boxed(),
        _ => prop_oneof![
            var,
            (0..NODES.len()).prop_map(|i| NODES[i].to_owned()),
            (0..LITS.len()).prop_map(|i| format!("\"{}\"", LITS[i])),
        ]
        .boxed(),
    }
}

pub fn query_strategy() -> impl Strategy<Value = RandomQuery> {
    let pattern =
        (term_strategy(0), term_strategy(1), term_strategy(2)).prop_map(|(s, p, o)| [s, p, o]);
    (
        prop::collection::vec(pattern, 1..4),
        any::<prop::sample::Index>(),
        prop::collection::vec((any::<prop::sample::Index>(), 0..NODES.len()), 0..2),
    )
        .prop_filter_map("query needs a variable", |(patterns, pick, filt)| {
            let mut used: Vec<String> = Vec::new();
            for p in &patterns {
                for t in p {
                    if let Some(v) = t.strip_prefix('?') {
                        if !used.iter().any(|u| u == v) {
                            used.push(v.to_owned());
                        }
                    }
                }
            }
            if used.is_empty() {
                return None;
            }
            let k = pick.index(used.len()) + 1;
            let select = used[..k].to_vec();
            let filters = filt
                .into_iter()
                .map(|(i, n)| (i.get(&used).clone(), NODES[n].to_owned()))
                .collect();
            Some(RandomQuery {
                patterns,
                filters,
                select,
            })
        })
}

// ---------------------------------------------------------------------------
// Random sensor samples

const LIGHTS: [&str; 3] = ["A302_light", "A305_light", "B204_light"];

pub fn sample_strategy() -> impl Strategy<Value = SensorSample> {
    let light = (
        0..LIGHTS.len(),
        prop_oneof![Just(0i64), Just(1)],
        0i64..5000,
    )
        .prop_map(|(i, v, t)| {
            let instance = if t % 3 == 0 {
                Instance::Token(if v == 1 { "ON".into() } else { "off".into() })
            } else {
                Instance::Int(v)
            };
            SensorSample::new(LIGHTS[i], "light", instance, day0() + Duration::seconds(t))
        });
    let elevator = (
        prop::sample::select(vec!["arrive", "landing", "car"]),
        prop::sample::select(vec![-2, -1, 1, 2, 3]),
        0i64..5000,
    )
        .prop_map(|(k, f, t)| {
            SensorSample::new(
                "Elevator",
                "elevator",
                Instance::Token(format!("{k}:{f}")),
                day0() + Duration::seconds(t),
            )
        });
    prop_oneof![3 => light, 1 => elevator]
}

pub fn interval(space: &str, hops: u32, floor: i32, dt: f64) -> IntervalSample {
    IntervalSample {
        space: space.into(),
        direction: Direction::LightOffToElevator,
        delta_t: dt,
        hops,
        floor_value: floor,
        time: day0(),
        paired_time: day0() + Duration::milliseconds((dt * 1000.0) as i64),
    }
}

pub fn ols_fixture() -> impl Strategy<Value = Vec<(u32, i32, f64)>> {
    prop::collection::vec((0u32..10, -2i32..5, 1.0f64..300.0), 5..80).prop_filter(
        "full rank",
        |v| {
            let distinct = |f: &dyn Fn(&(u32, i32, f64)) -> i64| {
                let mut s: Vec<i64> = v.iter().map(f).collect();
                s.sort();
                s.dedup();
                s.len()
            };
            distinct(&|x| i64::from(x.0)) > 1
                && distinct(&|x| i64::from(x.1)) > 1
                && distinct(&|x| i64::from(x.0) * 100 + i64::from(x.1)) > 2
                && {
                    let n = v.len() as f64;
                    let m1 = v.iter().map(|x| f64::from(x.0)).sum::<f64>() / n;
                    let m2 = v.iter().map(|x| f64::from(x.1)).sum::<f64>() / n;
                    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                    for x in v {
                        let (d1, d2) = (f64::from(x.0) - m1, f64::from(x.1) - m2);
                        a += d1 * d1;
                        b += d2 * d2;
                        c += d1 * d2;
                    }
                    a * b - c * c > 1e-3 * a * b
                }
        },
    )
}

pub fn to_intervals(v: &[(u32, i32, f64)]) -> Vec<IntervalSample> {
    v.iter()
        .enumerate()
        .map(|(i, &(h, f, y))| interval(&format!("r{}", i % 4), h, f, y))
        .collect()
}
