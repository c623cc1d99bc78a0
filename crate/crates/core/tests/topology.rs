mod common;

use buildkg::query::{execute, parse_query};
use buildkg::sample::{sample_building, SAMPLE_ROOMS};
use buildkg::topology::{
    load_topology, Entity, EntityKind, Predicate, Relation, TopologyError, TopologyGraph,
};
use common::{build_graph, floyd_warshall, large_building, space_names};
use proptest::prelude::*;

fn graph_params() -> impl Strategy<Value = (Vec<usize>, Vec<(usize, usize)>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|per| {
        let n: usize = per.iter().sum();
        (Just(per), prop::collection::vec((0..n, 0..n), 0..(2 * n)))
    })
}

proptest! {
    #[test]
    fn hops_match_floyd_warshall((per, edges) in graph_params()) {
        let g = build_graph(&per, &edges, 1);
        let oracle = floyd_warshall(&g);
        let names = space_names(&per);
        for a in &names {
            for b in &names {
                let expected = oracle.get(&(a.clone(), b.clone())).copied();
                prop_assert_eq!(g.hops(a, b).unwrap(), expected, "{} -> {}", a, b);
            }
        }
    }

    #[test]
    fn hops_is_a_metric((per, edges) in graph_params()) {
        let g = build_graph(&per, &edges, 0);
        let names = space_names(&per);
        for a in &names {
            prop_assert_eq!(g.hops(a, a).unwrap(), Some(0));
            for b in &names {
                let ab = g.hops(a, b).unwrap();
                prop_assert_eq!(ab, g.hops(b, a).unwrap());
                if a != b {
                    prop_assert_ne!(ab, Some(0));
                }
                for c in &names {
                    if let (Some(ab), Some(bc)) = (ab, g.hops(b, c).unwrap()) {
                        let ac = g.hops(a, c).unwrap().expect("connected through b");
                        prop_assert!(ac <= ab + bc);
                    }
                }
            }
        }
    }

    #[test]
    fn triples_round_trip((per, edges) in graph_params()) {
        let g = build_graph(&per, &edges, 2);
        let back = TopologyGraph::from_triples(g.namespace(), &g.as_triples()).unwrap();
        prop_assert_eq!(back.as_triples(), g.as_triples());
        prop_assert_eq!(back, g);
    }
}

#[test]
fn large_building_counts() {
    let g = large_building();
    assert_eq!(g.len(), 831);
    assert_eq!(g.count_kind(EntityKind::Space), 43);
    let back = TopologyGraph::from_triples(g.namespace(), &g.as_triples()).unwrap();
    assert_eq!(back.len(), 831);
    assert_eq!(back.count_kind(EntityKind::Space), 43);
    let q = parse_query("SELECT ?s WHERE { ?s a bot:Space }").unwrap();
    assert_eq!(execute(&q, &back).unwrap().len(), 43);
    let q = parse_query("SELECT ?e WHERE { ?e bldg:ucode ?u }").unwrap();
    assert_eq!(execute(&q, &back).unwrap().len(), 831);
}

#[test]
fn sample_building_shape() {
    let g = sample_building();
    assert_eq!(g.namespace(), "daiwa_bot");
    assert_eq!(g.count_kind(EntityKind::Storey), 5);
    let floors: Vec<i32> = g.storeys().iter().map(|s| s.floor_value.unwrap()).collect();
    assert_eq!(floors, vec![-2, -1, 1, 2, 3]);
    assert_eq!(g.storeys_served_by("Elevator").unwrap().len(), 5);
    for room in SAMPLE_ROOMS {
        assert_eq!(
            g.elements_in_space(room, Some("Light")).unwrap().len(),
            1,
            "{room}"
        );
        assert!(g.hops_to_elevator(room).unwrap().is_some(), "{room}");
    }
    assert_eq!(g.hops_to_elevator("A305").unwrap(), Some(4));
    assert_eq!(g.hops_to_elevator("B204").unwrap(), Some(1));
    assert_eq!(g.floor_distance(-1, 1).unwrap(), 1);
    assert_eq!(g.floor_value("SB201").unwrap(), -2);
    assert_eq!(g.elevator_hall_on_floor(3).unwrap().ucode.as_str(), "Hall3");
}

#[test]
fn document_round_trip() {
    let g = sample_building();
    let text = serde_json::to_string(&g.to_document()).unwrap();
    assert_eq!(load_topology(&text).unwrap(), g);
}

fn tiny(entities: Vec<Entity>, relations: Vec<Relation>) -> Result<TopologyGraph, TopologyError> {
    TopologyGraph::new("t", entities, relations)
}

fn e(ucode: &str, kind: EntityKind) -> Entity {
    Entity {
        ucode: ucode.into(),
        kind,
        name: ucode.into(),
        element_type: matches!(kind, EntityKind::Element | EntityKind::Zone)
            .then(|| "Light".into()),
        floor_value: (kind == EntityKind::Storey).then_some(1),
    }
}

#[test]
fn validation_errors() {
    let err = tiny(
        vec![e("a", EntityKind::Space), e("a", EntityKind::Space)],
        vec![],
    )
    .unwrap_err();
    assert!(matches!(err, TopologyError::DuplicateUcode(_)), "{err}");

    let err = tiny(
        vec![e("a", EntityKind::Space)],
        vec![Relation::new("a", Predicate::AdjacentZone, "b")],
    )
    .unwrap_err();
    assert!(
        matches!(err, TopologyError::DanglingReference { .. }),
        "{err}"
    );

    let err = tiny(
        vec![e("s", EntityKind::Space), e("x", EntityKind::Element)],
        vec![Relation::new("x", Predicate::HasElement, "s")],
    )
    .unwrap_err();
    assert!(matches!(err, TopologyError::TypeViolation { .. }), "{err}");

    let err = tiny(
        vec![
            e("L1", EntityKind::Storey),
            e("L2", EntityKind::Storey),
            e("s", EntityKind::Space),
        ],
        vec![
            Relation::new("L1", Predicate::HasSpace, "s"),
            Relation::new("L2", Predicate::HasSpace, "s"),
        ],
    );
    assert!(err.is_err());

    let err = load_topology("{ \"entities\": [ }").unwrap_err();
    assert!(matches!(err, TopologyError::Parse { .. }), "{err}");

    let g = tiny(vec![e("s", EntityKind::Space)], vec![]).unwrap();
    assert!(matches!(
        g.floor_value("s"),
        Err(TopologyError::NoParentStorey(_))
    ));
    assert!(matches!(
        g.hops("s", "nope"),
        Err(TopologyError::UnknownEntity(_))
    ));
}
