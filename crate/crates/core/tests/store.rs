mod common;

use common::{coupled, coupled_schedule, random_scenario, retro_bundle, retro_csv};
use hierion_core::model::TimeInterval;
use hierion_core::store::*;
use proptest::prelude::*;

const MINIMAL: &str = r#"{
  "schema": "hierion/1",
  "hierarchy": [{"id": "p", "level": 0}],
  "canonical_diagrams": [{
    "id": "d",
    "states": [{"id": "A", "rank": 0}, {"id": "B", "rank": 1}],
    "dev_arcs": [{"src": "A", "dst": "B"}],
    "s0": "A",
    "s_star": "B"
  }]
}"#;

fn load(text: &str) -> Result<ModelBundle, BundleError> {
    load_bundle(text, Strictness::Strict).map(|l| l.bundle)
}

#[test]
fn minimal_bundle_loads() {
    let b = load(MINIMAL).unwrap();
    assert_eq!(b.canonical_diagrams[0].dev_arcs[0].delta, 1);
    assert_eq!(b.hierarchy.nodes.len(), 1);
}

#[test]
fn undeclared_state_is_dangling() {
    let text = MINIMAL.replace(r#""dst": "B""#, r#""dst": "S9""#);
    match load(&text) {
        Err(BundleError::DanglingReference { id, site }) => {
            assert_eq!(id, "S9");
            assert!(site.contains("canonical diagram `d`"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rank_inversion_fails_validation_with_report() {
    let text = MINIMAL.replace(r#""src": "A", "dst": "B""#, r#""src": "B", "dst": "A""#);
    match load(&text) {
        Err(BundleError::ValidationFailed(report)) => {
            assert_eq!(report, vec!["diagram `d`: devArc violates rank order: (B,A)".to_string()]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn parse_error_carries_location() {
    let text = MINIMAL.replace(r#""s0": "A","#, r#""s0": "A""#);
    match load(&text) {
        Err(BundleError::ParseError { line, .. }) => assert_eq!(line, 9),
        other => panic!("{other:?}"),
    }
}

#[test]
fn schema_version_is_checked() {
    let text = MINIMAL.replace("hierion/1", "hierion/0");
    assert_eq!(load(&text), Err(BundleError::UnsupportedSchema("hierion/0".into())));
}

#[test]
fn unknown_fields_strict_or_lenient() {
    let text = MINIMAL.replace(r#""s0": "A","#, r#""s0": "A", "colour": "red","#);
    match load(&text) {
        Err(BundleError::UnknownFields(paths)) => assert_eq!(paths, vec!["canonical_diagrams.0.colour".to_string()]),
        other => panic!("{other:?}"),
    }
    let lenient = load_bundle(&text, Strictness::Lenient).unwrap();
    assert_eq!(lenient.warnings.len(), 1);
}

#[test]
fn duplicate_ids_fail_validation() {
    let mut b = retro_bundle();
    b.classifiers.push(b.classifiers[0].clone());
    assert!(matches!(load(&save_bundle(&b)), Err(BundleError::ValidationFailed(_))));
}

fn scenario_bundle(s: &hierion_core::scenario::Scenario) -> ModelBundle {
    let mut b = ModelBundle {
        hierarchy: s.hierarchy.clone(),
        control_diagrams: s.diagrams.values().cloned().collect(),
        ..ModelBundle::default()
    };
    b.put_scenario(s, Some(10));
    b
}

#[test]
fn scenario_resolves_from_bundle() {
    let s = coupled(coupled_schedule());
    let b = load(&save_bundle(&scenario_bundle(&s))).unwrap();
    assert_eq!(b.scenario("coupled").unwrap(), s);
    assert!(matches!(b.scenario("nope"), Err(BundleError::NotFound { .. })));
}

#[test]
fn scenario_with_unknown_symbol_is_dangling() {
    let mut s = coupled(coupled_schedule());
    s.schedule[0].symbol = "zz".into();
    assert!(matches!(
        load(&save_bundle(&scenario_bundle(&s))),
        Err(BundleError::DanglingReference { id, .. }) if id == "zz"
    ));
}

#[test]
fn retro_bundle_round_trips() {
    let b = retro_bundle();
    let text = save_bundle(&b);
    let again = load(&text).unwrap();
    assert_eq!(again, b);
    assert_eq!(save_bundle(&again), text);
}

const ROWS: &str = "source,object,parameter,tick,value\nME,o1,p,0,1.5\nME,o1,p,1,2.5\nMT,o2,p,0,3\n";

#[test]
fn well_formed_rows_ingest() {
    let mut store = EventStore::in_memory();
    let report = store.ingest_monitoring(ROWS.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!(
        report,
        IngestReport {
            ingested: 3,
            duplicates: 0,
            rejects: vec![]
        }
    );
}

#[test]
fn duplicate_key_is_skipped() {
    let mut store = EventStore::in_memory();
    let text = format!("{ROWS}ME,o1,p,1,9.0\n");
    let report = store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!((report.ingested, report.duplicates), (3, 1));
    assert_eq!(store.query_series("o1", "p", TimeInterval::horizon(5)), vec![(0, 1.5), (1, 2.5)]);
}

#[test]
fn bad_cells_are_rejected_by_line() {
    let mut store = EventStore::in_memory();
    let text = format!("{ROWS}ME,o1,p,2,abc\nME,o1,p,-1,2\nME,o1\n");
    let report = store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
    let lines: Vec<u64> = report.rejects.iter().map(|r| r.line).collect();
    assert_eq!(lines, vec![5, 6, 7]);
    assert!(report.rejects[0].reason.contains("abc"));
}

#[test]
fn custom_column_mapping() {
    let mut store = EventStore::in_memory();
    let text = "t,val,obj,param,feed\n3,1.0,o,p,X\n";
    let mapping = ColumnMapping {
        source: "feed".into(),
        object: "obj".into(),
        parameter: "param".into(),
        tick: "t".into(),
        value: "val".into(),
    };
    store.ingest_monitoring(text.as_bytes(), &mapping).unwrap();
    assert_eq!(store.records()[0].source, "X");
    let missing = store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default());
    assert!(matches!(missing, Err(StoreError::UnreadableInput(_))));
}

#[test]
fn query_series_examples() {
    let empty = EventStore::in_memory();
    assert!(empty.query_series("o", "p", TimeInterval::horizon(10)).is_empty());

    let mut store = EventStore::in_memory();
    let text: String = std::iter::once("source,object,parameter,tick,value\n".to_string())
        .chain((1..=5).rev().map(|t| format!("S,o,p,{t},{}\n", t * 10)))
        .collect();
    store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!(
        store.query_series("o", "p", TimeInterval::new(2, 4).unwrap()),
        vec![(2, 20.0), (3, 30.0), (4, 40.0)]
    );
    assert_eq!(store.query_series("o", "p", TimeInterval::new(5, 5).unwrap()), vec![(5, 50.0)]);
}

#[test]
fn cross_source_collision_keeps_first_value() {
    let mut store = EventStore::in_memory();
    let text = "source,object,parameter,tick,value\nA,o,p,0,1\nB,o,p,0,2\n";
    let report = store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!(report.ingested, 2);
    assert_eq!(store.query_series("o", "p", TimeInterval::horizon(0)), vec![(0, 1.0)]);
}

#[test]
fn log_persists_and_ingestion_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let csv = retro_csv(false);
    let mut store = EventStore::open(&path).unwrap();
    let first = store.ingest_monitoring(csv.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!(first.ingested, 44);
    let log = std::fs::read_to_string(&path).unwrap();

    let mut reopened = EventStore::open(&path).unwrap();
    assert_eq!(reopened.records(), store.records());
    let second = reopened.ingest_monitoring(csv.as_bytes(), &ColumnMapping::default()).unwrap();
    assert_eq!((second.ingested, second.duplicates), (0, 44));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), log);
}

#[test]
fn corrupt_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    std::fs::write(&path, "{\"source\":\"a\"}\n").unwrap();
    assert!(matches!(EventStore::open(&path), Err(StoreError::CorruptLog { line: 1, .. })));
}

proptest! {
    #[test]
    fn random_scenario_bundles_round_trip(seed in any::<u64>()) {
        let b = scenario_bundle(&random_scenario(seed, 3, 10));
        let text = save_bundle(&b);
        let again = load(&text).unwrap();
        prop_assert_eq!(&again, &b);
        prop_assert_eq!(save_bundle(&again), text);
    }

    #[test]
    fn series_are_strictly_increasing(points in prop::collection::vec((0u64..40, -1e6f64..1e6, 0usize..3), 0..60),
                                      lo in 0u64..40, len in 0u64..40) {
        let mut store = EventStore::in_memory();
        let mut text = String::from("source,object,parameter,tick,value\n");
        for (t, v, s) in &points {
            text.push_str(&format!("S{s},o,p,{t},{v}\n"));
        }
        store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
        let once: Vec<_> = store.records().to_vec();
        store.ingest_monitoring(text.as_bytes(), &ColumnMapping::default()).unwrap();
        prop_assert_eq!(store.records(), &once[..]);
        let series = store.query_series("o", "p", TimeInterval::new(lo, lo + len).unwrap());
        prop_assert!(series.windows(2).all(|w| w[0].0 < w[1].0));
        prop_assert!(series.iter().all(|(t, _)| *t >= lo && *t <= lo + len));
    }
}
