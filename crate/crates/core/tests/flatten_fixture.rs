use nefmind::fixtures;
use nefmind::spec::{endpoint_catalog, flatten, SpecError};
use serde_json::Value;

fn count_refs(v: &Value) -> usize {
    match v {
        Value::Object(m) => m.iter().map(|(k, v)| usize::from(k == "$ref") + count_refs(v)).sum(),
        Value::Array(a) => a.iter().map(count_refs).sum(),
        _ => 0,
    }
}

#[test]
fn multi_file_spec_has_no_residual_refs() {
    let raw = fixtures::nef_document();
    assert!(count_refs(&raw.body) > 0);
    let spec = fixtures::nef_spec();
    assert_eq!(count_refs(spec.document()), 0);
    assert_eq!(endpoint_catalog(&spec).len(), 7);
}

#[test]
fn flattening_is_idempotent() {
    let once = fixtures::nef_spec();
    let twice = flatten(&once.to_document("flat.json"), |_: &str| None).unwrap();
    assert_eq!(once.document(), twice.document());
    assert_eq!(once.endpoints, twice.endpoints);
}

#[test]
fn cycle_is_named() {
    match flatten(&fixtures::cycle_document(), fixtures::resolver) {
        Err(SpecError::ReferenceCycle { cycle }) => {
            assert!(cycle.len() >= 3, "{cycle:?}");
            assert_eq!(cycle.first(), cycle.last());
            assert!(cycle.iter().any(|c| c.contains("cycle_b.yaml")), "{cycle:?}");
        }
        other => panic!("expected a cycle, got {other:?}"),
    }
}
