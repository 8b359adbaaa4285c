use std::fs;

use chase_core::data::{generate_synthetic, load_dataset, write_dataset, DatasetManifest, SynthConfig, TopologyMode};
use chase_core::Error;

fn small(mode: TopologyMode) -> SynthConfig {
    SynthConfig {
        num_traces: 25,
        instances_range: (2, 9),
        window_len: 12,
        topology_mode: mode,
        seed: 11,
        ..SynthConfig::default()
    }
}

#[test]
fn write_then_load_is_identity() {
    for mode in [TopologyMode::Static, TopologyMode::Dynamic] {
        let traces = generate_synthetic(&small(mode)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::standard([0.6, 0.2, 0.2], 3);
        let path = write_dataset(dir.path(), &traces, &manifest).unwrap();
        let (loaded_manifest, loaded) = load_dataset(&path).unwrap();
        assert_eq!(loaded_manifest, manifest);
        assert_eq!(loaded, traces);
    }
}

#[test]
fn same_seed_writes_identical_bytes() {
    let cfg = small(TopologyMode::Dynamic);
    let manifest = DatasetManifest::standard([0.6, 0.2, 0.2], 3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(a.path(), &generate_synthetic(&cfg).unwrap(), &manifest).unwrap();
    write_dataset(b.path(), &generate_synthetic(&cfg).unwrap(), &manifest).unwrap();
    for f in ["traces.jsonl", "metrics.jsonl", "logs.jsonl", "labels.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

fn write_fixture(traces: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::standard([1.0, 0.0, 0.0], 0);
    let path = write_dataset(dir.path(), &[], &manifest).unwrap();
    fs::write(dir.path().join("traces.jsonl"), traces).unwrap();
    (dir, path)
}

#[test]
fn empty_traces_file() {
    let (_dir, path) = write_fixture("");
    assert!(matches!(load_dataset(&path), Err(Error::EmptyDataset)));
}

#[test]
fn missing_field_reports_line() {
    let trace = r#"{"trace_id": "a", "instances": [{"id": "x", "category": "gateway", "start_ts": 1.0}], "edges": []}"#;
    let (_dir, path) = write_fixture(&format!("{trace}\n"));
    let metrics = concat!(
        r#"{"trace_id": "a", "instance_id": "x", "metric_name": "cpu", "interval_s": 1.0, "values": [1.0, 2.0]}"#,
        "\n",
        r#"{"trace_id": "a", "metric_name": "memory", "interval_s": 1.0, "values": [1.0, 2.0]}"#,
        "\n"
    );
    fs::write(path.parent().unwrap().join("metrics.jsonl"), metrics).unwrap();
    match load_dataset(&path) {
        Err(Error::SchemaViolation { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "instance_id")),
        other => panic!("unexpected {other:?}"),
    }

    let nameless = r#"{"trace_id": "b", "instances": [{"category": "gateway", "start_ts": 1.0}], "edges": []}"#;
    let (_dir, path) = write_fixture(&format!("{trace}\n{nameless}\n"));
    match load_dataset(&path) {
        Err(Error::SchemaViolation { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "id")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_json_and_cycles() {
    let (_dir, path) = write_fixture("{\"trace_id\": \n");
    assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 1, .. })));

    let cyclic = r#"{"trace_id": "c", "instances": [{"id": "x", "category": "gateway", "start_ts": 1.0}, {"id": "y", "category": "database", "start_ts": 2.0}], "edges": [{"src": "x", "dst": "y", "async": false}, {"src": "y", "dst": "x", "async": false}]}"#;
    let (_dir, path) = write_fixture(&format!("{cyclic}\n"));
    let labels = r#"{"trace_id": "c", "is_anomalous": false, "root_cause": null, "fault_type": null, "fault_ts": null}"#;
    fs::write(path.parent().unwrap().join("labels.jsonl"), format!("{labels}\n")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::CycleDetected(_))));
}
