use navinstruct_core::data::{read_episodes, Episode};
use navinstruct_core::synth::{build_world, export_jsonl, import_jsonl, WorldOverrides};
use navinstruct_core::CoreError;

fn episodes(seed: u64, count: usize) -> Vec<Episode> {
    let w = build_world(seed, &WorldOverrides::default()).unwrap();
    w.corpus(seed, count).into_iter().map(Episode::from).collect()
}

#[test]
fn export_import_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.jsonl");
    let eps = episodes(3, 100);
    export_jsonl(&eps, &path, serde_json::json!({"seed": 3})).unwrap();
    let back = import_jsonl(&path).unwrap();
    assert_eq!(back, eps);
    let a = std::fs::read(&path).unwrap();
    export_jsonl(&back, &path, serde_json::json!({"seed": 3})).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), a);
}

#[test]
fn truncated_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.jsonl");
    export_jsonl(&episodes(4, 5), &path, serde_json::Value::Null).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    match read_episodes(&path) {
        Err(CoreError::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.jsonl");
    std::fs::write(&path, "").unwrap();
    assert!(import_jsonl(&path).is_err());
}

#[test]
fn exports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    export_jsonl(&episodes(11, 40), &a, serde_json::Value::Null).unwrap();
    export_jsonl(&episodes(11, 40), &b, serde_json::Value::Null).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn final_step_identifies_the_target_room() {
    let w = build_world(0, &WorldOverrides::default()).unwrap();
    assert_eq!(w.noise, 0.1);
    let eps = w.corpus(0, 10_000);
    let hits = eps
        .iter()
        .filter(|e| {
            let last = e.trajectory.features.last().unwrap();
            w.rooms[w.nearest_room(last)] == e.truth.room
        })
        .count();
    assert!(hits as f64 / eps.len() as f64 >= 0.99, "{hits}/10000");
}
