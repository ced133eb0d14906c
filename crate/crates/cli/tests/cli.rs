use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bear(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_bear")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "bear {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Feed plus a four-event balanced corpus shared by every test.
fn workspace() -> &'static TempDir {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let feed = dir.path().join("feed.elems");
        let corpus = dir.path().join("corpus");
        bear(&["feed", "--collectors", "8", "--out", s(&feed)]);
        bear(&[
            "synth", "--count", "4", "--balance", "--elems", s(&feed), "--provider", "perfect-mock",
            "--seed", "11", "--out", s(&corpus),
        ]);
        dir
    })
}

fn event_dir(n: usize) -> std::path::PathBuf {
    workspace().path().join("corpus").join(format!("synth-{n:03}"))
}

#[test]
fn synth_writes_triples_with_truth() {
    for n in 1..=4 {
        for f in ["event.json", "history.json", "before.json", "after.json", "truth.json"] {
            assert!(event_dir(n).join(f).is_file(), "synth-{n:03}/{f}");
        }
    }
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(event_dir(3).join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["truth"]["event_type"], "sub_prefix_hijack");
}

#[test]
fn feed_lines_use_the_elem_format() {
    let text = fs::read_to_string(workspace().path().join("feed.elems")).unwrap();
    let first = text.lines().next().unwrap();
    let fields: Vec<&str> = first.split('|').collect();
    assert_eq!(fields.len(), 6);
    assert_eq!(fields[0], "R");
}

#[test]
fn build_reproduces_synth_history_and_before() {
    let out = tempfile::tempdir().unwrap();
    let event = out.path().join("event.json");
    fs::copy(event_dir(1).join("event.json"), &event).unwrap();
    let feed = workspace().path().join("feed.elems");
    bear(&["build", "--event", s(&event), "--elems", s(&feed), "--out", s(out.path())]);
    for f in ["history.json", "before.json"] {
        assert_eq!(
            fs::read_to_string(out.path().join(f)).unwrap(),
            fs::read_to_string(event_dir(1).join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn analyze_emits_facts_and_text() {
    let out = tempfile::tempdir().unwrap();
    let facts = out.path().join("facts.json");
    let run = bear(&["analyze", "--snapshots", s(&event_dir(1)), "--out", s(&facts), "--text"]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&facts).unwrap()).unwrap();
    assert!(doc["affected_peer_count"].as_u64().unwrap() > 0);
    assert!(String::from_utf8(run.stdout).unwrap().contains("Target prefix"));
}

#[test]
fn explain_writes_json_and_markdown() {
    let out = tempfile::tempdir().unwrap();
    let report = out.path().join("report.json");
    bear(&[
        "explain", "--snapshots", s(&event_dir(2)), "--n", "3", "--provider", "perfect-mock", "--out",
        s(&report),
    ]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let fields: Vec<&str> = doc.as_object().unwrap().keys().map(String::as_str).collect();
    for f in [
        "event_type", "target_prefix", "sub_prefix", "offender", "affected_peers", "detection_rate",
        "narrative", "recommendations", "conclusive", "missing_collectors",
    ] {
        assert!(fields.contains(&f), "{f}");
    }
    assert_eq!(doc["event_type"], "route_leak");
    assert_eq!(doc["conclusive"], true);
    let md = fs::read_to_string(out.path().join("report.md")).unwrap();
    assert!(md.contains("## Offending AS"));
}

#[test]
fn explain_with_unaffected_collectors_is_inconclusive() {
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(event_dir(1).join("truth.json")).unwrap()).unwrap();
    let affected: Vec<&str> = truth["affected_keys"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["collector"].as_str().unwrap())
        .collect();
    let clean = (0..8).map(|i| format!("rrc{i:02}")).find(|c| !affected.contains(&c.as_str()));
    let Some(clean) = clean else { return };
    let out = tempfile::tempdir().unwrap();
    let report = out.path().join("report.json");
    bear(&["explain", "--snapshots", s(&event_dir(1)), "--collectors", &clean, "--out", s(&report)]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["conclusive"], false);
    assert!(!doc["missing_collectors"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_writes_csv_and_rows() {
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("sweep.csv");
    bear(&[
        "sweep", "--events", s(&workspace().path().join("corpus")), "--fractions", "0.25,1", "--seeds",
        "2", "--n", "1", "--out", s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fraction,presence_ratio,accuracy,avg_input_tokens,avg_output_tokens");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,1.0000,1.0000,"));
    let rows = fs::read_to_string(out.path().join("sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2 * 2 * 4);
}

#[test]
fn config_file_sets_fractions_and_provider() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("config.json");
    fs::write(&cfg, r#"{"fractions":[1.0],"seeds":[3],"provider":{"kind":"perfect-mock"}}"#).unwrap();
    let csv = out.path().join("sweep.csv");
    bear(&["--config", s(&cfg), "sweep", "--events", s(&workspace().path().join("corpus")), "--out", s(&csv)]);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);
}

#[test]
fn anonymize_relabels_and_shifts() {
    let out = tempfile::tempdir().unwrap();
    bear(&["anonymize", "--event", s(&event_dir(1)), "--seed", "5", "--out", s(out.path())]);
    let read = |dir: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap()
    };
    let (orig, anon) = (read(&event_dir(1)), read(out.path()));
    assert!(anon["truth"]["offender"].as_u64().unwrap() >= 4_200_000_000);
    assert!(anon["spec"]["start"].as_u64() > orig["spec"]["start"].as_u64());
    assert_eq!(anon["truth"]["event_type"], orig["truth"]["event_type"]);
}

#[test]
fn stats_prints_one_line_per_event() {
    let run = bear(&["stats", "--events", s(&workspace().path().join("corpus"))]);
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["oversized"], false);
}

#[test]
fn bad_provider_fails_with_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_bear"))
        .args(["explain", "--snapshots", s(&event_dir(1)), "--provider", "bogus", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
