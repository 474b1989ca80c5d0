use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sceneforge::fixtures::{BEDROOM_CONSTRAINTS, BEDROOM_SCENE};
use sceneforge::project::SceneDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sceneforge"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_inputs(dir: &Path, scene: &str, constraints: &str) -> (String, String) {
    let s = dir.join("scene.json");
    let c = dir.join("constraints.json");
    fs::write(&s, scene).unwrap();
    fs::write(&c, constraints).unwrap();
    (s.display().to_string(), c.display().to_string())
}

#[test]
fn validate_accepts_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, BEDROOM_CONSTRAINTS);
    let o = run(&["validate", &s, &c]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("ok: 8 objects, 8 constraints"));
}

#[test]
fn validate_reports_cycle_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cycle = r#"[{"relation":"near","source":"bed1","target":"dresser1"},
                    {"relation":"near","source":"dresser1","target":"bed1"}]"#;
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, cycle);
    let o = run(&["validate", &s, &c]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("cycle"), "{}", stdout(&o));

    let ghost = r#"[{"relation":"near","source":"bed1","target":"ghost"}]"#;
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, ghost);
    let o = run(&["validate", &s, &c]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("ghost"));
}

#[test]
fn unreadable_input_exits_one() {
    let o = run(&["validate", "/nonexistent/scene.json", "/nonexistent/c.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cannot read"));
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = write_inputs(dir.path(), "{ not json", BEDROOM_CONSTRAINTS);
    assert_eq!(code(&run(&["solve", &s, &c])), 1);
}

#[test]
fn usage_errors_exit_one_and_help_zero() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["solve"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn solve_writes_deterministic_report() {
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, BEDROOM_CONSTRAINTS);
    let o = run(&["solve", &s, &c, "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["terminated_by"], "complete");
    assert_eq!(report["score"], 8);
    assert!(report.get("elapsed").is_none());

    let out = dir.path().join("report.json");
    let o = run(&["solve", &s, &c, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&out).unwrap().trim(), stdout(&run(&["solve", &s, &c, "--seed", "7"])).trim());
}

#[test]
fn infeasible_solve_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let contradiction = r#"[{"relation":"left of","source":"nightstand_left","target":"bed1"},
                            {"relation":"right of","source":"nightstand_left","target":"bed1"}]"#;
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, contradiction);
    let o = run(&["solve", &s, &c]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unplaced nightstand_left"), "{}", stderr(&o));
}

#[test]
fn node_limit_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = write_inputs(dir.path(), BEDROOM_SCENE, BEDROOM_CONSTRAINTS);
    let o = run(&["solve", &s, &c, "--node-limit", "1"]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["terminated_by"], "node_limit");
    let placed = report["layout"].as_object().unwrap().len();
    assert!(placed < 8, "{placed} placed");
    assert_eq!(report["score"], placed);
}

#[test]
fn mock_pipeline_then_edit_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bedroom");
    let out_s = out.to_str().unwrap();
    let o = run(&["pipeline", "A bedroom with a king bed", "--style", "warm", "--mock", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["scene.json", "constraints.json", "layout.json", "report.json", "trace.json", "export.json", "scene.glb"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // a second run reuses every finished job
    let o = run(&["pipeline", "A bedroom with a king bed", "--style", "warm", "--mock", "--out", out_s]);
    assert_eq!(code(&o), 0);
    assert!(!stdout(&o).contains(" 0 job(s) reused"), "{}", stdout(&o));

    let o = run(&["edit", out_s, "delete lamp_left", "--mock"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let state = SceneDir::new(&out).load_state().unwrap();
    assert!(!state.scene.contains("lamp_left"));
    assert!(state.constraints.iter().all(|c| !c.touches("lamp_left")));

    let o = run(&["edit", out_s, r#"{"kind":"move","instruction":"Put the armchair left of the bed"}"#, "--json", "--mock"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["edit", out_s, "delete the nightstand", "--mock"]);
    assert_eq!(code(&o), 1);

    let glb = dir.path().join("x.glb");
    let o = run(&["export", out_s, "--format", "glb", "--out", glb.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(&fs::read(&glb).unwrap()[..4], b"glTF");
    // a missing asset becomes a placeholder box
    fs::remove_file(out.join("assets/bed1.glb")).unwrap();
    let o = run(&["export", out_s, "--format", "glb"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: bed1: placeholder box"), "{}", stderr(&o));
    let o = run(&["export", out_s]);
    assert_eq!(code(&o), 0);
    let exported = sceneforge::scene::parse_scene(&fs::read_to_string(out.join("export.json")).unwrap()).unwrap();
    assert_eq!(exported.items.len(), 7);
}

#[test]
fn export_without_layout_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scene.json"), BEDROOM_SCENE).unwrap();
    let o = run(&["export", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no layout"));
}

#[test]
fn live_pipeline_without_credentials_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["pipeline", "a room", "--out", dir.path().join("x").to_str().unwrap()])
        .env_remove("SCENEFORGE_SERVICE_URL")
        .env_remove("SCENEFORGE_API_KEY")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("not set"), "{}", stderr(&o));
}
