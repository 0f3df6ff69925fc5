use std::path::Path;
use std::process::{Command, Output};

fn pfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfa"))
        .args(args)
        .env_remove("PFA_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CUBE_OBJ: &str = "v 0 0 0\nv 0.1 0 0\nv 0.1 0.1 0\nv 0 0.1 0\nv 0 0 0.1\nv 0.1 0 0.1\nv 0.1 0.1 0.1\nv 0 0.1 0.1\n\
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";

#[test]
fn zero_exemplars_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfa(&[
        "gen-exemplars",
        "--count",
        "0",
        "--out",
        s(&dir.path().join("x.pfax")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn unwritable_output_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let target = blocker.join("set.pfax");
    let out = pfa(&["gen-exemplars", "--count", "2", "--out", s(&target)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains(s(&target)), "{}", stderr(&out));
}

#[test]
fn empty_records_is_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfa(&[
        "eval",
        "--records",
        s(dir.path()),
        "--out",
        s(&dir.path().join("eval")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn bad_config_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "schema = 9\n").unwrap();
    let out = pfa(&[
        "synth-scenes",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn mesh_mismatch_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    let out = pfa(&["synth-scenes", "--trials", "2", "--out", s(&manifest)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cube = dir.path().join("cube.obj");
    std::fs::write(&cube, CUBE_OBJ).unwrap();
    let set = dir.path().join("cube.pfax");
    let out = pfa(&[
        "gen-exemplars",
        "--mesh",
        s(&cube),
        "--count",
        "4",
        "--out",
        s(&set),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = pfa(&[
        "refine",
        "--mesh",
        s(&cube),
        "--exemplars",
        s(&set),
        "--manifest",
        s(&manifest),
        "--n",
        "1",
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn small_pipeline_runs_end_to_end_and_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set.pfax");
    let manifest = dir.path().join("m.json");
    let out = pfa(&[
        "gen-exemplars",
        "--count",
        "60",
        "--seed",
        "1",
        "--out",
        s(&set),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = pfa(&[
        "synth-scenes",
        "--trials",
        "4",
        "--occluders",
        "1",
        "--out",
        s(&manifest),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let run_dir = dir.path().join(run);
        let out = pfa(&[
            "refine",
            "--exemplars",
            s(&set),
            "--manifest",
            s(&manifest),
            "--n",
            "2",
            "--out",
            s(&run_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(run_dir.join("records_n2.json").exists());
        reports.push(std::fs::read(run_dir.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let eval_dir = dir.path().join("eval");
    let out = pfa(&[
        "eval",
        "--records",
        s(&dir.path().join("a")),
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(eval_dir.join("auc_curve_n2.csv").exists());
}
