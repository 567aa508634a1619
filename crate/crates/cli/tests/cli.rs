use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stdb");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const BURGERS: &str = r#"
mode = "compare"
model = "burgers"
r = 3
p = 6
s = 12
dt = 1e-4
t_end = 0.005
output_every = 10
output_dir = "unused"

[burgers]
n = 41

[bench]
n = [41]
s = [12]
"#;

fn stdb(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BURGERS);
    let out = stdb(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok (50 steps, n = 41, s = 12)"));
}

#[test]
fn validate_reports_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &BURGERS.replace("r = 3", "r = 0").replace("dt = 1e-4", "dt = -1.0"),
    );
    let out = stdb(&["validate", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("r must be at least 1") && err.contains("dt must be positive"),
        "{err}"
    );
}

#[test]
fn missing_config_fails_cleanly() {
    let out = stdb(&["run", "/nonexistent/run.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn run_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BURGERS);
    let outs: Vec<_> = ["a", "b"].iter().map(|d| dir.path().join(d)).collect();
    for (o, seed) in outs.iter().zip(["1", "2"]) {
        let out = stdb(&[
            "run",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--threads",
            "2",
            "--output-dir",
            o.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(o.join("error.csv").exists());
    }
    let manifest = |o: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(o.join("manifest.json")).unwrap()).unwrap()
    };
    let (a, b) = (manifest(&outs[0]), manifest(&outs[1]));
    assert_eq!(a["threads"], 2);
    assert_eq!(a["config"]["seed"], 1);
    assert_ne!(a["ensemble_checksum"], b["ensemble_checksum"]);
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn bench_writes_both_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BURGERS);
    let out_dir = dir.path().join("bench");
    let out = stdb(&[
        "bench",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sweep,n,s,steps,tdb_ns,stdb_ns,speedup");
    assert!(
        lines[1].starts_with("n,41,12,50,") && lines[2].starts_with("s,41,12,50,"),
        "{text}"
    );
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = stdb(&["validate", path.to_str().unwrap()]);
            assert!(
                out.status.success(),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
