use std::path::Path;
use std::process::Command;

use polysmp::harness::{read_results, ExperimentConfig, OutputFormat};

fn smp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smp"));
    cmd.env_remove("SMP_OUT_DIR");
    cmd
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const GAME: &str = r#"{
  "problem": "matrix_game",
  "sizes": { "rows": 4, "cols": 3 },
  "solvers": ["dmp", "smp"],
  "epsilon": 0.05,
  "seeds": [2, 5],
  "max_iters": 400,
  "check_interval": 10
}"#;

#[test]
fn run_writes_one_row_per_seed_and_solver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GAME);
    let out = dir.path().join("nested/out.csv");
    let status = smp()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rows = read_results(&out, OutputFormat::Csv).unwrap();
    assert_eq!(rows.len(), 4);
    let mut keys: Vec<_> = rows
        .iter()
        .map(|r| (r.seed, r.solver.to_string()))
        .collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            (2, "dmp".into()),
            (2, "smp".into()),
            (5, "dmp".into()),
            (5, "smp".into())
        ]
    );
    assert!(rows
        .iter()
        .all(|r| r.iterations > 0 && r.gap_or_deviation.is_finite()));
}

#[test]
fn json_output_matches_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GAME);
    for name in ["a.csv", "a.json"] {
        let status = smp()
            .args(["--threads", "1", "run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let csv = read_results(&dir.path().join("a.csv"), OutputFormat::Csv).unwrap();
    let json = read_results(&dir.path().join("a.json"), OutputFormat::Json).unwrap();
    let strip = |rows: Vec<polysmp::harness::ResultRow>| {
        rows.into_iter()
            .map(|mut r| {
                r.wall_seconds = 0.0;
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(csv), strip(json));
}

#[test]
fn out_dir_env_prefixes_config_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let body = GAME.replace(
        "\"seeds\": [2, 5]",
        "\"seeds\": [1], \"output_path\": \"res.csv\"",
    );
    let cfg = write_config(dir.path(), &body);
    let target = dir.path().join("outdir");
    let status = smp()
        .env("SMP_OUT_DIR", &target)
        .args(["run", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(target.join("res.csv").exists());
}

#[test]
fn invalid_configs_exit_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (GAME.replace("\"epsilon\"", "\"epsilonn\""), "epsilonn"),
        (GAME.replace("\"seeds\": [2, 5]", "\"seeds\": []"), "seeds"),
        (
            GAME.replace("\"check_interval\": 10", "\"check_interval\": 0"),
            "check_interval",
        ),
        (GAME.replace("\"dmp\", \"smp\"", "\"newton\""), "solvers"),
    ];
    for (body, field) in cases {
        let cfg = write_config(dir.path(), &body);
        let out = smp().args(["run", "--config"]).arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{field}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "stderr for {field}: {err}");
        assert!(ExperimentConfig::from_json(&body).is_err());
    }
}

#[test]
fn bad_arguments_exit_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GAME);
    let bad_seeds = smp()
        .args(["run", "--seeds", "1,x", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(bad_seeds.code(), Some(1));
    let missing = smp()
        .args(["run", "--config", "/nonexistent/config.json"])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(1));
    let suite = smp().args(["verify", "everything"]).status().unwrap();
    assert_eq!(suite.code(), Some(1));
}

#[test]
fn verify_solver_suite_passes() {
    let out = smp().args(["verify", "solver"]).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn gen_writes_an_instance() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "problem": "pencil",
      "sizes": { "m": 4, "nu": 2, "blocks": 3 },
      "solvers": ["smp"],
      "epsilon": 0.1,
      "seeds": [9],
      "max_iters": 10,
      "check_interval": 5
    }"#;
    let cfg = write_config(dir.path(), body);
    for (enc, name) in [("text", "p.txt"), ("binary", "p.bin")] {
        let out = dir.path().join(name);
        let status = smp()
            .args(["gen", "--encoding", enc, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        assert!(std::fs::metadata(&out).unwrap().len() > 0);
    }
}
