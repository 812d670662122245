use std::path::Path;
use std::process::{Command, Output};

fn diarlm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diarlm"))
        .current_dir(dir)
        .env_remove("LLM_AUTH_TOKEN")
        .args(args)
        .output()
        .expect("spawn diarlm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = diarlm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Second line of the score table, split into cells.
fn table_row(stdout: &str) -> Vec<String> {
    let line = stdout.lines().nth(1).expect("table row");
    line.split('|').map(|c| c.trim().to_string()).collect()
}

#[test]
fn generated_script_round_trips_to_zero_der() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &[
        "mock-gen", "--scenario", "split", "--seed", "5", "--out", "s.json",
        "--ref-rttm", "ref.rttm", "--ref-words", "ref_words.json",
    ]);
    ok(d, &["run", "s.json", "--out-dir", "out", "--trace-dir", "trace"]);
    assert!(d.join("out/split.rttm").exists());
    assert!(d.join("trace/split/10-dedup.json").exists());

    let stdout = ok(d, &["score", "--hyp", "out/split.rttm", "--ref", "ref.rttm"]);
    let row = table_row(&stdout);
    assert_eq!(row[1], "0.00", "{stdout}");
    assert!(!stdout.contains("WER"));

    let stdout = ok(d, &[
        "score", "--hyp", "out/split.json", "--ref", "ref.rttm",
        "--ref-words", "ref_words.json", "--json", "report.json",
    ]);
    assert!(stdout.lines().next().unwrap().trim_end().ends_with("WER"));
    assert_eq!(table_row(&stdout).len(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["der"]["der"], 0.0);
}

#[test]
fn identical_files_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("a.rttm"),
        "SPEAKER r 1 0.000 4.000 <NA> <NA> A <NA> <NA>\nSPEAKER r 1 4.000 3.500 <NA> <NA> B <NA> <NA>\n",
    )
    .unwrap();
    let stdout = ok(d, &["score", "--hyp", "a.rttm", "--ref", "a.rttm"]);
    assert_eq!(&table_row(&stdout)[1..5], ["0.00", "0.00", "0.00", "0.00"]);
}

#[test]
fn malformed_rttm_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ok.rttm"), "SPEAKER r 1 0 1 <NA> <NA> A <NA> <NA>\n").unwrap();
    std::fs::write(
        d.join("bad.rttm"),
        "# comment\nSPEAKER r 1 0 1 <NA> <NA> A <NA> <NA>\n\nSPEAKER r 1 1.0 nope <NA> <NA> B <NA> <NA>\n",
    )
    .unwrap();
    let out = diarlm(d, &["score", "--hyp", "bad.rttm", "--ref", "ok.rttm"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "collar = 0.0\n").unwrap();
    std::fs::write(d.join("ref.rttm"), "SPEAKER r 1 0.0 10.0 <NA> <NA> A <NA> <NA>\n").unwrap();
    std::fs::write(d.join("hyp.rttm"), "SPEAKER r 1 0.0 9.8 <NA> <NA> A <NA> <NA>\n").unwrap();
    let miss = |args: &[&str]| -> String {
        let mut all = vec!["score", "--hyp", "hyp.rttm", "--ref", "ref.rttm"];
        all.extend_from_slice(args);
        table_row(&ok(d, &all))[4].clone()
    };
    // The hypothesis stops 0.2 s early; only a collar under 0.2 s exposes it.
    assert_eq!(miss(&[]), "0.00");
    assert_eq!(miss(&["--config", "c.toml"]), "2.00");
    assert_eq!(miss(&["--config", "c.toml", "--collar", "0.1"]), "1.02");
}

#[test]
fn auth_token_in_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[llm]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nauth_token = \"secret\"\n",
    )
    .unwrap();
    ok(d, &["mock-gen", "--scenario", "clean", "--out", "s.json"]);
    let out = diarlm(d, &["--config", "c.toml", "run", "s.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("LLM_AUTH_TOKEN"), "{err}");
    assert!(!err.contains("secret"));
}

#[test]
fn unreachable_http_llm_fails_the_recording() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("c.toml"),
        "[llm]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmax_retries = 0\ntimeout = 2\n",
    )
    .unwrap();
    ok(d, &["mock-gen", "--scenario", "clean", "--out", "s.json"]);
    let out = diarlm(d, &["--config", "c.toml", "run", "s.json", "--llm", "http", "--trace-dir", "t"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("detect_identities"), "{err}");
    assert!(d.join("t").exists());
}

#[test]
fn single_sweep_length_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mock-gen", "--scenario", "drift", "--seed", "2", "--out", "d.json"]);
    let stdout = ok(d, &["sweep-chunks", "d.json", "--lengths", "250"]);
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{stdout}");
    assert!(rows[0].trim_start().starts_with("250.0"));
}

#[test]
fn jobs_processes_every_recording() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mock-gen", "--scenario", "clean", "--out", "a.json"]);
    ok(d, &["mock-gen", "--scenario", "split", "--out", "b.json"]);
    let stdout = ok(d, &["run", "a.json", "b.json", "--jobs", "2", "--out-dir", "o"]);
    assert_eq!(stdout.lines().count(), 2);
    assert_eq!(std::fs::read_dir(d.join("o")).unwrap().count(), 4);
}
