use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn abyss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abyss")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    p.to_str().unwrap().to_owned()
}

fn run_to(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let path = scenario(name);
    let mut args = vec!["run", "--scenario", &path, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    abyss(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn missing_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = abyss(&["run", "--scenario", "/no/such/file.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"duration": 5, "wrold": {}}"#).unwrap();
    let o = abyss(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wrold"), "{}", stderr(&o));
}

#[test]
fn paper_offload_report_and_stable_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run_to(d.path(), "paper_offload.json", &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ha = std::fs::read_to_string(a.path().join("events.sha256")).unwrap();
    let hb = std::fs::read_to_string(b.path().join("events.sha256")).unwrap();
    assert_eq!(ha, hb);
    let r = read_json(&a.path().join("report.json"));
    assert_eq!(r["offload"]["stats"]["success_rate"], 1.0);
    assert_eq!(r["log_hash"].as_str().unwrap(), ha.trim());
}

#[test]
fn seed_override_changes_log() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to(a.path(), "reef_survey.json", &["--seed", "1", "--until", "100"]);
    run_to(b.path(), "reef_survey.json", &["--seed", "2", "--until", "100"]);
    let ha = std::fs::read_to_string(a.path().join("events.sha256")).unwrap();
    let hb = std::fs::read_to_string(b.path().join("events.sha256")).unwrap();
    assert_ne!(ha, hb);
    let r = read_json(&a.path().join("report.json"));
    assert_eq!(r["seed"], 1);
    assert!(r["end_time"].as_f64().unwrap() <= 100.0);
}

#[test]
fn csv_report() {
    let d = tempfile::tempdir().unwrap();
    let o = run_to(d.path(), "paper_linksteps.json", &["--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(d.path().join("report.csv")).unwrap();
    let rows: Vec<(String, String)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_owned(), r[1].to_owned())
        })
        .collect();
    let get = |k: &str| rows.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone());
    assert_eq!(get("probe.0.050.fraction").as_deref(), Some("1.000000"));
    assert_eq!(get("probe.0.150.fraction").as_deref(), Some("0.000000"));
}

fn replay(log: &Path) -> Output {
    abyss(&["replay", "--log", log.to_str().unwrap()])
}

#[test]
fn replay_detects_tampering() {
    let d = tempfile::tempdir().unwrap();
    assert!(run_to(d.path(), "paper_offload.json", &[]).status.success());
    let log = d.path().join("events.ndjson");
    let o = replay(&log);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let tampered = d.path().join("t");
    std::fs::create_dir(&tampered).unwrap();
    let write = |name: &str, ls: &[&str]| {
        let p = tampered.join(name);
        std::fs::write(&p, ls.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
        p
    };

    let mut deleted = lines.clone();
    deleted.remove(5);
    let o = replay(&write("deleted.ndjson", &deleted));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(o.status.code(), Some(1));
    assert!(out.starts_with("FAIL line 6: seq gap"), "{out}");

    let mut swapped = lines.clone();
    swapped.swap(10, 30);
    let o = replay(&write("swapped.ndjson", &swapped));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(o.status.code(), Some(1));
    assert!(out.contains("monotonicity"), "{out}");

    let mut corrupt = lines.clone();
    corrupt[3] = "{\"seq\":3,";
    let o = replay(&write("corrupt.ndjson", &corrupt));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(out.starts_with("FAIL line 4"), "{out}");

    // Same content, wrong recorded hash.
    let p = write("events.ndjson", &lines);
    std::fs::write(tampered.join("events.sha256"), "deadbeef\n").unwrap();
    let o = replay(&p);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("hash mismatch"));
}

#[test]
fn bench_sensing_accepts_both_formats() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bench.json");
    std::fs::write(&cfg, r#"{"generator": "separable", "repetitions": 2, "windows_per_trace": 2, "folds": 2}"#).unwrap();
    let o = abyss(&["bench-sensing", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("All conditions 2-folds"), "{out}");
    assert_eq!(out.lines().filter(|l| l.contains("2-folds")).count(), 5);
    assert_eq!(out.lines().filter(|l| l.starts_with("Kruskal-Wallis")).count(), 4);

    let o = abyss(&["bench-sensing", "--config", &scenario("sensing_bench.json"), "--json", "--sequential"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn schema_command() {
    let o = abyss(&["schema", "mission-request"]);
    assert!(o.status.success());
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["properties"]["time_scale"].is_object());
    assert_eq!(abyss(&["schema", "nope"]).status.code(), Some(2));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cli_report_equals_service_report() {
    let d = tempfile::tempdir().unwrap();
    let o = run_to(d.path(), "reef_survey.json", &["--seed", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cli_report = read_json(&d.path().join("report.json"));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(abyss_service::serve_on(listener, abyss_service::AppState::default()));
    let http = reqwest::Client::new();
    let scen: Value = read_json(Path::new(&scenario("reef_survey.json")));
    let created: Value = http
        .post(format!("http://{addr}/v1/missions"))
        .json(&json!({ "scenario": scen, "seed": 11, "time_scale": "AS_FAST_AS_POSSIBLE" }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created["id"].as_str().expect("mission id").to_owned();
    let deadline = Instant::now() + Duration::from_secs(120);
    let service_report = loop {
        let r = http.get(format!("http://{addr}/v1/missions/{id}/report")).send().await.unwrap();
        if r.status() == 200 {
            break r.json::<Value>().await.unwrap();
        }
        assert_eq!(r.status(), 409);
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(100)).await;
    };
    assert_eq!(cli_report, service_report);
}
