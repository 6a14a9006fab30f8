use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const SMALL: [&str; 6] = [
    "--set",
    "grid.width=96",
    "--set",
    "grid.height=96",
    "--set",
    "grid.origin_y=5000960.0",
];

fn pwtt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwtt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pwtt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path) {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap(), "--seed", "9"];
    args.extend(SMALL);
    let v: Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(v["scenes"], 144);
    assert!(dir.join("run.toml").exists() && dir.join("sim_spec.toml").exists());
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_run_evaluate_regress_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data);
    let spec = std::fs::read_to_string(data.join("sim_spec.toml")).unwrap();
    assert!(spec.contains("seed = 9"), "{spec}");

    let cfg = data.join("run.toml");
    let run_dir = tmp.path().join("run");
    let summary: Value = serde_json::from_str(&ok(&[
        "run",
        "-c",
        cfg.to_str().unwrap(),
        "--output-dir",
        run_dir.to_str().unwrap(),
        "--threads",
        "2",
        "--set",
        "threshold.mode=\"significance\"",
        "--set",
        "threshold.alpha=0.01",
    ]))
    .unwrap();
    assert_eq!(summary["threshold"]["df"], 34.0);
    let manifest = read_json(&run_dir.join("run_manifest.json"));
    assert_eq!(manifest["config"]["threads"], 2);

    // same T map, fixed threshold, written elsewhere
    let eval_dir = tmp.path().join("eval");
    let ev: Value = serde_json::from_str(&ok(&[
        "evaluate",
        "-c",
        cfg.to_str().unwrap(),
        "--tmap-dir",
        run_dir.to_str().unwrap(),
        "--output-dir",
        eval_dir.to_str().unwrap(),
        "--set",
        "threshold={mode = \"fixed\", value = 3.5}",
    ]))
    .unwrap();
    assert_eq!(ev["threshold"]["value"], 3.5);
    assert_eq!(ev["buildings"], summary["buildings"]);
    let preds = read_json(&eval_dir.join("predictions.geojson"));
    for f in preds["features"].as_array().unwrap() {
        let t = f["properties"]["mean_T"].as_f64().unwrap();
        assert_eq!(f["properties"]["predicted"] == "damaged", t > 3.5);
    }

    let table = ok(&["regress", run_dir.to_str().unwrap(), "--json", tmp.path().join("reg.json").to_str().unwrap()]);
    assert!(table.contains("Mean T-Value"), "{table}");
    let reg = read_json(&tmp.path().join("reg.json"));
    let stored = read_json(&run_dir.join("regression.json"));
    assert_eq!(reg["result"]["coefficients"], stored["result"]["coefficients"]);

    let listed: Vec<String> = serde_json::from_str(&ok(&["report", "-d", run_dir.to_str().unwrap()])).unwrap();
    assert_eq!(listed.len(), 5);
    for name in ["tmap.png", "damage_mask.png", "roc.png", "pr.png", "summary.md"] {
        assert!(run_dir.join("report").join(name).exists(), "{name}");
    }
    let md = std::fs::read_to_string(run_dir.join("report/summary.md")).unwrap();
    assert!(md.contains("degrees of freedom: 34"), "{md}");
    assert!(md.contains("| Simville |"), "{md}");
}

#[test]
fn bad_input_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pwtt(&["run", "-c", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "manifest = \"m.json\"\nfootprints = \"f.geojson\"\noutput_dir = \"o\"\n[window]\nreference = [\"2022-03-01\", \"2022-04-01\"]\ninference = [\"2022-01-01\", \"2022-02-01\"]\n",
    )
    .unwrap();
    let out = pwtt(&["run", "-c", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = pwtt(&["simulate", "--out", tmp.path().to_str().unwrap(), "--set", "grid.width=0"]);
    assert!(!out.status.success());
}

fn http_get(port: u16, path: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    let code = buf.split_whitespace().nth(1)?.parse().ok()?;
    let body = buf.split_once("\r\n\r\n")?.1.to_string();
    Some((code, body))
}

#[test]
fn serve_answers_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data);
    ok(&["run", "-c", data.join("run.toml").to_str().unwrap()]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_pwtt"))
        .args(["serve", "-d", data.join("run").to_str().unwrap(), "--addr", &format!("127.0.0.1:{port}")])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut got = None;
    while start.elapsed() < Duration::from_secs(60) {
        if let Some(r) = http_get(port, "/v1/meta") {
            got = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let missing = http_get(port, "/v1/jobs/ffffffffffffffff");
    child.kill().unwrap();
    child.wait().unwrap();
    let (code, body) = got.expect("server never answered");
    assert_eq!(code, 200);
    let meta: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(meta["crs"], "EPSG:32636");
    assert_eq!(missing.unwrap().0, 404);
}
