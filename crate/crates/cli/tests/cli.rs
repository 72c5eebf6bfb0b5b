use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdd_cli::report::REPORT_FILES;

fn fdd(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdd"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, rows: &str) -> String {
    let data = dir.join("data");
    let o = fdd(&dir.join("runs"), &["synth", "--out", data.to_str().unwrap(), "--rows", rows]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("synthetic.csv").exists());
    data.join("config.json").to_str().unwrap().to_string()
}

#[test]
fn eval_counts_prints_the_metrics_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = fdd(dir.path(), &["eval", "--counts", "7219,0,9,19547"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "1.000 0.999 0.999 1.000\n");

    // no predicted faults: precision and F1 are undefined, recall is zero
    let o = fdd(dir.path(), &["eval", "--counts", "0,0,4279,22450"]);
    assert_eq!(stdout(&o), "NaN 0.000 NaN 0.840\n");

    let o = fdd(dir.path(), &["eval", "--counts", "3,1,2,4", "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["counts"]["tp"], 3);
    assert_eq!(v["metrics"]["precision"], 0.75);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bogus"][..],
        &["eval", "--counts", "1,2"],
        &["eval", "--counts", "a,b,c,d"],
        &["extract", "--run", "x"],
        &["run"],
    ] {
        let o = fdd(dir.path(), args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    let o = fdd(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), "300");
    let store = dir.path().join("runs");

    let o = fdd(&store, &["extract", "--run", "0123456789abcdef", "--threshold", "1"]);
    assert_eq!(code(&o), 2);
    let o = fdd(&store, &["run", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = fdd(&store, &["run", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let id = stdout(&o).trim().to_string();
    let o = fdd(&store, &["extract", "--run", &id, "--threshold", "-1"]);
    assert_eq!(code(&o), 2);
    let o = fdd(&store, &["extract", "--run", &id, "--threshold", "0"]);
    assert_eq!(code(&o), 2);

    let mut text = fs::read_to_string(&cfg).unwrap();
    text = text.replacen("\"T\"", "\"NOPE\"", 1);
    let bad = dir.path().join("data/bad.json");
    fs::write(&bad, text).unwrap();
    let o = fdd(&store, &["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    fs::write(dir.path().join("data/synthetic.csv"), "timestamp,T\nyesterday,1\n").unwrap();
    let o = fdd(&store, &["ingest", "--config", &cfg]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_extract_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), "500");
    let store = dir.path().join("runs");

    let o = fdd(&store, &["ingest", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("rows        500\n"));

    let o = fdd(&store, &["run", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let id = stdout(&o).trim().to_string();
    assert_eq!(id.len(), 16);
    let o = fdd(&store, &["run", "--config", &cfg]);
    assert_eq!(stdout(&o).trim(), id);

    let o = fdd(&store, &["extract", "--run", &id, "--threshold", "2.5"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let mut lines = out.lines();
    let labels = Path::new(lines.next().unwrap());
    assert!(labels.ends_with("labels-optics-2.5.csv"));
    let csv = fs::read_to_string(labels).unwrap();
    assert_eq!(csv.lines().count(), 501);
    assert_eq!(lines.next().unwrap().split(' ').count(), 4);

    let o = fdd(&store, &["kdist", "--run", &id]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("k 15\npoints 500\nsuggested_eps "));

    let out_dir = dir.path().join("plots");
    let o = fdd(&store, &["report", "--run", &id, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in REPORT_FILES {
        let svg = fs::read_to_string(out_dir.join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{f}");
    }
    let reach = fs::read_to_string(out_dir.join("reachability.svg")).unwrap();
    assert!(reach.contains("class=\"threshold\""));
    let series = fs::read_to_string(out_dir.join("timeseries.svg")).unwrap();
    assert!(series.contains("class=\"fault\""));

    let o = fdd(
        &store,
        &["eval", "--labels", labels.to_str().unwrap(), "--truth", dir.path().join("data/synthetic.csv").to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).split(' ').count(), 4);
}

#[test]
fn extract_file_matches_http_labels() {
    use axum::body::Body;
    use axum::http::{header, Method, Request};
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), "300");
    let store = dir.path().join("runs");
    let id = stdout(&fdd(&store, &["run", "--config", &cfg])).trim().to_string();
    let app = fdd_cli::api::router(fdd_cli::api::AppState::new(fdd_core::store::RunStore::open(&store).unwrap(), 1));
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    for t in ["0.7", "1.9", "3"] {
        let o = fdd(&store, &["extract", "--run", &id, "--threshold", t]);
        assert_eq!(code(&o), 0);
        let file = fs::read(stdout(&o).lines().next().unwrap()).unwrap();
        let body = rt.block_on(async {
            let req = Request::builder()
                .method(Method::POST)
                .uri(format!("/api/runs/{id}/extract"))
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(format!("{{\"threshold\":{t}}}")))
                .unwrap();
            app.clone().oneshot(req).await.unwrap().into_body().collect().await.unwrap().to_bytes()
        });
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["labels_csv"].as_str().unwrap().as_bytes(), &file[..], "threshold {t}");
    }
}
