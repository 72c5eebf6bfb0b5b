use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use jsonschema::JSONSchema;
use serde_json::{json, Value};
use tower::ServiceExt;

use fdd_cli::api::{router, AppState};
use fdd_core::dataset::{load_frame, write_frame};
use fdd_core::store::{RunState, RunStore};
use fdd_core::synthetic::{generate, SyntheticSpec};
use fdd_core::time::{format_timestamp, year_month};
use fdd_core::RunConfig;

const SCHEMA: &str = include_str!("../schemas/api.schema.json");

fn validator(name: &str) -> JSONSchema {
    let doc: Value = serde_json::from_str(SCHEMA).unwrap();
    assert!(doc["definitions"].get(name).is_some(), "no schema for {name}");
    let wrapped = json!({
        "definitions": doc["definitions"],
        "allOf": [{ "$ref": format!("#/definitions/{name}") }],
    });
    JSONSchema::compile(&wrapped).unwrap()
}

fn check(name: &str, body: &Value) {
    if let Err(errors) = validator(name).validate(body) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{name} body fails its schema: {msgs:?}");
    };
}

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: Value,
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>, origin: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(o) = origin {
        req = req.header(header::ORIGIN, o);
    }
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or("").to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    if status.is_client_error() || status.is_server_error() {
        check("error", &body);
        assert_eq!(body["status"], status.as_u16());
    }
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, None).await
}

async fn send(app: &Router, method: Method, uri: &str, body: &str) -> Reply {
    call(app, method, uri, Some(body), None).await
}

fn setup(dir: &Path, spec: &SyntheticSpec) -> (Router, AppState, RunConfig) {
    let data = generate(spec).unwrap();
    let path = dir.join("synthetic.csv");
    write_frame(&data.frame, &path).unwrap();
    let cfg = data.run_config(&path);
    let state = AppState::new(RunStore::open(dir.join("runs")).unwrap(), 2);
    (router(state.clone()), state, cfg)
}

fn small() -> SyntheticSpec {
    SyntheticSpec {
        rows: 400,
        ..SyntheticSpec::default()
    }
}

async fn submit(app: &Router, cfg: &RunConfig) -> String {
    let r = send(app, Method::POST, "/api/runs", &serde_json::to_string(cfg).unwrap()).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.body);
    check("run_accepted", &r.body);
    r.body["run_id"].as_str().unwrap().to_string()
}

async fn wait(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let r = get(app, &format!("/api/runs/{id}")).await;
        assert_eq!(r.status, StatusCode::OK);
        check("run", &r.body);
        let state = r.body["state"].as_str().unwrap();
        if !matches!(state, "queued" | "running") {
            return r.body;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run {id} did not finish");
}

#[tokio::test(flavor = "multi_thread")]
async fn full_run_lifecycle_matches_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, cfg) = setup(dir.path(), &small());

    let r = get(&app, "/api/runs").await;
    check("run_list", &r.body);
    assert_eq!(r.body["runs"], json!([]));

    let id = submit(&app, &cfg).await;
    let run = wait(&app, &id).await;
    assert_eq!(run["state"], "complete");
    assert_eq!(run["record"]["rows"]["complete"], 400);

    let again = submit(&app, &cfg).await;
    assert_eq!(again, id);

    let r = get(&app, "/api/runs").await;
    check("run_list", &r.body);
    assert_eq!(r.body["runs"][0]["run_id"], id.as_str());

    let reach = get(&app, &format!("/api/runs/{id}/reachability")).await;
    assert_eq!(reach.status, StatusCode::OK);
    check("reachability", &reach.body);
    assert_eq!(reach.body["ordering"].as_array().unwrap().len(), 400);
    assert!(reach.body["reachability"][0].is_null());

    let kd = get(&app, &format!("/api/runs/{id}/kdist")).await;
    check("kdist", &kd.body);
    let curve: Vec<f64> = serde_json::from_value(kd.body["curve"].clone()).unwrap();
    assert!(curve.windows(2).all(|w| w[0] <= w[1]));

    let pca = get(&app, &format!("/api/runs/{id}/pca")).await;
    check("pca", &pca.body);
    let n = cfg.analysis_channels.len();
    assert_eq!(pca.body["correlations"].as_array().unwrap().len(), n * (n - 1) / 2);

    let t = reach.body["suggested_threshold"].as_f64().unwrap();
    let ex = send(&app, Method::POST, &format!("/api/runs/{id}/extract"), &json!({ "threshold": t }).to_string()).await;
    assert_eq!(ex.status, StatusCode::OK);
    check("extraction", &ex.body);
    let labels = ex.body["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 400);
    let noise = labels.iter().filter(|l| l.as_i64() == Some(-1)).count();
    assert_eq!(ex.body["noise_count"], noise);
    assert!(ex.body["metrics"].is_object());

    // segments tile the ordering and agree with the labels
    let ordering: Vec<usize> = serde_json::from_value(reach.body["ordering"].clone()).unwrap();
    let mut pos = 0;
    for s in ex.body["segments"].as_array().unwrap() {
        assert_eq!(s["start"], pos);
        let end = s["end"].as_u64().unwrap() as usize;
        for &row in &ordering[pos..=end] {
            assert_eq!(labels[row], s["cluster_id"]);
        }
        pos = end + 1;
    }
    assert_eq!(pos, 400);

    // extraction is a pure what-if: the stored record is unchanged
    let after = get(&app, &format!("/api/runs/{id}")).await;
    assert_eq!(after.body, run);

    let ts = get(&app, &format!("/api/runs/{id}/timeseries?channels=T,Q")).await;
    check("timeseries", &ts.body);
    assert_eq!(ts.body["channels"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state, cfg) = setup(dir.path(), &small());

    let r = get(&app, "/api/runs/0123456789abcdef/reachability").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_run")));
    let r = get(&app, "/api/runs/0123456789abcdef").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = get(&app, "/api/nothing").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // a registered run that has not executed yet
    let id = state.store().register(&cfg).unwrap();
    for tail in ["reachability", "kdist", "pca", "timeseries"] {
        let r = get(&app, &format!("/api/runs/{id}/{tail}")).await;
        assert_eq!(r.status, StatusCode::CONFLICT, "{tail}");
    }
    let r = send(&app, Method::POST, &format!("/api/runs/{id}/extract"), r#"{"threshold":1.0}"#).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = get(&app, &format!("/api/runs/{id}")).await;
    check("run", &r.body);
    assert_eq!(r.body["state"], "queued");
    assert!(r.body["record"].is_null());

    state.store().set_status(&id, RunState::Running, Some("optics"), None).unwrap();
    let r = get(&app, &format!("/api/runs/{id}/reachability")).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = get(&app, &format!("/api/runs/{id}")).await;
    assert_eq!((r.body["state"].as_str(), r.body["stage"].as_str()), (Some("running"), Some("optics")));

    state.store().execute(&cfg).unwrap();
    let extract = format!("/api/runs/{id}/extract");
    for bad in [r#"{"threshold":0}"#, r#"{"threshold":-2.5}"#] {
        let r = send(&app, Method::POST, &extract, bad).await;
        assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_threshold")));
    }
    for bad in ["{", r#"{"threshold":"high"}"#, r#"{"threshold":1,"extra":2}"#, ""] {
        let r = send(&app, Method::POST, &extract, bad).await;
        assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_body")), "{bad}");
    }

    let r = send(&app, Method::POST, "/api/runs", r#"{"dataset": 3}"#).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let mut unknown = cfg.clone();
    unknown.analysis_channels.push("NOPE".into());
    let r = send(&app, Method::POST, "/api/runs", &serde_json::to_string(&unknown).unwrap()).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("unknown_channel")));
    let mut missing = cfg.clone();
    missing.dataset = dir.path().join("absent.csv");
    let r = send(&app, Method::POST, "/api/runs", &serde_json::to_string(&missing).unwrap()).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("dataset_unreadable")));

    let r = get(&app, &format!("/api/runs/{id}/timeseries?from=yesterday")).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_query")));
    let r = get(&app, &format!("/api/runs/{id}/timeseries?channels=NOPE")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    std::fs::write(&cfg.dataset, "changed\n").unwrap();
    let r = get(&app, &format!("/api/runs/{id}/timeseries")).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::CONFLICT, Some("dataset_changed")));
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_run_reports_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, mut cfg) = setup(dir.path(), &small());
    cfg.optics.min_pts = 5000;
    let id = submit(&app, &cfg).await;
    let run = wait(&app, &id).await;
    assert_eq!(run["state"], "failed");
    assert_eq!(run["stage"], "kdist");
    assert!(run["error"].is_string());
    let r = get(&app, &format!("/api/runs/{id}/reachability")).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::CONFLICT, Some("run_failed")));
}

#[tokio::test(flavor = "multi_thread")]
async fn annotations_append_and_leave_results_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state, cfg) = setup(dir.path(), &small());
    let id = state.store().execute(&cfg).unwrap().run_id;
    let before = get(&app, &format!("/api/runs/{id}")).await.body;
    let uri = format!("/api/runs/{id}/annotations");

    let first = json!({"threshold": 2.0, "verdicts": {"0": "normal", "1": "fault"}, "note": "valve stuck open", "author": "ana"});
    let r = send(&app, Method::PUT, &uri, &first.to_string()).await;
    assert_eq!(r.status, StatusCode::OK);
    check("annotations", &r.body);
    assert_eq!(r.body["annotations"].as_array().unwrap().len(), 1);

    // a second verdict on another threshold is added, not merged
    let second = json!({"threshold": 1.5, "verdicts": {"0": "fault"}});
    let r = send(&app, Method::PUT, &uri, &second.to_string()).await;
    check("annotations", &r.body);
    let notes = r.body["annotations"].as_array().unwrap();
    assert_eq!(notes.len(), 2);
    assert_eq!(notes[0]["note"], "valve stuck open");
    assert_eq!(notes[0]["threshold"], 2.0);
    assert_eq!(notes[1]["verdicts"], json!({"0": "fault"}));
    assert!(notes[1]["time"].as_str().unwrap().ends_with('Z'));

    let mut after = get(&app, &format!("/api/runs/{id}")).await.body;
    assert_eq!(after["record"]["annotations"], r.body["annotations"]);
    after["record"]["annotations"] = json!([]);
    assert_eq!(after, before);

    for bad in [r#"{"threshold":0,"verdicts":{}}"#, r#"{"threshold":1,"verdicts":{"0":"maybe"}}"#, r#"{"verdicts":{}}"#] {
        let r = send(&app, Method::PUT, &uri, bad).await;
        assert!(r.status == StatusCode::BAD_REQUEST || r.status == StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let r = send(&app, Method::PUT, "/api/runs/0123456789abcdef/annotations", &second.to_string()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn timeseries_decimation_keeps_extremes_in_each_window() {
    // 12 hours of June clustered, a week of July only plotted
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        rows: 12_000,
        start: 1_530_360_000,
        ..SyntheticSpec::default()
    };
    let (app, state, mut cfg) = setup(dir.path(), &spec);
    cfg.months = Some(vec![year_month(spec.start)]);
    let record = state.store().execute(&cfg).unwrap();
    assert_eq!(record.rows.complete, 720);
    let id = record.run_id;
    let frame = load_frame(&cfg.dataset, &cfg.schema, None).unwrap();
    let ts = frame.timestamps();

    let windows = [
        (None, None),
        (Some(ts[100]), Some(ts[9_100])),
        (Some(ts[5_000]), None),
        (None, Some(ts[300])),
        (Some(ts[42]), Some(ts[42])),
    ];
    for (from, to) in windows {
        let mut uri = format!("/api/runs/{id}/timeseries?channels=T,DA-T,EA-T");
        if let Some(f) = from {
            uri += &format!("&from={}", format_timestamp(f));
        }
        if let Some(t) = to {
            uri += &format!("&to={}", format_timestamp(t));
        }
        let r = get(&app, &uri).await;
        assert_eq!(r.status, StatusCode::OK, "{uri}");
        check("timeseries", &r.body);

        let lo = from.map_or(0, |f| ts.partition_point(|&t| t < f));
        let hi = to.map_or(ts.len(), |t| ts.partition_point(|&x| x <= t));
        for ch in r.body["channels"].as_array().unwrap() {
            let name = ch["name"].as_str().unwrap();
            let all = &frame.channel(name).unwrap()[lo..hi];
            let served: Vec<f64> = ch["values"].as_array().unwrap().iter().filter_map(Value::as_f64).collect();
            let times: Vec<&str> = ch["timestamps"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
            assert!(served.len() <= 5000);
            assert_eq!(ch["rows"], hi - lo);
            assert_eq!(ch["decimated"], hi - lo > 5000);

            let min = all.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let max = all.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(served.iter().copied().fold(f64::INFINITY, f64::min), min, "{uri} {name}");
            assert_eq!(served.iter().copied().fold(f64::NEG_INFINITY, f64::max), max, "{uri} {name}");

            let first = format_timestamp(ts[lo]);
            let last = format_timestamp(ts[hi - 1]);
            assert!(times.iter().all(|t| *t >= first.as_str() && *t <= last.as_str()));
            assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[tokio::test]
async fn cors_allows_only_local_origins() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, _) = setup(dir.path(), &small());
    for origin in ["http://localhost:5173", "http://127.0.0.1:8080", "http://localhost"] {
        let r = call(&app, Method::GET, "/api/runs", None, Some(origin)).await;
        assert_eq!(r.headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), origin);

        let req = Request::builder()
            .method(Method::OPTIONS)
            .uri("/api/runs/abc/extract")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
            .body(Body::empty())
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        assert!(resp.status().is_success());
        assert_eq!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), origin);
    }
    for origin in ["http://example.com", "http://localhost.example.com", "null"] {
        let r = call(&app, Method::GET, "/api/runs", None, Some(origin)).await;
        assert!(r.headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none(), "{origin}");
    }
}
