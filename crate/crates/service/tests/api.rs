use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use wificue_core::db::{load_deny_list_file, load_registry_file};
use wificue_core::recommender::ScoringConfig;
use wificue_core::transport::{HttpResponse, HttpTransport, TransportError};
use wificue_core::wigle::{WigleClient, WigleSource};
use wificue_service::{load_baselines, router, AppState, Baselines, Clock, ServiceOptions};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");

fn fixture(rel: &str) -> PathBuf {
    Path::new(FIXTURES).join(rel)
}

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
}

struct FailOnCall;

impl HttpTransport for FailOnCall {
    fn get(&self, url: &str, _: Option<(&str, &str)>) -> Result<HttpResponse, TransportError> {
        panic!("network access attempted: {url}");
    }
}

struct Setup {
    token: Option<&'static str>,
    baselines: bool,
    wigle: bool,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            token: None,
            baselines: true,
            wigle: true,
        }
    }
}

/// A fresh copy of the golden database behind the router.
fn build(setup: Setup) -> (axum::Router, tempfile::TempDir) {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["observations.jsonl", "feedback.jsonl"] {
        fs::copy(fixture("golden/db").join(name), tmp.path().join(name)).unwrap();
    }
    let wigle = setup.wigle.then(|| {
        WigleClient::new(
            WigleSource::Fixture {
                dir: fixture("wigle"),
            },
            Arc::new(FailOnCall),
        )
    });
    let state = AppState::new(ServiceOptions {
        db_dir: tmp.path().to_path_buf(),
        baselines: if setup.baselines {
            load_baselines(&fixture("baselines")).unwrap()
        } else {
            Baselines::default()
        },
        registry: Some(load_registry_file(&fixture("golden/db/manuf"), now()).unwrap()),
        deny_list: load_deny_list_file(&fixture("golden/db/deny-list")).unwrap(),
        wigle,
        scoring: ScoringConfig::default(),
        api_token: setup.token.map(String::from),
        clock: Clock::Fixed(now()),
    })
    .unwrap();
    (router(state), tmp)
}

async fn send(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    send_with(app, method, uri, body, None).await
}

async fn send_with(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<String>,
    token: Option<&str>,
) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(token) = token {
        req = req.header("authorization", format!("Bearer {token}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn golden_scan_body() -> String {
    let text = fs::read_to_string(fixture("golden/scan.jsonl")).unwrap();
    let items: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    serde_json::to_string(&items).unwrap()
}

fn error_code(body: &str) -> String {
    let v: Value = serde_json::from_str(body).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 1, "envelope has exactly one key: {body}");
    v["error"]["code"].as_str().unwrap().to_string()
}

async fn post_golden(app: &axum::Router) -> String {
    let (status, body) = send(app, "POST", "/v1/scans", Some(golden_scan_body())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    v["scan_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn scans_are_idempotent() {
    let (app, tmp) = build(Setup::default());
    let (status, body) = send(&app, "POST", "/v1/scans", Some(golden_scan_body())).await;
    assert_eq!(status, StatusCode::OK);
    let first: Value = serde_json::from_str(&body).unwrap();
    assert_eq!((first["accepted"].clone(), first["skipped"].clone()), (json!(12), json!(0)));
    let store = tmp.path().join("observations.jsonl");
    let after_once = fs::read(&store).unwrap();

    let (_, body) = send(&app, "POST", "/v1/scans", Some(golden_scan_body())).await;
    let second: Value = serde_json::from_str(&body).unwrap();
    assert_eq!((second["accepted"].clone(), second["skipped"].clone()), (json!(0), json!(12)));
    assert_eq!(second["scan_id"], first["scan_id"]);
    assert_eq!(fs::read(&store).unwrap(), after_once);
}

#[tokio::test]
async fn scan_validation_errors() {
    let (app, _tmp) = build(Setup::default());
    let (status, body) = send(&app, "POST", "/v1/scans", Some("[]".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "SCHEMA_VIOLATION");
    assert!(body.contains("empty batch"), "{body}");

    let (status, body) = send(&app, "POST", "/v1/scans", Some("{\"not\":\"an array\"}".into())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION"));

    let bad = r#"[{"observed_at":"2026-03-01T10:00:00Z","scanner_id":"s","bssid":"ff:ff:ff:ff:ff:ff","ssid_b64":"","capabilities":"[ESS]","channel":6,"frequency_mhz":2437,"rssi_dbm":-50}]"#;
    let (status, body) = send(&app, "POST", "/v1/scans", Some(bad.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["error"]["details"]["index"], json!(0));
    assert_eq!(v["error"]["details"]["field"], json!("bssid"));

    let huge = format!("[\"{}\"]", "x".repeat(wificue_service::MAX_BODY_BYTES));
    let (status, body) = send(&app, "POST", "/v1/scans", Some(huge)).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::PAYLOAD_TOO_LARGE, "TOO_LARGE"));
}

#[tokio::test]
async fn assessment_matches_goldens_without_wigle() {
    let (app, _tmp) = build(Setup {
        wigle: false,
        ..Setup::default()
    });
    let scan_id = post_golden(&app).await;
    for posture in ["conservative", "balanced", "permissive"] {
        let (status, body) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment?posture={posture}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let golden = fs::read_to_string(fixture(&format!("golden/expected/assessment-{posture}.json"))).unwrap();
        assert_eq!(body, golden, "posture {posture}");
    }
    let (_, default) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment"), None).await;
    let (_, again) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment"), None).await;
    assert_eq!(default, again);
    assert_eq!(default, fs::read_to_string(fixture("golden/expected/assessment-balanced.json")).unwrap());

    let (status, body) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment?posture=bogus"), None).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    let (status, body) = send(&app, "GET", "/v1/scans/scan-0000000000000000/assessment", None).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "NOT_FOUND"));
}

#[tokio::test]
async fn history_paging() {
    let (app, _tmp) = build(Setup::default());
    let (status, body) = send(&app, "GET", "/v1/aps/00:14:22:99:99:99/history", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["total"], json!(0));
    assert_eq!(v["history"]["records"], json!([]));

    let (_, body) = send(&app, "GET", "/v1/aps/00:14:22:10:00:0b/history?limit=3", None).await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["total"], json!(4));
    let times: Vec<&str> = v["history"]["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["observed_at"].as_str().unwrap())
        .collect();
    // The three newest records, in ascending order.
    assert_eq!(times, ["2026-02-17T09:15:00Z", "2026-02-24T09:15:00Z", "2026-02-28T09:15:00Z"]);

    let (_, body) = send(&app, "GET", "/v1/aps/00-14-22-10-00-0b/history?limit=3&offset=3", None).await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["history"]["records"].as_array().unwrap().len(), 1);

    for uri in [
        "/v1/aps/00:14:22:10:00:0b/history?limit=-1",
        "/v1/aps/00:14:22:10:00:0b/history?offset=x",
        "/v1/aps/not-a-mac/history",
    ] {
        let (status, body) = send(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        error_code(&body);
    }
}

#[tokio::test]
async fn feedback_flows_into_assessment() {
    let (app, _tmp) = build(Setup {
        wigle: false,
        ..Setup::default()
    });
    let scan_id = post_golden(&app).await;
    let report = json!({
        "bssid": "00:14:22:10:00:04",
        "ssid": "HomeNet",
        "category": "NO_INTERNET",
        "observed_at": "2026-03-01T12:00:00Z",
        "reporter_id": "r-1"
    });
    let (status, body) = send(&app, "POST", "/v1/feedback", Some(report.to_string())).await;
    assert_eq!((status, body.as_str()), (StatusCode::OK, r#"{"accepted":true}"#));

    let (_, body) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment"), None).await;
    let items: Vec<Value> = serde_json::from_str(&body).unwrap();
    let home = items
        .iter()
        .find(|i| i["observation"]["bssid"] == json!("00:14:22:10:00:04"))
        .unwrap();
    assert_eq!(home["community"]["n_reports"], json!(1));
    assert_eq!(home["community"]["failure_rate"], json!(1.0));

    let mut bad = report.clone();
    bad["category"] = json!("SPOOKY");
    let (status, body) = send(&app, "POST", "/v1/feedback", Some(bad.to_string())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION"));

    let mut future = report;
    future["observed_at"] = json!("2026-03-02T12:00:00Z");
    let (status, body) = send(&app, "POST", "/v1/feedback", Some(future.to_string())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "FUTURE_TIMESTAMP"));
}

#[tokio::test]
async fn baselines_served_verbatim() {
    let (app, _tmp) = build(Setup::default());
    for (uri, file) in [("/v1/baselines/dns", "baselines/dns.json"), ("/v1/baselines/tls", "baselines/tls.json")] {
        let (status, body) = send(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, fs::read_to_string(fixture(file)).unwrap());
    }
    let (app, _tmp2) = build(Setup {
        baselines: false,
        ..Setup::default()
    });
    let (status, body) = send(&app, "GET", "/v1/baselines/dns", None).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "NOT_FOUND"));
}

#[test]
fn malformed_baseline_refuses_to_start() {
    assert!(load_baselines(&fixture("baselines-malformed")).is_err());
    assert!(load_baselines(&fixture("no-such-directory")).is_err());
}

fn probe_body(dns_verdict: &str, resolved: &[&str]) -> Value {
    json!({
        "bssid": "00:14:22:10:00:04",
        "started_at": "2026-03-01T11:30:00Z",
        "dns": [
            {"domain": "example.com", "resolved": resolved, "verdict": dns_verdict},
            {"domain": "www.example.org", "resolved": ["192.0.2.10"], "verdict": "PARTIAL"}
        ],
        "tls": [
            {"host": "example.com", "port": 443, "verdict": "PIN_OK"},
            {"host": "www.example.org", "port": 443, "verdict": "PIN_OK"}
        ],
        "portal": {"verdict": "NO_PORTAL"}
    })
}

#[tokio::test]
async fn probes_produce_flags() {
    let (app, _tmp) = build(Setup {
        wigle: false,
        ..Setup::default()
    });
    let scan_id = post_golden(&app).await;

    let mut clean = probe_body("MATCH", &["93.184.215.14"]);
    clean["dns"][1]["resolved"] = json!(["192.0.2.10", "192.0.2.11"]);
    clean["dns"][1]["verdict"] = json!("MATCH");
    let (status, body) = send(&app, "POST", "/v1/probes", Some(clean.to_string())).await;
    assert_eq!((status, body.as_str()), (StatusCode::OK, r#"{"flags":[]}"#));

    let hijack = probe_body("MISMATCH", &["203.0.113.66"]);
    let (status, body) = send(&app, "POST", "/v1/probes", Some(hijack.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    let codes: Vec<&str> = v["flags"].as_array().unwrap().iter().map(|f| f["code"].as_str().unwrap()).collect();
    assert_eq!(codes, ["PROBE_DNS_TAMPER"]);

    let (_, body) = send(&app, "GET", &format!("/v1/scans/{scan_id}/assessment"), None).await;
    let items: Vec<Value> = serde_json::from_str(&body).unwrap();
    let home = items
        .iter()
        .find(|i| i["observation"]["bssid"] == json!("00:14:22:10:00:04"))
        .unwrap();
    assert_eq!(home["verdict"]["decision"], json!("AVOID"));
    assert_eq!(home["flags"][0]["code"], json!("PROBE_DNS_TAMPER"));

    let inconsistent = probe_body("RESOLVE_FAILED", &["203.0.113.66"]);
    let (status, body) = send(&app, "POST", "/v1/probes", Some(inconsistent.to_string())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION"));

    let mut missing = probe_body("MATCH", &["93.184.215.14"]);
    missing["dns"].as_array_mut().unwrap().pop();
    let (status, _) = send(&app, "POST", "/v1/probes", Some(missing.to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn wigle_proxy_in_fixture_mode() {
    let (app, _tmp) = build(Setup::default());
    let (status, body) = send(&app, "GET", "/v1/wigle/00:14:22:10:00:0b", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], json!("CONSISTENT"));
    assert_eq!(v["detail"]["ssid"], json!("CafeWiFi"));

    let (_, body) = send(&app, "GET", "/v1/wigle/00:14:22:77:77:77", None).await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], json!("UNKNOWN_TO_WIGLE"));
    assert_eq!(v["detail"], Value::Null);

    let (status, body) = send(&app, "GET", "/v1/wigle/00:14:22:10:00:06", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], json!("WIGLE_UNAVAILABLE"));
    assert_eq!(v["details"]["error"], json!("QUOTA_EXCEEDED"));

    let (status, body) = send(&app, "GET", "/v1/wigle/zz", None).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));

    let (app, _tmp2) = build(Setup {
        wigle: false,
        ..Setup::default()
    });
    let (_, body) = send(&app, "GET", "/v1/wigle/00:14:22:10:00:0b", None).await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["details"]["error"], json!("NOT_CONFIGURED"));
}

#[tokio::test]
async fn bearer_token_guards_every_endpoint() {
    let (app, _tmp) = build(Setup {
        token: Some("s3cret"),
        ..Setup::default()
    });
    let endpoints = [
        ("POST", "/v1/scans"),
        ("GET", "/v1/scans/scan-0000000000000000/assessment"),
        ("GET", "/v1/aps/00:14:22:10:00:0b/history"),
        ("POST", "/v1/feedback"),
        ("GET", "/v1/baselines/dns"),
        ("GET", "/v1/baselines/tls"),
        ("POST", "/v1/probes"),
        ("GET", "/v1/wigle/00:14:22:10:00:0b"),
    ];
    for (method, uri) in endpoints {
        let body = (method == "POST").then(|| "{}".to_string());
        let (status, text) = send(&app, method, uri, body.clone()).await;
        assert_eq!((status, error_code(&text).as_str()), (StatusCode::UNAUTHORIZED, "UNAUTHORIZED"), "{uri}");
        let (status, _) = send_with(&app, method, uri, body.clone(), Some("wrong")).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{uri}");
        let (status, _) = send_with(&app, method, uri, body, Some("s3cret")).await;
        assert_ne!(status, StatusCode::UNAUTHORIZED, "{uri}");
    }
    let (status, _) = send_with(&app, "GET", "/v1/baselines/dns", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn unknown_routes_and_methods_use_the_envelope() {
    let (app, _tmp) = build(Setup::default());
    let (status, body) = send(&app, "GET", "/v2/nothing", None).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "NOT_FOUND"));
    let (status, body) = send(&app, "DELETE", "/v1/scans", None).await;
    assert_eq!(
        (status, error_code(&body).as_str()),
        (StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED")
    );
    let (status, body) = send(&app, "POST", "/v1/feedback", Some("{not json".into())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION"));
}
