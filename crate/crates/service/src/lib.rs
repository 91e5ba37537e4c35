//! JSON-over-HTTP backend: scan ingestion, assessments, history, feedback,
//! probe results, baselines and a cached WIGLE proxy.
//!
//! Plain HTTP only; production deployments terminate TLS in a fronting proxy.

mod error;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::{to_bytes, Body};
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use wificue_core::assessment::{assess_scan, render_assessment, AssessmentInputs};
use wificue_core::canonical::decode_value;
use wificue_core::db::Database;
use wificue_core::ingest::ScanBatch;
use wificue_core::journal::StoreError;
use wificue_core::model::{parse_bssid, Bssid};
use wificue_core::oui::{DenyList, OuiRegistry};
use wificue_core::probe::{probe_flags, DnsBaseline, ProbeResult, TlsPinSet};
use wificue_core::recommender::{FeedbackReport, RiskPosture, ScoringConfig};
use wificue_core::wigle::{wigle_report, WigleClient, WigleReport};

pub use error::ApiError;

pub const MAX_BODY_BYTES: usize = 5 * 1024 * 1024;
pub const DEFAULT_HISTORY_LIMIT: usize = 50;
pub const DNS_BASELINE_FILE: &str = "dns.json";
pub const TLS_PINS_FILE: &str = "tls.json";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Source of "now" for timestamp validation and feedback decay.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Operator baseline documents, kept verbatim for serving.
#[derive(Debug, Clone, Default)]
pub struct Baselines {
    pub dns: Option<(DnsBaseline, String)>,
    pub tls: Option<(TlsPinSet, String)>,
}

/// Load `dns.json` and `tls.json` from `dir`. Missing files are allowed;
/// malformed ones are a configuration error.
pub fn load_baselines(dir: &Path) -> Result<Baselines, ServiceError> {
    if !dir.is_dir() {
        return Err(ServiceError::Config(format!(
            "baselines directory {} does not exist",
            dir.display()
        )));
    }
    let read = |name: &str| -> Result<Option<String>, ServiceError> {
        match fs::read_to_string(dir.join(name)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let config_err = |name: &str, e: &dyn std::fmt::Display| {
        ServiceError::Config(format!("{}: {e}", dir.join(name).display()))
    };
    let dns = read(DNS_BASELINE_FILE)?
        .map(|text| {
            DnsBaseline::from_json(&text)
                .map(|doc| (doc, text))
                .map_err(|e| config_err(DNS_BASELINE_FILE, &e))
        })
        .transpose()?;
    let tls = read(TLS_PINS_FILE)?
        .map(|text| {
            TlsPinSet::from_json(&text)
                .map(|doc| (doc, text))
                .map_err(|e| config_err(TLS_PINS_FILE, &e))
        })
        .transpose()?;
    Ok(Baselines { dns, tls })
}

pub struct ServiceOptions {
    pub db_dir: PathBuf,
    pub baselines: Baselines,
    pub registry: Option<OuiRegistry>,
    pub deny_list: DenyList,
    pub wigle: Option<WigleClient>,
    pub scoring: ScoringConfig,
    pub api_token: Option<String>,
    pub clock: Clock,
}

pub struct AppState {
    db: RwLock<Database>,
    baselines: Baselines,
    registry: Option<OuiRegistry>,
    deny_list: DenyList,
    wigle: Option<WigleClient>,
    scoring: ScoringConfig,
    api_token: Option<String>,
    clock: Clock,
}

impl AppState {
    pub fn new(options: ServiceOptions) -> Result<Arc<Self>, ServiceError> {
        Ok(Arc::new(AppState {
            db: RwLock::new(Database::open(&options.db_dir)?),
            baselines: options.baselines,
            registry: options.registry,
            deny_list: options.deny_list,
            wigle: options.wigle,
            scoring: options.scoring,
            api_token: options.api_token.filter(|t| !t.is_empty()),
            clock: options.clock,
        }))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/scans", post(post_scans))
        .route("/v1/scans/{scan_id}/assessment", get(get_assessment))
        .route("/v1/aps/{bssid}/history", get(get_history))
        .route("/v1/feedback", post(post_feedback))
        .route("/v1/baselines/dns", get(get_dns_baseline))
        .route("/v1/baselines/tls", get(get_tls_pins))
        .route("/v1/probes", post(post_probes))
        .route("/v1/wigle/{bssid}", get(get_wigle))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async { ApiError::method_not_allowed() })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Bind `addr` and serve until the process is terminated.
pub async fn serve(addr: SocketAddr, state: Shared, on_bound: impl FnOnce(SocketAddr)) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn require_token(State(state): State<Shared>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.api_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(request).await
}

async fn read_json(body: Body) -> Result<Value, ApiError> {
    let bytes = to_bytes(body, MAX_BODY_BYTES)
        .await
        .map_err(|_| ApiError::too_large(MAX_BODY_BYTES))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::schema(format!("body is not valid JSON: {e}"), None))
}

async fn blocking<T: Send + 'static>(
    work: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn json_text(text: String) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        text,
    )
        .into_response()
}

#[derive(Serialize)]
struct ScanAccepted {
    scan_id: String,
    accepted: usize,
    skipped: usize,
}

async fn post_scans(State(state): State<Shared>, body: Body) -> Result<Json<ScanAccepted>, ApiError> {
    let value = read_json(body).await?;
    let Value::Array(items) = value else {
        return Err(ApiError::schema("body must be a JSON array of observations", None));
    };
    if items.is_empty() {
        return Err(ApiError::schema("empty batch", None));
    }
    let now = state.clock.now();
    let observations = items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            decode_value(item, Some(now)).map_err(|v| {
                ApiError::schema(
                    format!("observation {index}: {}: {}", v.field, v.reason),
                    Some(json!({"index": index, "field": v.field, "reason": v.reason})),
                )
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let submitted = observations.len();

    blocking(move || {
        let batch = ScanBatch::from_observations(observations, now);
        let mut db = state.db.write().expect("database lock");
        let accepted = db.ingest(&batch).map_err(ApiError::storage)?;
        Ok(Json(ScanAccepted {
            scan_id: batch.scan_id,
            accepted,
            skipped: submitted - accepted,
        }))
    })
    .await
}

fn query_map(
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> Result<HashMap<String, String>, ApiError> {
    query
        .map(|Query(q)| q)
        .map_err(|e| ApiError::bad_request(format!("invalid query string: {e}")))
}

fn path_param(path: Result<UrlPath<String>, PathRejection>) -> Result<String, ApiError> {
    path.map(|UrlPath(p)| p)
        .map_err(|e| ApiError::bad_request(format!("invalid path: {e}")))
}

fn path_bssid(path: Result<UrlPath<String>, PathRejection>) -> Result<Bssid, ApiError> {
    let text = path_param(path)?;
    parse_bssid(&text).map_err(|e| {
        ApiError::bad_request(format!("invalid BSSID {text:?}: {e}"))
            .with_details(json!({"reason": e.code()}))
    })
}

async fn get_assessment(
    State(state): State<Shared>,
    path: Result<UrlPath<String>, PathRejection>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> Result<Response, ApiError> {
    let scan_id = path_param(path)?;
    let query = query_map(query)?;
    let posture: RiskPosture = match query.get("posture") {
        None => RiskPosture::Balanced,
        Some(p) => p.parse().map_err(ApiError::bad_request)?,
    };
    blocking(move || {
        let db = state.db.read().expect("database lock");
        let batch = db
            .scan(&scan_id)
            .ok_or_else(|| ApiError::not_found(format!("no scan {scan_id}")))?;
        let probes = db.latest_probes();
        let items = assess_scan(&AssessmentInputs {
            batch: &batch,
            history: db.history(),
            registry: state.registry.as_ref(),
            deny_list: &state.deny_list,
            wigle: state.wigle.as_ref(),
            probes: &probes,
            feedback: db.feedback(),
            posture,
            scoring: &state.scoring,
            now: state.clock.now(),
        });
        Ok(json_text(render_assessment(&items)))
    })
    .await
}

fn non_negative(query: &HashMap<String, String>, key: &str, default: usize) -> Result<usize, ApiError> {
    match query.get(key) {
        None => Ok(default),
        Some(text) => text.parse::<usize>().map_err(|_| {
            ApiError::bad_request(format!("{key} must be a non-negative integer, got {text:?}"))
        }),
    }
}

async fn get_history(
    State(state): State<Shared>,
    path: Result<UrlPath<String>, PathRejection>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> Result<Response, ApiError> {
    let bssid = path_bssid(path)?;
    let query = query_map(query)?;
    let limit = non_negative(&query, "limit", DEFAULT_HISTORY_LIMIT)?;
    let offset = non_negative(&query, "offset", 0)?;
    let db = state.db.read().expect("database lock");
    Ok(Json(db.history().history(&bssid, limit, offset)).into_response())
}

async fn post_feedback(State(state): State<Shared>, body: Body) -> Result<Response, ApiError> {
    let value = read_json(body).await?;
    let report: FeedbackReport = serde_json::from_value(value)
        .map_err(|e| ApiError::schema(format!("invalid feedback report: {e}"), None))?;
    let now = state.clock.now();
    if report.observed_at > now {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "FUTURE_TIMESTAMP",
            "observed_at is in the future",
        ));
    }
    blocking(move || {
        let mut db = state.db.write().expect("database lock");
        db.add_feedback(report).map_err(ApiError::storage)?;
        Ok(Json(json!({"accepted": true})).into_response())
    })
    .await
}

async fn get_dns_baseline(State(state): State<Shared>) -> Result<Response, ApiError> {
    match &state.baselines.dns {
        Some((_, raw)) => Ok(json_text(raw.clone())),
        None => Err(ApiError::not_found("no DNS baseline configured")),
    }
}

async fn get_tls_pins(State(state): State<Shared>) -> Result<Response, ApiError> {
    match &state.baselines.tls {
        Some((_, raw)) => Ok(json_text(raw.clone())),
        None => Err(ApiError::not_found("no TLS pin set configured")),
    }
}

async fn post_probes(State(state): State<Shared>, body: Body) -> Result<Response, ApiError> {
    let value = read_json(body).await?;
    let result: ProbeResult = serde_json::from_value(value)
        .map_err(|e| ApiError::schema(format!("invalid probe result: {e}"), None))?;
    result
        .validate(
            state.baselines.dns.as_ref().map(|b| &b.0),
            state.baselines.tls.as_ref().map(|b| &b.0),
        )
        .map_err(|reason| ApiError::schema(reason, None))?;
    let flags = probe_flags(&result);
    blocking(move || {
        let mut db = state.db.write().expect("database lock");
        db.record_probe(result).map_err(ApiError::storage)?;
        Ok(Json(json!({"flags": flags})).into_response())
    })
    .await
}

async fn get_wigle(
    State(state): State<Shared>,
    path: Result<UrlPath<String>, PathRejection>,
) -> Result<Response, ApiError> {
    let bssid = path_bssid(path)?;
    blocking(move || {
        let Some(client) = &state.wigle else {
            return Ok(Json(WigleReport::not_configured()).into_response());
        };
        let latest = {
            let db = state.db.read().expect("database lock");
            db.history().latest_observation(&bssid).cloned()
        };
        let report = wigle_report(client, &bssid, latest.as_ref(), state.clock.now());
        Ok(Json(report).into_response())
    })
    .await
}
