//! WIGLE network-detail lookups with a TTL cache, and comparison of WIGLE
//! records against local observations.
//!
//! The HTTP layer is injected through [`HttpTransport`]; fixture mode reads
//! recorded response bodies from a directory and never touches it.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::format_timestamp;
use crate::journal::{Journal, StoreError};
use crate::model::{parse_bssid, AccessPointObservation, Bssid, SecurityClass};
pub use crate::transport::{HttpResponse, HttpTransport, TransportError};

pub const DEFAULT_BASE_URL: &str = "https://api.wigle.net";
pub const CACHE_TTL_HOURS: i64 = 24;
pub const LOCATION_MISMATCH_KM: f64 = 1.0;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WigleError {
    #[error("WIGLE rejected the credentials")]
    AuthFailed,
    #[error("WIGLE query quota exceeded")]
    QuotaExceeded,
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("malformed WIGLE response: {0}")]
    MalformedResponse(String),
}

impl WigleError {
    pub fn code(&self) -> &'static str {
        match self {
            WigleError::AuthFailed => "AUTH_FAILED",
            WigleError::QuotaExceeded => "QUOTA_EXCEEDED",
            WigleError::NetworkError(_) => "NETWORK_ERROR",
            WigleError::MalformedResponse(_) => "MALFORMED_RESPONSE",
        }
    }
}

/// Where WIGLE data comes from.
#[derive(Debug, Clone)]
pub enum WigleSource {
    Live {
        api_name: String,
        api_token: String,
        base_url: String,
    },
    /// Directory of `<bssid-with-dashes>.json` response bodies.
    Fixture { dir: PathBuf },
}

/// A WIGLE network record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WigleDetail {
    pub netid: Bssid,
    pub ssid: String,
    pub encryption: String,
    pub trilat: f64,
    pub trilong: f64,
    #[serde(serialize_with = "ser_opt_ts")]
    pub lastupdt: Option<DateTime<Utc>>,
    /// The response body exactly as received.
    pub raw: String,
}

fn ser_opt_ts<S: serde::Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
    match ts {
        Some(ts) => s.serialize_str(&format_timestamp(ts)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WigleStatus {
    UnknownToWigle,
    Consistent,
    SsidMismatch,
    SecurityMismatch,
    LocationMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WigleFinding {
    pub status: WigleStatus,
    pub detail: Option<WigleDetail>,
    pub distance_km: Option<f64>,
}

/// Outcome of looking up and comparing one AP; lookup failures are kept so
/// the risk engine can degrade instead of failing.
pub type WigleOutcome = Result<WigleFinding, WigleError>;

/// Decode a network-detail response body. `Ok(None)` means WIGLE has no
/// record for the BSSID.
pub fn decode_detail(body: &str) -> Result<Option<WigleDetail>, WigleError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| WigleError::MalformedResponse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| WigleError::MalformedResponse("expected an object".into()))?;

    if obj.get("success").and_then(Value::as_bool) == Some(false) {
        let message = obj
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_ascii_lowercase();
        if message.contains("too many") || message.contains("quota") || message.contains("limit") {
            return Err(WigleError::QuotaExceeded);
        }
        if message.contains("auth") || message.contains("credential") {
            return Err(WigleError::AuthFailed);
        }
        if message.contains("not found") || message.contains("no record") || message.is_empty() {
            return Ok(None);
        }
        return Err(WigleError::MalformedResponse(format!("unsuccessful: {message}")));
    }

    let results = obj
        .get("results")
        .and_then(Value::as_array)
        .ok_or_else(|| WigleError::MalformedResponse("missing results".into()))?;
    let Some(first) = results.first() else {
        return Ok(None);
    };

    let text = |key: &str| first.get(key).and_then(Value::as_str).map(str::to_string);
    let number = |key: &str| {
        first
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| WigleError::MalformedResponse(format!("missing {key}")))
    };
    let netid = text("netid").ok_or_else(|| WigleError::MalformedResponse("missing netid".into()))?;
    let netid = parse_bssid(&netid).map_err(|e| WigleError::MalformedResponse(e.to_string()))?;

    Ok(Some(WigleDetail {
        netid,
        ssid: text("ssid").unwrap_or_default(),
        encryption: text("encryption").unwrap_or_default(),
        trilat: number("trilat")?,
        trilong: number("trilong")?,
        lastupdt: text("lastupdt").and_then(|s| parse_wigle_time(&s)),
        raw: body.to_string(),
    }))
}

fn parse_wigle_time(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Some(ts.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .map(|n| n.and_utc())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    bssid: Bssid,
    fetched_at: DateTime<Utc>,
    body: Option<String>,
}

/// WIGLE client with a per-BSSID TTL cache. Absent results are cached too.
pub struct WigleClient {
    source: WigleSource,
    http: Arc<dyn HttpTransport>,
    ttl: Duration,
    cache: Mutex<HashMap<Bssid, CacheEntry>>,
    journal: Option<Mutex<Journal<CacheEntry>>>,
    inflight: Mutex<HashMap<Bssid, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for WigleClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WigleClient")
            .field("source", &self.source)
            .field("ttl", &self.ttl)
            .finish_non_exhaustive()
    }
}

impl WigleClient {
    pub fn new(source: WigleSource, http: Arc<dyn HttpTransport>) -> Self {
        WigleClient {
            source,
            http,
            ttl: Duration::hours(CACHE_TTL_HOURS),
            cache: Mutex::new(HashMap::new()),
            journal: None,
            inflight: Mutex::new(HashMap::new()),
        }
    }

    /// Persist the cache to `path`, loading any entries already there.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let journal: Journal<CacheEntry> = Journal::open(path)?;
        {
            let mut cache = self.cache.lock().expect("cache lock");
            for entry in journal.entries() {
                cache.insert(entry.bssid, entry.clone());
            }
        }
        self.journal = Some(Mutex::new(journal));
        Ok(self)
    }

    pub fn source(&self) -> &WigleSource {
        &self.source
    }

    /// Look up `bssid`, serving from cache when the entry is younger than the TTL.
    pub fn lookup(&self, bssid: &Bssid, now: DateTime<Utc>) -> Result<Option<WigleDetail>, WigleError> {
        let gate = {
            let mut inflight = self.inflight.lock().expect("inflight lock");
            inflight.entry(*bssid).or_default().clone()
        };
        let _one_at_a_time = gate.lock().expect("per-bssid lock");

        if let Some(entry) = self.cached(bssid, now) {
            return match entry.body {
                Some(body) => decode_detail(&body),
                None => Ok(None),
            };
        }

        let body = self.fetch(bssid)?;
        let detail = match &body {
            Some(body) => decode_detail(body)?,
            None => None,
        };
        // A body that decodes to "no record" is cached as absent.
        let entry = CacheEntry {
            bssid: *bssid,
            fetched_at: now,
            body: detail.as_ref().and(body),
        };
        self.remember(entry);
        Ok(detail)
    }

    fn cached(&self, bssid: &Bssid, now: DateTime<Utc>) -> Option<CacheEntry> {
        let cache = self.cache.lock().expect("cache lock");
        cache
            .get(bssid)
            .filter(|e| now - e.fetched_at < self.ttl && e.fetched_at <= now)
            .cloned()
    }

    fn remember(&self, entry: CacheEntry) {
        if let Some(journal) = &self.journal {
            let mut journal = journal.lock().expect("journal lock");
            if let Err(e) = journal.append(vec![entry.clone()]) {
                log::warn!("could not persist WIGLE cache entry: {e}");
            }
        }
        self.cache
            .lock()
            .expect("cache lock")
            .insert(entry.bssid, entry);
    }

    /// Raw response body, or `None` when the source has no record.
    fn fetch(&self, bssid: &Bssid) -> Result<Option<String>, WigleError> {
        match &self.source {
            WigleSource::Fixture { dir } => {
                let path = dir.join(format!("{}.json", bssid.dashed()));
                match fs::read_to_string(&path) {
                    Ok(body) => Ok(Some(body)),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(WigleError::NetworkError(format!("{}: {e}", path.display()))),
                }
            }
            WigleSource::Live {
                api_name,
                api_token,
                base_url,
            } => {
                let url = format!(
                    "{}/api/v2/network/detail?netid={}",
                    base_url.trim_end_matches('/'),
                    bssid
                );
                let resp = self
                    .http
                    .get(&url, Some((api_name, api_token)))
                    .map_err(|e| WigleError::NetworkError(e.to_string()))?;
                match resp.status {
                    200..=299 => Ok(Some(resp.body)),
                    401 | 403 => Err(WigleError::AuthFailed),
                    404 => Ok(None),
                    429 => Err(WigleError::QuotaExceeded),
                    other => Err(WigleError::NetworkError(format!("HTTP {other}"))),
                }
            }
        }
    }
}

/// Great-circle distance by the haversine formula.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Security classes compatible with a WIGLE `encryption` string; `None`
/// for vocabulary we do not recognize (never a mismatch).
pub fn wigle_security_classes(encryption: &str) -> Option<&'static [SecurityClass]> {
    use SecurityClass::*;
    match encryption.trim().to_ascii_lowercase().as_str() {
        "none" | "open" | "off" => Some(&[Open]),
        "wep" => Some(&[Wep]),
        "wpa" => Some(&[WpaTkip]),
        "wpa2" => Some(&[Wpa2Psk, Wpa2Enterprise]),
        "wpa3" => Some(&[Wpa3Sae, Wpa3Enterprise]),
        "owe" => Some(&[Owe]),
        _ => None,
    }
}

/// Compare a WIGLE record with a local observation. Checks run in the order
/// SSID, security, location; the first failure decides the status.
pub fn compare(detail: Option<&WigleDetail>, obs: &AccessPointObservation) -> WigleFinding {
    let Some(detail) = detail else {
        return WigleFinding {
            status: WigleStatus::UnknownToWigle,
            detail: None,
            distance_km: None,
        };
    };
    let distance_km = obs
        .location
        .map(|loc| haversine_km(detail.trilat, detail.trilong, loc.lat, loc.lon));
    let finding = |status| WigleFinding {
        status,
        detail: Some(detail.clone()),
        distance_km,
    };

    if !obs.ssid.is_hidden() && !detail.ssid.is_empty() && detail.ssid != obs.ssid.display() {
        return finding(WigleStatus::SsidMismatch);
    }
    if obs.security.class != SecurityClass::Unknown {
        if let Some(classes) = wigle_security_classes(&detail.encryption) {
            if !classes.contains(&obs.security.class) {
                return finding(WigleStatus::SecurityMismatch);
            }
        }
    }
    if distance_km.is_some_and(|d| d > LOCATION_MISMATCH_KM) {
        return finding(WigleStatus::LocationMismatch);
    }
    finding(WigleStatus::Consistent)
}

/// What the WIGLE lookup endpoint and `wigle lookup` report for one BSSID.
/// `status` is a [`WigleStatus`] name, `FOUND` when there is a record but no
/// local observation to compare it with, or `WIGLE_UNAVAILABLE` with the
/// error in `details`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WigleReport {
    pub status: &'static str,
    pub detail: Option<WigleDetail>,
    pub distance_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl WigleStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            WigleStatus::UnknownToWigle => "UNKNOWN_TO_WIGLE",
            WigleStatus::Consistent => "CONSISTENT",
            WigleStatus::SsidMismatch => "SSID_MISMATCH",
            WigleStatus::SecurityMismatch => "SECURITY_MISMATCH",
            WigleStatus::LocationMismatch => "LOCATION_MISMATCH",
        }
    }
}

impl WigleReport {
    pub fn unavailable(code: &str, message: impl Into<String>) -> Self {
        WigleReport {
            status: "WIGLE_UNAVAILABLE",
            detail: None,
            distance_km: None,
            details: Some(serde_json::json!({"error": code, "message": message.into()})),
        }
    }

    pub fn not_configured() -> Self {
        WigleReport::unavailable("NOT_CONFIGURED", "no WIGLE source configured")
    }
}

/// Look up `bssid` and compare with `latest`, the most recent local sighting.
pub fn wigle_report(
    client: &WigleClient,
    bssid: &Bssid,
    latest: Option<&AccessPointObservation>,
    now: DateTime<Utc>,
) -> WigleReport {
    match client.lookup(bssid, now) {
        Err(e) => WigleReport::unavailable(e.code(), e.to_string()),
        Ok(detail) => match (latest, detail) {
            (Some(obs), detail) => {
                let finding = compare(detail.as_ref(), obs);
                WigleReport {
                    status: finding.status.as_str(),
                    detail: finding.detail,
                    distance_km: finding.distance_km,
                    details: None,
                }
            }
            (None, None) => WigleReport {
                status: WigleStatus::UnknownToWigle.as_str(),
                detail: None,
                distance_km: None,
                details: None,
            },
            (None, Some(detail)) => WigleReport {
                status: "FOUND",
                detail: Some(detail),
                distance_km: None,
                details: None,
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Location, Ssid};
    use chrono::TimeZone;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
        response: Result<HttpResponse, TransportError>,
    }

    impl HttpTransport for Counting {
        fn get(&self, url: &str, auth: Option<(&str, &str)>) -> Result<HttpResponse, TransportError> {
            assert!(url.starts_with("https://example.test/api/v2/network/detail?netid="));
            assert_eq!(auth, Some(("name", "token")));
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.response.clone()
        }
    }

    struct FailOnCall;

    impl HttpTransport for FailOnCall {
        fn get(&self, url: &str, _: Option<(&str, &str)>) -> Result<HttpResponse, TransportError> {
            panic!("network access attempted: {url}");
        }
    }

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
    }

    fn body(netid: &str, ssid: &str, enc: &str, lat: f64, lon: f64) -> String {
        format!(
            r#"{{"success":true,"results":[{{"trilat":{lat},"trilong":{lon},"ssid":"{ssid}","lastupdt":"2025-11-02T08:30:00.000Z","netid":"{netid}","encryption":"{enc}","channel":6}}]}}"#
        )
    }

    fn live(response: Result<HttpResponse, TransportError>) -> (WigleClient, Arc<Counting>) {
        let http = Arc::new(Counting {
            calls: AtomicUsize::new(0),
            response,
        });
        let client = WigleClient::new(
            WigleSource::Live {
                api_name: "name".into(),
                api_token: "token".into(),
                base_url: "https://example.test".into(),
            },
            http.clone(),
        );
        (client, http)
    }

    fn ok(b: String) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body: b })
    }

    fn bssid() -> Bssid {
        "00:14:22:01:23:45".parse().unwrap()
    }

    #[test]
    fn fixture_present_and_absent() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("00-14-22-01-23-45.json"),
            body("00:14:22:01:23:45", "CafeWiFi", "wpa2", 38.88, -77.1),
        )
        .unwrap();
        let client = WigleClient::new(
            WigleSource::Fixture {
                dir: dir.path().to_path_buf(),
            },
            Arc::new(FailOnCall),
        );
        let detail = client.lookup(&bssid(), now()).unwrap().unwrap();
        assert_eq!(detail.ssid, "CafeWiFi");
        assert_eq!(detail.encryption, "wpa2");
        assert_eq!(detail.trilat, 38.88);
        assert_eq!(
            detail.lastupdt,
            Some(Utc.with_ymd_and_hms(2025, 11, 2, 8, 30, 0).unwrap())
        );
        let other: Bssid = "00:14:22:01:23:46".parse().unwrap();
        assert_eq!(client.lookup(&other, now()).unwrap(), None);
    }

    #[test]
    fn cache_serves_within_ttl() {
        let (client, http) = live(ok(body("00:14:22:01:23:45", "CafeWiFi", "wpa2", 1.0, 2.0)));
        assert!(client.lookup(&bssid(), now()).unwrap().is_some());
        assert!(client.lookup(&bssid(), now() + Duration::hours(23)).unwrap().is_some());
        assert_eq!(http.calls.load(Ordering::SeqCst), 1);
        client.lookup(&bssid(), now() + Duration::hours(24)).unwrap();
        assert_eq!(http.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn absent_results_are_cached() {
        let (client, http) = live(ok(r#"{"success":true,"results":[]}"#.into()));
        assert_eq!(client.lookup(&bssid(), now()).unwrap(), None);
        assert_eq!(client.lookup(&bssid(), now()).unwrap(), None);
        assert_eq!(http.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn errors_are_distinct_and_not_cached() {
        let cases = [
            (Ok(HttpResponse { status: 401, body: String::new() }), "AUTH_FAILED"),
            (Ok(HttpResponse { status: 429, body: String::new() }), "QUOTA_EXCEEDED"),
            (ok(r#"{"success":false,"message":"too many queries today"}"#.into()), "QUOTA_EXCEEDED"),
            (Err(TransportError::Timeout), "NETWORK_ERROR"),
            (Ok(HttpResponse { status: 500, body: String::new() }), "NETWORK_ERROR"),
            (ok("<html>".into()), "MALFORMED_RESPONSE"),
            (ok(r#"{"success":true}"#.into()), "MALFORMED_RESPONSE"),
            (ok(body("not-a-mac", "x", "wpa2", 1.0, 1.0)), "MALFORMED_RESPONSE"),
        ];
        for (response, code) in cases {
            let (client, http) = live(response);
            assert_eq!(client.lookup(&bssid(), now()).unwrap_err().code(), code);
            let _ = client.lookup(&bssid(), now());
            assert_eq!(http.calls.load(Ordering::SeqCst), 2, "{code}");
        }
    }

    #[test]
    fn cache_file_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wigle-cache.jsonl");
        let (client, _) = live(ok(body("00:14:22:01:23:45", "CafeWiFi", "wpa2", 1.0, 2.0)));
        let client = client.with_cache_file(&path).unwrap();
        client.lookup(&bssid(), now()).unwrap();

        let (fresh, http) = live(Err(TransportError::Timeout));
        let fresh = fresh.with_cache_file(&path).unwrap();
        assert_eq!(fresh.lookup(&bssid(), now()).unwrap().unwrap().ssid, "CafeWiFi");
        assert_eq!(http.calls.load(Ordering::SeqCst), 0);
    }

    fn observation(ssid: &str, caps: &str, loc: Option<(f64, f64)>) -> AccessPointObservation {
        AccessPointObservation::new(
            bssid(),
            Ssid::new(ssid).unwrap(),
            caps,
            6,
            2437,
            -50,
            now(),
            "s",
            loc.map(|(lat, lon)| Location { lat, lon, accuracy_m: None }),
        )
    }

    fn detail(ssid: &str, enc: &str, lat: f64, lon: f64) -> WigleDetail {
        decode_detail(&body("00:14:22:01:23:45", ssid, enc, lat, lon)).unwrap().unwrap()
    }

    #[test]
    fn compare_examples() {
        let obs = observation("CafeWiFi", "[WPA2-PSK-CCMP]", None);
        assert_eq!(compare(None, &obs).status, WigleStatus::UnknownToWigle);
        assert!(compare(None, &obs).detail.is_none());

        let d = detail("CafeWiFi", "wpa2", 38.88, -77.10);
        assert_eq!(compare(Some(&d), &obs).status, WigleStatus::Consistent);

        let far = observation("CafeWiFi", "[WPA2-PSK-CCMP]", Some((38.88, -76.90)));
        let f = compare(Some(&d), &far);
        assert_eq!(f.status, WigleStatus::LocationMismatch);
        assert!((f.distance_km.unwrap() - 17.3).abs() < 0.05, "{:?}", f.distance_km);
    }

    #[test]
    fn compare_precedence() {
        let d = detail("CafeWiFi", "wpa2", 38.88, -77.10);
        let all_bad = observation("Other", "[ESS]", Some((10.0, 10.0)));
        assert_eq!(compare(Some(&d), &all_bad).status, WigleStatus::SsidMismatch);
        let sec_loc = observation("CafeWiFi", "[ESS]", Some((10.0, 10.0)));
        assert_eq!(compare(Some(&d), &sec_loc).status, WigleStatus::SecurityMismatch);
        let unknown_vocab = detail("CafeWiFi", "mystery", 38.88, -77.10);
        assert_eq!(compare(Some(&unknown_vocab), &sec_loc).status, WigleStatus::LocationMismatch);
    }

    #[test]
    fn same_location_is_zero_distance() {
        for (lat, lon) in [(38.88, -77.10), (0.0, 0.0), (-33.9, 151.2), (89.9, 179.9)] {
            let d = detail("CafeWiFi", "wpa2", lat, lon);
            let f = compare(Some(&d), &observation("CafeWiFi", "[WPA2-PSK-CCMP]", Some((lat, lon))));
            assert_eq!(f.distance_km, Some(0.0));
            assert_eq!(f.status, WigleStatus::Consistent);
        }
    }

    /// Independent route: angle between unit vectors via atan2(|a×b|, a·b).
    fn vector_distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
        let v = |lat: f64, lon: f64| {
            let (lat, lon) = (lat.to_radians(), lon.to_radians());
            [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
        };
        let (a, b) = (v(lat1, lon1), v(lat2, lon2));
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let norm = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        EARTH_RADIUS_KM * norm.atan2(dot)
    }

    #[test]
    fn haversine_matches_vector_oracle() {
        let oracle = vector_distance_km(38.88, -77.10, 38.88, -76.90);
        assert!((oracle - 17.31).abs() < 0.01, "oracle {oracle}");
        let pts = [(38.88, -77.10), (51.5, -0.12), (-33.9, 151.2), (0.0, 179.9), (0.0, -179.9), (89.0, 10.0)];
        for &(a, b) in &pts {
            for &(c, d) in &pts {
                let h = haversine_km(a, b, c, d);
                assert!((h - vector_distance_km(a, b, c, d)).abs() < 1e-6, "{a},{b} {c},{d}");
            }
        }
    }
}
