//! The canonical line-delimited JSON format for observations.
//!
//! One object per line with exactly these fields, in this order:
//! `observed_at`, `scanner_id`, `bssid`, `ssid_b64`, `capabilities`,
//! `channel`, `frequency_mhz`, `rssi_dbm` and the optional `lat`, `lon`,
//! `accuracy_m`. Unknown fields are rejected.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{parse_bssid, AccessPointObservation, Location, Ssid, RSSI_MAX_DBM, RSSI_MIN_DBM};

/// Observations may be stamped at most this far ahead of ingest time.
pub const MAX_FUTURE_SKEW_HOURS: i64 = 24;

const FIELDS: [&str; 11] = [
    "observed_at",
    "scanner_id",
    "bssid",
    "ssid_b64",
    "capabilities",
    "channel",
    "frequency_mhz",
    "rssi_dbm",
    "lat",
    "lon",
    "accuracy_m",
];

/// A record that does not satisfy the canonical schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}schema violation in field {field:?}: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct SchemaViolation {
    /// 1-based line number, when the record came from a stream.
    pub line: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl SchemaViolation {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SchemaViolation {
            line: None,
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

/// RFC 3339 with second precision and a `Z` suffix.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parse an RFC 3339 timestamp, converting to UTC and truncating to whole seconds.
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(text).ok()?.with_timezone(&Utc);
    ts.with_nanosecond(0)
}

#[derive(Serialize)]
struct Wire<'a> {
    observed_at: String,
    scanner_id: &'a str,
    bssid: String,
    ssid_b64: String,
    capabilities: &'a str,
    channel: u32,
    frequency_mhz: u32,
    rssi_dbm: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_m: Option<f64>,
}

impl<'a> From<&'a AccessPointObservation> for Wire<'a> {
    fn from(obs: &'a AccessPointObservation) -> Self {
        Wire {
            observed_at: format_timestamp(&obs.observed_at),
            scanner_id: &obs.scanner_id,
            bssid: obs.bssid.to_string(),
            ssid_b64: B64.encode(obs.ssid.as_bytes()),
            capabilities: &obs.capabilities,
            channel: obs.channel,
            frequency_mhz: obs.frequency_mhz,
            rssi_dbm: obs.rssi_dbm,
            lat: obs.location.map(|l| l.lat),
            lon: obs.location.map(|l| l.lon),
            accuracy_m: obs.location.and_then(|l| l.accuracy_m),
        }
    }
}

/// Encode one observation as a canonical line (no trailing newline).
pub fn encode_observation(obs: &AccessPointObservation) -> String {
    serde_json::to_string(&Wire::from(obs)).expect("observation serializes")
}

/// Encode as a JSON value (the element type of `POST /v1/scans` bodies).
pub fn observation_to_value(obs: &AccessPointObservation) -> Value {
    serde_json::to_value(Wire::from(obs)).expect("observation serializes")
}

/// Decode one canonical line. `now` bounds how far in the future
/// `observed_at` may lie.
pub fn decode_observation(
    line: &str,
    now: DateTime<Utc>,
) -> Result<AccessPointObservation, SchemaViolation> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| SchemaViolation::new("<record>", format!("invalid JSON: {e}")))?;
    decode_value(&value, Some(now))
}

/// Decode a canonical record from a parsed JSON value. With `now = None`
/// the future-timestamp check is skipped (used when reloading stored data).
pub fn decode_value(
    value: &Value,
    now: Option<DateTime<Utc>>,
) -> Result<AccessPointObservation, SchemaViolation> {
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaViolation::new("<record>", "expected a JSON object"))?;

    if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(SchemaViolation::new(unknown.as_str(), "unknown field"));
    }

    let observed_at_text = required_str(obj, "observed_at")?;
    let observed_at = parse_timestamp(observed_at_text)
        .ok_or_else(|| SchemaViolation::new("observed_at", "not an RFC 3339 timestamp"))?;
    if let Some(now) = now {
        let limit = now.checked_add_signed(Duration::hours(MAX_FUTURE_SKEW_HOURS));
        if limit.is_some_and(|limit| observed_at > limit) {
            return Err(SchemaViolation::new(
                "observed_at",
                "more than 24 h in the future",
            ));
        }
    }

    let scanner_id = required_str(obj, "scanner_id")?.to_string();
    let bssid = parse_bssid(required_str(obj, "bssid")?)
        .map_err(|e| SchemaViolation::new("bssid", e.to_string()))?;
    let ssid_bytes = B64
        .decode(required_str(obj, "ssid_b64")?)
        .map_err(|e| SchemaViolation::new("ssid_b64", format!("invalid base64: {e}")))?;
    let ssid = Ssid::new(ssid_bytes).map_err(|e| SchemaViolation::new("ssid_b64", e.to_string()))?;
    let capabilities = required_str(obj, "capabilities")?.to_string();
    let channel = required_u32(obj, "channel")?;
    let frequency_mhz = required_u32(obj, "frequency_mhz")?;

    let rssi_dbm = obj
        .get("rssi_dbm")
        .ok_or_else(|| SchemaViolation::new("rssi_dbm", "missing"))?
        .as_i64()
        .ok_or_else(|| SchemaViolation::new("rssi_dbm", "expected an integer"))?;
    if !(i64::from(RSSI_MIN_DBM)..=i64::from(RSSI_MAX_DBM)).contains(&rssi_dbm) {
        return Err(SchemaViolation::new("rssi_dbm", "outside [-120, 0]"));
    }

    let lat = optional_f64(obj, "lat")?;
    let lon = optional_f64(obj, "lon")?;
    let accuracy_m = optional_f64(obj, "accuracy_m")?;
    let location = match (lat, lon) {
        (Some(lat), Some(lon)) => {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(SchemaViolation::new("lat", "outside [-90, 90]"));
            }
            if !(-180.0..=180.0).contains(&lon) {
                return Err(SchemaViolation::new("lon", "outside [-180, 180]"));
            }
            if accuracy_m.is_some_and(|a| a < 0.0) {
                return Err(SchemaViolation::new("accuracy_m", "negative"));
            }
            Some(Location {
                lat,
                lon,
                accuracy_m,
            })
        }
        (None, None) => {
            if accuracy_m.is_some() {
                return Err(SchemaViolation::new("accuracy_m", "present without lat/lon"));
            }
            None
        }
        (Some(_), None) => return Err(SchemaViolation::new("lon", "lat given without lon")),
        (None, Some(_)) => return Err(SchemaViolation::new("lat", "lon given without lat")),
    };

    Ok(AccessPointObservation::new(
        bssid,
        ssid,
        capabilities,
        channel,
        frequency_mhz,
        rssi_dbm as i32,
        observed_at,
        scanner_id,
        location,
    ))
}

fn required_str<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a str, SchemaViolation> {
    obj.get(field)
        .ok_or_else(|| SchemaViolation::new(field, "missing"))?
        .as_str()
        .ok_or_else(|| SchemaViolation::new(field, "expected a string"))
}

fn required_u32(obj: &Map<String, Value>, field: &str) -> Result<u32, SchemaViolation> {
    let n = obj
        .get(field)
        .ok_or_else(|| SchemaViolation::new(field, "missing"))?
        .as_u64()
        .ok_or_else(|| SchemaViolation::new(field, "expected a non-negative integer"))?;
    u32::try_from(n).map_err(|_| SchemaViolation::new(field, "out of range"))
}

fn optional_f64(obj: &Map<String, Value>, field: &str) -> Result<Option<f64>, SchemaViolation> {
    match obj.get(field) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| SchemaViolation::new(field, "expected a number")),
    }
}

impl Serialize for AccessPointObservation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        Wire::from(self).serialize(serializer)
    }
}

/// Deserializes the canonical form without the future-timestamp check.
impl<'de> Deserialize<'de> for AccessPointObservation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        decode_value(&value, None).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{Bssid, SecurityClass};
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
    }

    fn sample() -> AccessPointObservation {
        AccessPointObservation::new(
            "00:14:22:01:23:45".parse().unwrap(),
            Ssid::new("CafeWiFi").unwrap(),
            "[WPA2-PSK-CCMP][ESS]",
            6,
            2437,
            -52,
            Utc.with_ymd_and_hms(2026, 3, 1, 10, 0, 0).unwrap(),
            "scanner-1",
            Some(Location {
                lat: 38.88,
                lon: -77.1,
                accuracy_m: Some(12.5),
            }),
        )
    }

    #[test]
    fn full_observation_round_trips() {
        let obs = sample();
        let line = encode_observation(&obs);
        assert_eq!(
            line,
            r#"{"observed_at":"2026-03-01T10:00:00Z","scanner_id":"scanner-1","bssid":"00:14:22:01:23:45","ssid_b64":"Q2FmZVdpRmk=","capabilities":"[WPA2-PSK-CCMP][ESS]","channel":6,"frequency_mhz":2437,"rssi_dbm":-52,"lat":38.88,"lon":-77.1,"accuracy_m":12.5}"#
        );
        let back = decode_observation(&line, now()).unwrap();
        assert_eq!(back, obs);
        assert_eq!(back.security.class, SecurityClass::Wpa2Psk);
    }

    #[test]
    fn missing_bssid_is_a_violation() {
        let mut value = observation_to_value(&sample());
        value.as_object_mut().unwrap().remove("bssid");
        let err = decode_value(&value, Some(now())).unwrap_err();
        assert_eq!(err.field, "bssid");
    }

    #[test]
    fn positive_rssi_is_a_violation() {
        let mut value = observation_to_value(&sample());
        value["rssi_dbm"] = 10.into();
        assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, "rssi_dbm");
        value["rssi_dbm"] = (-121).into();
        assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, "rssi_dbm");
    }

    #[test]
    fn strict_schema_rejects_unknown_fields() {
        let mut value = observation_to_value(&sample());
        value["vendor"] = "Cisco".into();
        assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, "vendor");
    }

    #[test]
    fn future_timestamps_are_bounded() {
        let mut value = observation_to_value(&sample());
        value["observed_at"] = "2026-03-02T12:00:00Z".into();
        assert!(decode_value(&value, Some(now())).is_ok());
        value["observed_at"] = "2026-03-02T12:00:01Z".into();
        assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, "observed_at");
        assert!(decode_value(&value, None).is_ok());
    }

    #[test]
    fn offsets_are_normalized_to_utc() {
        let mut value = observation_to_value(&sample());
        value["observed_at"] = "2026-03-01T05:00:00.750-05:00".into();
        let obs = decode_value(&value, Some(now())).unwrap();
        assert_eq!(format_timestamp(&obs.observed_at), "2026-03-01T10:00:00Z");
    }

    #[test]
    fn location_fields_must_pair() {
        let mut value = observation_to_value(&sample());
        value.as_object_mut().unwrap().remove("lon");
        assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, "lon");
        value.as_object_mut().unwrap().remove("lat");
        assert_eq!(
            decode_value(&value, Some(now())).unwrap_err().field,
            "accuracy_m"
        );
        value.as_object_mut().unwrap().remove("accuracy_m");
        assert_eq!(decode_value(&value, Some(now())).unwrap().location, None);
    }

    #[test]
    fn type_errors_name_the_field() {
        for (field, bad) in [
            ("channel", Value::from(-1)),
            ("frequency_mhz", Value::from("2437")),
            ("ssid_b64", Value::from("@@@")),
            ("ssid_b64", Value::from(B64.encode([b'x'; 33]))),
            ("scanner_id", Value::from(7)),
            ("lat", Value::from(91.0)),
            ("observed_at", Value::from("yesterday")),
        ] {
            let mut value = observation_to_value(&sample());
            value[field] = bad;
            assert_eq!(decode_value(&value, Some(now())).unwrap_err().field, field);
        }
        assert_eq!(
            decode_observation("[1,2]", now()).unwrap_err().field,
            "<record>"
        );
    }

    prop_compose! {
        pub(crate) fn arb_observation()(
            first in (0u8..=255).prop_map(|b| b & 0xfe),
            rest in proptest::array::uniform5(any::<u8>()),
            ssid in proptest::collection::vec(any::<u8>(), 0..=32),
            caps in prop::sample::select(vec![
                "[ESS]", "[WEP][ESS]", "[WPA2-PSK-CCMP][WPS][ESS]", "", "[OWE]",
                "[WPA3-SAE-CCMP]", "weird \"quoted\" \\ text",
            ]),
            channel in 0u32..200,
            freq in 0u32..7000,
            rssi in -120i32..=0,
            secs in 1_500_000_000i64..1_800_000_000,
            scanner in "[a-zA-Z0-9 _-]{0,12}",
            loc in proptest::option::of((-90.0f64..=90.0, -180.0f64..=180.0, proptest::option::of(0.0f64..5000.0))),
        ) -> AccessPointObservation {
            let mut octets = [first, 0, 0, 0, 0, 0];
            octets[1..].copy_from_slice(&rest);
            AccessPointObservation::new(
                Bssid::from_octets(octets).unwrap(),
                Ssid::new(ssid).unwrap(),
                caps,
                channel,
                freq,
                rssi,
                Utc.timestamp_opt(secs, 0).unwrap(),
                scanner,
                loc.map(|(lat, lon, accuracy_m)| Location { lat, lon, accuracy_m }),
            )
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_round_trip(obs in arb_observation()) {
            let line = encode_observation(&obs);
            prop_assert!(!line.contains('\n'));
            let back = decode_observation(&line, Utc.timestamp_opt(1_900_000_000, 0).unwrap()).unwrap();
            prop_assert_eq!(back, obs);
        }
    }
}
