//! Scan export parsing and batch normalization.

use std::collections::HashMap;
use std::io::{self, BufRead};

use chrono::{DateTime, NaiveDateTime, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{decode_observation, encode_observation, SchemaViolation};
use crate::model::{parse_bssid, AccessPointObservation, Ssid, RSSI_MAX_DBM, RSSI_MIN_DBM};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    SchemaViolation(#[from] SchemaViolation),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

/// Strict parsing aborts on the first bad record; lenient parsing skips and
/// counts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub observations: Vec<AccessPointObservation>,
    /// Records rejected in lenient mode, with their line numbers.
    pub skipped: Vec<SchemaViolation>,
}

/// A set of observations ingested together.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanBatch {
    pub scan_id: String,
    pub observations: Vec<AccessPointObservation>,
    pub ingested_at: DateTime<Utc>,
}

impl ScanBatch {
    /// Builds a normalized batch whose id is derived from its content, so
    /// the same observations always produce the same `scan_id`.
    pub fn from_observations(
        observations: Vec<AccessPointObservation>,
        ingested_at: DateTime<Utc>,
    ) -> Self {
        let batch = normalize(ScanBatch {
            scan_id: String::new(),
            observations,
            ingested_at,
        });
        let mut hasher = Sha256::new();
        for obs in &batch.observations {
            hasher.update(encode_observation(obs).as_bytes());
            hasher.update(b"\n");
        }
        let digest = hex::encode(hasher.finalize());
        ScanBatch {
            scan_id: format!("scan-{}", &digest[..16]),
            ..batch
        }
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    /// The canonical text form, one line per observation.
    pub fn to_canonical_lines(&self) -> String {
        let mut out = String::new();
        for obs in &self.observations {
            out.push_str(&encode_observation(obs));
            out.push('\n');
        }
        out
    }
}

fn split_lines<R: BufRead>(mut reader: R) -> impl Iterator<Item = io::Result<(usize, Vec<u8>)>> {
    let mut lineno = 0usize;
    std::iter::from_fn(move || {
        let mut buf = Vec::new();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                lineno += 1;
                while matches!(buf.last(), Some(b'\n' | b'\r')) {
                    buf.pop();
                }
                Some(Ok((lineno, buf)))
            }
            Err(e) => Some(Err(e)),
        }
    })
}

/// Parse the canonical line format. Blank lines are ignored.
pub fn parse_canonical<R: BufRead>(
    reader: R,
    mode: ParseMode,
    now: DateTime<Utc>,
) -> Result<ParseOutcome, IngestError> {
    let mut outcome = ParseOutcome::default();
    for item in split_lines(reader) {
        let (lineno, bytes) = item?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let result = std::str::from_utf8(&bytes)
            .map_err(|_| SchemaViolation::new("<record>", "line is not valid UTF-8"))
            .and_then(|line| decode_observation(line, now));
        match result {
            Ok(obs) => outcome.observations.push(obs),
            Err(e) => {
                let e = e.at_line(lineno);
                match mode {
                    ParseMode::Strict => return Err(e.into()),
                    ParseMode::Lenient => outcome.skipped.push(e),
                }
            }
        }
    }
    Ok(outcome)
}

const AP_HEADER_PREFIX: &str = "BSSID, First time seen";
const STATION_HEADER_PREFIX: &str = "Station MAC";

/// Parse the access-point section of an airodump-ng CSV export. The station
/// section is ignored. Timestamps carry no zone and are read as UTC.
pub fn parse_airodump_csv<R: BufRead>(
    reader: R,
    mode: ParseMode,
    scanner_id: &str,
) -> Result<ParseOutcome, IngestError> {
    let mut outcome = ParseOutcome::default();
    let mut columns: Option<AirodumpColumns> = None;

    for item in split_lines(reader) {
        let (lineno, bytes) = item?;
        let line = String::from_utf8_lossy(&bytes);
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(AP_HEADER_PREFIX) {
            columns = Some(AirodumpColumns::from_header(line)?);
            continue;
        }
        if line.starts_with(STATION_HEADER_PREFIX) {
            break;
        }
        let Some(cols) = &columns else {
            continue;
        };
        match cols.parse_row(line, scanner_id) {
            Ok(obs) => outcome.observations.push(obs),
            Err(e) => {
                let e = e.at_line(lineno);
                match mode {
                    ParseMode::Strict => return Err(e.into()),
                    ParseMode::Lenient => outcome.skipped.push(e),
                }
            }
        }
    }

    if columns.is_none() {
        return Err(IngestError::MalformedHeader(format!(
            "no access point section (expected a line beginning {AP_HEADER_PREFIX:?})"
        )));
    }
    Ok(outcome)
}

struct AirodumpColumns {
    count: usize,
    bssid: usize,
    last_seen: usize,
    channel: usize,
    privacy: usize,
    cipher: usize,
    auth: usize,
    power: usize,
    essid: usize,
}

impl AirodumpColumns {
    fn from_header(line: &str) -> Result<Self, IngestError> {
        let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        let find = |name: &str| {
            names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name))
                .ok_or_else(|| IngestError::MalformedHeader(format!("missing column {name:?}")))
        };
        let cols = AirodumpColumns {
            count: names.len(),
            bssid: find("BSSID")?,
            last_seen: find("Last time seen")?,
            channel: find("channel")?,
            privacy: find("Privacy")?,
            cipher: find("Cipher")?,
            auth: find("Authentication")?,
            power: find("Power")?,
            essid: find("ESSID")?,
        };
        let before_essid = [
            cols.bssid,
            cols.last_seen,
            cols.channel,
            cols.privacy,
            cols.cipher,
            cols.auth,
            cols.power,
        ];
        if before_essid.iter().any(|&i| i > cols.essid) {
            return Err(IngestError::MalformedHeader(
                "ESSID must follow the fixed columns".into(),
            ));
        }
        Ok(cols)
    }

    /// ESSIDs are written unquoted and may contain commas, so the fields
    /// after ESSID are counted from the end of the row.
    fn parse_row(&self, line: &str, scanner_id: &str) -> Result<AccessPointObservation, SchemaViolation> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < self.count {
            return Err(SchemaViolation::new(
                "<row>",
                format!("expected {} columns, found {}", self.count, parts.len()),
            ));
        }
        let trailing = self.count - self.essid - 1;
        let essid_end = parts.len() - trailing;
        let field = |i: usize| parts[i].trim();

        let bssid = parse_bssid(field(self.bssid))
            .map_err(|e| SchemaViolation::new("BSSID", e.to_string()))?;
        let essid = parts[self.essid..essid_end].join(",");
        let ssid = Ssid::new(essid.trim().as_bytes().to_vec())
            .map_err(|e| SchemaViolation::new("ESSID", e.to_string()))?;

        let channel: i64 = field(self.channel)
            .parse()
            .map_err(|_| SchemaViolation::new("channel", "not an integer"))?;
        let channel = u32::try_from(channel.max(0))
            .map_err(|_| SchemaViolation::new("channel", "out of range"))?;

        let power: i32 = field(self.power)
            .parse()
            .map_err(|_| SchemaViolation::new("Power", "not an integer"))?;
        if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&power) {
            return Err(SchemaViolation::new("Power", "outside [-120, 0]"));
        }

        let observed_at = NaiveDateTime::parse_from_str(field(self.last_seen), "%Y-%m-%d %H:%M:%S")
            .map_err(|_| SchemaViolation::new("Last time seen", "expected YYYY-MM-DD HH:MM:SS"))?
            .and_utc();

        let capabilities =
            airodump_capabilities(field(self.privacy), field(self.cipher), field(self.auth));

        Ok(AccessPointObservation::new(
            bssid,
            ssid,
            capabilities,
            channel,
            channel_to_frequency(channel),
            power,
            observed_at,
            scanner_id,
            None,
        ))
    }
}

/// Join airodump's Privacy/Cipher/Authentication columns into bracket
/// tokens: `[<Privacy>-<Auth>-<Cipher>]` per privacy value, `OPN` as
/// `[ESS]`, `WEP` as `[WEP]`. Multi-valued auth/cipher columns are joined
/// with `+`; airodump's `MGT` auth is spelled `EAP`.
pub fn airodump_capabilities(privacy: &str, cipher: &str, auth: &str) -> String {
    let join = |col: &str| {
        col.split_whitespace()
            .map(|v| if v.eq_ignore_ascii_case("MGT") { "EAP" } else { v })
            .collect::<Vec<_>>()
            .join("+")
    };
    let auth = join(auth);
    let cipher = join(cipher);

    let mut out = String::new();
    for value in privacy.split_whitespace() {
        let token = if value.eq_ignore_ascii_case("OPN") {
            "ESS".to_string()
        } else if value.eq_ignore_ascii_case("WEP") {
            "WEP".to_string()
        } else {
            [value, auth.as_str(), cipher.as_str()]
                .iter()
                .filter(|s| !s.is_empty())
                .copied()
                .collect::<Vec<_>>()
                .join("-")
        };
        if !out.contains(&format!("[{token}]")) {
            out.push('[');
            out.push_str(&token);
            out.push(']');
        }
    }
    out
}

/// Centre frequency for 2.4 GHz and 5 GHz channel numbers; 0 otherwise.
pub fn channel_to_frequency(channel: u32) -> u32 {
    match channel {
        1..=13 => 2407 + 5 * channel,
        14 => 2484,
        32..=177 => 5000 + 5 * channel,
        _ => 0,
    }
}

/// Collapse duplicate BSSIDs, keeping the strongest signal (ties: latest
/// `observed_at`, then first in input), and sort by BSSID.
pub fn normalize(batch: ScanBatch) -> ScanBatch {
    let ScanBatch {
        scan_id,
        observations,
        ingested_at,
    } = batch;

    let mut best: HashMap<_, AccessPointObservation> = HashMap::new();
    for obs in observations {
        match best.get(&obs.bssid) {
            Some(kept)
                if (kept.rssi_dbm, kept.observed_at) >= (obs.rssi_dbm, obs.observed_at) => {}
            _ => {
                best.insert(obs.bssid, obs);
            }
        }
    }
    let mut observations: Vec<_> = best.into_values().collect();
    observations.sort_by_key(|o| o.bssid);
    ScanBatch {
        scan_id,
        observations,
        ingested_at,
    }
}
