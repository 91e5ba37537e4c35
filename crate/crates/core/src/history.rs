//! Per-AP observation history and characteristic-change detection.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::canonical::{decode_observation, encode_observation, format_timestamp};
use crate::ingest::ScanBatch;
use crate::journal::{append_lines, read_complete_lines, StoreError};
use crate::model::{AccessPointObservation, Bssid, Location, SecurityClass, Ssid};

/// One stored sighting of a known BSSID.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub observed_at: DateTime<Utc>,
    pub ssid: Ssid,
    pub capabilities: String,
    pub security: SecurityClass,
    pub wps_advertised: bool,
    pub channel: u32,
    pub frequency_mhz: u32,
    pub rssi_dbm: i32,
    pub scanner_id: String,
    pub location: Option<Location>,
}

impl From<&AccessPointObservation> for HistoryRecord {
    fn from(obs: &AccessPointObservation) -> Self {
        HistoryRecord {
            observed_at: obs.observed_at,
            ssid: obs.ssid.clone(),
            capabilities: obs.capabilities.clone(),
            security: obs.security.class,
            wps_advertised: obs.security.wps_advertised,
            channel: obs.channel,
            frequency_mhz: obs.frequency_mhz,
            rssi_dbm: obs.rssi_dbm,
            scanner_id: obs.scanner_id.clone(),
            location: obs.location,
        }
    }
}

/// Time-ordered (ascending) records for one BSSID.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApHistory {
    pub bssid: Bssid,
    pub records: Vec<HistoryRecord>,
}

impl ApHistory {
    pub fn empty(bssid: Bssid) -> Self {
        ApHistory {
            bssid,
            records: Vec::new(),
        }
    }

    pub fn latest(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    /// Records strictly older than `cutoff`.
    pub fn before(&self, cutoff: DateTime<Utc>) -> ApHistory {
        ApHistory {
            bssid: self.bssid,
            records: self
                .records
                .iter()
                .take_while(|r| r.observed_at < cutoff)
                .cloned()
                .collect(),
        }
    }
}

/// A page of history, selected newest-first but returned in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryPage {
    pub history: ApHistory,
    pub total: usize,
    pub limit: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeviationKind {
    SecurityChanged,
    SsidChanged,
    ChannelChanged,
}

/// A change in one basic characteristic relative to the latest prior record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deviation {
    pub kind: DeviationKind,
    pub before: String,
    pub after: String,
    /// Start of the most recent unbroken run of `before` in the history.
    pub first_seen_before: DateTime<Utc>,
    pub seen_after: DateTime<Utc>,
}

/// Compare `obs` against the most recent record in `history`. Signal
/// strength and location never count as deviations; an unknown channel
/// (0) on either side is not compared.
pub fn detect_deviations(history: &ApHistory, obs: &AccessPointObservation) -> Vec<Deviation> {
    debug_assert_eq!(history.bssid, obs.bssid);
    let Some(latest) = history.latest() else {
        return Vec::new();
    };

    let run_start = |same: &dyn Fn(&HistoryRecord) -> bool| {
        history
            .records
            .iter()
            .rev()
            .take_while(|r| same(r))
            .last()
            .map_or(latest.observed_at, |r| r.observed_at)
    };

    let mut out = Vec::new();
    if latest.security != obs.security.class {
        out.push(Deviation {
            kind: DeviationKind::SecurityChanged,
            before: latest.security.to_string(),
            after: obs.security.class.to_string(),
            first_seen_before: run_start(&|r| r.security == latest.security),
            seen_after: obs.observed_at,
        });
    }
    if latest.ssid != obs.ssid {
        out.push(Deviation {
            kind: DeviationKind::SsidChanged,
            before: latest.ssid.display(),
            after: obs.ssid.display(),
            first_seen_before: run_start(&|r| r.ssid == latest.ssid),
            seen_after: obs.observed_at,
        });
    }
    if latest.channel != 0 && obs.channel != 0 && latest.channel != obs.channel {
        out.push(Deviation {
            kind: DeviationKind::ChannelChanged,
            before: latest.channel.to_string(),
            after: obs.channel.to_string(),
            first_seen_before: run_start(&|r| r.channel == latest.channel),
            seen_after: obs.observed_at,
        });
    }
    out
}

type DedupeKey = (Bssid, DateTime<Utc>, String);

/// Append-only observation store backed by a file of canonical lines, with
/// an in-memory index rebuilt on open.
#[derive(Debug)]
pub struct HistoryStore {
    path: PathBuf,
    by_bssid: HashMap<Bssid, Vec<AccessPointObservation>>,
    by_ssid: HashMap<Ssid, BTreeSet<Bssid>>,
    keys: HashSet<DedupeKey>,
}

impl HistoryStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut store = HistoryStore {
            path: path.clone(),
            by_bssid: HashMap::new(),
            by_ssid: HashMap::new(),
            keys: HashSet::new(),
        };
        for (idx, line) in read_complete_lines(&path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            let obs = crate::canonical::decode_value(&value, None).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            store.index(obs);
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn index(&mut self, obs: AccessPointObservation) -> bool {
        let key = (obs.bssid, obs.observed_at, obs.scanner_id.clone());
        if !self.keys.insert(key) {
            return false;
        }
        self.by_ssid
            .entry(obs.ssid.clone())
            .or_default()
            .insert(obs.bssid);
        let records = self.by_bssid.entry(obs.bssid).or_default();
        let pos = records.partition_point(|r| {
            (r.observed_at, r.scanner_id.as_str()) < (obs.observed_at, obs.scanner_id.as_str())
        });
        records.insert(pos, obs);
        true
    }

    /// Append the batch, ignoring observations whose
    /// (bssid, observed_at, scanner_id) is already stored. Returns the
    /// number appended.
    pub fn append(&mut self, batch: &ScanBatch) -> Result<usize, StoreError> {
        let mut seen = HashSet::new();
        let fresh: Vec<&AccessPointObservation> = batch
            .observations
            .iter()
            .filter(|o| {
                let key = (o.bssid, o.observed_at, o.scanner_id.clone());
                !self.keys.contains(&key) && seen.insert(key)
            })
            .collect();
        let lines: Vec<String> = fresh.iter().map(|o| encode_observation(o)).collect();
        append_lines(&self.path, &lines)?;
        let appended = fresh.len();
        for obs in fresh.into_iter().cloned().collect::<Vec<_>>() {
            self.index(obs);
        }
        Ok(appended)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn full_history(&self, bssid: &Bssid) -> ApHistory {
        ApHistory {
            bssid: *bssid,
            records: self
                .by_bssid
                .get(bssid)
                .map(|records| records.iter().map(HistoryRecord::from).collect())
                .unwrap_or_default(),
        }
    }

    /// Most-recent-first pagination. Unknown BSSIDs yield an empty page.
    pub fn history(&self, bssid: &Bssid, limit: usize, offset: usize) -> HistoryPage {
        let records = self.by_bssid.get(bssid).map(Vec::as_slice).unwrap_or_default();
        let total = records.len();
        let end = total.saturating_sub(offset);
        let start = end.saturating_sub(limit);
        HistoryPage {
            history: ApHistory {
                bssid: *bssid,
                records: records[start..end].iter().map(HistoryRecord::from).collect(),
            },
            total,
            limit,
            offset,
        }
    }

    /// Every BSSID that has ever been seen advertising `ssid`.
    pub fn bssids_for_ssid(&self, ssid: &Ssid) -> impl Iterator<Item = &Bssid> {
        self.by_ssid.get(ssid).into_iter().flatten()
    }

    /// Most recent stored observation of `bssid`.
    pub fn latest_observation(&self, bssid: &Bssid) -> Option<&AccessPointObservation> {
        self.by_bssid.get(bssid).and_then(|r| r.last())
    }
}

/// Decode stored lines back into observations; used by tests that check
/// the file byte-for-byte.
pub fn parse_store_text(text: &str) -> Vec<AccessPointObservation> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| decode_observation(l, DateTime::<Utc>::MAX_UTC).ok())
        .collect()
}

impl Serialize for HistoryRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use base64::engine::general_purpose::STANDARD as B64;
        use base64::Engine as _;
        use serde::ser::SerializeMap;

        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("observed_at", &format_timestamp(&self.observed_at))?;
        map.serialize_entry("ssid", &self.ssid.display())?;
        map.serialize_entry("ssid_b64", &B64.encode(self.ssid.as_bytes()))?;
        map.serialize_entry("capabilities", &self.capabilities)?;
        map.serialize_entry("security", &self.security)?;
        map.serialize_entry("wps", &self.wps_advertised)?;
        map.serialize_entry("channel", &self.channel)?;
        map.serialize_entry("frequency_mhz", &self.frequency_mhz)?;
        map.serialize_entry("rssi_dbm", &self.rssi_dbm)?;
        map.serialize_entry("scanner_id", &self.scanner_id)?;
        if let Some(loc) = &self.location {
            map.serialize_entry("lat", &loc.lat)?;
            map.serialize_entry("lon", &loc.lon)?;
            if let Some(acc) = loc.accuracy_m {
                map.serialize_entry("accuracy_m", &acc)?;
            }
        }
        map.end()
    }
}
