//! The on-disk database: a directory of append-only JSON-lines files.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::history::HistoryStore;
use crate::ingest::ScanBatch;
use crate::journal::{Journal, StoreError};
use crate::model::{AccessPointObservation, Bssid};
use crate::oui::{load_registry, DenyList, OuiError, OuiRegistry};
use crate::probe::ProbeResult;
use crate::recommender::FeedbackReport;

pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const SCANS_FILE: &str = "scans.jsonl";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const PROBES_FILE: &str = "probes.jsonl";
pub const WIGLE_CACHE_FILE: &str = "wigle-cache.jsonl";
pub const MANUF_FILE: &str = "manuf";
pub const DENY_LIST_FILE: &str = "deny-list";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub ingested_at: DateTime<Utc>,
    pub observations: Vec<AccessPointObservation>,
}

#[derive(Debug)]
pub struct Database {
    dir: PathBuf,
    history: HistoryStore,
    scans: Journal<ScanRecord>,
    feedback: Journal<FeedbackReport>,
    probes: Journal<ProbeResult>,
}

impl Database {
    /// Open (creating if needed) the database directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        Ok(Database {
            history: HistoryStore::open(dir.join(OBSERVATIONS_FILE))?,
            scans: Journal::open(dir.join(SCANS_FILE))?,
            feedback: Journal::open(dir.join(FEEDBACK_FILE))?,
            probes: Journal::open(dir.join(PROBES_FILE))?,
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    /// Append a normalized batch. Returns the number of newly stored
    /// observations; re-ingesting the same batch changes nothing on disk.
    pub fn ingest(&mut self, batch: &ScanBatch) -> Result<usize, StoreError> {
        let appended = self.history.append(batch)?;
        if self.scan(&batch.scan_id).is_none() {
            self.scans.append(vec![ScanRecord {
                scan_id: batch.scan_id.clone(),
                ingested_at: batch.ingested_at,
                observations: batch.observations.clone(),
            }])?;
        }
        Ok(appended)
    }

    pub fn scan(&self, scan_id: &str) -> Option<ScanBatch> {
        self.scans
            .entries()
            .iter()
            .find(|r| r.scan_id == scan_id)
            .map(|r| ScanBatch {
                scan_id: r.scan_id.clone(),
                observations: r.observations.clone(),
                ingested_at: r.ingested_at,
            })
    }

    pub fn add_feedback(&mut self, report: FeedbackReport) -> Result<(), StoreError> {
        self.feedback.append(vec![report])
    }

    pub fn feedback(&self) -> &[FeedbackReport] {
        self.feedback.entries()
    }

    pub fn record_probe(&mut self, result: ProbeResult) -> Result<(), StoreError> {
        self.probes.append(vec![result])
    }

    /// The most recently recorded probe result per BSSID.
    pub fn latest_probes(&self) -> BTreeMap<Bssid, ProbeResult> {
        self.probes
            .entries()
            .iter()
            .map(|r| (r.bssid, r.clone()))
            .collect()
    }

    pub fn manuf_path(&self) -> PathBuf {
        self.dir.join(MANUF_FILE)
    }

    pub fn deny_list_path(&self) -> PathBuf {
        self.dir.join(DENY_LIST_FILE)
    }

    pub fn wigle_cache_path(&self) -> PathBuf {
        self.dir.join(WIGLE_CACHE_FILE)
    }
}

/// Load a manuf file; the source version is a digest of its bytes.
pub fn load_registry_file(path: &Path, loaded_at: DateTime<Utc>) -> Result<OuiRegistry, OuiError> {
    let bytes = fs::read(path)?;
    let version = format!("sha256:{}", &hex::encode(Sha256::digest(&bytes))[..16]);
    load_registry(BufReader::new(bytes.as_slice()), true, version, loaded_at)
}

pub fn load_deny_list_file(path: &Path) -> Result<DenyList, OuiError> {
    DenyList::parse(BufReader::new(fs::File::open(path)?))
}
