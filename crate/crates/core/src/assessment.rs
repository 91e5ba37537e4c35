//! Full assessment of one scan: rules, community signal and verdict per AP,
//! rendered as the JSON document shared by the CLI and the service.

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::canonical::format_timestamp;
use crate::history::{ApHistory, HistoryStore};
use crate::ingest::ScanBatch;
use crate::model::{AccessPointObservation, Bssid, Flag};
use crate::oui::{DenyList, OuiRegistry, VendorMatch};
use crate::probe::ProbeResult;
use crate::recommender::{
    community_signal, recommend, CommunitySignal, FeedbackReport, RiskPosture, ScoringConfig, Verdict,
};
use crate::risk::{assess, RuleContext};
use crate::wigle::{compare, WigleClient, WigleOutcome};

pub struct AssessmentInputs<'a> {
    pub batch: &'a ScanBatch,
    pub history: &'a HistoryStore,
    pub registry: Option<&'a OuiRegistry>,
    pub deny_list: &'a DenyList,
    pub wigle: Option<&'a WigleClient>,
    pub probes: &'a BTreeMap<Bssid, ProbeResult>,
    pub feedback: &'a [FeedbackReport],
    pub posture: RiskPosture,
    pub scoring: &'a ScoringConfig,
    pub now: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationView {
    pub bssid: Bssid,
    pub ssid: String,
    pub ssid_b64: String,
    pub capabilities: String,
    pub security: &'static str,
    pub wps: bool,
    pub vendor: Option<VendorMatch>,
    pub channel: u32,
    pub frequency_mhz: u32,
    pub rssi_dbm: i32,
    pub observed_at: String,
    pub scanner_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_m: Option<f64>,
}

impl ObservationView {
    pub fn new(obs: &AccessPointObservation, registry: Option<&OuiRegistry>) -> Self {
        ObservationView {
            bssid: obs.bssid,
            ssid: obs.ssid.display(),
            ssid_b64: B64.encode(obs.ssid.as_bytes()),
            capabilities: obs.capabilities.clone(),
            security: obs.security.class.as_str(),
            wps: obs.security.wps_advertised,
            vendor: registry.map(|r| r.lookup(&obs.bssid)),
            channel: obs.channel,
            frequency_mhz: obs.frequency_mhz,
            rssi_dbm: obs.rssi_dbm,
            observed_at: format_timestamp(&obs.observed_at),
            scanner_id: obs.scanner_id.clone(),
            lat: obs.location.map(|l| l.lat),
            lon: obs.location.map(|l| l.lon),
            accuracy_m: obs.location.and_then(|l| l.accuracy_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssessmentItem {
    pub observation: ObservationView,
    pub flags: Vec<Flag>,
    pub community: CommunitySignal,
    pub verdict: Verdict,
}

/// Histories strictly older than the batch, for every BSSID in the batch
/// and every BSSID ever seen with one of the batch's SSIDs. Records from the
/// batch itself are excluded whether or not it has been stored.
pub fn prior_histories(batch: &ScanBatch, store: &HistoryStore) -> BTreeMap<Bssid, ApHistory> {
    let Some(cutoff) = batch.observations.iter().map(|o| o.observed_at).min() else {
        return BTreeMap::new();
    };
    let mut bssids: BTreeSet<Bssid> = batch.observations.iter().map(|o| o.bssid).collect();
    for obs in batch.observations.iter().filter(|o| !o.ssid.is_hidden()) {
        bssids.extend(store.bssids_for_ssid(&obs.ssid).copied());
    }
    bssids
        .into_iter()
        .map(|b| (b, store.full_history(&b).before(cutoff)))
        .filter(|(_, h)| !h.records.is_empty())
        .collect()
}

pub fn assess_scan(inputs: &AssessmentInputs<'_>) -> Vec<AssessmentItem> {
    let histories = prior_histories(inputs.batch, inputs.history);
    let wigle: BTreeMap<Bssid, WigleOutcome> = match inputs.wigle {
        Some(client) => inputs
            .batch
            .observations
            .iter()
            .map(|obs| {
                let outcome = client
                    .lookup(&obs.bssid, inputs.now)
                    .map(|detail| compare(detail.as_ref(), obs));
                (obs.bssid, outcome)
            })
            .collect(),
        None => BTreeMap::new(),
    };
    let flag_sets = assess(&RuleContext {
        batch: inputs.batch,
        registry: inputs.registry,
        histories: &histories,
        wigle: &wigle,
        probes: inputs.probes,
        deny_list: inputs.deny_list,
    });

    let mut items: Vec<AssessmentItem> = inputs
        .batch
        .observations
        .iter()
        .map(|obs| {
            let flags = flag_sets
                .get(&obs.bssid)
                .map(|s| s.flags.clone())
                .unwrap_or_default();
            let reports: Vec<FeedbackReport> = inputs
                .feedback
                .iter()
                .filter(|r| r.bssid == obs.bssid && r.observed_at <= inputs.now)
                .cloned()
                .collect();
            let community = community_signal(&reports, inputs.now, inputs.scoring)
                .expect("future reports were filtered out");
            let verdict = recommend(&flags, &community, inputs.posture, inputs.scoring);
            AssessmentItem {
                observation: ObservationView::new(obs, inputs.registry),
                flags,
                community,
                verdict,
            }
        })
        .collect();

    items.sort_by(|a, b| {
        b.verdict
            .decision
            .cmp(&a.verdict.decision)
            .then(b.verdict.score.total_cmp(&a.verdict.score))
            .then(a.observation.bssid.cmp(&b.observation.bssid))
    });
    items
}

/// The assessment document: pretty-printed JSON with a trailing newline.
pub fn render_assessment(items: &[AssessmentItem]) -> String {
    let mut text = serde_json::to_string_pretty(items).expect("assessment serializes");
    text.push('\n');
    text
}
