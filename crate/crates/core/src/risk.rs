//! Rules that turn observations and their context into flags.
//!
//! Every rule is a pure function of its inputs. No rule reads signal strength.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::canonical::format_timestamp;
use crate::history::{ApHistory, Deviation, DeviationKind};
use crate::ingest::ScanBatch;
use crate::model::{
    sort_flags, AccessPointObservation, Bssid, Flag, FlagLevel, RuleCode, SecurityClass, Ssid,
};
use crate::oui::{DenyList, OuiRegistry};
use crate::probe::{probe_flags, ProbeResult};
use crate::wigle::{WigleOutcome, WigleStatus};

/// Prior records a BSSID needs under an SSID before it counts as the
/// established network for that SSID.
pub const MIN_ESTABLISHED: usize = 3;

/// Everything the rules may look at.
#[derive(Debug, Clone, Copy)]
pub struct RuleContext<'a> {
    pub batch: &'a ScanBatch,
    /// Without a registry the unknown-vendor rule is skipped.
    pub registry: Option<&'a OuiRegistry>,
    pub histories: &'a BTreeMap<Bssid, ApHistory>,
    pub wigle: &'a BTreeMap<Bssid, WigleOutcome>,
    pub probes: &'a BTreeMap<Bssid, ProbeResult>,
    pub deny_list: &'a DenyList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApFlagSet {
    pub bssid: Bssid,
    pub flags: Vec<Flag>,
}

/// Level and code of the protocol flag for a security class.
pub fn protocol_rule(class: SecurityClass) -> (FlagLevel, RuleCode) {
    use FlagLevel::*;
    match class {
        SecurityClass::Wep => (CriticalNegative, RuleCode::SecWep),
        SecurityClass::Open => (Negative, RuleCode::SecOpen),
        SecurityClass::WpaTkip => (Negative, RuleCode::SecWpaTkip),
        SecurityClass::Wpa2Psk => (PotentialNegative, RuleCode::SecWpa2Psk),
        SecurityClass::Wpa2Enterprise => (PotentialNegative, RuleCode::SecWpa2Enterprise),
        SecurityClass::Wpa3Sae => (PotentialNegative, RuleCode::SecWpa3Sae),
        SecurityClass::Wpa3Enterprise => (Undetermined, RuleCode::SecWpa3Enterprise),
        SecurityClass::Owe => (Undetermined, RuleCode::SecOwe),
        SecurityClass::Unknown => (Undetermined, RuleCode::SecUnknown),
    }
}

fn protocol_message(class: SecurityClass) -> &'static str {
    match class {
        SecurityClass::Wep => "WEP is retired and trivially broken",
        SecurityClass::Open => "open network: traffic is unencrypted",
        SecurityClass::WpaTkip => "WPA/TKIP is deprecated",
        SecurityClass::Wpa2Psk => "WPA2 pre-shared key can be brute-forced offline",
        SecurityClass::Wpa2Enterprise => "WPA2-Enterprise with non-TLS EAP methods has known weaknesses",
        SecurityClass::Wpa3Sae => "WPA3-SAE handshake has published vulnerabilities",
        SecurityClass::Wpa3Enterprise => "WPA3-Enterprise has no known documented issues",
        SecurityClass::Owe => "OWE encryption has no known documented issues",
        SecurityClass::Unknown => "security mode could not be determined",
    }
}

pub fn protocol_flags(obs: &AccessPointObservation) -> Vec<Flag> {
    let class = obs.security.class;
    let (level, code) = protocol_rule(class);
    let mut flags = vec![Flag::new(
        level,
        code,
        protocol_message(class),
        [("security", class.as_str()), ("capabilities", obs.capabilities.as_str())],
    )];
    if obs.security.wps_advertised {
        flags.push(Flag::new(
            FlagLevel::Negative,
            RuleCode::SecWps,
            "WPS is advertised and its PIN can be brute-forced",
            [("capabilities", obs.capabilities.as_str())],
        ));
    }
    sort_flags(&mut flags);
    flags
}

pub fn identity_flags(
    obs: &AccessPointObservation,
    registry: Option<&OuiRegistry>,
    deny_list: &DenyList,
) -> Vec<Flag> {
    let mut flags = Vec::new();
    let first_octet = format!("{:02x}", obs.bssid.octets()[0]);
    if let Some(prefix) = deny_list.matching(&obs.bssid) {
        flags.push(Flag::new(
            FlagLevel::CriticalNegative,
            RuleCode::IdDenylistedOui,
            "hardware prefix is on the deny list",
            [("prefix", prefix.to_string())],
        ));
    }
    if obs.bssid.is_locally_administered() {
        flags.push(Flag::new(
            FlagLevel::PotentialNegative,
            RuleCode::IdRandomMac,
            "locally administered (randomized) MAC address",
            [("first_octet", first_octet)],
        ));
    } else if let Some(registry) = registry {
        if !registry.lookup(&obs.bssid).matched {
            let o = obs.bssid.octets();
            flags.push(Flag::new(
                FlagLevel::PotentialNegative,
                RuleCode::IdUnknownVendor,
                "OUI is not in the vendor registry",
                [("oui", format!("{:02x}:{:02x}:{:02x}", o[0], o[1], o[2]))],
            ));
        }
    }
    sort_flags(&mut flags);
    flags
}

fn records_with_ssid(history: &ApHistory, ssid: &Ssid) -> usize {
    history.records.iter().filter(|r| &r.ssid == ssid).count()
}

pub fn twin_flags(
    batch: &ScanBatch,
    histories: &BTreeMap<Bssid, ApHistory>,
) -> BTreeMap<Bssid, Vec<Flag>> {
    let mut groups: BTreeMap<&Ssid, Vec<&AccessPointObservation>> = BTreeMap::new();
    for obs in batch.observations.iter().filter(|o| !o.ssid.is_hidden()) {
        groups.entry(&obs.ssid).or_default().push(obs);
    }

    let mut out: BTreeMap<Bssid, Vec<Flag>> = BTreeMap::new();
    for (ssid, members) in groups {
        let ssid_text = ssid.display();
        let member_list = members
            .iter()
            .map(|o| o.bssid.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let classes: BTreeSet<&str> = members.iter().map(|o| o.security.class.as_str()).collect();

        let established: Vec<(&Bssid, SecurityClass)> = histories
            .values()
            .filter(|h| records_with_ssid(h, ssid) >= MIN_ESTABLISHED)
            .filter_map(|h| {
                h.records
                    .iter()
                    .rev()
                    .find(|r| &r.ssid == ssid)
                    .map(|r| (&h.bssid, r.security))
            })
            .collect();

        for obs in &members {
            let mut flags = Vec::new();
            if members.len() >= 2 && classes.len() > 1 {
                flags.push(Flag::new(
                    FlagLevel::Negative,
                    RuleCode::TwinSecurityMismatch,
                    "APs sharing this SSID advertise different security",
                    [
                        ("ssid", ssid_text.clone()),
                        ("bssids", member_list.clone()),
                        ("security", classes.iter().copied().collect::<Vec<_>>().join(",")),
                    ],
                ));
            }

            let unseen = histories
                .get(&obs.bssid)
                .is_none_or(|h| records_with_ssid(h, ssid) == 0);
            let own_level = protocol_rule(obs.security.class).0;
            let incumbent = established
                .iter()
                .filter(|(b, _)| **b != obs.bssid)
                .find(|(_, class)| own_level > protocol_rule(*class).0);
            if let (true, Some((incumbent, class))) = (unseen, incumbent) {
                flags.push(Flag::new(
                    FlagLevel::CriticalNegative,
                    RuleCode::TwinNewWeaker,
                    "new AP uses weaker security than the established network with this SSID",
                    [
                        ("ssid", ssid_text.clone()),
                        ("established_bssid", incumbent.to_string()),
                        ("established_security", class.as_str().to_string()),
                        ("security", obs.security.class.as_str().to_string()),
                    ],
                ));
            }

            if flags.is_empty() && members.len() >= 2 {
                flags.push(Flag::new(
                    FlagLevel::PotentialNegative,
                    RuleCode::TwinSsidCollision,
                    "several APs broadcast this SSID",
                    [("ssid", ssid_text.clone()), ("bssids", member_list.clone())],
                ));
            }
            if !flags.is_empty() {
                sort_flags(&mut flags);
                out.insert(obs.bssid, flags);
            }
        }
    }
    out
}

pub fn deviation_flags(deviations: &[Deviation]) -> Vec<Flag> {
    let mut flags: Vec<Flag> = deviations
        .iter()
        .map(|d| {
            let (level, code, message) = match d.kind {
                DeviationKind::SecurityChanged => (
                    FlagLevel::Negative,
                    RuleCode::HistSecurityChanged,
                    "security differs from earlier sightings",
                ),
                DeviationKind::SsidChanged => (
                    FlagLevel::Negative,
                    RuleCode::HistSsidChanged,
                    "SSID differs from earlier sightings",
                ),
                DeviationKind::ChannelChanged => (
                    FlagLevel::PotentialNegative,
                    RuleCode::HistChannelChanged,
                    "channel differs from earlier sightings",
                ),
            };
            Flag::new(
                level,
                code,
                message,
                [
                    ("before", d.before.clone()),
                    ("after", d.after.clone()),
                    ("first_seen_before", format_timestamp(&d.first_seen_before)),
                    ("seen_after", format_timestamp(&d.seen_after)),
                ],
            )
        })
        .collect();
    sort_flags(&mut flags);
    flags
}

pub fn wigle_flags(outcome: &WigleOutcome) -> Vec<Flag> {
    let finding = match outcome {
        Ok(finding) => finding,
        Err(e) => {
            return vec![Flag::new(
                FlagLevel::Undetermined,
                RuleCode::WigleUnavailable,
                "WIGLE lookup failed",
                [("error", e.code())],
            )]
        }
    };
    let mut evidence = vec![("status", finding.status.as_str().to_string())];
    if let Some(detail) = &finding.detail {
        evidence.push(("wigle_ssid", detail.ssid.clone()));
        evidence.push(("wigle_encryption", detail.encryption.clone()));
    }
    if let Some(d) = finding.distance_km {
        evidence.push(("distance_km", format!("{d:.3}")));
    }
    let (level, code, message) = match finding.status {
        WigleStatus::Consistent => return Vec::new(),
        WigleStatus::UnknownToWigle => (
            FlagLevel::PotentialNegative,
            RuleCode::WigleUnknown,
            "BSSID is not known to WIGLE",
        ),
        WigleStatus::SsidMismatch | WigleStatus::SecurityMismatch => (
            FlagLevel::Negative,
            RuleCode::WigleChanged,
            "WIGLE recorded a different SSID or security",
        ),
        WigleStatus::LocationMismatch => (
            FlagLevel::Negative,
            RuleCode::WigleLocation,
            "WIGLE places this BSSID more than 1 km away",
        ),
    };
    vec![Flag::new(level, code, message, evidence)]
}

/// Keep one flag per code (the highest level), sorted.
pub fn merge_flags(flags: impl IntoIterator<Item = Flag>) -> Vec<Flag> {
    let mut by_code: BTreeMap<&'static str, Flag> = BTreeMap::new();
    for flag in flags {
        match by_code.get(flag.code.as_str()) {
            Some(existing) if existing.level >= flag.level => {}
            _ => {
                by_code.insert(flag.code.as_str(), flag);
            }
        }
    }
    let mut merged: Vec<Flag> = by_code.into_values().collect();
    sort_flags(&mut merged);
    merged
}

pub fn assess(ctx: &RuleContext<'_>) -> BTreeMap<Bssid, ApFlagSet> {
    let mut twins = twin_flags(ctx.batch, ctx.histories);
    ctx.batch
        .observations
        .iter()
        .map(|obs| {
            let mut all = protocol_flags(obs);
            all.extend(identity_flags(obs, ctx.registry, ctx.deny_list));
            all.extend(twins.remove(&obs.bssid).unwrap_or_default());
            if let Some(history) = ctx.histories.get(&obs.bssid) {
                all.extend(deviation_flags(&crate::history::detect_deviations(history, obs)));
            }
            if let Some(outcome) = ctx.wigle.get(&obs.bssid) {
                all.extend(wigle_flags(outcome));
            }
            if let Some(result) = ctx.probes.get(&obs.bssid) {
                all.extend(probe_flags(result));
            }
            (
                obs.bssid,
                ApFlagSet {
                    bssid: obs.bssid,
                    flags: merge_flags(all),
                },
            )
        })
        .collect()
}
