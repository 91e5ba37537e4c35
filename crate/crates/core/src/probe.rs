//! Post-connection integrity checks: DNS answers against a baseline, TLS
//! leaf SPKI pins, and captive-portal detection.
//!
//! Transports are injected. Every transport outcome, including a panic,
//! becomes a verdict.

use std::collections::{BTreeSet, HashSet};
use std::net::IpAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bssid, Flag, FlagLevel, RuleCode};
use crate::transport::{HttpResponse, TransportError};

pub const DEFAULT_PORTAL_URL: &str = "http://connectivitycheck.gstatic.com/generate_204";

/// Shown before any probe runs.
pub const PROBE_WARNING: &str = "WARNING: probing requires connecting to the access point first. \
Post-connection analysis carries real risk: once connected, your device's traffic can be \
intercepted, hijacked or modified by the network under test.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("invalid baseline document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsBaselineEntry {
    pub domain: String,
    pub expected_addresses: BTreeSet<IpAddr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsBaseline {
    pub entries: Vec<DnsBaselineEntry>,
    pub fetched_at: DateTime<Utc>,
    pub source: String,
}

impl DnsBaseline {
    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        let doc: DnsBaseline =
            serde_json::from_str(text).map_err(|e| BaselineError::Malformed(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.entries.is_empty() {
            return Err(BaselineError::Malformed("no DNS entries".into()));
        }
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if entry.expected_addresses.is_empty() {
                return Err(BaselineError::Malformed(format!(
                    "{}: no expected addresses",
                    entry.domain
                )));
            }
            if !seen.insert(entry.domain.to_ascii_lowercase()) {
                return Err(BaselineError::Malformed(format!("duplicate domain {}", entry.domain)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsPinEntry {
    pub host: String,
    pub port: u16,
    pub spki_sha256_b64: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsPinSet {
    pub entries: Vec<TlsPinEntry>,
    pub fetched_at: DateTime<Utc>,
}

impl TlsPinSet {
    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        let doc: TlsPinSet =
            serde_json::from_str(text).map_err(|e| BaselineError::Malformed(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if entry.spki_sha256_b64.is_empty() {
                return Err(BaselineError::Malformed(format!("{}: no pins", entry.host)));
            }
            for pin in &entry.spki_sha256_b64 {
                match B64.decode(pin) {
                    Ok(bytes) if bytes.len() == 32 => {}
                    _ => {
                        return Err(BaselineError::Malformed(format!(
                            "{}: pin {pin:?} is not base64 of 32 bytes",
                            entry.host
                        )))
                    }
                }
            }
            if !seen.insert((entry.host.to_ascii_lowercase(), entry.port)) {
                return Err(BaselineError::Malformed(format!(
                    "duplicate host {}:{}",
                    entry.host, entry.port
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DnsVerdict {
    Match,
    Partial,
    Mismatch,
    ResolveFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TlsVerdict {
    PinOk,
    PinMismatch,
    ConnectFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PortalVerdict {
    NoPortal,
    PortalDetected,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsCheck {
    pub domain: String,
    pub resolved: BTreeSet<IpAddr>,
    pub verdict: DnsVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsCheck {
    pub host: String,
    pub port: u16,
    pub verdict: TlsVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortalCheck {
    pub verdict: PortalVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeResult {
    pub bssid: Bssid,
    pub started_at: DateTime<Utc>,
    pub dns: Vec<DnsCheck>,
    pub tls: Vec<TlsCheck>,
    pub portal: PortalCheck,
}

impl ProbeResult {
    /// Structural checks for results submitted by clients. With baselines,
    /// every baseline entry must appear exactly once.
    pub fn validate(
        &self,
        dns: Option<&DnsBaseline>,
        tls: Option<&TlsPinSet>,
    ) -> Result<(), String> {
        let mut domains = HashSet::new();
        for check in &self.dns {
            if !domains.insert(check.domain.to_ascii_lowercase()) {
                return Err(format!("domain {} appears more than once", check.domain));
            }
            let failed = check.verdict == DnsVerdict::ResolveFailed;
            if failed != check.resolved.is_empty() {
                return Err(format!(
                    "domain {}: resolved addresses inconsistent with verdict",
                    check.domain
                ));
            }
        }
        let mut hosts = HashSet::new();
        for check in &self.tls {
            if !hosts.insert((check.host.to_ascii_lowercase(), check.port)) {
                return Err(format!("host {}:{} appears more than once", check.host, check.port));
            }
        }
        if let Some(baseline) = dns {
            let expected: HashSet<_> = baseline
                .entries
                .iter()
                .map(|e| e.domain.to_ascii_lowercase())
                .collect();
            if expected != domains {
                return Err("DNS checks do not match the DNS baseline entries".into());
            }
        }
        if let Some(pins) = tls {
            let expected: HashSet<_> = pins
                .entries
                .iter()
                .map(|e| (e.host.to_ascii_lowercase(), e.port))
                .collect();
            if expected != hosts {
                return Err("TLS checks do not match the pin set entries".into());
            }
        }
        Ok(())
    }
}

pub trait Resolver {
    fn resolve(&self, domain: &str) -> Result<Vec<IpAddr>, TransportError>;
}

/// Yields the SHA-256 digest of the leaf certificate's SubjectPublicKeyInfo.
pub trait SpkiConnector {
    fn spki_sha256(&self, host: &str, port: u16) -> Result<[u8; 32], TransportError>;
}

/// HTTP GET that never follows redirects.
pub trait HttpFetcher {
    fn fetch(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortalExpectation {
    pub url: String,
    pub status: u16,
    pub body: String,
}

impl Default for PortalExpectation {
    fn default() -> Self {
        PortalExpectation {
            url: DEFAULT_PORTAL_URL.to_string(),
            status: 204,
            body: String::new(),
        }
    }
}

fn guarded<T>(call: impl FnOnce() -> Result<T, TransportError>) -> Result<T, TransportError> {
    catch_unwind(AssertUnwindSafe(call))
        .unwrap_or_else(|_| Err(TransportError::Other("transport panicked".into())))
}

pub fn dns_verdict(expected: &BTreeSet<IpAddr>, resolved: &BTreeSet<IpAddr>) -> DnsVerdict {
    if resolved.is_empty() {
        DnsVerdict::ResolveFailed
    } else if resolved.is_subset(expected) {
        DnsVerdict::Match
    } else if resolved.intersection(expected).next().is_some() {
        DnsVerdict::Partial
    } else {
        DnsVerdict::Mismatch
    }
}

pub fn check_dns(resolver: &dyn Resolver, baseline: &DnsBaseline) -> Vec<DnsCheck> {
    baseline
        .entries
        .iter()
        .map(|entry| {
            let resolved: BTreeSet<IpAddr> = guarded(|| resolver.resolve(&entry.domain))
                .map(|addrs| addrs.into_iter().collect())
                .unwrap_or_default();
            DnsCheck {
                domain: entry.domain.clone(),
                verdict: dns_verdict(&entry.expected_addresses, &resolved),
                resolved,
            }
        })
        .collect()
}

pub fn check_tls(connector: &dyn SpkiConnector, pins: &TlsPinSet) -> Vec<TlsCheck> {
    pins.entries
        .iter()
        .map(|entry| {
            let verdict = match guarded(|| connector.spki_sha256(&entry.host, entry.port)) {
                Ok(digest) if entry.spki_sha256_b64.contains(&B64.encode(digest)) => TlsVerdict::PinOk,
                Ok(_) => TlsVerdict::PinMismatch,
                Err(_) => TlsVerdict::ConnectFailed,
            };
            TlsCheck {
                host: entry.host.clone(),
                port: entry.port,
                verdict,
            }
        })
        .collect()
}

pub fn check_portal(fetcher: &dyn HttpFetcher, expect: &PortalExpectation) -> PortalCheck {
    let verdict = match guarded(|| fetcher.fetch(&expect.url)) {
        Ok(resp) if resp.status == expect.status && resp.body == expect.body => PortalVerdict::NoPortal,
        Ok(_) => PortalVerdict::PortalDetected,
        Err(_) => PortalVerdict::Unreachable,
    };
    PortalCheck { verdict }
}

pub struct ProbeTransports<'a> {
    pub resolver: &'a dyn Resolver,
    pub connector: &'a dyn SpkiConnector,
    pub fetcher: &'a dyn HttpFetcher,
}

/// Run every check. A missing baseline contributes no checks of that kind.
pub fn run_probe(
    bssid: Bssid,
    started_at: DateTime<Utc>,
    transports: &ProbeTransports<'_>,
    dns: Option<&DnsBaseline>,
    tls: Option<&TlsPinSet>,
    portal: &PortalExpectation,
) -> ProbeResult {
    ProbeResult {
        bssid,
        started_at,
        dns: dns.map(|b| check_dns(transports.resolver, b)).unwrap_or_default(),
        tls: tls.map(|p| check_tls(transports.connector, p)).unwrap_or_default(),
        portal: check_portal(transports.fetcher, portal),
    }
}

fn joined<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.collect::<Vec<_>>().join(",")
}

pub fn probe_flags(result: &ProbeResult) -> Vec<Flag> {
    let mut flags = Vec::new();
    let domains_with = |v: DnsVerdict| {
        joined(
            result
                .dns
                .iter()
                .filter(|c| c.verdict == v)
                .map(|c| c.domain.as_str()),
        )
    };

    let mismatched = domains_with(DnsVerdict::Mismatch);
    if !mismatched.is_empty() {
        flags.push(Flag::new(
            FlagLevel::CriticalNegative,
            RuleCode::ProbeDnsTamper,
            "DNS answers disagree with the trusted baseline",
            [("domains", mismatched)],
        ));
    } else {
        let partial = domains_with(DnsVerdict::Partial);
        if !partial.is_empty() {
            flags.push(Flag::new(
                FlagLevel::PotentialNegative,
                RuleCode::ProbeDnsDrift,
                "DNS answers only partly overlap the baseline",
                [("domains", partial)],
            ));
        }
    }

    let pin_mismatch: Vec<String> = result
        .tls
        .iter()
        .filter(|c| c.verdict == TlsVerdict::PinMismatch)
        .map(|c| format!("{}:{}", c.host, c.port))
        .collect();
    if !pin_mismatch.is_empty() {
        flags.push(Flag::new(
            FlagLevel::CriticalNegative,
            RuleCode::ProbeTlsTamper,
            "TLS certificate key does not match the pinned key",
            [("hosts", pin_mismatch.join(","))],
        ));
    }

    if result.portal.verdict == PortalVerdict::PortalDetected {
        flags.push(Flag::new(
            FlagLevel::PotentialNegative,
            RuleCode::ProbePortal,
            "HTTP traffic is intercepted by a captive portal",
            [("portal", "PORTAL_DETECTED")],
        ));
    }

    let all_failed = result.dns.iter().all(|c| c.verdict == DnsVerdict::ResolveFailed)
        && result.tls.iter().all(|c| c.verdict == TlsVerdict::ConnectFailed)
        && result.portal.verdict == PortalVerdict::Unreachable;
    if all_failed {
        flags.push(Flag::new(
            FlagLevel::Negative,
            RuleCode::ProbeNoInternet,
            "no connectivity check succeeded",
            [(
                "checks",
                (result.dns.len() + result.tls.len() + 1).to_string(),
            )],
        ));
    }

    crate::model::sort_flags(&mut flags);
    flags
}
