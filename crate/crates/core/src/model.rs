//! Canonical domain types shared by every other module.
//!
//! All values here are immutable once constructed and are `Send + Sync`.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors produced when parsing a textual BSSID.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BssidError {
    #[error("malformed BSSID {0:?}")]
    Malformed(String),
    #[error("multicast address {0:?} cannot be a BSSID")]
    MulticastAddress(String),
}

impl BssidError {
    pub fn code(&self) -> &'static str {
        match self {
            BssidError::Malformed(_) => "MALFORMED",
            BssidError::MulticastAddress(_) => "MULTICAST_ADDRESS",
        }
    }
}

/// The MAC address of an access point radio.
///
/// Always a unicast address. Displays in canonical lower-case,
/// colon-separated form (`aa:bb:cc:dd:ee:ff`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bssid([u8; 6]);

impl Bssid {
    pub fn from_octets(octets: [u8; 6]) -> Result<Self, BssidError> {
        if octets[0] & 0x01 != 0 {
            return Err(BssidError::MulticastAddress(format_octets(&octets, ':')));
        }
        Ok(Bssid(octets))
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// The address as the low 48 bits of an integer, first octet most significant.
    pub fn to_u64(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b))
    }

    /// True iff the locally-administered bit (0x02 of the first octet) is set.
    pub fn is_locally_administered(&self) -> bool {
        self.0[0] & 0x02 != 0
    }

    /// Dash-separated form, used for file names.
    pub fn dashed(&self) -> String {
        format_octets(&self.0, '-')
    }
}

fn format_octets(octets: &[u8; 6], sep: char) -> String {
    let mut out = String::with_capacity(17);
    for (i, b) in octets.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Parse a BSSID from text. Accepts either `:` or `-` as separator (used
/// consistently) and hex digits of either case.
pub fn parse_bssid(text: &str) -> Result<Bssid, BssidError> {
    let malformed = || BssidError::Malformed(text.to_string());
    let sep = if text.contains(':') { ':' } else { '-' };
    let parts: Vec<&str> = text.split(sep).collect();
    if parts.len() != 6 {
        return Err(malformed());
    }
    let mut octets = [0u8; 6];
    for (slot, part) in octets.iter_mut().zip(&parts) {
        if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(malformed());
        }
        *slot = u8::from_str_radix(part, 16).map_err(|_| malformed())?;
    }
    Bssid::from_octets(octets)
}

impl FromStr for Bssid {
    type Err = BssidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bssid(s)
    }
}

impl fmt::Display for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_octets(&self.0, ':'))
    }
}

impl fmt::Debug for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bssid({self})")
    }
}

impl Serialize for Bssid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bssid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_bssid(&text).map_err(serde::de::Error::custom)
    }
}

pub const MAX_SSID_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SSID is {0} bytes, longer than 32")]
pub struct SsidTooLong(pub usize);

/// Raw SSID bytes, 0 to 32 long. Empty means a hidden network.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ssid(Vec<u8>);

impl Ssid {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, SsidTooLong> {
        let bytes = bytes.into();
        if bytes.len() > MAX_SSID_LEN {
            return Err(SsidTooLong(bytes.len()));
        }
        Ok(Ssid(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn is_hidden(&self) -> bool {
        self.0.is_empty()
    }

    /// UTF-8 rendering with replacement characters for invalid sequences.
    pub fn display(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl fmt::Debug for Ssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ssid({:?})", self.display())
    }
}

impl fmt::Display for Ssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

/// Link-layer security offered by an access point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SecurityClass {
    Open,
    Owe,
    Wep,
    WpaTkip,
    Wpa2Psk,
    Wpa2Enterprise,
    Wpa3Sae,
    Wpa3Enterprise,
    Unknown,
}

impl SecurityClass {
    pub const ALL: [SecurityClass; 9] = [
        SecurityClass::Open,
        SecurityClass::Owe,
        SecurityClass::Wep,
        SecurityClass::WpaTkip,
        SecurityClass::Wpa2Psk,
        SecurityClass::Wpa2Enterprise,
        SecurityClass::Wpa3Sae,
        SecurityClass::Wpa3Enterprise,
        SecurityClass::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SecurityClass::Open => "OPEN",
            SecurityClass::Owe => "OWE",
            SecurityClass::Wep => "WEP",
            SecurityClass::WpaTkip => "WPA_TKIP",
            SecurityClass::Wpa2Psk => "WPA2_PSK",
            SecurityClass::Wpa2Enterprise => "WPA2_ENTERPRISE",
            SecurityClass::Wpa3Sae => "WPA3_SAE",
            SecurityClass::Wpa3Enterprise => "WPA3_ENTERPRISE",
            SecurityClass::Unknown => "UNKNOWN",
        }
    }

    /// Negotiation strength used when several security tokens are
    /// advertised at once; larger wins. `Unknown` never competes.
    pub(crate) fn precedence(&self) -> u8 {
        match self {
            SecurityClass::Unknown => 0,
            SecurityClass::Open => 1,
            SecurityClass::Owe => 2,
            SecurityClass::Wep => 3,
            SecurityClass::WpaTkip => 4,
            SecurityClass::Wpa2Psk => 5,
            SecurityClass::Wpa2Enterprise => 6,
            SecurityClass::Wpa3Sae => 7,
            SecurityClass::Wpa3Enterprise => 8,
        }
    }
}

impl fmt::Display for SecurityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classified security of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Security {
    pub class: SecurityClass,
    pub wps_advertised: bool,
}

/// Tokens that are recognized but carry no security meaning. Their presence
/// alone makes a network OPEN rather than UNKNOWN.
const NEUTRAL_TOKENS: &[&str] = &["ESS", "IBSS", "BSS", "MESH", "P2P", "WPS", "RSN", "WFA-HT"];

/// Classify a bracket-token capability string such as
/// `[WPA2-PSK-CCMP][WPS][ESS]`.
///
/// Pure and total. When several security tokens are present the strongest
/// wins; a string with no recognized token at all is `Unknown`.
pub fn classify_security(capabilities: &str) -> Security {
    let mut recognized = false;
    let mut wps_advertised = false;
    let mut best: Option<SecurityClass> = None;

    for token in bracket_tokens(capabilities) {
        let upper = token.trim().to_ascii_uppercase();
        if upper == "WPS" {
            wps_advertised = true;
        }
        match token_class(&upper) {
            Some(class) => {
                recognized = true;
                if best.is_none_or(|b| class.precedence() > b.precedence()) {
                    best = Some(class);
                }
            }
            None => {
                if NEUTRAL_TOKENS.contains(&upper.as_str()) {
                    recognized = true;
                }
            }
        }
    }

    let class = match (best, recognized) {
        (Some(class), _) => class,
        (None, true) => SecurityClass::Open,
        (None, false) => SecurityClass::Unknown,
    };
    Security {
        class,
        wps_advertised,
    }
}

fn bracket_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split('[')
        .skip(1)
        .filter_map(|chunk| chunk.split_once(']').map(|(token, _)| token))
}

fn token_class(token: &str) -> Option<SecurityClass> {
    let parts: Vec<&str> = token.split(['-', '+']).collect();
    let has = |name: &str| parts.contains(&name);

    if token.starts_with("WPA3-EAP") {
        Some(SecurityClass::Wpa3Enterprise)
    } else if token.starts_with("WPA3-SAE") || has("SAE") {
        Some(SecurityClass::Wpa3Sae)
    } else if token.starts_with("WPA2-EAP") || token.starts_with("RSN-EAP") {
        Some(SecurityClass::Wpa2Enterprise)
    } else if token.starts_with("WPA2-PSK") || token.starts_with("RSN-PSK") {
        Some(SecurityClass::Wpa2Psk)
    } else if token.starts_with("WPA-") {
        Some(SecurityClass::WpaTkip)
    } else if token.starts_with("WEP") {
        Some(SecurityClass::Wep)
    } else if has("OWE") {
        Some(SecurityClass::Owe)
    } else {
        None
    }
}

/// Where the scanner was when it saw the AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
    pub accuracy_m: Option<f64>,
}

impl Location {
    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.accuracy_m.is_none_or(|a| a >= 0.0 && a.is_finite())
    }
}

pub const RSSI_MIN_DBM: i32 = -120;
pub const RSSI_MAX_DBM: i32 = 0;

/// One sighting of an access point.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessPointObservation {
    pub bssid: Bssid,
    pub ssid: Ssid,
    pub capabilities: String,
    pub security: Security,
    /// 0 when unknown.
    pub channel: u32,
    pub frequency_mhz: u32,
    pub rssi_dbm: i32,
    pub observed_at: DateTime<Utc>,
    pub scanner_id: String,
    pub location: Option<Location>,
}

impl AccessPointObservation {
    /// Builds an observation, deriving `security` from `capabilities`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bssid: Bssid,
        ssid: Ssid,
        capabilities: impl Into<String>,
        channel: u32,
        frequency_mhz: u32,
        rssi_dbm: i32,
        observed_at: DateTime<Utc>,
        scanner_id: impl Into<String>,
        location: Option<Location>,
    ) -> Self {
        let capabilities = capabilities.into();
        let security = classify_security(&capabilities);
        AccessPointObservation {
            bssid,
            ssid,
            capabilities,
            security,
            channel,
            frequency_mhz,
            rssi_dbm,
            observed_at,
            scanner_id: scanner_id.into(),
            location,
        }
    }
}

/// Severity of a finding. Ordered so that `CriticalNegative` is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlagLevel {
    Undetermined,
    PotentialNegative,
    Negative,
    CriticalNegative,
}

impl FlagLevel {
    pub const ALL: [FlagLevel; 4] = [
        FlagLevel::CriticalNegative,
        FlagLevel::Negative,
        FlagLevel::PotentialNegative,
        FlagLevel::Undetermined,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FlagLevel::Undetermined => "UNDETERMINED",
            FlagLevel::PotentialNegative => "POTENTIAL_NEGATIVE",
            FlagLevel::Negative => "NEGATIVE",
            FlagLevel::CriticalNegative => "CRITICAL_NEGATIVE",
        }
    }
}

impl fmt::Display for FlagLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! rule_codes {
    ($($variant:ident => $text:literal,)*) => {
        /// Registered rule codes. The string forms are a stable public vocabulary.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum RuleCode {
            $($variant,)*
        }

        impl RuleCode {
            pub const ALL: &'static [RuleCode] = &[$(RuleCode::$variant,)*];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(RuleCode::$variant => $text,)*
                }
            }
        }

        impl FromStr for RuleCode {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(RuleCode::$variant),)*
                    other => Err(format!("unregistered rule code {other:?}")),
                }
            }
        }
    };
}

rule_codes! {
    SecWep => "SEC_WEP",
    SecOpen => "SEC_OPEN",
    SecWpaTkip => "SEC_WPA_TKIP",
    SecWpa2Psk => "SEC_WPA2_PSK",
    SecWpa2Enterprise => "SEC_WPA2_ENTERPRISE",
    SecWpa3Sae => "SEC_WPA3_SAE",
    SecWpa3Enterprise => "SEC_WPA3_ENTERPRISE",
    SecOwe => "SEC_OWE",
    SecUnknown => "SEC_UNKNOWN",
    SecWps => "SEC_WPS",
    IdDenylistedOui => "ID_DENYLISTED_OUI",
    IdRandomMac => "ID_RANDOM_MAC",
    IdUnknownVendor => "ID_UNKNOWN_VENDOR",
    TwinSecurityMismatch => "TWIN_SECURITY_MISMATCH",
    TwinNewWeaker => "TWIN_NEW_WEAKER",
    TwinSsidCollision => "TWIN_SSID_COLLISION",
    HistSecurityChanged => "HIST_SECURITY_CHANGED",
    HistSsidChanged => "HIST_SSID_CHANGED",
    HistChannelChanged => "HIST_CHANNEL_CHANGED",
    WigleUnknown => "WIGLE_UNKNOWN",
    WigleChanged => "WIGLE_CHANGED",
    WigleLocation => "WIGLE_LOCATION",
    WigleUnavailable => "WIGLE_UNAVAILABLE",
    ProbeDnsTamper => "PROBE_DNS_TAMPER",
    ProbeTlsTamper => "PROBE_TLS_TAMPER",
    ProbePortal => "PROBE_PORTAL",
    ProbeNoInternet => "PROBE_NO_INTERNET",
    ProbeDnsDrift => "PROBE_DNS_DRIFT",
}

impl fmt::Display for RuleCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for RuleCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RuleCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A single assessment finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub level: FlagLevel,
    pub code: RuleCode,
    pub message: String,
    pub evidence: BTreeMap<String, String>,
}

impl Flag {
    /// Panics if `evidence` is empty: every rule must record what fired it.
    pub fn new<K, V>(
        level: FlagLevel,
        code: RuleCode,
        message: impl Into<String>,
        evidence: impl IntoIterator<Item = (K, V)>,
    ) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        let evidence: BTreeMap<String, String> = evidence
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .collect();
        assert!(!evidence.is_empty(), "flag {code} created without evidence");
        Flag {
            level,
            code,
            message: message.into(),
            evidence,
        }
    }
}

/// Sort flags by severity descending, then code ascending.
pub fn sort_flags(flags: &mut [Flag]) {
    flags.sort_by(|a, b| {
        (Reverse(a.level), a.code.as_str()).cmp(&(Reverse(b.level), b.code.as_str()))
    });
}
