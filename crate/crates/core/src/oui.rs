//! Vendor identification of BSSIDs from a Wireshark-style `manuf` table.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::ingest::ScanBatch;
use crate::model::Bssid;

/// Registration block sizes present in the IEEE registries.
pub const PREFIX_LENGTHS: [u8; 3] = [36, 28, 24];

#[derive(Debug, Error)]
pub enum OuiError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("registry contains no entries")]
    EmptyRegistry,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

/// A MAC prefix of 24, 28 or 36 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OuiPrefix {
    /// Prefix bits, left-aligned in the low 48 bits; bits past `len` are zero.
    bits: u64,
    len: u8,
}

impl OuiPrefix {
    pub fn new(address: u64, len: u8) -> Option<Self> {
        if !PREFIX_LENGTHS.contains(&len) {
            return None;
        }
        Some(OuiPrefix {
            bits: address & mask(len),
            len,
        })
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    pub fn matches(&self, bssid: &Bssid) -> bool {
        bssid.to_u64() & mask(self.len) == self.bits
    }

    /// Parse `00:00:0C`, `00-00-0C` or `8C:1F:64:00:00:00/36`. Without a
    /// mask the prefix must be exactly three octets.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (addr, len) = match text.split_once('/') {
            Some((addr, len)) => {
                let len: u8 = len
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad prefix length in {text:?}"))?;
                (addr.trim(), Some(len))
            }
            None => (text.trim(), None),
        };
        let octets: Vec<&str> = addr.split([':', '-', '.']).collect();
        if octets.is_empty()
            || octets.len() > 6
            || octets
                .iter()
                .any(|o| o.len() != 2 || !o.bytes().all(|b| b.is_ascii_hexdigit()))
        {
            return Err(format!("bad prefix {text:?}"));
        }
        let len = match len {
            Some(len) => len,
            None if octets.len() == 3 => 24,
            None => return Err(format!("prefix {text:?} needs 3 octets or a /mask")),
        };
        if usize::from(len) > octets.len() * 8 {
            return Err(format!("prefix {text:?} is shorter than /{len}"));
        }
        let mut value = 0u64;
        for (i, o) in octets.iter().enumerate() {
            let b = u64::from_str_radix(o, 16).map_err(|_| format!("bad prefix {text:?}"))?;
            value |= b << (40 - 8 * i);
        }
        OuiPrefix::new(value, len).ok_or_else(|| format!("unsupported prefix length /{len}"))
    }
}

impl fmt::Display for OuiPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let octets = self.bits.to_be_bytes();
        let shown = if self.len == 24 { 3 } else { 6 };
        let hex: Vec<String> = octets[2..2 + shown].iter().map(|b| format!("{b:02x}")).collect();
        if self.len == 24 {
            write!(f, "{}", hex.join(":"))
        } else {
            write!(f, "{}/{}", hex.join(":"), self.len)
        }
    }
}

fn mask(len: u8) -> u64 {
    let ones = (1u64 << len) - 1;
    ones << (48 - u32::from(len))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct VendorNames {
    short_name: String,
    long_name: String,
}

/// Result of a vendor lookup. Names are empty when unmatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VendorMatch {
    pub matched: bool,
    /// 0 when unmatched.
    pub prefix_len: u8,
    pub short_name: String,
    pub long_name: String,
}

impl VendorMatch {
    fn unmatched() -> Self {
        VendorMatch {
            matched: false,
            prefix_len: 0,
            short_name: String::new(),
            long_name: String::new(),
        }
    }
}

/// Immutable longest-prefix-match vendor index.
#[derive(Debug, Clone)]
pub struct OuiRegistry {
    entries: HashMap<OuiPrefix, VendorNames>,
    pub source_version: String,
    pub loaded_at: DateTime<Utc>,
}

impl OuiRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest matching prefix wins.
    pub fn lookup(&self, bssid: &Bssid) -> VendorMatch {
        let address = bssid.to_u64();
        for len in PREFIX_LENGTHS {
            let prefix = OuiPrefix::new(address, len).expect("registered length");
            if let Some(names) = self.entries.get(&prefix) {
                return VendorMatch {
                    matched: true,
                    prefix_len: len,
                    short_name: names.short_name.clone(),
                    long_name: names.long_name.clone(),
                };
            }
        }
        VendorMatch::unmatched()
    }
}

/// Load a tab-separated manuf table: prefix, short name, optional long
/// name. `#` starts a comment line. Duplicate prefixes are malformed.
pub fn load_registry<R: BufRead>(
    reader: R,
    lenient: bool,
    source_version: impl Into<String>,
    loaded_at: DateTime<Utc>,
) -> Result<OuiRegistry, OuiError> {
    let mut entries = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed = parse_manuf_line(&line).and_then(|(prefix, names)| {
            if entries.contains_key(&prefix) {
                Err(format!("duplicate prefix {prefix}"))
            } else {
                Ok((prefix, names))
            }
        });
        match parsed {
            Ok((prefix, names)) => {
                entries.insert(prefix, names);
            }
            Err(reason) if !lenient => {
                return Err(OuiError::MalformedLine {
                    line: lineno,
                    reason,
                })
            }
            Err(_) => {}
        }
    }
    if entries.is_empty() {
        return Err(OuiError::EmptyRegistry);
    }
    Ok(OuiRegistry {
        entries,
        source_version: source_version.into(),
        loaded_at,
    })
}

fn parse_manuf_line(line: &str) -> Result<(OuiPrefix, VendorNames), String> {
    let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
    let prefix = OuiPrefix::parse(fields.next().ok_or("empty line")?)?;
    let short_name = fields.next().ok_or("missing short name")?.to_string();
    let long_name = fields.next().unwrap_or_default().to_string();
    Ok((
        prefix,
        VendorNames {
            short_name,
            long_name,
        },
    ))
}

/// True iff the BSSID is locally administered, the signature of a
/// randomized or software-assigned address.
pub fn is_locally_administered(bssid: &Bssid) -> bool {
    bssid.is_locally_administered()
}

/// Share of batch observations whose BSSID has a registry match.
pub fn identifiability_rate(registry: &OuiRegistry, batch: &ScanBatch) -> Result<f64, OuiError> {
    if batch.is_empty() {
        return Err(OuiError::EmptyBatch);
    }
    let matched = batch
        .observations
        .iter()
        .filter(|o| registry.lookup(&o.bssid).matched)
        .count();
    Ok(matched as f64 / batch.len() as f64)
}

/// Operator-supplied OUI prefixes of hardware known to be used maliciously.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DenyList {
    prefixes: Vec<OuiPrefix>,
}

impl DenyList {
    pub fn new(prefixes: impl IntoIterator<Item = OuiPrefix>) -> Self {
        let mut prefixes: Vec<_> = prefixes.into_iter().collect();
        prefixes.sort();
        prefixes.dedup();
        DenyList { prefixes }
    }

    /// One prefix per line; `#` starts a comment anywhere on a line.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, OuiError> {
        let mut prefixes = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let prefix = OuiPrefix::parse(content).map_err(|reason| OuiError::MalformedLine {
                line: idx + 1,
                reason,
            })?;
            prefixes.push(prefix);
        }
        Ok(DenyList::new(prefixes))
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    pub fn insert(&mut self, prefix: OuiPrefix) {
        if let Err(pos) = self.prefixes.binary_search(&prefix) {
            self.prefixes.insert(pos, prefix);
        }
    }

    /// The longest deny-listed prefix covering `bssid`.
    pub fn matching(&self, bssid: &Bssid) -> Option<OuiPrefix> {
        self.prefixes
            .iter()
            .filter(|p| p.matches(bssid))
            .max_by_key(|p| p.prefix_len())
            .copied()
    }
}
