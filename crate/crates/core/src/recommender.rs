//! Community feedback decay, flag scoring and posture-dependent verdicts.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bssid, Flag, FlagLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeedbackCategory {
    NoInternet,
    AppFailure,
    PortalHijack,
    CertWarning,
    Slow,
    WorkedOk,
}

impl FeedbackCategory {
    pub const ALL: [FeedbackCategory; 6] = [
        FeedbackCategory::NoInternet,
        FeedbackCategory::AppFailure,
        FeedbackCategory::PortalHijack,
        FeedbackCategory::CertWarning,
        FeedbackCategory::Slow,
        FeedbackCategory::WorkedOk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeedbackCategory::NoInternet => "NO_INTERNET",
            FeedbackCategory::AppFailure => "APP_FAILURE",
            FeedbackCategory::PortalHijack => "PORTAL_HIJACK",
            FeedbackCategory::CertWarning => "CERT_WARNING",
            FeedbackCategory::Slow => "SLOW",
            FeedbackCategory::WorkedOk => "WORKED_OK",
        }
    }

    /// SLOW is a quality signal, not a failure.
    pub fn is_negative(&self) -> bool {
        !matches!(self, FeedbackCategory::Slow | FeedbackCategory::WorkedOk)
    }
}

impl FromStr for FeedbackCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeedbackCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown feedback category {s:?}"))
    }
}

impl fmt::Display for FeedbackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackReport {
    pub bssid: Bssid,
    pub ssid: String,
    pub category: FeedbackCategory,
    pub observed_at: DateTime<Utc>,
    pub reporter_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("report for {bssid} is dated {observed_at}, after now")]
    FutureTimestamp {
        bssid: Bssid,
        observed_at: DateTime<Utc>,
    },
}

impl FeedbackError {
    pub fn code(&self) -> &'static str {
        match self {
            FeedbackError::FutureTimestamp { .. } => "FUTURE_TIMESTAMP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunitySignal {
    pub n_reports: usize,
    pub weight_total: f64,
    /// `None` when the evidence is below the floor.
    pub failure_rate: Option<f64>,
    pub undetermined: bool,
}

impl CommunitySignal {
    pub fn none() -> Self {
        CommunitySignal {
            n_reports: 0,
            weight_total: 0.0,
            failure_rate: None,
            undetermined: true,
        }
    }

    pub fn summary(&self) -> String {
        match self.failure_rate {
            _ if self.n_reports == 0 => "community: no reports".to_string(),
            Some(rate) => format!(
                "community: failure rate {rate:.2} over {} reports (weight {:.2})",
                self.n_reports, self.weight_total
            ),
            None => format!(
                "community: undetermined, {} reports (weight {:.2})",
                self.n_reports, self.weight_total
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RiskPosture {
    Conservative,
    Balanced,
    Permissive,
}

impl RiskPosture {
    pub const ALL: [RiskPosture; 3] = [
        RiskPosture::Conservative,
        RiskPosture::Balanced,
        RiskPosture::Permissive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskPosture::Conservative => "conservative",
            RiskPosture::Balanced => "balanced",
            RiskPosture::Permissive => "permissive",
        }
    }
}

impl FromStr for RiskPosture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskPosture::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown posture {s:?}; expected conservative, balanced or permissive"))
    }
}

impl fmt::Display for RiskPosture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered by severity: `Avoid` is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Acceptable,
    Caution,
    Avoid,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Acceptable => "ACCEPTABLE",
            Decision::Caution => "CAUTION",
            Decision::Avoid => "AVOID",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub decision: Decision,
    pub score: f64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelWeights {
    pub critical_negative: f64,
    pub negative: f64,
    pub potential_negative: f64,
    pub undetermined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityConfig {
    pub weight: f64,
    pub half_life_days: f64,
    pub evidence_floor: f64,
}

/// Inclusive upper score bounds for ACCEPTABLE and CAUTION.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub acceptable: f64,
    pub caution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostureThresholds {
    pub conservative: Thresholds,
    pub balanced: Thresholds,
    pub permissive: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub weights: LevelWeights,
    pub community: CommunityConfig,
    pub thresholds: PostureThresholds,
}

pub const DEFAULT_SCORING_TOML: &str = include_str!("scoring.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("scoring config: {0}")]
    Parse(String),
    #[error("scoring config: {0}")]
    Invalid(String),
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig::from_toml(DEFAULT_SCORING_TOML).expect("built-in scoring config is valid")
    }
}

impl ScoringConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ScoringConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Weights must be non-negative and ordered by severity; thresholds must
    /// loosen from conservative to permissive. These keep verdicts monotone.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.weights;
        let finite = |x: f64| x.is_finite() && x >= 0.0;
        if ![w.critical_negative, w.negative, w.potential_negative, w.undetermined]
            .into_iter()
            .all(finite)
        {
            return Err(ConfigError::Invalid("weights must be finite and non-negative".into()));
        }
        if !(w.undetermined <= w.potential_negative
            && w.potential_negative <= w.negative
            && w.negative <= w.critical_negative)
        {
            return Err(ConfigError::Invalid("weights must increase with severity".into()));
        }
        let c = &self.community;
        if !(finite(c.weight) && finite(c.evidence_floor) && c.half_life_days.is_finite() && c.half_life_days > 0.0) {
            return Err(ConfigError::Invalid(
                "community weight and floor must be non-negative, half-life positive".into(),
            ));
        }
        let t = &self.thresholds;
        let all = [t.conservative, t.balanced, t.permissive];
        if all
            .iter()
            .any(|x| !finite(x.acceptable) || !finite(x.caution) || x.acceptable > x.caution)
        {
            return Err(ConfigError::Invalid(
                "each posture needs 0 <= acceptable <= caution".into(),
            ));
        }
        if all
            .windows(2)
            .any(|p| p[0].acceptable > p[1].acceptable || p[0].caution > p[1].caution)
        {
            return Err(ConfigError::Invalid(
                "thresholds must not tighten from conservative to permissive".into(),
            ));
        }
        Ok(())
    }

    pub fn level_weight(&self, level: FlagLevel) -> f64 {
        match level {
            FlagLevel::CriticalNegative => self.weights.critical_negative,
            FlagLevel::Negative => self.weights.negative,
            FlagLevel::PotentialNegative => self.weights.potential_negative,
            FlagLevel::Undetermined => self.weights.undetermined,
        }
    }

    pub fn thresholds(&self, posture: RiskPosture) -> Thresholds {
        match posture {
            RiskPosture::Conservative => self.thresholds.conservative,
            RiskPosture::Balanced => self.thresholds.balanced,
            RiskPosture::Permissive => self.thresholds.permissive,
        }
    }
}

/// Decayed community signal for one AP's reports.
pub fn community_signal(
    reports: &[FeedbackReport],
    now: DateTime<Utc>,
    config: &ScoringConfig,
) -> Result<CommunitySignal, FeedbackError> {
    let mut terms = Vec::with_capacity(reports.len());
    for report in reports {
        if report.observed_at > now {
            return Err(FeedbackError::FutureTimestamp {
                bssid: report.bssid,
                observed_at: report.observed_at,
            });
        }
        let age_days = (now - report.observed_at).num_milliseconds() as f64 / 86_400_000.0;
        let weight = 0.5f64.powf(age_days / config.community.half_life_days);
        terms.push((weight, report.category.is_negative()));
    }
    // Summed in sorted order.
    terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let weight_total = terms.iter().fold(0.0, |acc, t| acc + t.0);
    let negative = terms.iter().filter(|t| t.1).fold(0.0, |acc, t| acc + t.0);

    let undetermined = weight_total < config.community.evidence_floor;
    Ok(CommunitySignal {
        n_reports: reports.len(),
        weight_total,
        failure_rate: (!undetermined).then(|| negative / weight_total),
        undetermined,
    })
}

pub fn score(flags: &[Flag], community: &CommunitySignal, config: &ScoringConfig) -> f64 {
    let base = flags.iter().fold(0.0, |acc, f| acc + config.level_weight(f.level));
    let community_term = community
        .failure_rate
        .map_or(0.0, |rate| config.community.weight * rate);
    base + community_term
}

/// `flags` are expected in (severity desc, code asc) order, which the
/// reasons list preserves.
pub fn recommend(
    flags: &[Flag],
    community: &CommunitySignal,
    posture: RiskPosture,
    config: &ScoringConfig,
) -> Verdict {
    let score = score(flags, community, config);
    let limits = config.thresholds(posture);
    let decision = if flags.iter().any(|f| f.level == FlagLevel::CriticalNegative) {
        Decision::Avoid
    } else if score <= limits.acceptable {
        Decision::Acceptable
    } else if score <= limits.caution {
        Decision::Caution
    } else {
        Decision::Avoid
    };
    let mut reasons: Vec<String> = flags.iter().map(|f| f.code.as_str().to_string()).collect();
    reasons.push(community.summary());
    Verdict {
        decision,
        score,
        reasons,
    }
}
