//! Award-record cleaning and rule-based entity resolution.
//!
//! Raw rows carry free text in every field. Each row either becomes a
//! [`CleanAward`] or is counted under one rejection reason in the
//! [`IngestReport`]; nothing is thrown at the batch level.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// One row as it appears in the input CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAwardRecord {
    pub company: String,
    pub amount: String,
    pub year: String,
    pub phase: String,
    pub agency: String,
    pub topic: String,
}

/// Canonical company identity: uppercase, single-spaced, trailing legal suffix
/// removed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompanyKey(String);

impl CompanyKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-normalized key (e.g. read back from `clean.csv`).
    pub fn from_normalized(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

impl fmt::Display for CompanyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::I => "I",
            Phase::II => "II",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanAward {
    pub company: CompanyKey,
    pub amount: f64,
    pub year: i32,
    pub phase: Phase,
    pub agency: String,
    /// Leading alphabetic prefix of the topic code.
    pub topic: String,
    /// Full topic code, kept for audit.
    pub topic_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    EmptyName,
    BadAmount,
    BadYear,
    BadPhase,
    BadAgency,
    BadTopic,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::EmptyName => "empty_name",
            Rejection::BadAmount => "bad_amount",
            Rejection::BadYear => "bad_year",
            Rejection::BadPhase => "bad_phase",
            Rejection::BadAgency => "bad_agency",
            Rejection::BadTopic => "bad_topic",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_reasons: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn record(&mut self, outcome: core::result::Result<(), Rejection>) {
        match outcome {
            Ok(()) => self.accepted += 1,
            Err(r) => {
                self.rejected += 1;
                *self
                    .rejection_reasons
                    .entry(r.as_str().to_string())
                    .or_default() += 1;
            }
        }
    }

    /// Associative, commutative merge of two partial reports.
    pub fn merge(&mut self, other: &IngestReport) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for (k, v) in &other.rejection_reasons {
            *self.rejection_reasons.entry(k.clone()).or_default() += v;
        }
    }

    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }
}

pub const DEFAULT_LEGAL_SUFFIXES: [&str; 13] = [
    "INC",
    "LLC",
    "LTD",
    "CORP",
    "CO",
    "LP",
    "LLP",
    "GMBH",
    "PLC",
    "INCORPORATED",
    "CORPORATION",
    "COMPANY",
    "LIMITED",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub legal_suffixes: Vec<String>,
    pub min_year: i32,
    pub max_year: i32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            legal_suffixes: DEFAULT_LEGAL_SUFFIXES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            min_year: 1980,
            max_year: 2030,
        }
    }
}

/// Uppercases, drops `.` and `,`, collapses whitespace and removes one trailing
/// legal-suffix token.
///
/// The suffix is only removed when at least one token remains and the token
/// before it is not itself a suffix. Stacked suffixes ("ACME CO LTD") are
/// therefore kept intact, which is what makes the function idempotent.
/// Returns `None` when nothing is left.
pub fn normalize_company_name<S: AsRef<str>>(name: &str, suffixes: &[S]) -> Option<CompanyKey> {
    let upper: String = name
        .chars()
        .filter(|c| *c != '.' && *c != ',')
        .flat_map(char::to_uppercase)
        .collect();
    let mut tokens: Vec<&str> = upper.split_whitespace().collect();
    let is_suffix = |t: &str| suffixes.iter().any(|s| s.as_ref().eq_ignore_ascii_case(t));
    let n = tokens.len();
    if n >= 2 && is_suffix(tokens[n - 1]) && !is_suffix(tokens[n - 2]) {
        tokens.pop();
    }
    if tokens.is_empty() {
        None
    } else {
        Some(CompanyKey(tokens.join(" ")))
    }
}

fn is_phase_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '-' | '_' | ':' | '/' | ',' | '.' | '(' | ')')
}

/// Accepts "1", "I", "Phase I", "PHASE 2", "phase-ii" and similar variants.
pub fn parse_phase(text: &str) -> Option<Phase> {
    let upper = text.trim().to_ascii_uppercase();
    let rest = upper.strip_prefix("PHASE").unwrap_or(&upper);
    let token = rest
        .trim_start_matches(is_phase_separator)
        .split(is_phase_separator)
        .next()?;
    match token {
        "I" | "1" => Some(Phase::I),
        "II" | "2" => Some(Phase::II),
        _ => None,
    }
}

/// Leading ASCII-alphabetic run of a topic code, uppercased ("AF183-002" → "AF").
pub fn extract_topic_prefix(code: &str) -> Option<String> {
    let prefix: String = code
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    (!prefix.is_empty()).then_some(prefix)
}

/// Strips `$`, `,` and whitespace, then parses. Negative or non-finite → `None`.
pub fn parse_amount(text: &str) -> Option<f64> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '$' && *c != ',' && !c.is_whitespace())
        .collect();
    let v: f64 = cleaned.parse().ok()?;
    (v.is_finite() && v >= 0.0).then_some(if v == 0.0 { 0.0 } else { v })
}

pub fn parse_year(text: &str, cfg: &IngestConfig) -> Option<i32> {
    let y: i32 = text.trim().parse().ok()?;
    (cfg.min_year..=cfg.max_year).contains(&y).then_some(y)
}

fn normalize_agency(text: &str) -> Option<String> {
    let upper = text.to_uppercase();
    let joined = upper.split_whitespace().collect::<Vec<_>>().join(" ");
    (!joined.is_empty()).then_some(joined)
}

/// Parses one row; the first failing field decides the rejection reason.
pub fn clean_record(
    row: &RawAwardRecord,
    cfg: &IngestConfig,
) -> core::result::Result<CleanAward, Rejection> {
    let company =
        normalize_company_name(&row.company, &cfg.legal_suffixes).ok_or(Rejection::EmptyName)?;
    let amount = parse_amount(&row.amount).ok_or(Rejection::BadAmount)?;
    let year = parse_year(&row.year, cfg).ok_or(Rejection::BadYear)?;
    let phase = parse_phase(&row.phase).ok_or(Rejection::BadPhase)?;
    let agency = normalize_agency(&row.agency).ok_or(Rejection::BadAgency)?;
    let topic = extract_topic_prefix(&row.topic).ok_or(Rejection::BadTopic)?;
    Ok(CleanAward {
        company,
        amount,
        year,
        phase,
        agency,
        topic,
        topic_code: row.topic.trim().to_uppercase(),
    })
}

pub fn clean_records(rows: &[RawAwardRecord], cfg: &IngestConfig) -> (Vec<CleanAward>, IngestReport) {
    let mut report = IngestReport::default();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        match clean_record(row, cfg) {
            Ok(award) => {
                out.push(award);
                report.record(Ok(()));
            }
            Err(r) => report.record(Err(r)),
        }
    }
    (out, report)
}
