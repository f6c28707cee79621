//! Affiliate URL pattern database and matching.
//!
//! A pattern is a host rule, a path rule, and a set of query-parameter
//! names that must all be present. The shipped database under `data/`
//! encodes the known affiliate-network URL shapes; it is data, not code,
//! so new companies need no rebuild. Matching is pure: the same URL and
//! database always produce the same matches, in pattern-id order.

use crate::corpus::{extract_urls, ContentItem};
use crate::resolve::{ResolveOutcome, ResolvedChain};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HostRule {
    /// Host equals the value (case-insensitive).
    Exact { value: String },
    /// Host equals the value or ends with ".value".
    Suffix { value: String },
    /// Host matches the regex (compiled case-insensitive).
    Regex { value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathRule {
    Any,
    /// Path starts with the value (case-sensitive).
    Prefix { value: String },
    Regex { value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffiliatePattern {
    pub pattern_id: String,
    pub company: String,
    pub host_rule: HostRule,
    pub path_rule: PathRule,
    /// Query-parameter names that must all appear (name comparison is
    /// case-sensitive; some networks use uppercase names).
    pub required_params: Vec<String>,
    pub source_note: String,
    /// Known-matching URL, used by the validation subcommand and tests.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub example_url: String,
    /// One-edit mutation of the example that must match nothing in the db.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub negative_url: String,
}

enum HostMatcher {
    Exact(String),
    Suffix(String),
    Regex(regex::Regex),
}

enum PathMatcher {
    Any,
    Prefix(String),
    Regex(regex::Regex),
}

struct CompiledRules {
    host: HostMatcher,
    path: PathMatcher,
}

/// Immutable pattern collection. Construct via [`load_pattern_db`],
/// [`PatternDb::from_jsonl_str`] or [`PatternDb::shipped`]; rules are
/// compiled once at load and matching is then lock-free and shareable.
pub struct PatternDb {
    /// Content fingerprint of the source file (FNV-1a over the raw bytes),
    /// recorded in outputs so runs can be traced to a database revision.
    pub version: String,
    pub patterns: Vec<AffiliatePattern>,
    compiled: Vec<CompiledRules>,
}

#[derive(Debug, thiserror::Error)]
pub enum PatternError {
    #[error("failed to read pattern database: {0}")]
    Io(#[from] std::io::Error),
    #[error("pattern database line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("pattern database is empty")]
    Empty,
    #[error("duplicate pattern_id {pattern_id:?}")]
    DuplicateId { pattern_id: String },
    #[error("pattern {pattern_id:?}: host rule value is empty")]
    EmptyHost { pattern_id: String },
    #[error("pattern {pattern_id:?}: regex does not compile: {message}")]
    BadRegex { pattern_id: String, message: String },
    #[error(
        "pattern {pattern_id:?} is too permissive: a bare host suffix needs a path rule or required parameters"
    )]
    TooPermissive { pattern_id: String },
    #[error("pattern {pattern_id:?}: example URL {url:?} does not match its own pattern")]
    ExampleMismatch { pattern_id: String, url: String },
    #[error("pattern {pattern_id:?}: negative URL {url:?} matches pattern {matched:?}")]
    NegativeMatch {
        pattern_id: String,
        url: String,
        matched: String,
    },
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn compile(pattern: &AffiliatePattern) -> Result<CompiledRules, PatternError> {
    let id = || pattern.pattern_id.clone();
    let host = match &pattern.host_rule {
        HostRule::Exact { value } | HostRule::Suffix { value } if value.is_empty() => {
            return Err(PatternError::EmptyHost { pattern_id: id() })
        }
        HostRule::Regex { value } if value.is_empty() => {
            return Err(PatternError::EmptyHost { pattern_id: id() })
        }
        HostRule::Exact { value } => HostMatcher::Exact(value.to_ascii_lowercase()),
        HostRule::Suffix { value } => HostMatcher::Suffix(value.to_ascii_lowercase()),
        HostRule::Regex { value } => HostMatcher::Regex(
            regex::RegexBuilder::new(value)
                .case_insensitive(true)
                .build()
                .map_err(|e| PatternError::BadRegex {
                    pattern_id: id(),
                    message: e.to_string(),
                })?,
        ),
    };
    let path = match &pattern.path_rule {
        PathRule::Any => PathMatcher::Any,
        PathRule::Prefix { value } => PathMatcher::Prefix(value.clone()),
        PathRule::Regex { value } => {
            PathMatcher::Regex(regex::Regex::new(value).map_err(|e| PatternError::BadRegex {
                pattern_id: id(),
                message: e.to_string(),
            })?)
        }
    };
    // A bare host suffix with no other constraint would sweep up every
    // page on the domain and its subdomains.
    if pattern.required_params.is_empty()
        && matches!(pattern.path_rule, PathRule::Any)
        && matches!(pattern.host_rule, HostRule::Suffix { .. })
    {
        return Err(PatternError::TooPermissive { pattern_id: id() });
    }
    Ok(CompiledRules { host, path })
}

impl PatternDb {
    pub fn from_jsonl_str(content: &str) -> Result<Self, PatternError> {
        let mut patterns: Vec<AffiliatePattern> = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let pattern =
                serde_json::from_str(line).map_err(|e| PatternError::Line {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            patterns.push(pattern);
        }
        if patterns.is_empty() {
            return Err(PatternError::Empty);
        }
        let mut ids: HashSet<&str> = HashSet::new();
        for pattern in &patterns {
            if !ids.insert(&pattern.pattern_id) {
                return Err(PatternError::DuplicateId {
                    pattern_id: pattern.pattern_id.clone(),
                });
            }
        }
        let compiled = patterns.iter().map(compile).collect::<Result<_, _>>()?;
        Ok(PatternDb {
            version: format!("fnv1a-{:016x}", fnv1a64(content.as_bytes())),
            patterns,
            compiled,
        })
    }

    /// The database bundled with the crate.
    pub fn shipped() -> &'static PatternDb {
        use std::sync::OnceLock;
        static DB: OnceLock<PatternDb> = OnceLock::new();
        DB.get_or_init(|| {
            PatternDb::from_jsonl_str(include_str!("../data/patterns.jsonl"))
                .expect("bundled pattern database is valid")
        })
    }

    pub fn companies(&self) -> BTreeSet<&str> {
        self.patterns.iter().map(|p| p.company.as_str()).collect()
    }

    /// Check every embedded example URL against its own pattern and every
    /// negative URL against the whole database.
    pub fn verify_examples(&self) -> Result<(), PatternError> {
        for pattern in &self.patterns {
            if !pattern.example_url.is_empty()
                && !match_url(&pattern.example_url, self)
                    .iter()
                    .any(|m| m.pattern_id == pattern.pattern_id)
            {
                return Err(PatternError::ExampleMismatch {
                    pattern_id: pattern.pattern_id.clone(),
                    url: pattern.example_url.clone(),
                });
            }
            if !pattern.negative_url.is_empty() {
                if let Some(hit) = match_url(&pattern.negative_url, self).first() {
                    return Err(PatternError::NegativeMatch {
                        pattern_id: pattern.pattern_id.clone(),
                        url: pattern.negative_url.clone(),
                        matched: hit.pattern_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn load_pattern_db(path: &Path) -> Result<PatternDb, PatternError> {
    let content = std::fs::read_to_string(path)?;
    PatternDb::from_jsonl_str(&content)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlMatch {
    pub pattern_id: String,
    pub company: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainMatch {
    pub url: String,
    pub pattern_id: String,
    pub company: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffiliateVerdict {
    pub content_id: String,
    pub is_affiliate: bool,
    pub matches: Vec<ChainMatch>,
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("no resolved chain for extracted URL {0:?}")]
    MissingChain(String),
}

/// Every pattern matching the URL, in pattern-id order. Strings that do
/// not parse into host/path/query match nothing.
pub fn match_url(url: &str, db: &PatternDb) -> Vec<UrlMatch> {
    let Ok(parsed) = url::Url::parse(url.trim()) else {
        log::debug!("skipping unparseable url {url:?}");
        return Vec::new();
    };
    let Some(host) = parsed.host_str() else {
        return Vec::new();
    };
    let host = host.to_ascii_lowercase();
    let path = parsed.path();
    let params: HashSet<String> = parsed
        .query_pairs()
        .map(|(name, _)| name.into_owned())
        .collect();

    let mut matches: Vec<UrlMatch> = db
        .patterns
        .iter()
        .zip(&db.compiled)
        .filter(|(pattern, rules)| {
            let host_ok = match &rules.host {
                HostMatcher::Exact(value) => &host == value,
                HostMatcher::Suffix(value) => {
                    &host == value || host.ends_with(&format!(".{value}"))
                }
                HostMatcher::Regex(re) => re.is_match(&host),
            };
            let path_ok = match &rules.path {
                PathMatcher::Any => true,
                PathMatcher::Prefix(value) => path.starts_with(value.as_str()),
                PathMatcher::Regex(re) => re.is_match(path),
            };
            host_ok && path_ok && pattern.required_params.iter().all(|p| params.contains(p))
        })
        .map(|(pattern, _)| UrlMatch {
            pattern_id: pattern.pattern_id.clone(),
            company: pattern.company.clone(),
        })
        .collect();
    matches.sort_by(|a, b| a.pattern_id.cmp(&b.pattern_id));
    matches
}

/// Union of [`match_url`] over every hop of the chain, de-duplicated on
/// (pattern_id, url). Hops are visited in chain order.
pub fn match_chain(chain: &ResolvedChain, db: &PatternDb) -> Vec<ChainMatch> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut matches = Vec::new();
    for hop in &chain.hops {
        for m in match_url(&hop.url, db) {
            if seen.insert((m.pattern_id.clone(), hop.url.clone())) {
                matches.push(ChainMatch {
                    url: hop.url.clone(),
                    pattern_id: m.pattern_id,
                    company: m.company,
                });
            }
        }
    }
    matches
}

fn chain_failed(outcome: ResolveOutcome) -> bool {
    matches!(
        outcome,
        ResolveOutcome::Timeout | ResolveOutcome::HttpError | ResolveOutcome::FetchFailed
    )
}

/// Classify one content item given resolved chains for each of its URLs.
/// Chains that failed to resolve still get a direct match on the original
/// URL: redirector-host patterns are detectable without resolution.
pub fn detect_affiliate(
    item: &ContentItem,
    chains: &HashMap<String, ResolvedChain>,
    db: &PatternDb,
) -> Result<AffiliateVerdict, DetectError> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut matches = Vec::new();
    for url in extract_urls(&item.description) {
        let chain = chains
            .get(&url)
            .ok_or_else(|| DetectError::MissingChain(url.clone()))?;
        let found = if chain_failed(chain.outcome) {
            match_url(&url, db)
                .into_iter()
                .map(|m| ChainMatch {
                    url: url.clone(),
                    pattern_id: m.pattern_id,
                    company: m.company,
                })
                .collect()
        } else {
            match_chain(chain, db)
        };
        for m in found {
            if seen.insert((m.pattern_id.clone(), m.url.clone())) {
                matches.push(m);
            }
        }
    }
    Ok(AffiliateVerdict {
        content_id: item.id.clone(),
        is_affiliate: !matches.is_empty(),
        matches,
    })
}
