//! Content records, corpus file IO, identifier sampling and text heuristics.
//!
//! A corpus is a JSONL file: one self-describing object per line. Required
//! keys are `id`, `platform` ("youtube" | "pinterest"), `description`,
//! `category` and `creator_id`; engagement counters are optional. Unknown
//! keys are kept in [`ContentItem::extra`] and survive a round-trip.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Youtube,
    Pinterest,
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Platform::Youtube => f.write_str("youtube"),
            Platform::Pinterest => f.write_str("pinterest"),
        }
    }
}

/// One video or pin record.
///
/// Counter fields are platform-specific: `repin_count` only occurs on
/// Pinterest items, `duration_seconds` and `dislike_count` only on YouTube
/// items. `load_corpus` rejects records that violate this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: String,
    pub platform: Platform,
    pub description: String,
    pub category: String,
    pub creator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub like_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dislike_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repin_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<u64>,
    /// Keys outside the schema, preserved verbatim on round-trip.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("seed id must be all digits with at least 6 of them, got {0:?}")]
    BadSeedId(String),
    #[error("suffix range invalid: lo={lo}, hi={hi} (need lo <= hi <= 99999)")]
    BadRange { lo: u32, hi: u32 },
}

const COUNTER_FIELDS: [&str; 6] = [
    "view_count",
    "like_count",
    "dislike_count",
    "comment_count",
    "repin_count",
    "duration_seconds",
];

fn validate_record(value: &serde_json::Value) -> Result<(), String> {
    let obj = value
        .as_object()
        .ok_or_else(|| "record is not an object".to_string())?;
    for key in ["id", "platform", "description", "category", "creator_id"] {
        let field = obj
            .get(key)
            .ok_or_else(|| format!("missing required field `{key}`"))?;
        if !field.is_string() {
            return Err(format!("field `{key}` must be a string"));
        }
    }
    if obj.get("id").and_then(|v| v.as_str()) == Some("") {
        return Err("field `id` must be non-empty".to_string());
    }
    let platform = obj.get("platform").and_then(|v| v.as_str()).unwrap_or("");
    if platform != "youtube" && platform != "pinterest" {
        return Err(format!(
            "field `platform` must be \"youtube\" or \"pinterest\", got {platform:?}"
        ));
    }
    for key in COUNTER_FIELDS {
        if let Some(v) = obj.get(key) {
            if !v.is_null() && !v.is_u64() {
                return Err(format!("field `{key}` must be a non-negative integer"));
            }
        }
    }
    let present = |key: &str| obj.get(key).map(|v| !v.is_null()).unwrap_or(false);
    if platform == "youtube" && present("repin_count") {
        return Err("field `repin_count` only applies to pinterest items".to_string());
    }
    if platform == "pinterest" {
        for key in ["duration_seconds", "dislike_count"] {
            if present(key) {
                return Err(format!("field `{key}` only applies to youtube items"));
            }
        }
    }
    Ok(())
}

/// Reads a JSONL corpus. Any malformed line is an error naming the line;
/// blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ContentItem>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Line {
                line: lineno,
                message: format!("invalid JSON: {e}"),
            })?;
        validate_record(&value).map_err(|message| CorpusError::Line {
            line: lineno,
            message,
        })?;
        let item: ContentItem =
            serde_json::from_value(value).map_err(|e| CorpusError::Line {
                line: lineno,
                message: e.to_string(),
            })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes items as JSONL, one record per line, field order fixed by the
/// struct so reruns are byte-identical.
pub fn write_corpus(path: impl AsRef<Path>, items: &[ContentItem]) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).expect("content item serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// A generated sampling identifier (YouTube id prefix or full Pinterest id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePrefix {
    pub platform: Platform,
    pub value: String,
}

/// The observable alphabet of YouTube video identifiers.
pub const YOUTUBE_ID_ALPHABET: &[u8; 64] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

/// Draws `count` five-character id prefixes, one character at a time, from
/// a ChaCha8 stream keyed by `seed`. The generator algorithm is pinned
/// (ChaCha8) so sequences are reproducible across builds and platforms;
/// because characters are drawn sequentially, the first k prefixes of a
/// longer run equal the output of a shorter run with the same seed.
pub fn gen_youtube_prefixes(count: usize, seed: u64) -> Result<Vec<SamplePrefix>, SampleError> {
    if count == 0 {
        return Err(SampleError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let value: String = (0..5)
            .map(|_| YOUTUBE_ID_ALPHABET[rng.gen_range(0..YOUTUBE_ID_ALPHABET.len())] as char)
            .collect();
        out.push(SamplePrefix {
            platform: Platform::Youtube,
            value,
        });
    }
    Ok(out)
}

/// Enumerates pin ids derived from `seed_id` by replacing its last five
/// digits with the zero-padded counters `lo..=hi`.
pub fn gen_pinterest_ids(seed_id: &str, lo: u32, hi: u32) -> Result<Vec<String>, SampleError> {
    if seed_id.len() < 6 || !seed_id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(SampleError::BadSeedId(seed_id.to_string()));
    }
    if lo > hi || hi > 99999 {
        return Err(SampleError::BadRange { lo, hi });
    }
    let prefix = &seed_id[..seed_id.len() - 5];
    Ok((lo..=hi).map(|n| format!("{prefix}{n:05}")).collect())
}

fn scheme_at(bytes: &[u8], i: usize) -> bool {
    let rest = &bytes[i..];
    (rest.len() >= 7 && rest[..4].eq_ignore_ascii_case(b"http") && rest[4..7] == *b"://")
        || (rest.len() >= 8 && rest[..5].eq_ignore_ascii_case(b"https") && rest[5..8] == *b"://")
}

fn trim_trailing_punct(mut s: &str) -> &str {
    loop {
        let Some(c) = s.chars().last() else {
            return s;
        };
        let cut = match c {
            '.' | ',' | '!' | ';' | '"' | '\'' => true,
            ')' => s.matches('(').count() < s.matches(')').count(),
            '(' => s.matches(')').count() < s.matches('(').count(),
            _ => false,
        };
        if !cut {
            return s;
        }
        s = &s[..s.len() - c.len_utf8()];
    }
}

/// Byte ranges of URL tokens in `text`: maximal substrings starting with an
/// http(s) scheme, ended by whitespace, with trailing unbalanced punctuation
/// trimmed. Shared by [`extract_urls`] and the sentence segmenter, which
/// masks these ranges before splitting.
pub(crate) fn url_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !scheme_at(bytes, i) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = text.len();
        for (off, ch) in text[start..].char_indices() {
            if ch.is_whitespace() {
                end = start + off;
                break;
            }
        }
        let token_end = end;
        let trimmed = trim_trailing_punct(&text[start..end]);
        if !trimmed.is_empty() {
            spans.push((start, start + trimmed.len()));
        }
        i = token_end.max(start + 1);
    }
    spans
}

/// Extracts URL tokens in order of appearance, duplicates preserved.
pub fn extract_urls(text: &str) -> Vec<String> {
    url_spans(text)
        .into_iter()
        .map(|(a, b)| text[a..b].to_string())
        .collect()
}

fn english_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        include_str!("../data/english_words.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Stopword-ratio English heuristic: true iff at least a quarter of the
/// alphabetic tokens occur in the bundled 200-word common-English list.
/// Alphabetic tokens are whitespace-separated words that consist solely of
/// letters once surrounding punctuation is stripped; everything else (URLs,
/// numbers, mixed tokens) stays out of the denominator.
pub fn is_english(text: &str) -> bool {
    let words = english_words();
    let mut total = 0usize;
    let mut hits = 0usize;
    for raw in text.split_whitespace() {
        let core = raw.trim_matches(|c: char| !c.is_alphabetic());
        if core.is_empty() || !core.chars().all(char::is_alphabetic) {
            continue;
        }
        total += 1;
        if words.contains(core.to_lowercase().as_str()) {
            hits += 1;
        }
    }
    total > 0 && hits as f64 / total as f64 >= 0.25
}
