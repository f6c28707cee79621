//! Disclosure extraction and classification.
//!
//! Descriptions are split into sentences (newlines first, then sentence
//! terminators, with URLs masked so their dots never split), tokenized
//! into bags of words, and either clustered for analyst review or run
//! through a keyword-rule cascade that labels the three known disclosure
//! shapes: a bare affiliate-link mention, a full explanation that names
//! the compensation, and an appeal to support the channel.

use crate::cluster::{agglomerate, ClusterError, Linkage};
use crate::corpus::{is_english, url_spans, ContentItem, Platform};
use crate::ClusterTree;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Id of the item the sentence came from; empty when segmenting bare text.
    pub content_id: String,
    /// 0-based line within the description; blank lines still count.
    pub line_index: usize,
    /// 0-based position among the sentences emitted for that line.
    pub sentence_index: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DiscloseError {
    #[error("clustering needs at least one sentence vector")]
    NoVectors,
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn segment(description: &str) -> Vec<Sentence> {
    segment_with_id("", description)
}

/// Split on newlines, then at ".", "!" or "?" followed by whitespace or
/// end of line. URL spans are masked first so dots inside them never
/// terminate a sentence. Empty fragments are dropped.
pub fn segment_with_id(content_id: &str, description: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    for (line_index, line) in description.split('\n').enumerate() {
        let bytes = line.as_bytes();
        let mut masked = vec![false; bytes.len()];
        for (start, end) in url_spans(line) {
            for flag in &mut masked[start..end] {
                *flag = true;
            }
        }

        let mut sentence_index = 0;
        let mut fragment_start = 0;
        let mut emit = |start: usize, end: usize, sentence_index: &mut usize| {
            let text = line[start..end].trim();
            if !text.is_empty() {
                sentences.push(Sentence {
                    content_id: content_id.to_string(),
                    line_index,
                    sentence_index: *sentence_index,
                    text: text.to_string(),
                    tokens: tokenize(text),
                });
                *sentence_index += 1;
            }
        };

        for (i, ch) in line.char_indices() {
            if !matches!(ch, '.' | '!' | '?') || masked[i] {
                continue;
            }
            let next = line[i + 1..].chars().next();
            if next.map(|c| c.is_whitespace()).unwrap_or(true) {
                emit(fragment_start, i + 1, &mut sentence_index);
                fragment_start = i + 1;
            }
        }
        emit(fragment_start, line.len(), &mut sentence_index);
    }
    sentences
}

/// Bag-of-words counts for one sentence; `sentence` indexes the slice
/// the vector was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceVector {
    pub sentence: usize,
    pub counts: BTreeMap<String, u64>,
}

pub fn vectorize(sentences: &[Sentence]) -> Vec<SentenceVector> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for token in &s.tokens {
                *counts.entry(token.clone()).or_insert(0) += 1;
            }
            SentenceVector {
                sentence: i,
                counts,
            }
        })
        .collect()
}

pub fn euclidean(a: &SentenceVector, b: &SentenceVector) -> f64 {
    let mut sum = 0.0;
    for (token, &ca) in &a.counts {
        let cb = b.counts.get(token).copied().unwrap_or(0);
        let d = ca as f64 - cb as f64;
        sum += d * d;
    }
    for (token, &cb) in &b.counts {
        if !a.counts.contains_key(token) {
            sum += (cb as f64) * (cb as f64);
        }
    }
    sum.sqrt()
}

/// Agglomerative clustering with Euclidean distance and average linkage.
pub fn hcluster(vectors: &[SentenceVector]) -> Result<ClusterTree, DiscloseError> {
    hcluster_with(vectors, Linkage::Average)
}

pub fn hcluster_with(
    vectors: &[SentenceVector],
    linkage: Linkage,
) -> Result<ClusterTree, DiscloseError> {
    let n = vectors.len();
    let mut matrix = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&vectors[i], &vectors[j]);
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    agglomerate(&matrix, linkage).map_err(|e| match e {
        ClusterError::Empty => DiscloseError::NoVectors,
        ClusterError::RaggedMatrix { .. } => unreachable!("matrix built square"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisclosureType {
    AffiliateLink,
    Explanation,
    ChannelSupport,
}

impl std::fmt::Display for DisclosureType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DisclosureType::AffiliateLink => "affiliate_link",
            DisclosureType::Explanation => "explanation",
            DisclosureType::ChannelSupport => "channel_support",
        })
    }
}

/// A classification plus the id of the cascade rule that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub dtype: DisclosureType,
    pub rule_id: &'static str,
}

const AFFILIATE_TERMS: &[&str] = &["affiliate", "affiliates", "aff", "affiliatelink", "affiliatelinks"];
const LINK_TERMS: &[&str] = &["link", "links"];
const COMPENSATION_TERMS: &[&str] = &[
    "commission",
    "commissions",
    "earn",
    "earns",
    "earned",
    "earning",
    "receive",
    "receives",
    "received",
    "paid",
    "sales",
];
const SUPPORT_TERMS: &[&str] = &["support", "supports", "supporting", "supported"];
const SUPPORTED_TERMS: &[&str] = &["link", "links", "shop", "shops", "shopping", "channel", "channels"];

fn mentions(tokens: &[String], terms: &[&str]) -> bool {
    tokens.iter().any(|t| terms.contains(&t.as_str()))
}

/// Rule cascade, first hit wins:
/// 1. explanation: an affiliate or link term together with a compensation
///    term ("%" in the raw text also counts as compensation);
/// 2. channel_support: a support term plus a link/shop/channel term,
///    without any compensation term;
/// 3. affiliate_link: an affiliate term on its own.
pub fn classify_disclosure(sentence: &Sentence) -> Option<Classification> {
    let tokens = &sentence.tokens;
    let affiliate = mentions(tokens, AFFILIATE_TERMS);
    let link = mentions(tokens, LINK_TERMS);
    let compensation = mentions(tokens, COMPENSATION_TERMS) || sentence.text.contains('%');
    if (affiliate || link) && compensation {
        return Some(Classification {
            dtype: DisclosureType::Explanation,
            rule_id: "explanation",
        });
    }
    if mentions(tokens, SUPPORT_TERMS) && mentions(tokens, SUPPORTED_TERMS) && !compensation {
        return Some(Classification {
            dtype: DisclosureType::ChannelSupport,
            rule_id: "channel_support",
        });
    }
    if affiliate {
        return Some(Classification {
            dtype: DisclosureType::AffiliateLink,
            rule_id: "affiliate_link",
        });
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureRecord {
    pub content_id: String,
    pub line_index: usize,
    pub sentence_index: usize,
    pub text: String,
    pub dtype: DisclosureType,
    pub rule_id: String,
}

/// Run the English filter, segmentation and classifier over a corpus.
/// Channel-support wording only counts as a disclosure on YouTube; the
/// shape was never observed on Pinterest and matches ordinary pin text
/// too easily there.
pub fn extract_disclosures(items: &[ContentItem]) -> Vec<DisclosureRecord> {
    let mut records = Vec::new();
    for item in items {
        if !is_english(&item.description) {
            continue;
        }
        for sentence in segment_with_id(&item.id, &item.description) {
            let Some(found) = classify_disclosure(&sentence) else {
                continue;
            };
            if found.dtype == DisclosureType::ChannelSupport
                && item.platform == Platform::Pinterest
            {
                continue;
            }
            records.push(DisclosureRecord {
                content_id: sentence.content_id,
                line_index: sentence.line_index,
                sentence_index: sentence.sentence_index,
                text: sentence.text,
                dtype: found.dtype,
                rule_id: found.rule_id.to_string(),
            });
        }
    }
    records
}

/// Review summary of one cluster: its size, the member closest to all
/// others, and up to five sample member texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDigest {
    pub size: usize,
    pub medoid: String,
    pub samples: Vec<String>,
}

/// Digest every cluster of `tree.cut(threshold)`, largest cluster first
/// (ties by smallest member index).
pub fn cluster_digest(
    sentences: &[Sentence],
    vectors: &[SentenceVector],
    tree: &ClusterTree,
    threshold: f64,
) -> Vec<ClusterDigest> {
    let mut clusters = tree.cut(threshold);
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
    clusters
        .into_iter()
        .map(|members| {
            let medoid = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let total = |x: usize| -> f64 {
                        members
                            .iter()
                            .map(|&y| euclidean(&vectors[x], &vectors[y]))
                            .sum()
                    };
                    total(a)
                        .partial_cmp(&total(b))
                        .unwrap()
                        .then_with(|| a.cmp(&b))
                })
                .unwrap();
            ClusterDigest {
                size: members.len(),
                medoid: sentences[vectors[medoid].sentence].text.clone(),
                samples: members
                    .iter()
                    .take(5)
                    .map(|&m| sentences[vectors[m].sentence].text.clone())
                    .collect(),
            }
        })
        .collect()
}
