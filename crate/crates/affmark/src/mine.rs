//! Frequency-analysis mining of candidate affiliate URL shapes.
//!
//! Every hop of every resolved chain is tallied three ways: which
//! subdomains a registrable domain appears under, which first path
//! segments it carries, and which query-parameter names co-occur with it.
//! Domains with unusually high fan-out, or domain/parameter pairs that
//! repeat often, are the raw material for new pattern rules; the miner
//! only proposes, a human reviews the exported sheet and decides.

use crate::domain::split_host;
use crate::resolve::ResolvedChain;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

/// Per-domain tallies over all hop URLs. Keys are lowercase; counts are
/// per URL occurrence except that a parameter name repeated within one
/// URL counts once for that URL.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub domain_subdomain: BTreeMap<String, BTreeMap<String, u64>>,
    pub domain_path: BTreeMap<String, BTreeMap<String, u64>>,
    pub domain_param: BTreeMap<String, BTreeMap<String, u64>>,
    /// Hop URLs that did not parse and contributed nothing.
    pub skipped_urls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    SubdomainFanout,
    PathFanout,
    ParamCooccurrence,
}

impl std::fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CandidateKind::SubdomainFanout => "subdomain_fanout",
            CandidateKind::PathFanout => "path_fanout",
            CandidateKind::ParamCooccurrence => "param_cooccurrence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCandidate {
    pub kind: CandidateKind,
    pub domain: String,
    pub detail: String,
    pub count: u64,
}

/// Tally one pass over all hop URLs of all chains.
pub fn build_tables(chains: &[ResolvedChain]) -> CooccurrenceTable {
    let mut table = CooccurrenceTable::default();
    for chain in chains {
        for hop in &chain.hops {
            let Ok(parsed) = url::Url::parse(hop.url.trim()) else {
                table.skipped_urls += 1;
                continue;
            };
            let Some(host) = parsed.host_str() else {
                table.skipped_urls += 1;
                continue;
            };
            let (domain, subdomain) = split_host(host);
            if !subdomain.is_empty() {
                *table
                    .domain_subdomain
                    .entry(domain.clone())
                    .or_default()
                    .entry(subdomain)
                    .or_insert(0) += 1;
            }
            if let Some(segment) = parsed.path().split('/').find(|s| !s.is_empty()) {
                *table
                    .domain_path
                    .entry(domain.clone())
                    .or_default()
                    .entry(segment.to_string())
                    .or_insert(0) += 1;
            }
            let names: BTreeSet<String> = parsed
                .query_pairs()
                .map(|(name, _)| name.into_owned())
                .collect();
            for name in names {
                *table
                    .domain_param
                    .entry(domain.clone())
                    .or_default()
                    .entry(name)
                    .or_insert(0) += 1;
            }
        }
    }
    table
}

/// Candidates crossing the review threshold. Parameter candidates use
/// occurrence counts; fan-out candidates use the number of distinct
/// subdomains or first path segments seen for the domain. Sorted by count
/// descending, then (domain, detail).
pub fn candidates(table: &CooccurrenceTable, min_count: u64) -> Vec<PatternCandidate> {
    let mut out = Vec::new();
    for (domain, subs) in &table.domain_subdomain {
        let distinct = subs.len() as u64;
        if distinct >= min_count {
            out.push(PatternCandidate {
                kind: CandidateKind::SubdomainFanout,
                domain: domain.clone(),
                detail: format!("{distinct} distinct subdomains"),
                count: distinct,
            });
        }
    }
    for (domain, segments) in &table.domain_path {
        let distinct = segments.len() as u64;
        if distinct >= min_count {
            out.push(PatternCandidate {
                kind: CandidateKind::PathFanout,
                domain: domain.clone(),
                detail: format!("{distinct} distinct first path segments"),
                count: distinct,
            });
        }
    }
    for (domain, params) in &table.domain_param {
        for (name, &count) in params {
            if count >= min_count {
                out.push(PatternCandidate {
                    kind: CandidateKind::ParamCooccurrence,
                    domain: domain.clone(),
                    detail: name.clone(),
                    count,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.domain.cmp(&b.domain))
            .then_with(|| a.detail.cmp(&b.detail))
    });
    out
}

/// Write the analyst sheet: tab-separated, one row per candidate in the
/// given order, with an empty disposition column to fill in.
pub fn export_review_sheet(
    cands: &[PatternCandidate],
    path: &std::path::Path,
) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "kind\tdomain\tdetail\tcount\tdisposition")?;
    for c in cands {
        writeln!(file, "{}\t{}\t{}\t{}\t", c.kind, c.domain, c.detail, c.count)?;
    }
    file.flush()
}
