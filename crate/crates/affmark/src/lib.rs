//! Measurement pipeline for affiliate marketing on social media.
//!
//! The crate covers the stages needed to measure how often social media
//! content (YouTube video descriptions, Pinterest pin descriptions) carries
//! affiliate marketing links and how often those links come with a
//! disclosure:
//!
//! * [`corpus`]: content records, JSONL corpus IO, URL extraction, id
//!   sampling helpers and an English-text heuristic.
//! * [`resolve`]: redirect chain resolution (HTTP 3XX and meta refresh)
//!   behind a pluggable [`resolve::Fetcher`].
//! * [`detect`]: the affiliate URL pattern database and matching.
//! * [`mine`]: frequency tables over resolved chains for discovering new
//!   affiliate URL patterns.
//! * [`cluster`]: agglomerative hierarchical clustering, generic over the
//!   scalar type.
//! * [`disclose`]: sentence segmentation, vectorization and the rule-based
//!   disclosure classifier.
//! * [`stats`]: prevalence aggregation, Mann-Whitney U tests and the
//!   Bonferroni correction.
//! * [`fixture`]: a local TCP fixture server for offline resolver tests.

pub mod cluster;
pub mod corpus;
pub mod detect;
pub mod disclose;
pub mod domain;
pub mod fixture;
pub mod mine;
pub mod resolve;
pub mod stats;

/// Cluster tree over the default scalar type.
pub type ClusterTree = cluster::ClusterTree<f64>;

/// Merge step over the default scalar type.
pub type Merge = cluster::Merge<f64>;
