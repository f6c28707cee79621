//! File-based measurement pipeline for affiliate links and disclosures.
//!
//! Stages communicate through JSONL files so the expensive resolve step is
//! cached and every later stage is a pure function of its inputs: identical
//! input files and flags produce byte-identical outputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 resolve completed
//! but with a failure rate above the configured threshold.

use affmark::cluster::Linkage;
use affmark::corpus::{extract_urls, load_corpus, ContentItem, Platform};
use affmark::detect::{detect_affiliate, load_pattern_db, AffiliateVerdict, PatternDb};
use affmark::disclose::{
    cluster_digest, extract_disclosures, hcluster_with, tokenize, vectorize, DisclosureRecord,
    DisclosureType, Sentence,
};
use affmark::mine::{build_tables, candidates, export_review_sheet};
use affmark::resolve::{
    resolve_corpus, Fetcher, HttpFetcher, ResolveOutcome, ResolvePolicy, ResolvedChain,
    ScriptedFetcher,
};
use affmark::stats::{engagement_comparison_with, prevalence_by_category, CategoryStats};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "affmark", version, about = "Affiliate link and disclosure measurement pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve redirect chains for every URL in the corpus into a cache file
    Resolve(ResolveArgs),
    /// Classify each corpus item as affiliate or not using resolved chains
    Detect(DetectArgs),
    /// Mine the chain cache for recurring URL structure worth manual review
    Mine(MineArgs),
    /// Extract and classify disclosure sentences from item descriptions
    Disclose(DiscloseArgs),
    /// Aggregate verdicts and disclosures into prevalence and engagement tables
    Report(ReportArgs),
    /// Pattern database maintenance
    Patterns(PatternsArgs),
}

#[derive(Args)]
struct ResolveArgs {
    /// Corpus JSONL file
    #[arg(long)]
    input: PathBuf,
    /// Chain cache JSONL file; existing entries are reused, missing ones fetched
    #[arg(long)]
    cache: PathBuf,
    /// Maximum redirects to follow per URL
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Concurrent fetch workers
    #[arg(long, default_value_t = 16)]
    max_parallel: usize,
    /// Exit 3 when more than this percentage of chains fail to fetch
    #[arg(long, default_value_t = 10.0)]
    failure_threshold: f64,
    /// Serve responses from this JSONL script instead of the network
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Corpus JSONL file
    #[arg(long)]
    input: PathBuf,
    /// Pattern database JSONL file; defaults to the built-in database
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Chain cache written by the resolve stage
    #[arg(long)]
    cache: PathBuf,
    /// Verdicts JSONL file to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Chain cache written by the resolve stage
    #[arg(long)]
    cache: PathBuf,
    /// Minimum occurrence count for a candidate to appear
    #[arg(long, default_value_t = 15)]
    min_count: u64,
    /// Review sheet TSV file to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DiscloseArgs {
    /// Corpus JSONL file
    #[arg(long)]
    input: PathBuf,
    /// Disclosure records JSONL file to write
    #[arg(long)]
    output: PathBuf,
    /// Only keep disclosures from items that detection marks affiliate
    #[arg(long)]
    affiliate_only: bool,
    /// Pattern database for --affiliate-only; defaults to the built-in database
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Chain cache for --affiliate-only
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Cut the cluster tree at this distance for the digest
    #[arg(long, default_value_t = 1.5)]
    cluster_threshold: f64,
    /// Cluster linkage: single, complete or average
    #[arg(long, default_value = "average", value_parser = parse_linkage)]
    linkage: Linkage,
    /// Cluster at most this many sentences; a seeded sample is drawn past it
    #[arg(long, default_value_t = 500)]
    cluster_sample: usize,
    /// Seed for the digest sample
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster digest JSON file; defaults to the output path with a
    /// .digest.json extension
    #[arg(long)]
    digest: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Corpus JSONL file
    #[arg(long)]
    input: PathBuf,
    /// Verdicts JSONL written by the detect stage
    #[arg(long)]
    verdicts: PathBuf,
    /// Disclosure records JSONL written by the disclose stage
    #[arg(long)]
    disclosures: PathBuf,
    /// Machine-readable report JSONL file to write
    #[arg(long)]
    output: PathBuf,
    /// Categories below this many affiliate items are flagged excluded
    #[arg(long, default_value_t = 100)]
    min_affiliate: u64,
    /// Family significance level for the engagement tests
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
}

#[derive(Args)]
struct PatternsArgs {
    #[command(subcommand)]
    action: PatternsAction,
}

#[derive(Subcommand)]
enum PatternsAction {
    /// Check database shape and the per-pattern example and negative URLs
    Validate {
        /// Pattern database JSONL file; defaults to the built-in database
        #[arg(long)]
        patterns: Option<PathBuf>,
    },
}

fn parse_linkage(s: &str) -> Result<Linkage, String> {
    s.parse()
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    PartialFailure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::PartialFailure(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::PartialFailure(m) => {
                f.write_str(m)
            }
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful output, not usage errors.
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Resolve(args) => cmd_resolve(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Mine(args) => cmd_mine(args),
        Command::Disclose(args) => cmd_disclose(args),
        Command::Report(args) => cmd_report(args),
        Command::Patterns(args) => match args.action {
            PatternsAction::Validate { patterns } => cmd_patterns_validate(patterns),
        },
    }
}

/// One serde value per line, with errors naming the offending line.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {what} file {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{what} file {} line {}: {e}", path.display(), i + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T], what: &str) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {what} file {}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(data_err)?;
        out.write_all(b"\n").map_err(data_err)?;
    }
    out.flush().map_err(data_err)
}

fn load_patterns(path: &Option<PathBuf>) -> Result<&'static PatternDb, CliError> {
    match path {
        None => Ok(PatternDb::shipped()),
        Some(p) => {
            // The db is read once per process; leaking keeps one return type.
            let db = load_pattern_db(p).map_err(data_err)?;
            Ok(Box::leak(Box::new(db)))
        }
    }
}

fn corpus_urls(items: &[ContentItem]) -> BTreeSet<String> {
    items
        .iter()
        .flat_map(|item| extract_urls(&item.description))
        .collect()
}

fn cmd_resolve(args: ResolveArgs) -> Result<(), CliError> {
    let items = load_corpus(&args.input).map_err(data_err)?;
    let urls = corpus_urls(&items);

    let mut cache: BTreeMap<String, ResolvedChain> = BTreeMap::new();
    if args.cache.exists() {
        for chain in read_jsonl::<ResolvedChain>(&args.cache, "cache")? {
            cache.insert(chain.original_url.clone(), chain);
        }
    }

    let missing: Vec<String> = urls.iter().filter(|u| !cache.contains_key(*u)).cloned().collect();
    let reused = urls.len() - missing.len();
    if !missing.is_empty() {
        let policy = ResolvePolicy {
            max_depth: args.max_depth,
            timeout_seconds: args.timeout,
            max_parallel: args.max_parallel,
        };
        let fetcher: Box<dyn Fetcher> = match &args.script {
            Some(path) => Box::new(ScriptedFetcher::from_jsonl_path(path).map_err(data_err)?),
            None => Box::new(HttpFetcher::new().map_err(data_err)?),
        };
        for chain in resolve_corpus(fetcher.as_ref(), &missing, &policy) {
            cache.insert(chain.original_url.clone(), chain);
        }
    }

    let rows: Vec<&ResolvedChain> = cache.values().collect();
    write_jsonl(&args.cache, &rows, "cache")?;

    let failed = urls
        .iter()
        .filter(|u| {
            matches!(
                cache[*u].outcome,
                ResolveOutcome::Timeout | ResolveOutcome::HttpError | ResolveOutcome::FetchFailed
            )
        })
        .count();
    let rate = if urls.is_empty() {
        0.0
    } else {
        100.0 * failed as f64 / urls.len() as f64
    };
    eprintln!(
        "resolved {} urls ({} reused from cache, {} failed, {:.2}% failure rate)",
        urls.len(),
        reused,
        failed,
        rate
    );
    if rate > args.failure_threshold {
        return Err(CliError::PartialFailure(format!(
            "{failed} of {} chains failed ({rate:.2}% > {}% threshold); cache was still written",
            urls.len(),
            args.failure_threshold
        )));
    }
    Ok(())
}

fn read_cache_map(path: &Path) -> Result<HashMap<String, ResolvedChain>, CliError> {
    Ok(read_jsonl::<ResolvedChain>(path, "cache")?
        .into_iter()
        .map(|c| (c.original_url.clone(), c))
        .collect())
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let items = load_corpus(&args.input).map_err(data_err)?;
    let db = load_patterns(&args.patterns)?;
    let cache = read_cache_map(&args.cache)?;

    let mut verdicts = Vec::with_capacity(items.len());
    for item in &items {
        verdicts.push(detect_affiliate(item, &cache, db).map_err(data_err)?);
    }
    write_jsonl(&args.output, &verdicts, "verdicts")?;

    let affiliate = verdicts.iter().filter(|v| v.is_affiliate).count();
    eprintln!(
        "classified {} items, {} affiliate (pattern db {})",
        verdicts.len(),
        affiliate,
        db.version
    );
    Ok(())
}

fn cmd_mine(args: MineArgs) -> Result<(), CliError> {
    let chains = read_jsonl::<ResolvedChain>(&args.cache, "cache")?;
    let table = build_tables(&chains);
    let found = candidates(&table, args.min_count);
    export_review_sheet(&found, &args.output).map_err(data_err)?;
    eprintln!(
        "mined {} chains into {} candidates at min count {}",
        chains.len(),
        found.len(),
        args.min_count
    );
    Ok(())
}

fn cmd_disclose(args: DiscloseArgs) -> Result<(), CliError> {
    let mut items = load_corpus(&args.input).map_err(data_err)?;

    if args.affiliate_only {
        let Some(cache_path) = &args.cache else {
            return Err(CliError::Usage(
                "--affiliate-only needs --cache from the resolve stage".to_string(),
            ));
        };
        let db = load_patterns(&args.patterns)?;
        let cache = read_cache_map(cache_path)?;
        let mut kept = Vec::new();
        for item in items {
            if detect_affiliate(&item, &cache, db).map_err(data_err)?.is_affiliate {
                kept.push(item);
            }
        }
        items = kept;
    }

    let records = extract_disclosures(&items);
    write_jsonl(&args.output, &records, "disclosures")?;

    let digest_path = args
        .digest
        .clone()
        .unwrap_or_else(|| args.output.with_extension("digest.json"));
    let digest = build_digest(&records, &args)?;
    let mut body = serde_json::to_string_pretty(&digest).map_err(data_err)?;
    body.push('\n');
    std::fs::write(&digest_path, body).map_err(|e| {
        CliError::Data(format!("cannot write digest file {}: {e}", digest_path.display()))
    })?;

    eprintln!(
        "extracted {} disclosure records from {} items; digest has {} clusters",
        records.len(),
        items.len(),
        digest.len()
    );
    Ok(())
}

fn build_digest(
    records: &[DisclosureRecord],
    args: &DiscloseArgs,
) -> Result<Vec<affmark::disclose::ClusterDigest>, CliError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut picked: Vec<usize> = (0..records.len()).collect();
    if picked.len() > args.cluster_sample.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        picked.shuffle(&mut rng);
        picked.truncate(args.cluster_sample.max(1));
        picked.sort_unstable();
    }
    let sentences: Vec<Sentence> = picked
        .iter()
        .map(|&i| {
            let r = &records[i];
            Sentence {
                content_id: r.content_id.clone(),
                line_index: r.line_index,
                sentence_index: r.sentence_index,
                text: r.text.clone(),
                tokens: tokenize(&r.text),
            }
        })
        .collect();
    let vectors = vectorize(&sentences);
    let tree = hcluster_with(&vectors, args.linkage).map_err(data_err)?;
    Ok(cluster_digest(&sentences, &vectors, &tree, args.cluster_threshold))
}

/// Share of a platform's affiliate items carrying at least one disclosure
/// of the type.
#[derive(Debug, Clone, Serialize)]
struct TypePrevalence {
    platform: Platform,
    disclosure_type: DisclosureType,
    n_items: u64,
    prevalence_pct: f64,
}

fn type_prevalence(
    items: &[ContentItem],
    verdicts: &[AffiliateVerdict],
    disclosures: &[DisclosureRecord],
) -> Vec<TypePrevalence> {
    let affiliate_ids: BTreeMap<&str, Platform> = {
        let verdict_by_id: HashMap<&str, bool> = verdicts
            .iter()
            .map(|v| (v.content_id.as_str(), v.is_affiliate))
            .collect();
        items
            .iter()
            .filter(|i| verdict_by_id.get(i.id.as_str()).copied().unwrap_or(false))
            .map(|i| (i.id.as_str(), i.platform))
            .collect()
    };
    let mut affiliate_total: BTreeMap<Platform, u64> = BTreeMap::new();
    for platform in affiliate_ids.values() {
        *affiliate_total.entry(*platform).or_insert(0) += 1;
    }

    let mut typed: BTreeMap<(Platform, String), BTreeSet<&str>> = BTreeMap::new();
    for record in disclosures {
        let Some(&platform) = affiliate_ids.get(record.content_id.as_str()) else {
            continue;
        };
        typed
            .entry((platform, record.dtype.to_string()))
            .or_default()
            .insert(record.content_id.as_str());
    }

    let mut rows = Vec::new();
    for (&platform, &total) in &affiliate_total {
        for dtype in [
            DisclosureType::AffiliateLink,
            DisclosureType::Explanation,
            DisclosureType::ChannelSupport,
        ] {
            // Channel-support wording is only a disclosure on YouTube.
            if platform == Platform::Pinterest && dtype == DisclosureType::ChannelSupport {
                continue;
            }
            let n = typed
                .get(&(platform, dtype.to_string()))
                .map(|ids| ids.len() as u64)
                .unwrap_or(0);
            rows.push(TypePrevalence {
                platform,
                disclosure_type: dtype,
                n_items: n,
                prevalence_pct: if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 },
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.platform, a.disclosure_type.to_string())
            .cmp(&(b.platform, b.disclosure_type.to_string()))
    });
    rows
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportRecord<'a> {
    Category(&'a CategoryStats),
    TypePrevalence(&'a TypePrevalence),
    Engagement(&'a affmark::stats::RankTestResult),
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let items = load_corpus(&args.input).map_err(data_err)?;
    let verdicts = read_jsonl::<AffiliateVerdict>(&args.verdicts, "verdicts")?;
    let disclosures = read_jsonl::<DisclosureRecord>(&args.disclosures, "disclosures")?;

    let categories = prevalence_by_category(&items, &verdicts, &disclosures, args.min_affiliate)
        .map_err(data_err)?;
    let types = type_prevalence(&items, &verdicts, &disclosures);
    let engagement = engagement_comparison_with(&items, &verdicts, args.alpha).map_err(data_err)?;

    let mut rows: Vec<ReportRecord> = Vec::new();
    rows.extend(categories.iter().map(ReportRecord::Category));
    rows.extend(types.iter().map(ReportRecord::TypePrevalence));
    rows.extend(engagement.iter().map(ReportRecord::Engagement));
    write_jsonl(&args.output, &rows, "report")?;

    print_report(&categories, &types, &engagement);
    Ok(())
}

fn print_report(
    categories: &[CategoryStats],
    types: &[TypePrevalence],
    engagement: &[affmark::stats::RankTestResult],
) {
    println!("Affiliate content by category");
    println!(
        "{:<28} {:>8} {:>10} {:>7} {:>10} {:>7} {:>8} {:>9}",
        "category", "items", "affiliate", "aff%", "disclosed", "raw%", "scaled%", "creators"
    );
    for c in categories {
        println!(
            "{:<28} {:>8} {:>10} {:>7.2} {:>10} {:>7.2} {:>8.2} {:>9}{}",
            c.category,
            c.n_items,
            c.n_affiliate,
            c.affiliate_pct,
            c.n_disclosed,
            c.disclosed_raw_pct,
            c.disclosed_scaled_pct,
            c.unique_disclosing_creators,
            if c.excluded { "  (below cutoff)" } else { "" }
        );
    }

    println!();
    println!("Disclosure prevalence across affiliate content");
    println!(
        "{:<12} {:<16} {:>8} {:>12}",
        "platform", "type", "items", "prevalence%"
    );
    for t in types {
        println!(
            "{:<12} {:<16} {:>8} {:>12.2}",
            t.platform.to_string(),
            t.disclosure_type.to_string(),
            t.n_items,
            t.prevalence_pct
        );
    }

    println!();
    println!("Engagement: affiliate vs non-affiliate");
    println!(
        "{:<20} {:>14} {:>12} {:>8} {:>8} {:>14} {:>12}",
        "metric", "U", "p", "n1", "n2", "method", "significant"
    );
    for r in engagement {
        println!(
            "{:<20} {:>14.1} {:>12} {:>8} {:>8} {:>14} {:>12}",
            r.metric,
            r.u_statistic,
            format_p(r.p_value),
            r.n1,
            r.n2,
            match r.method {
                affmark::stats::TestMethod::Exact => "exact",
                affmark::stats::TestMethod::NormalApprox => "normal_approx",
            },
            r.significant
        );
    }
}

fn format_p(p: f64) -> String {
    if p != 0.0 && p < 0.001 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn cmd_patterns_validate(path: Option<PathBuf>) -> Result<(), CliError> {
    let db = load_patterns(&path)?;
    if db.patterns.len() != 57 {
        return Err(CliError::Data(format!(
            "expected 57 patterns, found {}",
            db.patterns.len()
        )));
    }
    let companies = db.companies().len();
    if companies != 33 {
        return Err(CliError::Data(format!(
            "expected 33 companies, found {companies}"
        )));
    }
    db.verify_examples().map_err(data_err)?;
    eprintln!(
        "pattern db {} ok: 57 patterns, 33 companies, example suite passed",
        db.version
    );
    Ok(())
}
