//! End-to-end runs of the compiled binary over the bundled demo corpus.
//! The resolve stage reads canned responses from the demo script, so the
//! whole pipeline runs offline.

use affmark::detect::AffiliateVerdict;
use affmark::disclose::{DisclosureRecord, DisclosureType};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Output;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_affmark"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Stage {
    dir: tempfile::TempDir,
}

impl Stage {
    fn new() -> Self {
        Stage { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn resolve(&self) -> PathBuf {
        let cache = self.path("cache.jsonl");
        run_ok(&[
            "resolve",
            "--input",
            path_str(&fixture("demo_corpus.jsonl")),
            "--cache",
            path_str(&cache),
            "--script",
            path_str(&fixture("demo_script.jsonl")),
        ]);
        cache
    }
}

#[test]
fn resolve_is_idempotent_and_detect_finds_the_planted_links() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let first = std::fs::read(&cache).unwrap();

    // Rerun: all entries come from the cache and the bytes do not move.
    run_ok(&[
        "resolve",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--cache",
        path_str(&cache),
        "--script",
        path_str(&fixture("demo_script.jsonl")),
    ]);
    assert_eq!(std::fs::read(&cache).unwrap(), first);

    let verdicts_path = stage.path("verdicts.jsonl");
    run_ok(&[
        "detect",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--cache",
        path_str(&cache),
        "--output",
        path_str(&verdicts_path),
    ]);
    let verdicts: Vec<AffiliateVerdict> = read_lines(&verdicts_path);
    assert_eq!(verdicts.len(), 14);
    let affiliate: BTreeSet<&str> = verdicts
        .iter()
        .filter(|v| v.is_affiliate)
        .map(|v| v.content_id.as_str())
        .collect();
    let expected: BTreeSet<&str> = [
        "y-tech-01",
        "y-tech-02",
        "y-style-01",
        "y-style-02",
        "y-music-01",
        "y-howto-03",
        "p-fashion-01",
        "p-fashion-02",
        "p-beauty-02",
    ]
    .into_iter()
    .collect();
    assert_eq!(affiliate, expected);

    // The deal shortener matches only through its meta-refresh hop.
    let deal = verdicts.iter().find(|v| v.content_id == "y-style-02").unwrap();
    assert_eq!(deal.matches.len(), 1);
    assert_eq!(deal.matches[0].company, "CJ Affiliate");
    assert!(deal.matches[0].url.contains("anrdoezrs.net"));
}

#[test]
fn disclose_labels_the_planted_sentences() {
    let stage = Stage::new();
    let records_path = stage.path("records.jsonl");
    run_ok(&[
        "disclose",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--output",
        path_str(&records_path),
    ]);
    let records: Vec<DisclosureRecord> = read_lines(&records_path);
    let got: BTreeSet<(String, String)> = records
        .iter()
        .map(|r| (r.content_id.clone(), r.dtype.to_string()))
        .collect();
    let expected: BTreeSet<(String, String)> = [
        ("y-tech-01", "explanation"),
        ("y-tech-02", "affiliate_link"),
        ("y-style-01", "channel_support"),
        ("y-howto-03", "affiliate_link"),
        ("p-fashion-01", "affiliate_link"),
        ("p-fashion-02", "explanation"),
    ]
    .into_iter()
    .map(|(id, t)| (id.to_string(), t.to_string()))
    .collect();
    assert_eq!(got, expected);
    assert!(records.iter().all(|r| r.dtype != DisclosureType::ChannelSupport
        || !r.content_id.starts_with("p-")));

    let digest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stage.path("records.digest.json")).unwrap())
            .unwrap();
    assert!(!digest.as_array().unwrap().is_empty());
}

#[test]
fn report_aggregates_categories_types_and_engagement() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let verdicts_path = stage.path("verdicts.jsonl");
    let records_path = stage.path("records.jsonl");
    let report_path = stage.path("report.jsonl");
    run_ok(&[
        "detect",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--cache",
        path_str(&cache),
        "--output",
        path_str(&verdicts_path),
    ]);
    run_ok(&[
        "disclose",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--output",
        path_str(&records_path),
    ]);
    let out = run_ok(&[
        "report",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--verdicts",
        path_str(&verdicts_path),
        "--disclosures",
        path_str(&records_path),
        "--output",
        path_str(&report_path),
        "--min-affiliate",
        "2",
    ]);

    let rows: Vec<serde_json::Value> = read_lines(&report_path);
    let find = |kind: &str, key: &str, value: &str| {
        rows.iter()
            .find(|r| r["kind"] == kind && r[key] == value)
            .unwrap_or_else(|| panic!("no {kind} row with {key}={value}"))
            .clone()
    };

    let howto = find("category", "category", "Howto & Style");
    assert_eq!(howto["n_items"], 3);
    assert_eq!(howto["n_affiliate"], 3);
    assert_eq!(howto["n_disclosed"], 2);
    // Both disclosed items come from one creator, so scaling halves the rate.
    assert_eq!(howto["unique_disclosing_creators"], 1);
    assert!((howto["disclosed_raw_pct"].as_f64().unwrap() - 200.0 / 3.0).abs() < 1e-9);
    assert!((howto["disclosed_scaled_pct"].as_f64().unwrap() - 100.0 / 3.0).abs() < 1e-9);
    assert_eq!(howto["excluded"], false);

    let music = find("category", "category", "Music");
    assert_eq!(music["n_affiliate"], 1);
    assert_eq!(music["n_disclosed"], 0);
    assert_eq!(music["excluded"], true);

    // Six YouTube affiliate items: 2 affiliate-link, 1 explanation, 1 support.
    let yt_link = rows
        .iter()
        .find(|r| {
            r["kind"] == "type_prevalence"
                && r["platform"] == "youtube"
                && r["disclosure_type"] == "affiliate_link"
        })
        .unwrap();
    assert_eq!(yt_link["n_items"], 2);
    assert!((yt_link["prevalence_pct"].as_f64().unwrap() - 100.0 * 2.0 / 6.0).abs() < 1e-9);
    assert!(!rows.iter().any(|r| {
        r["kind"] == "type_prevalence"
            && r["platform"] == "pinterest"
            && r["disclosure_type"] == "channel_support"
    }));

    let metrics: Vec<&str> = rows
        .iter()
        .filter(|r| r["kind"] == "engagement")
        .map(|r| r["metric"].as_str().unwrap())
        .collect();
    assert_eq!(
        metrics,
        vec![
            "pinterest_repins",
            "youtube_comments",
            "youtube_dislikes",
            "youtube_duration",
            "youtube_likes",
            "youtube_views"
        ]
    );

    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("Affiliate content by category"));
    assert!(table.contains("Howto & Style"));
    assert!(table.contains("pinterest_repins"));
}

#[test]
fn mine_surfaces_the_amazon_tag_pair() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let sheet = stage.path("sheet.tsv");
    run_ok(&[
        "mine",
        "--cache",
        path_str(&cache),
        "--min-count",
        "2",
        "--output",
        path_str(&sheet),
    ]);
    let content = std::fs::read_to_string(&sheet).unwrap();
    assert!(content.starts_with("kind\tdomain\tdetail\tcount\tdisposition\n"));
    assert!(content.contains("param_cooccurrence\tamazon.com\ttag\t2\t"));
    // amazon.de only appears once and stays below the threshold.
    assert!(!content.contains("amazon.de"));
}

#[test]
fn corrupt_cache_line_is_reported_with_its_number() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let mut content = std::fs::read_to_string(&cache).unwrap();
    let keep: Vec<&str> = content.lines().take(2).collect();
    content = format!("{}\n{}\nnot json at all\n", keep[0], keep[1]);
    std::fs::write(&cache, content).unwrap();

    let out = run(&[
        "detect",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--cache",
        path_str(&cache),
        "--output",
        path_str(&stage.path("verdicts.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(stderr.contains("line 3"), "stderr was: {stderr}");
}

#[test]
fn missing_cache_entry_is_a_data_error() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let content = std::fs::read_to_string(&cache).unwrap();
    let pruned: String = content
        .lines()
        .filter(|l| !l.contains("go.linkhub.example"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&cache, pruned).unwrap();

    let out = run(&[
        "detect",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--cache",
        path_str(&cache),
        "--output",
        path_str(&stage.path("verdicts.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("go.linkhub.example"));
}

#[test]
fn excess_failures_exit_three_but_keep_the_cache() {
    let stage = Stage::new();
    let corpus = stage.path("corpus.jsonl");
    let script = stage.path("script.jsonl");
    std::fs::write(
        &corpus,
        r#"{"id":"a","platform":"youtube","description":"watch http://dead.example/a and http://dead.example/b","category":"Gaming","creator_id":"z"}
"#,
    )
    .unwrap();
    std::fs::write(
        &script,
        r#"{"url":"http://dead.example/a","timeout":true}
{"url":"http://dead.example/b","fail":"connection refused"}
"#,
    )
    .unwrap();

    let cache = stage.path("cache.jsonl");
    let out = run(&[
        "resolve",
        "--input",
        path_str(&corpus),
        "--cache",
        path_str(&cache),
        "--script",
        path_str(&script),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&cache).unwrap().lines().count(), 2);

    // A generous threshold accepts the same outcome.
    let out = run(&[
        "resolve",
        "--input",
        path_str(&corpus),
        "--cache",
        path_str(&cache),
        "--script",
        path_str(&script),
        "--failure-threshold",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn affiliate_only_restricts_disclosures() {
    let stage = Stage::new();
    let cache = stage.resolve();
    let all_path = stage.path("all.jsonl");
    let only_path = stage.path("only.jsonl");
    run_ok(&[
        "disclose",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--output",
        path_str(&all_path),
    ]);
    run_ok(&[
        "disclose",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--output",
        path_str(&only_path),
        "--affiliate-only",
        "--cache",
        path_str(&cache),
    ]);
    let all: Vec<DisclosureRecord> = read_lines(&all_path);
    let only: Vec<DisclosureRecord> = read_lines(&only_path);
    // Every demo disclosure sits on an affiliate item, so the sets agree;
    // the flag must never add records.
    assert_eq!(all.len(), only.len());

    let out = run(&[
        "disclose",
        "--input",
        path_str(&fixture("demo_corpus.jsonl")),
        "--output",
        path_str(&stage.path("x.jsonl")),
        "--affiliate-only",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn patterns_validate_accepts_the_builtin_database() {
    let out = run_ok(&["patterns", "validate"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("57 patterns, 33 companies"));
}

#[test]
fn patterns_validate_rejects_a_truncated_database() {
    let stage = Stage::new();
    let shipped = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../affmark/data/patterns.jsonl"),
    )
    .unwrap();
    let truncated: String = shipped.lines().take(56).map(|l| format!("{l}\n")).collect();
    let path = stage.path("patterns.jsonl");
    std::fs::write(&path, truncated).unwrap();

    let out = run(&["patterns", "validate", "--patterns", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("57"));
}
