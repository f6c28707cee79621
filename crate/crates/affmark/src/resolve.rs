//! Redirect-chain resolution.
//!
//! Affiliate links are routinely hidden behind shorteners, so classification
//! has to look at every URL a click passes through, not just the one in the
//! description. [`resolve`] follows a single URL hop by hop, honouring both
//! HTTP `Location` redirects and HTML meta-refresh tags, and records the full
//! chain together with how it ended. [`resolve_corpus`] runs many URLs the
//! same way across a bounded worker pool.
//!
//! Network access goes through the [`Fetcher`] trait so the resolver itself
//! is deterministic and testable: [`HttpFetcher`] talks to the real network,
//! [`ScriptedFetcher`] serves canned responses from memory or a JSONL script.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;
use url::Url;

/// How the chain left a hop, or that it did not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedirectMechanism {
    HttpRedirect,
    MetaRefresh,
    Terminal,
}

/// One visited URL in a chain. `status` is the HTTP status received for the
/// request, or 0 when the URL was never successfully fetched (timeouts,
/// transport failures, and the unfetched hop that closes a detected loop).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub url: String,
    pub status: u16,
    pub mechanism: RedirectMechanism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolveOutcome {
    Resolved,
    Timeout,
    HttpError,
    LoopDetected,
    DepthExceeded,
    FetchFailed,
}

/// A fully recorded chain. `hops[0].url` is the input string exactly as
/// given; later hop URLs are in normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedChain {
    pub original_url: String,
    pub hops: Vec<Hop>,
    pub outcome: ResolveOutcome,
}

impl ResolvedChain {
    /// URL of the last hop, i.e. where the chain stopped.
    pub fn final_url(&self) -> Option<&str> {
        self.hops.last().map(|h| h.url.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvePolicy {
    /// Maximum number of redirections to follow; a chain may therefore
    /// record up to `max_depth + 1` hops.
    pub max_depth: usize,
    /// Per-request timeout. Values below 1 are treated as 1.
    pub timeout_seconds: u64,
    /// Worker threads for corpus resolution. Values below 1 are treated as 1.
    pub max_parallel: usize,
}

impl Default for ResolvePolicy {
    fn default() -> Self {
        ResolvePolicy {
            max_depth: 10,
            timeout_seconds: 30,
            max_parallel: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchResponse {
    pub status: u16,
    /// Value of the `Location` header, if any.
    pub location: Option<String>,
    /// Value of the `Content-Type` header, if any.
    pub content_type: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum FetchError {
    #[error("request timed out")]
    Timeout,
    #[error("fetch failed: {0}")]
    Failed(String),
}

/// Transport abstraction used by the resolver. Implementations must be
/// shareable across the worker pool.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url, timeout: Duration) -> Result<FetchResponse, FetchError>;
}

/// Extract the redirect target of the first `http-equiv="refresh"` meta tag,
/// resolved against `base_url`. Attribute names, the `refresh` keyword and
/// the `url=` clause are matched case-insensitively; a refresh without a
/// `url=` clause reloads the same page and yields `None`.
pub fn parse_meta_refresh(html: &str, base_url: &Url) -> Option<String> {
    use std::sync::OnceLock;
    static TAG: OnceLock<regex::Regex> = OnceLock::new();
    static EQUIV: OnceLock<regex::Regex> = OnceLock::new();
    static CONTENT: OnceLock<regex::Regex> = OnceLock::new();
    let tag_re = TAG.get_or_init(|| regex::Regex::new(r"(?is)<meta\b[^>]*>").unwrap());
    let equiv_re = EQUIV.get_or_init(|| {
        regex::Regex::new(r#"(?i)http-equiv\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+))"#).unwrap()
    });
    let content_re = CONTENT.get_or_init(|| {
        regex::Regex::new(r#"(?i)\bcontent\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+))"#).unwrap()
    });

    fn attr<'t>(caps: regex::Captures<'t>) -> &'t str {
        caps.get(1)
            .or_else(|| caps.get(2))
            .or_else(|| caps.get(3))
            .map(|m| m.as_str())
            .unwrap_or("")
    }

    for tag in tag_re.find_iter(html) {
        let tag = tag.as_str();
        let Some(equiv) = equiv_re.captures(tag).map(attr) else {
            continue;
        };
        if !equiv.trim().eq_ignore_ascii_case("refresh") {
            continue;
        }
        // First refresh tag decides, whether or not it names a target.
        let content = content_re.captures(tag).map(attr)?;
        let target = refresh_target(content)?;
        return base_url.join(target).ok().map(String::from);
    }
    None
}

/// Pull the target out of a refresh `content` value like `0; url=...`.
fn refresh_target(content: &str) -> Option<&str> {
    for part in content.split(';') {
        let part = part.trim();
        if part.len() < 4 || !part[..3].eq_ignore_ascii_case("url") {
            continue;
        }
        let rest = part[3..].trim_start();
        let Some(value) = rest.strip_prefix('=') else {
            continue;
        };
        let mut value = value.trim();
        if value.len() >= 2
            && ((value.starts_with('"') && value.ends_with('"'))
                || (value.starts_with('\'') && value.ends_with('\'')))
        {
            value = value[1..value.len() - 1].trim();
        }
        if !value.is_empty() {
            return Some(value);
        }
    }
    None
}

/// Follow `original_url` until the chain terminates, recording every hop.
pub fn resolve(fetcher: &dyn Fetcher, original_url: &str, policy: &ResolvePolicy) -> ResolvedChain {
    let timeout = Duration::from_secs(policy.timeout_seconds.max(1));
    let mut hops: Vec<Hop> = Vec::new();

    let mut current = match Url::parse(original_url.trim()) {
        Ok(u) if u.scheme() == "http" || u.scheme() == "https" => u,
        _ => {
            hops.push(Hop {
                url: original_url.to_string(),
                status: 0,
                mechanism: RedirectMechanism::Terminal,
            });
            return ResolvedChain {
                original_url: original_url.to_string(),
                hops,
                outcome: ResolveOutcome::FetchFailed,
            };
        }
    };
    // Hop 0 keeps the input spelling; the seen set works on normalized URLs
    // so that trivially different spellings of the same address close loops.
    let mut current_label = original_url.to_string();
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(current.to_string());

    let outcome = loop {
        let response = match fetcher.fetch(&current, timeout) {
            Ok(r) => r,
            Err(err) => {
                hops.push(Hop {
                    url: current_label,
                    status: 0,
                    mechanism: RedirectMechanism::Terminal,
                });
                break match err {
                    FetchError::Timeout => ResolveOutcome::Timeout,
                    FetchError::Failed(_) => ResolveOutcome::FetchFailed,
                };
            }
        };

        let next = next_hop(&response, &current);
        match next {
            None => {
                hops.push(Hop {
                    url: current_label,
                    status: response.status,
                    mechanism: RedirectMechanism::Terminal,
                });
                break if response.status >= 400 {
                    ResolveOutcome::HttpError
                } else {
                    ResolveOutcome::Resolved
                };
            }
            Some((next_url, mechanism)) => {
                hops.push(Hop {
                    url: current_label,
                    status: response.status,
                    mechanism,
                });
                if hops.len() > policy.max_depth {
                    break ResolveOutcome::DepthExceeded;
                }
                let key = next_url.to_string();
                if !seen.insert(key.clone()) {
                    // Close the loop with the revisited URL, unfetched.
                    hops.push(Hop {
                        url: key,
                        status: 0,
                        mechanism: RedirectMechanism::Terminal,
                    });
                    break ResolveOutcome::LoopDetected;
                }
                current_label = key;
                current = next_url;
            }
        }
    };

    ResolvedChain {
        original_url: original_url.to_string(),
        hops,
        outcome,
    }
}

/// Where, if anywhere, the response sends the client next. HTTP redirects
/// take precedence; meta refresh applies only to 2xx HTML responses. A
/// redirect status without a Location header, or a target that is not an
/// absolute-after-join http(s) URL, ends the chain.
fn next_hop(response: &FetchResponse, base: &Url) -> Option<(Url, RedirectMechanism)> {
    let target = if (300..400).contains(&response.status) {
        response
            .location
            .as_deref()
            .map(|loc| (loc.to_string(), RedirectMechanism::HttpRedirect))
    } else if (200..300).contains(&response.status) && is_html(response.content_type.as_deref()) {
        parse_meta_refresh(&response.body, base).map(|t| (t, RedirectMechanism::MetaRefresh))
    } else {
        None
    };
    let (target, mechanism) = target?;
    let joined = base.join(&target).ok()?;
    if joined.scheme() == "http" || joined.scheme() == "https" {
        Some((joined, mechanism))
    } else {
        None
    }
}

fn is_html(content_type: Option<&str>) -> bool {
    content_type
        .map(|ct| ct.to_ascii_lowercase().contains("html"))
        .unwrap_or(false)
}

/// Resolve every URL in `urls`, preserving input order in the output. Work
/// is pulled from a shared index by up to `policy.max_parallel` threads, so
/// results do not depend on scheduling.
pub fn resolve_corpus(
    fetcher: &dyn Fetcher,
    urls: &[String],
    policy: &ResolvePolicy,
) -> Vec<ResolvedChain> {
    if urls.is_empty() {
        return Vec::new();
    }
    let workers = policy.max_parallel.max(1).min(urls.len());
    let cursor = AtomicUsize::new(0);

    let mut slots: Vec<Option<ResolvedChain>> = Vec::with_capacity(urls.len());
    slots.resize_with(urls.len(), || None);

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let cursor = &cursor;
            handles.push(scope.spawn(move || {
                let mut done: Vec<(usize, ResolvedChain)> = Vec::new();
                loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= urls.len() {
                        break;
                    }
                    done.push((i, resolve(fetcher, &urls[i], policy)));
                }
                done
            }));
        }
        for handle in handles {
            for (i, chain) in handle.join().expect("resolver worker panicked") {
                slots[i] = Some(chain);
            }
        }
    });

    slots.into_iter().map(|s| s.unwrap()).collect()
}

/// Live transport over reqwest. Automatic redirect following is disabled;
/// the resolver is the one walking the chain.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new() -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .map_err(|e| FetchError::Failed(e.to_string()))?;
        Ok(HttpFetcher { client })
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url, timeout: Duration) -> Result<FetchResponse, FetchError> {
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                FetchError::Timeout
            } else {
                FetchError::Failed(e.to_string())
            }
        };
        let response = self
            .client
            .get(url.as_str())
            .timeout(timeout)
            .send()
            .map_err(map_err)?;
        let status = response.status().as_u16();
        let header = |name: reqwest::header::HeaderName| {
            response
                .headers()
                .get(&name)
                .and_then(|v| v.to_str().ok())
                .map(String::from)
        };
        let location = header(reqwest::header::LOCATION);
        let content_type = header(reqwest::header::CONTENT_TYPE);
        let body = response.text().map_err(map_err)?;
        Ok(FetchResponse {
            status,
            location,
            content_type,
            body,
        })
    }
}

/// Canned reply for one URL in a [`ScriptedFetcher`].
#[derive(Debug, Clone)]
pub enum ScriptedReply {
    Respond(FetchResponse),
    Timeout,
    Fail(String),
}

/// In-memory fetcher keyed by normalized URL. Unknown URLs fail the fetch,
/// which surfaces as a `fetch_failed` outcome rather than a panic, so a
/// script that misses a hop is visible in the output.
#[derive(Debug, Default)]
pub struct ScriptedFetcher {
    replies: HashMap<String, ScriptedReply>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("failed to read fixture script: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture script line {line}: {message}")]
    Line { line: usize, message: String },
}

impl ScriptedFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a reply. The key is normalized through [`Url`], matching
    /// what the resolver asks for.
    pub fn insert(&mut self, url: &str, reply: ScriptedReply) {
        let key = Url::parse(url)
            .map(|u| u.to_string())
            .unwrap_or_else(|_| url.to_string());
        self.replies.insert(key, reply);
    }

    pub fn respond(
        &mut self,
        url: &str,
        status: u16,
        location: Option<&str>,
        content_type: Option<&str>,
        body: &str,
    ) {
        self.insert(
            url,
            ScriptedReply::Respond(FetchResponse {
                status,
                location: location.map(String::from),
                content_type: content_type.map(String::from),
                body: body.to_string(),
            }),
        );
    }

    /// Load a script from JSONL. Each line holds `url` plus either
    /// `"timeout": true`, `"fail": "message"`, or a response
    /// (`status`, optional `location` / `content_type` / `body`).
    pub fn from_jsonl_path(path: &std::path::Path) -> Result<Self, ScriptError> {
        #[derive(Deserialize)]
        struct Row {
            url: String,
            #[serde(default)]
            timeout: bool,
            #[serde(default)]
            fail: Option<String>,
            #[serde(default)]
            status: Option<u16>,
            #[serde(default)]
            location: Option<String>,
            #[serde(default)]
            content_type: Option<String>,
            #[serde(default)]
            body: Option<String>,
        }

        let file = std::fs::File::open(path)?;
        let mut fetcher = ScriptedFetcher::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| ScriptError::Line {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let reply = if row.timeout {
                ScriptedReply::Timeout
            } else if let Some(message) = row.fail {
                ScriptedReply::Fail(message)
            } else {
                let status = row.status.ok_or_else(|| ScriptError::Line {
                    line: idx + 1,
                    message: "response row needs a status".to_string(),
                })?;
                ScriptedReply::Respond(FetchResponse {
                    status,
                    location: row.location,
                    content_type: row.content_type,
                    body: row.body.unwrap_or_default(),
                })
            };
            fetcher.insert(&row.url, reply);
        }
        Ok(fetcher)
    }
}

impl Fetcher for ScriptedFetcher {
    fn fetch(&self, url: &Url, _timeout: Duration) -> Result<FetchResponse, FetchError> {
        match self.replies.get(url.as_str()) {
            Some(ScriptedReply::Respond(r)) => Ok(r.clone()),
            Some(ScriptedReply::Timeout) => Err(FetchError::Timeout),
            Some(ScriptedReply::Fail(message)) => Err(FetchError::Failed(message.clone())),
            None => Err(FetchError::Failed(format!("no scripted reply for {url}"))),
        }
    }
}
