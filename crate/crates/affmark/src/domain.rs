//! Registrable-domain splitting over a bundled public-suffix snapshot.
//!
//! The miner tallies URL observations per registrable domain ("x.com" for
//! hosts a.x.com and b.x.com, "hotmart.net.br" under the "net.br" rule), so
//! it needs public-suffix-aware host splitting. The snapshot in
//! `data/public_suffixes.txt` follows the public suffix list conventions:
//! one rule per line, `*.` wildcard rules, `!` exception rules.

use std::collections::HashSet;
use std::sync::OnceLock;

struct SuffixRules {
    exact: HashSet<&'static str>,
    /// Base of a `*.x` rule (stored as "x").
    wildcard: HashSet<&'static str>,
    /// Host of a `!x` rule (stored as "x").
    exception: HashSet<&'static str>,
}

fn rules() -> &'static SuffixRules {
    static RULES: OnceLock<SuffixRules> = OnceLock::new();
    RULES.get_or_init(|| {
        let mut r = SuffixRules {
            exact: HashSet::new(),
            wildcard: HashSet::new(),
            exception: HashSet::new(),
        };
        for line in include_str!("../data/public_suffixes.txt").lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            if let Some(base) = line.strip_prefix("*.") {
                r.wildcard.insert(base);
            } else if let Some(host) = line.strip_prefix('!') {
                r.exception.insert(host);
            } else {
                r.exact.insert(line);
            }
        }
        r
    })
}

fn looks_like_ip(host: &str) -> bool {
    host.parse::<std::net::IpAddr>().is_ok()
        || (host.starts_with('[') && host.ends_with(']'))
}

/// Number of labels of the public suffix of `host` (already lowercased),
/// per the public suffix list algorithm: the prevailing rule is the
/// exception rule if any matches, otherwise the longest matching rule;
/// wildcards count one label more than their base. Hosts matching no rule
/// fall back to the implicit `*` rule (the last label).
fn public_suffix_len(labels: &[&str]) -> usize {
    let r = rules();
    let n = labels.len();
    let mut best = 1; // implicit "*" rule
    for start in 0..n {
        let candidate = labels[start..].join(".");
        if r.exception.contains(candidate.as_str()) {
            // Exception rules prevail; the suffix drops their first label.
            return n - start - 1;
        }
        if r.exact.contains(candidate.as_str()) {
            best = best.max(n - start);
        }
        if start > 0 && r.wildcard.contains(candidate.as_str()) {
            best = best.max(n - start + 1);
        }
    }
    best
}

/// Splits a host into (registrable domain, subdomain labels), both
/// lowercased. The subdomain part is empty when the host is exactly its
/// registrable domain. Hosts that are IP literals, a bare public suffix, or
/// a single label are returned whole with an empty subdomain.
pub fn split_host(host: &str) -> (String, String) {
    let host = host.trim_end_matches('.').to_lowercase();
    if host.is_empty() || looks_like_ip(&host) {
        return (host, String::new());
    }
    let labels: Vec<&str> = host.split('.').collect();
    let suffix_len = public_suffix_len(&labels);
    if labels.len() <= suffix_len {
        return (host, String::new());
    }
    let reg_start = labels.len() - suffix_len - 1;
    let registrable = labels[reg_start..].join(".");
    let subdomain = labels[..reg_start].join(".");
    (registrable, subdomain)
}

/// The registrable domain of `host` (see [`split_host`]).
pub fn registrable_domain(host: &str) -> String {
    split_host(host).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_common_hosts() {
        assert_eq!(
            split_host("hop.clickbank.net"),
            ("clickbank.net".into(), "hop".into())
        );
        assert_eq!(split_host("www.amazon.com"), ("amazon.com".into(), "www".into()));
        assert_eq!(split_host("amazon.com"), ("amazon.com".into(), "".into()));
        assert_eq!(
            split_host("a.b.x.com"),
            ("x.com".into(), "a.b".into())
        );
    }

    #[test]
    fn second_level_suffixes_apply() {
        assert_eq!(
            split_host("go.hotmart.net.br"),
            ("hotmart.net.br".into(), "go".into())
        );
        assert_eq!(registrable_domain("hotmart.net.br"), "hotmart.net.br");
        assert_eq!(registrable_domain("example.co.uk"), "example.co.uk");
        assert_eq!(registrable_domain("www.example.co.uk"), "example.co.uk");
    }

    #[test]
    fn wildcard_and_exception_rules_apply() {
        // *.ck makes bar.ck a public suffix; !www.ck overrides it.
        assert_eq!(registrable_domain("foo.bar.ck"), "foo.bar.ck");
        assert_eq!(registrable_domain("www.ck"), "www.ck");
        assert_eq!(registrable_domain("sub.www.ck"), "www.ck");
    }

    #[test]
    fn hosts_without_rules_use_last_label() {
        assert_eq!(registrable_domain("server.internal"), "server.internal");
        assert_eq!(
            split_host("deep.server.internal"),
            ("server.internal".into(), "deep".into())
        );
    }

    #[test]
    fn degenerate_hosts_are_returned_whole() {
        assert_eq!(split_host("localhost"), ("localhost".into(), "".into()));
        assert_eq!(split_host("com"), ("com".into(), "".into()));
        assert_eq!(split_host("127.0.0.1"), ("127.0.0.1".into(), "".into()));
        assert_eq!(split_host(""), ("".into(), "".into()));
    }

    #[test]
    fn case_and_trailing_dot_are_normalized() {
        assert_eq!(registrable_domain("WWW.Amazon.COM."), "amazon.com");
    }
}
