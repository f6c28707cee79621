//! Prevalence and engagement statistics.
//!
//! Per-category rates come in two flavours: the raw share of affiliate
//! items that disclose, and a creator-scaled share that multiplies the raw
//! rate by (unique disclosing creators / disclosed items) so a single
//! prolific creator cannot inflate a category. Engagement differences
//! between affiliate and non-affiliate items are tested with Mann-Whitney
//! U (exact for small tie-free samples, normal approximation otherwise)
//! under a Bonferroni-corrected significance level.

use crate::corpus::{ContentItem, Platform};
use crate::detect::AffiliateVerdict;
use crate::disclose::DisclosureRecord;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    pub n_items: u64,
    pub n_affiliate: u64,
    /// Affiliate items carrying at least one disclosure.
    pub n_disclosed: u64,
    pub unique_disclosing_creators: u64,
    pub affiliate_pct: f64,
    pub disclosed_raw_pct: f64,
    pub disclosed_scaled_pct: f64,
    /// Below the minimum affiliate-item cutoff for ranked reporting.
    pub excluded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub metric: String,
    pub u_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: TestMethod,
    /// Filled in after multiple-testing correction; [`engagement_comparison`]
    /// sets it across its metric family, a bare [`mann_whitney_u`] leaves it
    /// false.
    pub significant: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("no verdict for item {0:?}")]
    MissingVerdict(String),
    #[error("rank test groups must both be non-empty")]
    EmptyGroup,
}

/// Per-category affiliate and disclosure rates. Disclosure counts only
/// consider items the verdicts call affiliate; rows are ordered by
/// category name.
pub fn prevalence_by_category(
    items: &[ContentItem],
    verdicts: &[AffiliateVerdict],
    disclosures: &[DisclosureRecord],
    min_affiliate: u64,
) -> Result<Vec<CategoryStats>, StatsError> {
    let verdict_by_id: HashMap<&str, &AffiliateVerdict> = verdicts
        .iter()
        .map(|v| (v.content_id.as_str(), v))
        .collect();
    let disclosed_ids: HashSet<&str> = disclosures
        .iter()
        .map(|d| d.content_id.as_str())
        .collect();

    #[derive(Default)]
    struct Tally {
        n_items: u64,
        n_affiliate: u64,
        n_disclosed: u64,
        creators: HashSet<String>,
    }
    let mut by_category: BTreeMap<&str, Tally> = BTreeMap::new();
    for item in items {
        let verdict = verdict_by_id
            .get(item.id.as_str())
            .ok_or_else(|| StatsError::MissingVerdict(item.id.clone()))?;
        let tally = by_category.entry(item.category.as_str()).or_default();
        tally.n_items += 1;
        if verdict.is_affiliate {
            tally.n_affiliate += 1;
            if disclosed_ids.contains(item.id.as_str()) {
                tally.n_disclosed += 1;
                tally.creators.insert(item.creator_id.clone());
            }
        }
    }

    Ok(by_category
        .into_iter()
        .map(|(category, t)| {
            let pct = |num: u64, den: u64| {
                if den == 0 {
                    0.0
                } else {
                    100.0 * num as f64 / den as f64
                }
            };
            let affiliate_pct = pct(t.n_affiliate, t.n_items);
            let disclosed_raw_pct = pct(t.n_disclosed, t.n_affiliate);
            let creators = t.creators.len() as u64;
            let disclosed_scaled_pct = if t.n_disclosed == 0 {
                0.0
            } else {
                disclosed_raw_pct * creators as f64 / t.n_disclosed as f64
            };
            CategoryStats {
                category: category.to_string(),
                n_items: t.n_items,
                n_affiliate: t.n_affiliate,
                n_disclosed: t.n_disclosed,
                unique_disclosing_creators: creators,
                affiliate_pct,
                disclosed_raw_pct,
                disclosed_scaled_pct,
                excluded: t.n_affiliate < min_affiliate,
            }
        })
        .collect())
}

/// Midranks of `values` (average rank across each tie group), 1-based.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p for a tie-free sample: enumerate every way to assign
/// n1 of the pooled ranks to group a, and count assignments at least as
/// extreme (in either tail) as the observed U.
fn exact_two_sided_p(n1: usize, n2: usize, u_a: f64) -> f64 {
    let n = n1 + n2;
    let max_u = (n1 * n2) as f64;
    let u_lo = u_a.min(max_u - u_a);
    let u_hi = max_u - u_lo;
    let mut extreme = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        total += 1;
        // U for this assignment = pairs (a, b) with the a-value larger,
        // i.e. for each a-position the number of b-positions below it.
        let mut u = 0u64;
        let mut b_below = 0u64;
        for k in 0..n {
            if mask & (1 << k) != 0 {
                u += b_below;
            } else {
                b_below += 1;
            }
        }
        let u = u as f64;
        if u <= u_lo + 1e-9 || u >= u_hi - 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / total as f64).min(1.0)
}

/// Tie-corrected normal-approximation two-sided p with continuity
/// correction. Zero variance (all values tied) gives p = 1.
fn normal_two_sided_p(u_a: f64, n1: usize, n2: usize, pooled: &[f64]) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let product = (n1 * n2) as f64;
    let variance = product / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let corrected = ((u_a - product / 2.0).abs() - 0.5).max(0.0);
    let z = corrected / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// Mann-Whitney U over two independent samples. U is reported for group
/// `a`; the exact distribution is enumerated when both groups have at
/// most 8 values and the pooled sample is tie-free, otherwise the
/// tie-corrected normal approximation is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<RankTestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = midranks(&pooled);
    let r_a: f64 = ranks[..n1].iter().sum();
    let u_a = r_a - (n1 * (n1 + 1)) as f64 / 2.0;

    let mut distinct = pooled.clone();
    distinct.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    distinct.dedup();
    let tie_free = distinct.len() == pooled.len();

    let (p_value, method) = if n1 <= 8 && n2 <= 8 && tie_free {
        (exact_two_sided_p(n1, n2, u_a), TestMethod::Exact)
    } else {
        (
            normal_two_sided_p(u_a, n1, n2, &pooled),
            TestMethod::NormalApprox,
        )
    };
    Ok(RankTestResult {
        metric: String::new(),
        u_statistic: u_a,
        p_value,
        n1,
        n2,
        method,
        significant: false,
    })
}

/// significant[i] iff p[i] < alpha / m, with m defaulting to the number
/// of tests.
pub fn bonferroni(p_values: &[f64], alpha: f64, m: Option<usize>) -> Vec<bool> {
    let m = m.unwrap_or(p_values.len()).max(1) as f64;
    p_values.iter().map(|&p| p < alpha / m).collect()
}

const ENGAGEMENT_METRICS: &[(&str, Platform, fn(&ContentItem) -> Option<u64>)] = &[
    ("youtube_duration", Platform::Youtube, |i| i.duration_seconds),
    ("youtube_views", Platform::Youtube, |i| i.view_count),
    ("youtube_likes", Platform::Youtube, |i| i.like_count),
    ("youtube_dislikes", Platform::Youtube, |i| i.dislike_count),
    ("youtube_comments", Platform::Youtube, |i| i.comment_count),
    ("pinterest_repins", Platform::Pinterest, |i| i.repin_count),
];

/// Compare affiliate against non-affiliate engagement for every metric
/// populated on both sides, Bonferroni-corrected across the resulting
/// family at alpha = 0.01. Rows are ordered by metric name.
pub fn engagement_comparison(
    items: &[ContentItem],
    verdicts: &[AffiliateVerdict],
) -> Result<Vec<RankTestResult>, StatsError> {
    engagement_comparison_with(items, verdicts, 0.01)
}

/// [`engagement_comparison`] with a caller-chosen family alpha.
pub fn engagement_comparison_with(
    items: &[ContentItem],
    verdicts: &[AffiliateVerdict],
    alpha: f64,
) -> Result<Vec<RankTestResult>, StatsError> {
    let verdict_by_id: HashMap<&str, bool> = verdicts
        .iter()
        .map(|v| (v.content_id.as_str(), v.is_affiliate))
        .collect();

    let mut results = Vec::new();
    for &(metric, platform, extract) in ENGAGEMENT_METRICS {
        let mut affiliate = Vec::new();
        let mut control = Vec::new();
        for item in items {
            if item.platform != platform {
                continue;
            }
            let Some(value) = extract(item) else { continue };
            let is_affiliate = verdict_by_id
                .get(item.id.as_str())
                .copied()
                .ok_or_else(|| StatsError::MissingVerdict(item.id.clone()))?;
            if is_affiliate {
                affiliate.push(value as f64);
            } else {
                control.push(value as f64);
            }
        }
        if affiliate.is_empty() || control.is_empty() {
            continue;
        }
        let mut result = mann_whitney_u(&affiliate, &control)?;
        result.metric = metric.to_string();
        results.push(result);
    }
    results.sort_by(|a, b| a.metric.cmp(&b.metric));

    let p_values: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    let flags = bonferroni(&p_values, alpha, None);
    for (result, flag) in results.iter_mut().zip(flags) {
        result.significant = flag;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::ChainMatch;

    fn item(id: &str, category: &str, creator: &str) -> ContentItem {
        ContentItem {
            id: id.to_string(),
            platform: Platform::Youtube,
            description: String::new(),
            category: category.to_string(),
            creator_id: creator.to_string(),
            duration_seconds: None,
            view_count: None,
            like_count: None,
            dislike_count: None,
            comment_count: None,
            repin_count: None,
            extra: Default::default(),
        }
    }

    fn verdict(id: &str, is_affiliate: bool) -> AffiliateVerdict {
        let matches = if is_affiliate {
            vec![ChainMatch {
                url: "https://rstyle.me/n/x".to_string(),
                pattern_id: "rewardstyle".to_string(),
                company: "RewardStyle".to_string(),
            }]
        } else {
            Vec::new()
        };
        AffiliateVerdict {
            content_id: id.to_string(),
            is_affiliate,
            matches,
        }
    }

    fn disclosure(id: &str) -> DisclosureRecord {
        DisclosureRecord {
            content_id: id.to_string(),
            line_index: 0,
            sentence_index: 0,
            text: "(aff link)".to_string(),
            dtype: crate::disclose::DisclosureType::AffiliateLink,
            rule_id: "affiliate_link".to_string(),
        }
    }

    #[test]
    fn scaling_downweights_repeat_creators() {
        // 200 affiliate items, 40 disclosed by 10 unique creators.
        let mut items = Vec::new();
        let mut verdicts = Vec::new();
        let mut disclosures = Vec::new();
        for i in 0..200 {
            let id = format!("v{i}");
            let creator = if i < 40 {
                format!("c{}", i % 10)
            } else {
                format!("solo{i}")
            };
            items.push(item(&id, "style", &creator));
            verdicts.push(verdict(&id, true));
            if i < 40 {
                disclosures.push(disclosure(&id));
            }
        }
        let stats = prevalence_by_category(&items, &verdicts, &disclosures, 100).unwrap();
        assert_eq!(stats.len(), 1);
        let s = &stats[0];
        assert_eq!(s.n_items, 200);
        assert_eq!(s.n_affiliate, 200);
        assert_eq!(s.n_disclosed, 40);
        assert_eq!(s.unique_disclosing_creators, 10);
        assert_eq!(s.affiliate_pct, 100.0);
        assert_eq!(s.disclosed_raw_pct, 20.0);
        assert_eq!(s.disclosed_scaled_pct, 5.0);
        assert!(!s.excluded);
    }

    #[test]
    fn distinct_creators_leave_the_rate_unchanged() {
        let mut items = Vec::new();
        let mut verdicts = Vec::new();
        let mut disclosures = Vec::new();
        for i in 0..10 {
            let id = format!("v{i}");
            items.push(item(&id, "tech", &format!("c{i}")));
            verdicts.push(verdict(&id, true));
            disclosures.push(disclosure(&id));
        }
        let stats = prevalence_by_category(&items, &verdicts, &disclosures, 5).unwrap();
        assert_eq!(stats[0].disclosed_raw_pct, stats[0].disclosed_scaled_pct);
    }

    #[test]
    fn zero_disclosures_give_zero_rates() {
        let items = vec![item("v0", "music", "c0")];
        let verdicts = vec![verdict("v0", true)];
        let stats = prevalence_by_category(&items, &verdicts, &[], 100).unwrap();
        assert_eq!(stats[0].disclosed_raw_pct, 0.0);
        assert_eq!(stats[0].disclosed_scaled_pct, 0.0);
        assert!(stats[0].excluded);
    }

    #[test]
    fn disclosures_on_non_affiliate_items_do_not_count() {
        let items = vec![item("v0", "music", "c0")];
        let verdicts = vec![verdict("v0", false)];
        let disclosures = vec![disclosure("v0")];
        let stats = prevalence_by_category(&items, &verdicts, &disclosures, 0).unwrap();
        assert_eq!(stats[0].n_disclosed, 0);
        assert_eq!(stats[0].unique_disclosing_creators, 0);
    }

    #[test]
    fn missing_verdict_is_an_error_naming_the_item() {
        let items = vec![item("vx", "music", "c0")];
        let err = prevalence_by_category(&items, &[], &[], 100).unwrap_err();
        assert!(err.to_string().contains("vx"));
    }

    #[test]
    fn categories_come_back_sorted() {
        let items = vec![
            item("a", "zebra", "c"),
            item("b", "apple", "c"),
            item("c", "mango", "c"),
        ];
        let verdicts: Vec<_> = ["a", "b", "c"].iter().map(|i| verdict(i, false)).collect();
        let stats = prevalence_by_category(&items, &verdicts, &[], 100).unwrap();
        let names: Vec<_> = stats.iter().map(|s| s.category.as_str()).collect();
        assert_eq!(names, ["apple", "mango", "zebra"]);
    }

    #[test]
    fn separated_samples_get_exact_small_p() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p_value - 0.1).abs() < 1e-12);
        assert_eq!((r.n1, r.n2), (3, 3));
    }

    #[test]
    fn full_ties_sit_at_the_midpoint_with_p_one() {
        let r = mann_whitney_u(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.u_statistic, 2.0);
        assert_eq!(r.method, TestMethod::NormalApprox);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn identical_multisets_at_n30_are_clearly_insignificant() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.method, TestMethod::NormalApprox);
        assert!((r.p_value - 1.0).abs() < 0.05);
    }

    #[test]
    fn two_by_two_exact_enumeration() {
        // C(4,2)=6 assignments; U=0 and U=4 are the extremes.
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn u_values_of_both_orientations_sum_to_the_pair_count() {
        let a = [3.0, 9.0, 1.5, 7.0];
        let b = [2.0, 2.0, 8.0];
        let ra = mann_whitney_u(&a, &b).unwrap();
        let rb = mann_whitney_u(&b, &a).unwrap();
        assert!((ra.u_statistic + rb.u_statistic - 12.0).abs() < 1e-9);
        assert!((ra.p_value - rb.p_value).abs() < 1e-12);
    }

    #[test]
    fn empty_groups_are_rejected() {
        assert!(matches!(
            mann_whitney_u(&[], &[1.0]),
            Err(StatsError::EmptyGroup)
        ));
        assert!(matches!(
            mann_whitney_u(&[1.0], &[]),
            Err(StatsError::EmptyGroup)
        ));
    }

    #[test]
    fn bonferroni_divides_alpha_by_the_family_size() {
        assert_eq!(
            bonferroni(&[0.001, 0.004, 0.02], 0.01, Some(3)),
            [true, false, false]
        );
        assert_eq!(bonferroni(&[0.009], 0.01, None), [true]);
        assert!(bonferroni(&[], 0.01, None).is_empty());
        // Explicit m overrides the family size.
        assert_eq!(bonferroni(&[0.004], 0.01, Some(10)), [false]);
    }

    fn engagement_item(
        id: &str,
        platform: Platform,
        views: Option<u64>,
        repins: Option<u64>,
    ) -> ContentItem {
        let mut it = item(id, "style", id);
        it.platform = platform;
        it.view_count = views;
        it.repin_count = repins;
        it
    }

    #[test]
    fn planted_view_dominance_is_detected() {
        let mut items = Vec::new();
        let mut verdicts = Vec::new();
        for i in 0..20u64 {
            let id = format!("aff{i}");
            items.push(engagement_item(&id, Platform::Youtube, Some(1000 + i), None));
            verdicts.push(verdict(&id, true));
            let id = format!("ctl{i}");
            items.push(engagement_item(&id, Platform::Youtube, Some(10 + i), None));
            verdicts.push(verdict(&id, false));
        }
        let results = engagement_comparison(&items, &verdicts).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].metric, "youtube_views");
        assert_eq!(results[0].u_statistic, 400.0);
        assert!(results[0].significant);
    }

    #[test]
    fn identical_distributions_are_not_significant() {
        let mut items = Vec::new();
        let mut verdicts = Vec::new();
        for i in 0..50u64 {
            let id = format!("aff{i}");
            items.push(engagement_item(&id, Platform::Youtube, Some(i % 7), None));
            verdicts.push(verdict(&id, true));
            let id = format!("ctl{i}");
            items.push(engagement_item(&id, Platform::Youtube, Some(i % 7), None));
            verdicts.push(verdict(&id, false));
        }
        let results = engagement_comparison(&items, &verdicts).unwrap();
        assert!(!results[0].significant);
        assert!(results[0].p_value > 0.9);
    }

    #[test]
    fn metrics_without_data_produce_no_rows() {
        let items = vec![
            engagement_item("a", Platform::Youtube, Some(5), None),
            engagement_item("b", Platform::Youtube, Some(9), None),
        ];
        let verdicts = vec![verdict("a", true), verdict("b", false)];
        let results = engagement_comparison(&items, &verdicts).unwrap();
        let metrics: Vec<_> = results.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(metrics, ["youtube_views"]);
    }

    #[test]
    fn results_are_ordered_by_metric_name() {
        let mut items = Vec::new();
        let mut verdicts = Vec::new();
        for i in 0..4u64 {
            let aff = i % 2 == 0;
            let id = format!("y{i}");
            items.push(engagement_item(&id, Platform::Youtube, Some(i), None));
            verdicts.push(verdict(&id, aff));
            let id = format!("p{i}");
            items.push(engagement_item(&id, Platform::Pinterest, None, Some(i)));
            verdicts.push(verdict(&id, aff));
        }
        let results = engagement_comparison(&items, &verdicts).unwrap();
        let metrics: Vec<_> = results.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(metrics, ["pinterest_repins", "youtube_views"]);
    }

    #[test]
    fn engagement_without_verdicts_is_an_error() {
        let items = vec![engagement_item("solo", Platform::Youtube, Some(1), None)];
        assert!(matches!(
            engagement_comparison(&items, &[]),
            Err(StatsError::MissingVerdict(id)) if id == "solo"
        ));
    }
}
