//! Rating-error and ranking metrics, with per-bucket breakdowns by history
//! length and friend count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use crate::data::{FeedbackMode, InteractionStore, SocialGraph};
use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Items ordered by descending score; equal scores keep ascending item order.
pub fn rank_items(scored: &[(usize, f64)]) -> Vec<usize> {
    let mut order = scored.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(item, _)| item).collect()
}

/// `|top-k ∩ relevant| / k` for one ranking.
pub fn user_precision_at_k(ranked: &[usize], relevant: &BTreeSet<usize>, k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / k as f64
}

/// Mean precision over users with at least one relevant item, or `None` when
/// there is no such user. `k` must be positive.
pub fn precision_at_k(ranked: &[Vec<usize>], relevant: &[BTreeSet<usize>], k: usize) -> Option<f64> {
    assert!(k >= 1, "precision@k needs k >= 1");
    let scores: Vec<f64> = ranked
        .iter()
        .zip(relevant)
        .filter(|(_, rel)| !rel.is_empty())
        .map(|(r, rel)| user_precision_at_k(r, rel, k))
        .collect();
    mean(&scores)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. `None` unless both classes are present.
pub fn user_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    // Mann-Whitney statistic from mid-ranks.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += mid_rank * order[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Macro-averaged AUC over users.
#[derive(Clone, Debug, PartialEq)]
pub struct AucSummary {
    /// `None` when no user has both classes.
    pub value: Option<f64>,
    pub users: usize,
    /// Users skipped for having a single label class.
    pub excluded: usize,
}

/// Per-user AUC averaged over users; `groups` holds `(scores, labels)`.
pub fn auc<'a>(groups: impl IntoIterator<Item = (&'a [f64], &'a [bool])>) -> AucSummary {
    let mut values = Vec::new();
    let mut excluded = 0;
    for (s, l) in groups {
        match user_auc(s, l) {
            Some(v) => values.push(v),
            None => excluded += 1,
        }
    }
    AucSummary {
        value: mean(&values),
        users: values.len(),
        excluded,
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// One scored evaluation pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub user: usize,
    pub item: usize,
    /// Rating, or 1/0 for a click.
    pub truth: f64,
    pub score: f64,
}

/// User-level attribute that assigns users to buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BucketDimension {
    /// Number of training interactions.
    History,
    /// Number of outgoing trust edges.
    Friends,
}

impl BucketDimension {
    pub fn label(self) -> &'static str {
        match self {
            BucketDimension::History => "history",
            BucketDimension::Friends => "friends",
        }
    }
}

/// Users whose attribute lies in `[lower, upper)`; `upper` is `None` for the
/// open last bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow {
    pub dimension: BucketDimension,
    pub lower: usize,
    pub upper: Option<usize>,
    pub users: usize,
    pub pairs: usize,
    /// Empty when the bucket holds no evaluable user.
    pub metrics: BTreeMap<String, f64>,
    /// 25th, 50th and 75th percentile of the per-user primary metric.
    pub quartiles: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: FeedbackMode,
    pub top_k: usize,
    pub pairs: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Users left out of AUC for lacking one label class.
    pub excluded_users: usize,
    pub buckets: Vec<BucketRow>,
}

impl EvalReport {
    /// Name of the per-user metric summarised by bucket quartiles.
    pub fn primary_metric(&self) -> &'static str {
        primary_metric(self.mode)
    }
}

fn primary_metric(mode: FeedbackMode) -> &'static str {
    match mode {
        FeedbackMode::Explicit => "mae",
        FeedbackMode::Implicit => "auc",
    }
}

fn p_at_k_name(k: usize) -> String {
    format!("p@{k}")
}

/// Pooled metrics over `pairs`, plus the per-user primary metric values and
/// the number of single-class users excluded from AUC.
fn metric_block(pairs: &[&Scored], mode: FeedbackMode, k: usize) -> Result<(BTreeMap<String, f64>, Vec<f64>, usize)> {
    let mut out = BTreeMap::new();
    let mut by_user: BTreeMap<usize, Vec<&Scored>> = BTreeMap::new();
    for p in pairs {
        by_user.entry(p.user).or_default().push(p);
    }
    match mode {
        FeedbackMode::Explicit => {
            if pairs.is_empty() {
                return Ok((out, Vec::new(), 0));
            }
            let pred: Vec<f64> = pairs.iter().map(|p| p.score.clamp(1.0, 5.0)).collect();
            let truth: Vec<f64> = pairs.iter().map(|p| p.truth).collect();
            out.insert("mae".into(), mae(&pred, &truth)?);
            out.insert("rmse".into(), rmse(&pred, &truth)?);
            let per_user = by_user
                .values()
                .map(|ps| {
                    let pred: Vec<f64> = ps.iter().map(|p| p.score.clamp(1.0, 5.0)).collect();
                    let truth: Vec<f64> = ps.iter().map(|p| p.truth).collect();
                    mae(&pred, &truth)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((out, per_user, 0))
        }
        FeedbackMode::Implicit => {
            let mut ranked = Vec::with_capacity(by_user.len());
            let mut relevant = Vec::with_capacity(by_user.len());
            let mut groups = Vec::with_capacity(by_user.len());
            for ps in by_user.values() {
                let scored: Vec<(usize, f64)> = ps.iter().map(|p| (p.item, p.score)).collect();
                ranked.push(rank_items(&scored));
                relevant.push(ps.iter().filter(|p| p.truth > 0.5).map(|p| p.item).collect::<BTreeSet<_>>());
                let scores: Vec<f64> = ps.iter().map(|p| p.score).collect();
                let labels: Vec<bool> = ps.iter().map(|p| p.truth > 0.5).collect();
                groups.push((scores, labels));
            }
            if let Some(p) = precision_at_k(&ranked, &relevant, k) {
                out.insert(p_at_k_name(k), p);
            }
            let summary = auc(groups.iter().map(|(s, l)| (s.as_slice(), l.as_slice())));
            if let Some(a) = summary.value {
                out.insert("auc".into(), a);
            }
            let per_user = groups.iter().filter_map(|(s, l)| user_auc(s, l)).collect();
            Ok((out, per_user, summary.excluded))
        }
    }
}

fn check_edges(edges: &[usize], dimension: BucketDimension) -> Result<()> {
    if edges.first() != Some(&0) {
        return Err(Error::Metric(format!("{} bucket edges must start at 0", dimension.label())));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Metric(format!(
            "{} bucket edges must be strictly increasing",
            dimension.label()
        )));
    }
    Ok(())
}

/// Global metrics over `pairs` plus a breakdown by training-history length
/// and by friend count. Each edge list starts at 0 and is strictly
/// increasing; the final bucket is open-ended.
pub fn bucketed_report(
    pairs: &[Scored],
    mode: FeedbackMode,
    top_k: usize,
    train: &InteractionStore,
    social: &SocialGraph,
    history_edges: &[usize],
    friend_edges: &[usize],
) -> Result<EvalReport> {
    if top_k == 0 {
        return Err(Error::Metric("top_k must be positive".into()));
    }
    check_edges(history_edges, BucketDimension::History)?;
    check_edges(friend_edges, BucketDimension::Friends)?;
    let all: Vec<&Scored> = pairs.iter().collect();
    let (metrics, _, excluded_users) = metric_block(&all, mode, top_k)?;
    let attribute = |dimension: BucketDimension, user: usize| match dimension {
        BucketDimension::History if user < train.num_users() => train.user_items(user).len(),
        BucketDimension::Friends if user < social.num_users() => social.degree(user),
        _ => 0,
    };
    let mut buckets = Vec::new();
    for (dimension, edges) in [
        (BucketDimension::History, history_edges),
        (BucketDimension::Friends, friend_edges),
    ] {
        for (b, &lower) in edges.iter().enumerate() {
            let upper = edges.get(b + 1).copied();
            let inside = |u: usize| {
                let a = attribute(dimension, u);
                a >= lower && upper.map_or(true, |hi| a < hi)
            };
            let members: Vec<&Scored> = pairs.iter().filter(|p| inside(p.user)).collect();
            let users = members.iter().map(|p| p.user).collect::<BTreeSet<_>>().len();
            let (metrics, mut per_user, _) = metric_block(&members, mode, top_k)?;
            per_user.sort_by(f64::total_cmp);
            let quartiles = match (
                percentile(&per_user, 0.25),
                percentile(&per_user, 0.5),
                percentile(&per_user, 0.75),
            ) {
                (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                _ => None,
            };
            buckets.push(BucketRow {
                dimension,
                lower,
                upper,
                users,
                pairs: members.len(),
                metrics,
                quartiles,
            });
        }
    }
    Ok(EvalReport {
        mode,
        top_k,
        pairs: pairs.len(),
        metrics,
        excluded_users,
        buckets,
    })
}

/// Metric names reported for a feedback mode, in column order.
pub fn metric_names(mode: FeedbackMode, top_k: usize) -> Vec<String> {
    match mode {
        FeedbackMode::Explicit => vec!["mae".into(), "rmse".into()],
        FeedbackMode::Implicit => vec![p_at_k_name(top_k), "auc".into()],
    }
}

/// `metric,value` rows.
pub fn write_metrics_csv(report: &EvalReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "metric,value")?;
    for name in metric_names(report.mode, report.top_k) {
        match report.metrics.get(&name) {
            Some(v) => writeln!(out, "{name},{v:.6}")?,
            None => writeln!(out, "{name},")?,
        }
    }
    writeln!(out, "pairs,{}", report.pairs)?;
    if report.mode == FeedbackMode::Implicit {
        writeln!(out, "excluded_users,{}", report.excluded_users)?;
    }
    Ok(())
}

/// One row per bucket of `dimension`; absent values are empty cells.
pub fn write_bucket_csv(report: &EvalReport, dimension: BucketDimension, mut out: impl Write) -> Result<()> {
    let names = metric_names(report.mode, report.top_k);
    let primary = report.primary_metric();
    writeln!(
        out,
        "lower,upper,users,pairs,{},{primary}_p25,{primary}_p50,{primary}_p75",
        names.join(",")
    )?;
    for row in report.buckets.iter().filter(|r| r.dimension == dimension) {
        let mut cells = vec![
            row.lower.to_string(),
            row.upper.map(|u| u.to_string()).unwrap_or_default(),
            row.users.to_string(),
            row.pairs.to_string(),
        ];
        for name in &names {
            cells.push(row.metrics.get(name).map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        for k in 0..3 {
            cells.push(row.quartiles.map(|q| format!("{:.6}", q[k])).unwrap_or_default());
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} feedback, {} pairs", self.mode, self.pairs)?;
        for name in metric_names(self.mode, self.top_k) {
            match self.metrics.get(&name) {
                Some(v) => writeln!(f, "  {name:<8} {v:.4}")?,
                None => writeln!(f, "  {name:<8} n/a")?,
            }
        }
        if self.mode == FeedbackMode::Implicit && self.excluded_users > 0 {
            writeln!(f, "  {} single-class users excluded from auc", self.excluded_users)?;
        }
        let primary = self.primary_metric();
        for row in &self.buckets {
            let range = match row.upper {
                Some(u) => format!("[{}, {})", row.lower, u),
                None => format!("[{}, inf)", row.lower),
            };
            write!(f, "  {:<8} {range:<12} users {:<6}", row.dimension.label(), row.users)?;
            match (row.metrics.get(primary), row.quartiles) {
                (Some(v), Some(q)) => writeln!(
                    f,
                    " {primary} {v:.4} (quartiles {:.4} {:.4} {:.4})",
                    q[0], q[1], q[2]
                )?,
                _ => writeln!(f, " absent")?,
            }
        }
        Ok(())
    }
}
