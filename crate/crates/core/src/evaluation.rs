//! Full-catalog ranking metrics, fairness metrics, user-group breakdowns,
//! sliding-window curves, precision/recall sweeps and paired t-tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autograd::catalog_softmax;
use crate::corpus::{AuxTable, SplitView, UserSequence, PAD};
use crate::error::{Error, Result};
use crate::popularity::ItemPartition;

/// Anything that can score the catalog for a user's input sequence.
///
/// Returned vectors have length `|V| + 1`; index 0 is ignored.
pub trait Scorer: Sync {
    fn scores(&self, user: usize, input: &UserSequence) -> Result<Vec<f64>>;
}

/// 1-based rank of `target`: items scoring strictly higher, plus equal-scored
/// items with a lower index, plus one.
pub fn rank_target(scores: &[f64], target: usize) -> Result<usize> {
    if target == PAD || target >= scores.len() {
        return Err(Error::invalid(format!("target {target} is not a real item")));
    }
    let s = scores[target];
    let mut rank = 1;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > s || (v == s && i < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Top `n` real items by score, ties to the lower index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (1..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    let n = n.min(items.len());
    if n < items.len() && n > 0 {
        items.select_nth_unstable_by(n - 1, cmp);
        items.truncate(n);
    }
    items.sort_by(cmp);
    items.truncate(n);
    items
}

pub fn recall_term(rank: usize, cutoff: usize) -> f64 {
    f64::from(rank <= cutoff)
}

pub fn ndcg_term(rank: usize, cutoff: usize) -> f64 {
    if rank <= cutoff {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn mrr_term(rank: usize) -> f64 {
    1.0 / rank as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

pub fn accuracy_metrics(ranks: &[usize], cutoff: usize) -> Result<AccuracyMetrics> {
    if ranks.is_empty() {
        return Err(Error::invalid("no ranks to aggregate"));
    }
    let m = ranks.len() as f64;
    Ok(AccuracyMetrics {
        recall: ranks.iter().map(|&r| recall_term(r, cutoff)).sum::<f64>() / m,
        ndcg: ranks.iter().map(|&r| ndcg_term(r, cutoff)).sum::<f64>() / m,
        mrr: ranks.iter().map(|&r| mrr_term(r)).sum::<f64>() / m,
    })
}

/// Inputs shared by the list-level fairness metrics.
#[derive(Clone, Debug)]
pub struct FairnessContext<'a> {
    pub aux: &'a AuxTable,
    /// Number of training users that consumed each item (index 0 unused).
    pub consumers: Vec<usize>,
    pub num_users: usize,
    /// Items ordered by training interaction count, descending (ties: lower index first).
    pub popularity_order: Vec<usize>,
}

impl<'a> FairnessContext<'a> {
    pub fn from_training(aux: &'a AuxTable, train: &[UserSequence], num_items: usize) -> Self {
        let mut consumers = vec![0usize; num_items + 1];
        let mut counts = vec![0usize; num_items + 1];
        let mut seen = vec![usize::MAX; num_items + 1];
        for (u, seq) in train.iter().enumerate() {
            for &v in seq.real_items() {
                counts[v] += 1;
                if seen[v] != u {
                    seen[v] = u;
                    consumers[v] += 1;
                }
            }
        }
        let mut popularity_order: Vec<usize> = (1..=num_items).collect();
        popularity_order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        Self {
            aux,
            consumers,
            num_users: train.len(),
            popularity_order,
        }
    }
}

fn cosine(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.dot(&b) / (na * nb),
    }
}

/// Mean pairwise `1 - max(cos, 0)` over a list; 0 for lists shorter than two.
pub fn list_diversity(list: &[usize], aux: &AuxTable) -> f64 {
    if list.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..list.len() {
        for j in i + 1..list.len() {
            total += 1.0 - cosine(aux.vector(list[i]), aux.vector(list[j])).max(0.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Mean self-information of the listed items, normalized by `log2(|U|)`.
pub fn list_novelty(list: &[usize], ctx: &FairnessContext<'_>) -> f64 {
    if list.is_empty() || ctx.num_users <= 1 {
        return 0.0;
    }
    let u = ctx.num_users as f64;
    let norm = u.log2();
    list.iter()
        .map(|&i| {
            let pop = (ctx.consumers[i] as f64 / u).max(1.0 / u);
            -pop.log2() / norm
        })
        .sum::<f64>()
        / list.len() as f64
}

/// Fraction of the list that is the target and absent from the popularity top-`N`.
pub fn list_serendipity(list: &[usize], target: usize, ctx: &FairnessContext<'_>, cutoff: usize) -> f64 {
    if list.is_empty() {
        return 0.0;
    }
    let popular = &ctx.popularity_order[..cutoff.min(ctx.popularity_order.len())];
    let hits = list.iter().filter(|&&i| i == target && !popular.contains(&i)).count();
    hits as f64 / list.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessMetrics {
    pub diversity: f64,
    pub novelty: f64,
    pub serendipity: f64,
}

/// User means of the three list metrics over the first `cutoff` entries of each list.
pub fn fairness_metrics(
    lists: &[Vec<usize>],
    targets: &[usize],
    ctx: &FairnessContext<'_>,
    cutoff: usize,
) -> Result<FairnessMetrics> {
    if lists.len() != targets.len() {
        return Err(Error::invalid("one target per list required"));
    }
    if lists.is_empty() {
        return Err(Error::invalid("no lists to aggregate"));
    }
    for list in lists {
        if let Some(&bad) = list.iter().find(|&&i| i == PAD || i > ctx.aux.num_items()) {
            return Err(Error::invalid(format!("no aux vector for item {bad}")));
        }
    }
    let m = lists.len() as f64;
    let cut = |l: &Vec<usize>| l[..cutoff.min(l.len())].to_vec();
    let mut out = FairnessMetrics {
        diversity: 0.0,
        novelty: 0.0,
        serendipity: 0.0,
    };
    for (list, &target) in lists.iter().zip(targets) {
        let list = cut(list);
        out.diversity += list_diversity(&list, ctx.aux);
        out.novelty += list_novelty(&list, ctx);
        out.serendipity += list_serendipity(&list, target, ctx, cutoff);
    }
    out.diversity /= m;
    out.novelty /= m;
    out.serendipity /= m;
    Ok(out)
}

/// Outcome of ranking one user's held-out item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserEval {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
    /// Top list of the largest requested cutoff.
    pub top: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeldOut {
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    /// Drop items already in the input sequence from the candidate set.
    pub exclude_consumed: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: vec![10],
            exclude_consumed: false,
        }
    }
}

/// Ranks every user's held-out item with `scorer`, in user order.
pub fn rank_users(scorer: &dyn Scorer, split: &SplitView, held_out: HeldOut, options: &EvalOptions) -> Result<Vec<UserEval>> {
    let depth = options.cutoffs.iter().copied().max().unwrap_or(10);
    split
        .users
        .par_iter()
        .map(|u| {
            let (input, target) = match held_out {
                HeldOut::Validation => (u.validation_input().clone(), u.valid),
                HeldOut::Test => (u.test_input(), u.test),
            };
            let mut scores = scorer.scores(u.train.user_index, &input)?;
            if options.exclude_consumed {
                for &v in input.real_items() {
                    if v != target {
                        scores[v] = f64::NEG_INFINITY;
                    }
                }
            }
            Ok(UserEval {
                user: u.train.user_index,
                target,
                rank: rank_target(&scores, target)?,
                top: top_n(&scores, depth),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub n: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub diversity: f64,
    pub novelty: f64,
    pub serendipity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub users: usize,
    pub mrr: f64,
    pub cutoffs: Vec<CutoffMetrics>,
}

impl MetricBlock {
    pub fn at(&self, n: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.n == n)
    }
}

pub fn metric_block(evals: &[UserEval], ctx: &FairnessContext<'_>, cutoffs: &[usize]) -> Result<MetricBlock> {
    let ranks: Vec<usize> = evals.iter().map(|e| e.rank).collect();
    let lists: Vec<Vec<usize>> = evals.iter().map(|e| e.top.clone()).collect();
    let targets: Vec<usize> = evals.iter().map(|e| e.target).collect();
    let mut out = Vec::with_capacity(cutoffs.len());
    let mut mrr = 0.0;
    for &n in cutoffs {
        let acc = accuracy_metrics(&ranks, n)?;
        let fair = fairness_metrics(&lists, &targets, ctx, n)?;
        mrr = acc.mrr;
        out.push(CutoffMetrics {
            n,
            recall: acc.recall,
            ndcg: acc.ndcg,
            diversity: fair.diversity,
            novelty: fair.novelty,
            serendipity: fair.serendipity,
        });
    }
    if cutoffs.is_empty() {
        mrr = accuracy_metrics(&ranks, 1)?.mrr;
    }
    Ok(MetricBlock {
        users: evals.len(),
        mrr,
        cutoffs: out,
    })
}

/// A user group; `metrics` is `None` (serialized as null) when the group is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBlock {
    pub users: usize,
    pub metrics: Option<MetricBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedMetrics {
    pub popular: GroupBlock,
    pub niche: GroupBlock,
}

/// Whether each user's last real item is popular, keyed by user index.
pub fn prefers_popular(sequences: &[UserSequence], partition: &ItemPartition) -> Vec<bool> {
    let mut out = vec![false; sequences.iter().map(|s| s.user_index + 1).max().unwrap_or(0)];
    for s in sequences {
        out[s.user_index] = s.real_items().last().is_some_and(|&v| partition.is_popular(v));
    }
    out
}

/// Splits users by whether their last real item is popular and reports each group.
pub fn group_split_eval(
    evals: &[UserEval],
    sequences: &[UserSequence],
    partition: &ItemPartition,
    ctx: &FairnessContext<'_>,
    cutoffs: &[usize],
) -> Result<GroupedMetrics> {
    let popular = prefers_popular(sequences, partition);
    let (pop, niche): (Vec<UserEval>, Vec<UserEval>) = evals
        .iter()
        .cloned()
        .partition(|e| popular.get(e.user).copied().unwrap_or(false));
    let block = |group: &[UserEval]| -> Result<GroupBlock> {
        Ok(GroupBlock {
            users: group.len(),
            metrics: if group.is_empty() {
                None
            } else {
                Some(metric_block(group, ctx, cutoffs)?)
            },
        })
    };
    Ok(GroupedMetrics {
        popular: block(&pop)?,
        niche: block(&niche)?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model: String,
    pub seed: u64,
    pub config_hash: String,
    pub held_out: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metadata: RunMetadata,
    pub overall: MetricBlock,
    pub groups: GroupedMetrics,
}

impl MetricReport {
    pub fn build(
        metadata: RunMetadata,
        evals: &[UserEval],
        sequences: &[UserSequence],
        partition: &ItemPartition,
        ctx: &FairnessContext<'_>,
        cutoffs: &[usize],
    ) -> Result<Self> {
        Ok(Self {
            metadata,
            overall: metric_block(evals, ctx, cutoffs)?,
            groups: group_split_eval(evals, sequences, partition, ctx, cutoffs)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub window: usize,
    pub users: usize,
    pub ndcg10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCurve {
    pub window_size: usize,
    pub points: Vec<WindowPoint>,
}

impl WindowCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,users,ndcg10\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.window, p.users, p.ndcg10));
        }
        out
    }
}

/// `(input items, target)` pairs of the non-overlapping windows over one history.
pub fn windows(history: &[usize], size: usize) -> Vec<(&[usize], usize)> {
    if size == 0 {
        return Vec::new();
    }
    let count = history.len().saturating_sub(1) / size;
    (0..count)
        .map(|j| (&history[j * size..(j + 1) * size], history[(j + 1) * size]))
        .collect()
}

/// NDCG@10 per window index. `histories[u]` is user `u`'s full item history;
/// window inputs are left-padded to `max_len`.
pub fn sliding_window_eval(
    scorer: &dyn Scorer,
    histories: &[Vec<usize>],
    window_size: usize,
    max_len: usize,
) -> Result<WindowCurve> {
    if window_size == 0 || window_size > max_len {
        return Err(Error::invalid(format!(
            "window size {window_size} must be in 1..={max_len}"
        )));
    }
    let per_user: Vec<Vec<f64>> = histories
        .par_iter()
        .enumerate()
        .map(|(u, history)| {
            windows(history, window_size)
                .into_iter()
                .map(|(input, target)| {
                    let seq = UserSequence::from_items(u, input, max_len);
                    let scores = scorer.scores(u, &seq)?;
                    Ok(ndcg_term(rank_target(&scores, target)?, 10))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let count = per_user.iter().map(Vec::len).max().unwrap_or(0);
    let points = (0..count)
        .map(|j| {
            let vals: Vec<f64> = per_user.iter().filter_map(|v| v.get(j).copied()).collect();
            WindowPoint {
                window: j + 1,
                users: vals.len(),
                ndcg10: vals.iter().sum::<f64>() / vals.len() as f64,
            }
        })
        .collect();
    Ok(WindowCurve {
        window_size,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Softmax over real items of each score row (index 0 left at 0).
pub fn catalog_probabilities(scores: &[f64]) -> Vec<f64> {
    catalog_softmax(scores)
}

/// Threshold sweep over per-user item probabilities. A user's target counts
/// as retrieved at threshold `θ` when its probability is at least `θ`;
/// precision divides retrieved targets by all retrieved `(user, item)` pairs.
/// The first point is the empty-retrieval endpoint (precision 1, recall 0);
/// the rest use each distinct target probability as a threshold, ascending recall.
pub fn precision_recall_curve(probabilities: &[Vec<f64>], targets: &[usize]) -> Result<Vec<PrPoint>> {
    if probabilities.len() != targets.len() {
        return Err(Error::invalid("one target per probability row required"));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let mut all: Vec<f64> = probabilities
        .iter()
        .flat_map(|row| row.iter().skip(1).copied())
        .collect();
    all.sort_by(f64::total_cmp);
    let mut target_probs = Vec::with_capacity(targets.len());
    for (row, &t) in probabilities.iter().zip(targets) {
        if t == PAD || t >= row.len() {
            return Err(Error::invalid(format!("target {t} is not a real item")));
        }
        target_probs.push(row[t]);
    }
    let mut thresholds = target_probs.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let users = targets.len() as f64;
    let mut out = vec![PrPoint {
        threshold: f64::INFINITY,
        precision: 1.0,
        recall: 0.0,
    }];
    for theta in thresholds {
        let retrieved = all.len() - all.partition_point(|&p| p < theta);
        let hits = target_probs.iter().filter(|&&p| p >= theta).count();
        out.push(PrPoint {
            threshold: theta,
            precision: if retrieved == 0 { 1.0 } else { hits as f64 / retrieved as f64 },
            recall: hits as f64 / users,
        });
    }
    Ok(out)
}

pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: f64,
    pub mean_difference: f64,
    /// Set when the differences have zero variance.
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a - b`. `dof` defaults to `pairs - 1`.
pub fn paired_ttest(a: &[f64], b: &[f64], dof: Option<f64>) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples must have equal length"));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let m = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / m;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1.0);
    let dof = dof.unwrap_or(m - 1.0);
    if dof <= 0.0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTest {
            t,
            p,
            dof,
            mean_difference: mean,
            degenerate: true,
        });
    }
    let t = mean / (var / m).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        dof,
        mean_difference: mean,
        degenerate: false,
    })
}
