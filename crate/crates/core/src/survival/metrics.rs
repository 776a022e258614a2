//! Harrell's concordance index and ROC-AUC, both by sorted counting.

use super::SurvivalLabel;
use crate::error::{Error, Result};

/// Integer pair counts behind a concordance or AUC value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl PairCounts {
    pub fn value(&self) -> f64 {
        (self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64
    }
}

/// Fenwick tree over dense ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn dense_ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let ranks = values
        .iter()
        .map(|v| sorted.partition_point(|s| s < v))
        .collect();
    (ranks, sorted.len())
}

/// Harrell's C. A pair `(i, j)` is comparable when `t_i < t_j` and `e_i`, or
/// when `t_i == t_j` and only `i` had an event. It is concordant when the
/// subject with the earlier event has the strictly higher log-risk; tied
/// log-risks count one half.
pub fn concordance_index(log_risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    Ok(concordance_counts(log_risks, labels)?.value())
}

pub(crate) fn concordance_counts(
    log_risks: &[f64],
    labels: &[SurvivalLabel],
) -> Result<PairCounts> {
    if log_risks.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), actual: log_risks.len() });
    }
    if log_risks.iter().any(|h| h.is_nan()) {
        return Err(Error::NonFinite);
    }
    let (ranks, distinct) = dense_ranks(log_risks);
    let order = super::descending_time_order(labels);

    let mut tree = Fenwick::new(distinct);
    let mut inserted = 0u64;
    let mut counts = PairCounts::default();
    let mut tied_rank = vec![0u64; distinct];
    for group in super::tie_groups(&order, labels) {
        // censored subjects at this time are "later" than events at this time
        for &j in group.iter().filter(|&&j| !labels[j].event) {
            tree.add(ranks[j]);
            tied_rank[ranks[j]] += 1;
            inserted += 1;
        }
        for &i in group.iter().filter(|&&i| labels[i].event) {
            let r = ranks[i];
            let below = tree.below(r);
            let equal = tied_rank[r];
            counts.concordant += below;
            counts.tied += equal;
            counts.comparable += inserted;
        }
        for &i in group.iter().filter(|&&i| labels[i].event) {
            tree.add(ranks[i]);
            tied_rank[ranks[i]] += 1;
            inserted += 1;
        }
    }
    if counts.comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(counts)
}

/// Mann–Whitney AUC: fraction of (positive, negative) pairs where the
/// positive scores strictly higher, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), actual: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut counts = PairCounts { comparable: positives * negatives, ..Default::default() };
    let mut negatives_below = 0u64;
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        while end < order.len() && scores[order[end]] == s {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| labels[i]).count() as u64;
        let neg = group.len() as u64 - pos;
        counts.concordant += pos * negatives_below;
        counts.tied += pos * neg;
        negatives_below += neg;
        start = end;
    }
    Ok(counts.value())
}

/// Binary recurrence labels at a horizon: `Some(true)` for an event at or
/// before `months`, `Some(false)` for follow-up beyond it, `None` for
/// subjects censored before the horizon.
pub fn binarize_at(labels: &[SurvivalLabel], months: f64) -> Vec<Option<bool>> {
    labels
        .iter()
        .map(|l| {
            if l.time_months <= months {
                l.event.then_some(true)
            } else {
                Some(false)
            }
        })
        .collect()
}
