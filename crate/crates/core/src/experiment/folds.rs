use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::SurvivalLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    Plain,
    Nested,
}

/// Subject indices of one training job. `test` is empty in plain mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub id: String,
    /// Outer fold this split belongs to (its own index in plain mode).
    pub outer: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: CvMode,
    pub outer_k: usize,
    /// Equal to `outer_k` in plain mode.
    pub inner_k: usize,
    pub splits: Vec<Split>,
}

/// Shuffles `items` with `rng` and deals them round-robin into `k` folds,
/// continuing the deal at fold `offset`. Folds come back sorted.
fn deal(items: &mut [usize], k: usize, offset: usize, rng: &mut ChaCha8Rng, folds: &mut [Vec<usize>]) -> usize {
    items.shuffle(rng);
    for (i, &s) in items.iter().enumerate() {
        folds[(offset + i) % k].push(s);
    }
    (offset + items.len()) % k
}

/// Partitions `subjects` into `k` folds. With `events`, event and censored
/// subjects are dealt separately so each fold receives a share of both.
pub fn assign_folds(subjects: &[usize], k: usize, rng: &mut ChaCha8Rng, events: Option<&[bool]>) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidFoldCount(k));
    }
    if subjects.len() < k {
        return Err(Error::Config(format!("{} subjects cannot fill {k} folds", subjects.len())));
    }
    let mut folds = vec![Vec::new(); k];
    match events {
        None => {
            deal(&mut subjects.to_vec(), k, 0, rng, &mut folds);
        }
        Some(events) => {
            let (mut with, mut without): (Vec<usize>, Vec<usize>) = subjects.iter().partition(|&&s| events[s]);
            let offset = deal(&mut with, k, 0, rng, &mut folds);
            deal(&mut without, k, offset, rng, &mut folds);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn complement(folds: &[Vec<usize>], skip: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds.iter().enumerate().filter(|(i, _)| *i != skip).flat_map(|(_, f)| f.iter().copied()).collect();
    out.sort_unstable();
    out
}

impl FoldPlan {
    /// `k` folds; each fold is the validation set once, the rest train.
    pub fn plain(n: usize, k: usize, seed: u64, events: Option<&[bool]>) -> Result<Self> {
        let subjects: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let folds = assign_folds(&subjects, k, &mut rng, events)?;
        let splits = (0..k)
            .map(|i| Split { id: format!("fold{i}"), outer: i, train: complement(&folds, i), val: folds[i].clone(), test: Vec::new() })
            .collect();
        Ok(Self { mode: CvMode::Plain, outer_k: k, inner_k: k, splits })
    }

    /// Outer folds are held out for testing; the remaining subjects are
    /// re-partitioned into inner folds for train/validation.
    pub fn nested(n: usize, outer_k: usize, inner_k: usize, seed: u64, events: Option<&[bool]>) -> Result<Self> {
        let subjects: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outer = assign_folds(&subjects, outer_k, &mut rng, events)?;
        let mut splits = Vec::with_capacity(outer_k * inner_k);
        for o in 0..outer_k {
            let pool = complement(&outer, o);
            let mut inner_rng = ChaCha8Rng::seed_from_u64(seed);
            inner_rng.set_stream(o as u64 + 1);
            let inner = assign_folds(&pool, inner_k, &mut inner_rng, events)?;
            for i in 0..inner_k {
                splits.push(Split {
                    id: format!("outer{o}_inner{i}"),
                    outer: o,
                    train: complement(&inner, i),
                    val: inner[i].clone(),
                    test: outer[o].clone(),
                });
            }
        }
        Ok(Self { mode: CvMode::Nested, outer_k, inner_k, splits })
    }

    /// Every split must contain an event in each of its non-empty parts.
    pub fn check_events(&self, labels: &[SurvivalLabel]) -> Result<()> {
        for s in &self.splits {
            for (part, idx) in [("train", &s.train), ("validation", &s.val), ("test", &s.test)] {
                if part == "test" && idx.is_empty() {
                    continue;
                }
                if !idx.iter().any(|&i| labels[i].event) {
                    return Err(Error::Fold { fold: s.id.clone(), reason: format!("no events in {part} set") });
                }
            }
        }
        Ok(())
    }

    /// Splits sharing outer fold `o`.
    pub fn outer_group(&self, o: usize) -> Vec<&Split> {
        self.splits.iter().filter(|s| s.outer == o).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_folds_of_ninety() {
        let plan = FoldPlan::plain(90, 9, 4, None).unwrap();
        assert_eq!(plan.splits.len(), 9);
        for s in &plan.splits {
            assert_eq!(s.val.len(), 10);
            assert_eq!(s.train.len(), 80);
        }
        assert_eq!(plan, FoldPlan::plain(90, 9, 4, None).unwrap());
        assert_ne!(plan, FoldPlan::plain(90, 9, 5, None).unwrap());
    }

    #[test]
    fn degenerate_k_is_rejected() {
        assert_eq!(FoldPlan::plain(10, 1, 0, None).unwrap_err().to_string(), "k must be ≥ 2 (got 1)");
    }

    #[test]
    fn nested_ratios() {
        let plan = FoldPlan::nested(100, 5, 5, 1, None).unwrap();
        assert_eq!(plan.splits.len(), 25);
        for s in &plan.splits {
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 20));
            assert!(s.test.iter().all(|t| !s.train.contains(t) && !s.val.contains(t)));
        }
    }

    #[test]
    fn stratified_folds_spread_events() {
        let events: Vec<bool> = (0..50).map(|i| i < 10).collect();
        let plan = FoldPlan::plain(50, 5, 2, Some(&events)).unwrap();
        for s in &plan.splits {
            assert_eq!(s.val.iter().filter(|&&i| events[i]).count(), 2);
        }
    }

    #[test]
    fn event_free_fold_is_named() {
        let labels: Vec<SurvivalLabel> = (0..10).map(|i| SurvivalLabel::new(1.0 + i as f64, i == 0).unwrap()).collect();
        let plan = FoldPlan::plain(10, 2, 0, None).unwrap();
        let err = plan.check_events(&labels).unwrap_err().to_string();
        assert!(err.starts_with("fold fold"), "{err}");
    }
}
