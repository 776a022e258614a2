use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{FoldPlan, Split};
use crate::error::{Error, Result};
use crate::survival::{concordance_index, SurvivalLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub sigma: f64,
}

pub fn summarize(values: &[f64]) -> Result<MetricsSummary> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(MetricsSummary { per_fold: values.to_vec(), mean, sigma })
}

fn in_fold<T>(split: &Split, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Fold { .. } => e,
        other => Error::Fold { fold: split.id.clone(), reason: other.to_string() },
    })
}

/// Runs `job` on every split in parallel; results keep plan order and
/// errors name the failing split.
pub fn run_splits<T, F>(plan: &FoldPlan, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Split) -> Result<T> + Sync,
{
    plan.splits.par_iter().map(|s| in_fold(s, job(s))).collect()
}

/// Nested cross-validation: `fit_and_score` trains on a split's inner train
/// set, selects on its validation set, and returns log-risks for its outer
/// test set. One C-index per split.
pub fn run_nested_cv<F>(labels: &[SurvivalLabel], plan: &FoldPlan, fit_and_score: F) -> Result<MetricsSummary>
where
    F: Fn(&Split) -> Result<Vec<f64>> + Sync,
{
    plan.check_events(labels)?;
    let scores = run_splits(plan, |split| {
        let lrs = fit_and_score(split)?;
        let test: Vec<SurvivalLabel> = split.test.iter().map(|&i| labels[i]).collect();
        concordance_index(&lrs, &test)
    })?;
    summarize(&scores)
}

/// One trained artifact per fold of a plain plan.
pub fn run_kfold_train<T, F>(labels: &[SurvivalLabel], plan: &FoldPlan, train: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Split) -> Result<T> + Sync,
{
    plan.check_events(labels)?;
    run_splits(plan, train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_examples() {
        let s = summarize(&[0.8, 0.8]).unwrap();
        assert_eq!((s.mean, s.sigma), (0.8, 0.0));
        let s = summarize(&[0.7, 0.9]).unwrap();
        assert!((s.mean - 0.8).abs() < 1e-15 && (s.sigma - 0.1).abs() < 1e-15);
        assert!(matches!(summarize(&[]), Err(Error::Empty)));
    }

    #[test]
    fn constant_model_scores_one_half() {
        let labels: Vec<SurvivalLabel> = (0..50).map(|i| SurvivalLabel::new(1.0 + i as f64, i % 3 == 0).unwrap()).collect();
        let events: Vec<bool> = labels.iter().map(|l| l.event).collect();
        let plan = FoldPlan::nested(50, 5, 5, 9, Some(&events)).unwrap();
        let s = run_nested_cv(&labels, &plan, |split| Ok(vec![0.0; split.test.len()])).unwrap();
        assert_eq!(s.per_fold.len(), 25);
        assert_eq!(s.mean, 0.5);
    }

    #[test]
    fn job_errors_name_the_split() {
        let labels: Vec<SurvivalLabel> = (0..20).map(|i| SurvivalLabel::new(1.0 + i as f64, true).unwrap()).collect();
        let plan = FoldPlan::plain(20, 4, 0, None).unwrap();
        let err = run_kfold_train(&labels, &plan, |s| if s.outer == 2 { Err(Error::NonFinite) } else { Ok(()) }).unwrap_err();
        assert_eq!(err.to_string(), "fold fold2: non-finite input");
    }
}
