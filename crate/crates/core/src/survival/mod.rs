//! Survival-analysis primitives: Cox partial likelihood, direct CPH fitting,
//! risk/TTR conversion and ranking metrics.
//!
//! Conventions used throughout the crate:
//!
//! * a higher log-risk means an earlier expected recurrence;
//! * the risk set of subject `i` is `{ j : t_j >= t_i }` (Breslow handling of
//!   tied event times);
//! * the baseline log-risk `h0` is zero for every regressor fit on a cohort.

mod cox;
mod fit;
mod metrics;

pub use cox::{cox_loss, cox_loss_and_gradient, cox_loss_gradient};
pub use fit::{fit_cph, CphConfig, CphFit, FitStatus};
pub use metrics::{binarize_at, concordance_index, roc_auc, PairCounts};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Follow-up time and event indicator for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time_months: f64,
    /// `true` when recurrence was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time_months: f64, event: bool) -> Result<Self> {
        if !time_months.is_finite() || time_months <= 0.0 {
            return Err(Error::InvalidLabel(format!(
                "time must be positive and finite, got {time_months}"
            )));
        }
        Ok(Self { time_months, event })
    }
}

/// Linear Cox regressor `h(s) = h0 + beta . s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxRegressor {
    pub beta: Vec<f64>,
    pub h0: f64,
}

impl CoxRegressor {
    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta, h0: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn predict(&self, s: &[f64]) -> Result<f64> {
        predict_log_risk(self, s)
    }
}

/// Log-risk together with the derived risk and time-to-recurrence proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub log_risk: f64,
    pub risk: f64,
    pub ttr: f64,
}

impl RiskScore {
    pub fn from_log_risk(log_risk: f64) -> Result<Self> {
        let ttr = ttr_from_log_risk(log_risk)?;
        Ok(Self { log_risk, risk: log_risk.exp(), ttr })
    }
}

pub fn predict_log_risk(model: &CoxRegressor, s: &[f64]) -> Result<f64> {
    if s.len() != model.beta.len() {
        return Err(Error::LengthMismatch { expected: model.beta.len(), actual: s.len() });
    }
    Ok(model.h0 + model.beta.iter().zip(s).map(|(b, x)| b * x).sum::<f64>())
}

/// Time-to-recurrence proxy `exp(-lr)`. Monotone only; not calibrated months.
pub fn ttr_from_log_risk(lr: f64) -> Result<f64> {
    if !lr.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((-lr).exp())
}

pub(crate) fn validate(log_risks: &[f64], labels: &[SurvivalLabel]) -> Result<()> {
    if log_risks.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), actual: log_risks.len() });
    }
    if log_risks.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !labels.iter().any(|l| l.event) {
        return Err(Error::NoEvents);
    }
    Ok(())
}

/// Indices sorted by time descending (ties broken by index so the order is total).
pub(crate) fn descending_time_order(labels: &[SurvivalLabel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        labels[b]
            .time_months
            .total_cmp(&labels[a].time_months)
            .then(a.cmp(&b))
    });
    order
}

/// Consecutive runs of equal time in an ordered index list.
pub(crate) fn tie_groups<'a>(
    order: &'a [usize],
    labels: &'a [SurvivalLabel],
) -> impl Iterator<Item = &'a [usize]> + 'a {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= order.len() {
            return None;
        }
        let t = labels[order[start]].time_months;
        let mut end = start + 1;
        while end < order.len() && labels[order[end]].time_months == t {
            end += 1;
        }
        let group = &order[start..end];
        start = end;
        Some(group)
    })
}
