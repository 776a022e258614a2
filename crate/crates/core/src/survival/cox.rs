use super::{descending_time_order, tie_groups, validate, SurvivalLabel};
use crate::error::Result;

/// Streaming log-sum-exp that rescales whenever a new maximum arrives.
#[derive(Clone, Copy)]
struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.scaled.ln()
    }
}

/// Negative log partial likelihood with Breslow ties:
/// `-sum_{i: e_i} ( h_i - log sum_{j: t_j >= t_i} exp(h_j) )`.
pub fn cox_loss(log_risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    validate(log_risks, labels)?;
    let order = descending_time_order(labels);
    Ok(forward(log_risks, labels, &order).0)
}

/// Gradient of [`cox_loss`] with respect to each log-risk.
pub fn cox_loss_gradient(log_risks: &[f64], labels: &[SurvivalLabel]) -> Result<Vec<f64>> {
    Ok(cox_loss_and_gradient(log_risks, labels)?.1)
}

pub fn cox_loss_and_gradient(
    log_risks: &[f64],
    labels: &[SurvivalLabel],
) -> Result<(f64, Vec<f64>)> {
    validate(log_risks, labels)?;
    let order = descending_time_order(labels);
    let (loss, group_lse) = forward(log_risks, labels, &order);

    // d loss / d h_k = -e_k + sum over event groups g with t_g <= t_k of d_g * exp(h_k - lse_g)
    let groups: Vec<&[usize]> = tie_groups(&order, labels).collect();
    let mut grad = vec![0.0; log_risks.len()];
    let mut acc = LogSumExp::new();
    for (group, lse) in groups.iter().zip(&group_lse).rev() {
        let events = group.iter().filter(|&&i| labels[i].event).count();
        if events > 0 {
            acc.push((events as f64).ln() - lse);
        }
        let log_acc = acc.value();
        for &k in group.iter() {
            let indicator = if labels[k].event { 1.0 } else { 0.0 };
            grad[k] = if log_acc == f64::NEG_INFINITY {
                -indicator
            } else {
                (log_risks[k] + log_acc).exp() - indicator
            };
        }
    }
    Ok((loss, grad))
}

/// Returns the loss and, per tie group in descending-time order, the
/// log-sum-exp of its risk set.
fn forward(log_risks: &[f64], labels: &[SurvivalLabel], order: &[usize]) -> (f64, Vec<f64>) {
    let mut running = LogSumExp::new();
    let mut loss = 0.0;
    let mut group_lse = Vec::new();
    for group in tie_groups(order, labels) {
        for &j in group {
            running.push(log_risks[j]);
        }
        let lse = running.value();
        for &i in group {
            if labels[i].event {
                loss += lse - log_risks[i];
            }
        }
        group_lse.push(lse);
    }
    (loss, group_lse)
}
