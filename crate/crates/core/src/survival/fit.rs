use serde::{Deserialize, Serialize};

use super::{cox_loss, descending_time_order, tie_groups, CoxRegressor, SurvivalLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CphConfig {
    /// Converged once the gradient max-norm drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step halvings tried before a direction is abandoned.
    pub max_halvings: usize,
}

impl Default for CphConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 500, max_halvings: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// Iteration budget exhausted before the gradient tolerance was met.
    MaxIterations,
    /// No step along Newton or gradient directions reduced the loss.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CphFit {
    pub model: CoxRegressor,
    pub status: FitStatus,
    pub iterations: usize,
    pub loss: f64,
    pub gradient_max_norm: f64,
}

/// Fits `beta` by Newton–Raphson with step halving, falling back to a
/// gradient step whenever the Hessian is not positive definite.
pub fn fit_cph(
    features: &[Vec<f64>],
    labels: &[SurvivalLabel],
    config: &CphConfig,
) -> Result<CphFit> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), actual: features.len() });
    }
    let events = labels.iter().filter(|l| l.event).count();
    if events == 0 {
        return Err(Error::NoEvents);
    }
    let p = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != p) {
        return Err(Error::LengthMismatch { expected: p, actual: bad.len() });
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if p >= events {
        return Err(Error::Unidentifiable { covariates: p, events });
    }
    for c in 0..p {
        let first = features[0][c];
        if features.iter().all(|f| f[c] == first) {
            return Err(Error::DegenerateCovariate(c));
        }
    }

    let problem = Problem { x: features, labels, order: descending_time_order(labels) };
    let mut beta = vec![0.0; p];
    let mut state = problem.evaluate(&beta);
    let mut iterations = 0;
    let status = loop {
        let gmax = max_abs(&state.grad);
        if gmax < config.tolerance {
            break FitStatus::Converged;
        }
        if iterations == config.max_iterations {
            break FitStatus::MaxIterations;
        }
        iterations += 1;

        let newton = cholesky_solve(&state.hess, &state.grad, p);
        let mut stepped = false;
        for direction in newton.into_iter().chain(std::iter::once(state.grad.clone())) {
            if let Some((b, s)) = problem.line_search(&beta, &direction, &state, config.max_halvings) {
                beta = b;
                state = s;
                stepped = true;
                break;
            }
        }
        if !stepped {
            break if max_abs(&state.grad) < config.tolerance {
                FitStatus::Converged
            } else {
                FitStatus::Stalled
            };
        }
    };

    let model = CoxRegressor::new(beta);
    let log_risks: Vec<f64> = features.iter().map(|f| dot(&model.beta, f)).collect();
    Ok(CphFit {
        loss: cox_loss(&log_risks, labels)?,
        gradient_max_norm: max_abs(&state.grad),
        model,
        status,
        iterations,
    })
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    labels: &'a [SurvivalLabel],
    order: Vec<usize>,
}

struct State {
    loss: f64,
    grad: Vec<f64>,
    /// Row-major p×p.
    hess: Vec<f64>,
}

impl Problem<'_> {
    fn evaluate(&self, beta: &[f64]) -> State {
        let p = beta.len();
        let eta: Vec<f64> = self.x.iter().map(|f| dot(beta, f)).collect();
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut loss = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for group in tie_groups(&self.order, self.labels) {
            for &j in group {
                let w = (eta[j] - shift).exp();
                let xj = &self.x[j];
                s0 += w;
                for a in 0..p {
                    s1[a] += w * xj[a];
                    for b in 0..=a {
                        s2[a * p + b] += w * xj[a] * xj[b];
                    }
                }
            }
            let d = group.iter().filter(|&&i| self.labels[i].event).count();
            if d == 0 {
                continue;
            }
            let d = d as f64;
            let log_s0 = s0.ln() + shift;
            for &i in group.iter().filter(|&&i| self.labels[i].event) {
                loss += log_s0 - eta[i];
                for a in 0..p {
                    grad[a] -= self.x[i][a];
                }
            }
            for a in 0..p {
                let ma = s1[a] / s0;
                grad[a] += d * ma;
                for b in 0..=a {
                    let mb = s1[b] / s0;
                    hess[a * p + b] += d * (s2[a * p + b] / s0 - ma * mb);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[b * p + a] = hess[a * p + b];
            }
        }
        State { loss, grad, hess }
    }

    /// Backtracking along `-direction`; accepts the first strict decrease.
    fn line_search(
        &self,
        beta: &[f64],
        direction: &[f64],
        current: &State,
        max_halvings: usize,
    ) -> Option<(Vec<f64>, State)> {
        let mut t = 1.0;
        for _ in 0..=max_halvings {
            let candidate: Vec<f64> = beta.iter().zip(direction).map(|(b, d)| b - t * d).collect();
            let next = self.evaluate(&candidate);
            if next.loss.is_finite() && next.loss < current.loss {
                return Some((candidate, next));
            }
            t *= 0.5;
        }
        None
    }
}

/// Solves `H x = g` for symmetric positive-definite `H`; `None` otherwise.
fn cholesky_solve(h: &[f64], g: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = h[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 1e-14 * h[i * p + i].abs().max(1e-300) || !s.is_finite() {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i * p + k] * y[k]).sum();
        y[i] = (g[i] - s) / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k * p + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * p + i];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
