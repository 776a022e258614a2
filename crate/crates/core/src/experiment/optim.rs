use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Module, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay, used by AdamW only.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self { kind: OptimizerKind::AdamW, weight_decay, ..Self::adam(learning_rate) }
    }
}

/// First and second moment accumulators of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub first: Matrix,
    pub second: Matrix,
}

impl MomentState {
    pub fn for_param(p: &Parameter) -> Self {
        let (r, c) = p.shape();
        Self { first: Matrix::zeros(r, c), second: Matrix::zeros(r, c) }
    }
}

/// One bias-corrected update at step `t` (1-based).
pub fn adam_step(param: &mut Parameter, state: &mut MomentState, t: u64, config: &AdamConfig) -> Result<()> {
    if param.grad.shape() != param.value.shape()
        || state.first.shape() != param.value.shape()
        || state.second.shape() != param.value.shape()
    {
        return Err(Error::Shape(format!(
            "optimizer state {:?} for parameter {:?}",
            state.first.shape(),
            param.value.shape()
        )));
    }
    if t == 0 {
        return Err(Error::Config("optimizer steps are 1-based".into()));
    }
    let lr = config.learning_rate;
    // Skipping a zero decay keeps AdamW bit-identical to Adam, including signed zeros.
    if config.kind == OptimizerKind::AdamW && config.weight_decay != 0.0 {
        let shrink = lr * config.weight_decay;
        for p in param.value.data_mut() {
            *p -= shrink * *p;
        }
    }
    let correction1 = 1.0 - config.beta1.powi(t as i32);
    let correction2 = 1.0 - config.beta2.powi(t as i32);
    let values = param.value.data_mut();
    let grads = param.grad.data();
    let first = state.first.data_mut();
    let second = state.second.data_mut();
    for i in 0..values.len() {
        let g = grads[i];
        first[i] = config.beta1 * first[i] + (1.0 - config.beta1) * g;
        second[i] = config.beta2 * second[i] + (1.0 - config.beta2) * g * g;
        let m_hat = first[i] / correction1;
        let v_hat = second[i] / correction2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Optimizer over every parameter of a module, in visitation order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    states: Vec<MomentState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, states: Vec::new() }
    }

    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        if self.states.is_empty() {
            module.visit_params("", &mut |_, p| self.states.push(MomentState::for_param(p)));
        }
        self.step += 1;
        let mut i = 0;
        let mut failure = None;
        let (t, config) = (self.step, self.config);
        let states = &mut self.states;
        module.visit_params_mut("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            match states.get_mut(i) {
                Some(state) => {
                    if let Err(e) = adam_step(p, state, t, &config) {
                        failure = Some(Error::Shape(format!("{name}: {e}")));
                    }
                }
                None => failure = Some(Error::Shape(format!("{name}: no optimizer state"))),
            }
            i += 1;
        });
        match failure {
            Some(e) => Err(e),
            None if i != self.states.len() => Err(Error::Shape("module changed parameter count".into())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, grad: f64) -> Parameter {
        let mut p = Parameter::new(Matrix::row_vector(&[value]));
        p.grad = Matrix::row_vector(&[grad]);
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Parameter::new(Matrix::row_vector(&[1.5, -0.0, 3.0]));
        let before = p.value.clone();
        let mut s = MomentState::for_param(&p);
        for t in 1..5 {
            adam_step(&mut p, &mut s, t, &AdamConfig::adam(1e-3)).unwrap();
        }
        assert_eq!(p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps).
        let mut p = scalar(0.5, 1.0);
        let mut s = MomentState::for_param(&p);
        adam_step(&mut p, &mut s, 1, &AdamConfig::adam(1e-3)).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.value.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn adamw_without_decay_matches_adam_bitwise() {
        let mut a = Parameter::new(Matrix::row_vector(&[0.3, -0.0, -2.0]));
        a.grad = Matrix::row_vector(&[0.1, -0.4, 2.5]);
        let mut b = a.clone();
        let (mut sa, mut sb) = (MomentState::for_param(&a), MomentState::for_param(&b));
        for t in 1..4 {
            adam_step(&mut a, &mut sa, t, &AdamConfig::adam(1e-2)).unwrap();
            adam_step(&mut b, &mut sb, t, &AdamConfig::adamw(1e-2, 0.0)).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adamw_decays_before_the_update() {
        let mut p = scalar(2.0, 0.0);
        let mut s = MomentState::for_param(&p);
        adam_step(&mut p, &mut s, 1, &AdamConfig::adamw(0.1, 0.5)).unwrap();
        assert!((p.value.get(0, 0) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = scalar(1.0, 1.0);
        let mut s = MomentState { first: Matrix::zeros(2, 2), second: Matrix::zeros(2, 2) };
        assert!(matches!(adam_step(&mut p, &mut s, 1, &AdamConfig::adam(1e-3)), Err(Error::Shape(_))));
    }
}
