use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(Matrix::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything holding named parameters. Visitation order is stable and defines
/// optimizer-state and checkpoint layout.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }

    /// `(name, value)` pairs in visitation order.
    fn named_values(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params("", &mut |_, p| ok &= p.value.is_finite() && p.grad.is_finite());
        ok
    }

    /// Value of flattened coordinate `index` of the tensor called `name`.
    fn coordinate(&self, name: &str, index: usize) -> Option<f64> {
        let mut out = None;
        self.visit_params("", &mut |n, p| {
            if n == name {
                out = p.value.data().get(index).copied();
            }
        });
        out
    }

    /// Sets one coordinate; returns false if no such coordinate exists.
    fn set_coordinate(&mut self, name: &str, index: usize, value: f64) -> bool {
        let mut found = false;
        self.visit_params_mut("", &mut |n, p| {
            if n == name {
                if let Some(v) = p.value.data_mut().get_mut(index) {
                    *v = value;
                    found = true;
                }
            }
        });
        found
    }

    /// Overwrites parameter values from `(name, value)` pairs. Every parameter
    /// must be present with a matching shape and no extra names are allowed.
    fn load_named_values(&mut self, values: &[(String, Matrix)]) -> Result<()> {
        let mut lookup: std::collections::HashMap<&str, &Matrix> =
            values.iter().map(|(n, m)| (n.as_str(), m)).collect();
        if lookup.len() != values.len() {
            return Err(Error::Format("duplicate tensor names".into()));
        }
        let mut failure = None;
        self.visit_params_mut("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            match lookup.remove(name) {
                Some(m) if m.shape() == p.value.shape() => {
                    p.value = m.clone();
                    p.zero_grad();
                }
                Some(m) => {
                    failure = Some(Error::Shape(format!(
                        "tensor {name}: stored {:?}, model {:?}",
                        m.shape(),
                        p.value.shape()
                    )))
                }
                None => failure = Some(Error::Format(format!("missing tensor {name}"))),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }
}

impl<T: Module> Module for Vec<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        for (i, m) in self.iter().enumerate() {
            m.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
